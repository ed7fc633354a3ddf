"""Kernel selection and the worker-count setting used by every kernel call.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``HETS_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import contextlib
import contextvars
import os
from types import ModuleType

from . import _fallback

fallback: ModuleType = _fallback
compiled: ModuleType | None
try:
    from . import _kernels as compiled  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover - depends on the build
    compiled = None

if compiled is not None and os.environ.get("HETS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    impl: ModuleType = compiled
else:
    impl = fallback

_workers: contextvars.ContextVar[int] = contextvars.ContextVar("hets_workers", default=1)


def active_name() -> str:
    return impl.NAME


def use(name: str) -> None:
    """Switch the process-wide kernel implementation ("compiled" or "fallback")."""
    global impl
    if name == "compiled":
        if compiled is None:
            raise RuntimeError("compiled kernels are not built")
        impl = compiled
    elif name == "fallback":
        impl = fallback
    else:
        raise ValueError(f"unknown kernel implementation {name!r}")


@contextlib.contextmanager
def using(name: str):
    prev = impl.NAME
    use(name)
    try:
        yield
    finally:
        use(prev)


def workers() -> int:
    return _workers.get()


@contextlib.contextmanager
def parallelism(n: int):
    token = _workers.set(max(1, int(n)))
    try:
        yield
    finally:
        _workers.reset(token)
