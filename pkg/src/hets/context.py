"""The context: parameters, key material, evaluation flags and worker count.

Contexts are immutable. ``make_public`` and ``set_flags`` return new values,
so one context can be shared by concurrent request handlers.
"""

from __future__ import annotations

import functools
import math
import secrets
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

import numpy as np

from . import scheme
from .backend import KINDS, PRESENT, Backend, KeySet, make_backend
from .errors import HEError, InvalidParams, InvalidWorkerCount
from .ring import RingParams
from .scheme import GaloisKeys, SchemeParams


def power_of_two_steps(slots: int) -> list[int]:
    """±2^k for every 2^k < slots (left and right)."""
    out: list[int] = []
    k = 1
    while k < slots:
        out.extend((k, -k))
        k <<= 1
    return out


def _normalize_steps(steps: Iterable[int], slots: int) -> tuple[int, ...]:
    """Drop duplicates that name the same rotation, keeping the first spelling."""
    seen: set[int] = set()
    out = []
    for s in steps:
        s = int(s)
        n = s % slots
        if n in seen:
            continue
        seen.add(n)
        out.append(s)
    return tuple(out)


def default_steps(params: SchemeParams, workload: Any = None) -> tuple[int, ...]:
    """Power-of-two steps plus the hot steps of ``workload``.

    ``workload`` is either an iterable of extra steps or an object with a
    ``rotation_steps(slot_count)`` method (a model).
    """
    slots = params.slot_count
    steps = power_of_two_steps(slots)
    if workload is not None:
        extra = workload.rotation_steps(slots) if hasattr(workload, "rotation_steps") else workload
        steps.extend(int(s) for s in extra if int(s) % slots)
    return _normalize_steps(steps, slots)


def _resolve_params(spec) -> SchemeParams:
    if isinstance(spec, SchemeParams):
        return spec
    if isinstance(spec, str):
        return scheme.profile(spec)
    if isinstance(spec, dict):
        try:
            degree = int(spec["degree"])
            scale = float(spec["scale"]) if "scale" in spec else float(2 ** int(spec["scale_bits"]))
            if "primes" in spec:
                ring_params = RingParams(degree, tuple(int(p) for p in spec["primes"]))
            else:
                from .ring import find_primes

                ring_params = RingParams(degree, find_primes(degree, [int(b) for b in spec["bits"]]))
            return SchemeParams(ring_params, scale, spec.get("security_note", "unverified"), spec.get("name", "custom"))
        except HEError as exc:
            raise InvalidParams(str(exc)) from None
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidParams(f"bad custom parameters: {exc}") from None
    raise InvalidParams(f"cannot build parameters from {type(spec).__name__}")


@dataclass(frozen=True)
class Context:
    params: SchemeParams
    keys: KeySet = field(repr=False)
    backend_kind: str = "real"
    auto_rescale: bool = True
    auto_relin: bool = True
    worker_count: int = 1
    seed: int = 0

    @property
    def slot_count(self) -> int:
        return self.params.slot_count

    @property
    def is_private(self) -> bool:
        return self.keys.sk is not None

    @property
    def galois_steps(self) -> tuple[int, ...]:
        return self.keys.galois_steps

    @functools.cached_property
    def backend(self) -> Backend:
        # Encryption randomness comes from its own stream, separate from keygen.
        return make_backend(
            self.backend_kind,
            self.params,
            self.keys,
            auto_rescale=self.auto_rescale,
            auto_relin=self.auto_relin,
            workers=self.worker_count,
            seed=[self.seed, 1],
        )

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other


def create_context(params="test-4096", rotation_steps: Iterable[int] | None = None, seed: int | None = None,
                   backend: str = "real", workload: Any = None, auto_rescale: bool = True,
                   auto_relin: bool = True, worker_count: int = 1) -> Context:
    """Build a fully keyed private context.

    ``rotation_steps=None`` selects the power-of-two steps plus the hot steps
    of ``workload``; an explicit list is used exactly as given.
    """
    p = _resolve_params(params)
    if len(p.ring.primes) < 2:
        raise InvalidParams("the chain needs at least two primes")
    if backend not in KINDS:
        raise InvalidParams(f"unknown backend {backend!r}; choose from {KINDS}")
    _check_workers(worker_count)
    seed = secrets.randbits(63) if seed is None else int(seed)
    if rotation_steps is None:
        steps = default_steps(p, workload)
    else:
        steps = tuple(int(s) for s in rotation_steps)
    if backend == "real":
        sk, pk, rlk, gk = scheme.keygen(p, steps, np.random.default_rng(seed))
        keys = KeySet(sk, pk, rlk, gk, steps)
    else:
        scheme.keygen_check_steps(p, steps)
        keys = KeySet(PRESENT, PRESENT, PRESENT, GaloisKeys(steps, {}), steps)
    return Context(p, keys, backend, auto_rescale, auto_relin, worker_count, seed)


def make_public(ctx: Context) -> Context:
    """Same context without the secret key; idempotent."""
    if not ctx.is_private:
        return ctx
    return replace(ctx, keys=ctx.keys.public())


def _check_workers(n) -> None:
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidWorkerCount(f"worker count must be a positive integer, got {n!r}")


def set_flags(ctx: Context, auto_rescale: bool | None = None, auto_relin: bool | None = None,
              worker_count: int | None = None) -> Context:
    if worker_count is not None:
        _check_workers(worker_count)
    return replace(
        ctx,
        auto_rescale=ctx.auto_rescale if auto_rescale is None else bool(auto_rescale),
        auto_relin=ctx.auto_relin if auto_relin is None else bool(auto_relin),
        worker_count=ctx.worker_count if worker_count is None else int(worker_count),
    )


def with_keys(ctx: Context, keys: KeySet) -> Context:
    return replace(ctx, keys=keys)


def security_bits(params: SchemeParams) -> str:
    """Static tag only; no estimator is run."""
    return f"{params.security_note} (N={params.degree}, log2 Q·P={math.log2(math.prod(params.ring.primes)):.1f})"
