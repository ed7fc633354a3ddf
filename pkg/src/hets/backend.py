"""Uniform evaluation interface over the real scheme and an exact mock.

Both backends share one signature set and run the same metadata checks from
:mod:`hets.scheme`, so levels, scales and errors move in lockstep. The mock
keeps plain float slots and is the oracle for the tensor layer.

Plain operands are passed as value arrays; each backend encodes them at the
ciphertext's level. ``mul_plain`` defaults to a plaintext scale of
``q_level * Δ / scale`` so the rescaled product lands exactly on Δ.
"""

from __future__ import annotations

import contextlib
import functools
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import kernels, scheme
from .errors import BackendMismatch, HEError, LevelMismatch, MissingGaloisKey, MissingKey, ParamMismatch
from .scheme import Ciphertext, SchemeParams

KINDS = ("real", "mock")

# Stand-in for key material on the mock backend: only presence matters.
PRESENT = object()


@dataclass(frozen=True)
class KeySet:
    sk: Any = None
    pk: Any = None
    rlk: Any = None
    gk: Any = None
    galois_steps: tuple[int, ...] = ()

    def public(self) -> "KeySet":
        return KeySet(None, self.pk, self.rlk, self.gk, self.galois_steps)


@dataclass(frozen=True, eq=False)
class MockCiphertext:
    slots: np.ndarray = field(repr=False)
    level: int
    scale: float
    size: int = 2

    def __post_init__(self):
        self.slots.setflags(write=False)


@dataclass(frozen=True)
class TraceEvent:
    op: str
    step: int | None
    level: int | None
    log2_scale: float | None
    error: str | None = None


def _op(name: str):
    """Run the method under the backend's worker count and record a trace event."""

    def wrap(fn: Callable):
        @functools.wraps(fn)
        def inner(self, *args, **kwargs):
            step = kwargs.get("step", args[1] if name == "rotate" and len(args) > 1 else None)
            try:
                with kernels.parallelism(self.workers):
                    out = fn(self, *args, **kwargs)
            except HEError as exc:
                self._record(TraceEvent(name, step, None, None, exc.code))
                raise
            if isinstance(out, (Ciphertext, MockCiphertext)):
                self._record(TraceEvent(name, step, out.level, math.log2(out.scale)))
            return out

        return inner

    return wrap


class Backend:
    kind = "abstract"
    value_type: type = object

    def __init__(self, params: SchemeParams, keys: KeySet, auto_rescale: bool = True,
                 auto_relin: bool = True, workers: int = 1, seed: int | None = None):
        self.params = params
        self.keys = keys
        self.auto_rescale = auto_rescale
        self.auto_relin = auto_relin
        self.workers = workers
        self._rng = np.random.default_rng(seed)
        self._traces: list[list[TraceEvent]] = []

    # -- introspection

    @property
    def slot_count(self) -> int:
        return self.params.slot_count

    @property
    def chain_length(self) -> int:
        return len(self.params.ring.primes)

    @property
    def max_level(self) -> int:
        return self.params.max_level

    def level(self, ct) -> int:
        return self._check(ct).level

    def scale(self, ct) -> float:
        return self._check(ct).scale

    def _record(self, event: TraceEvent) -> None:
        for t in self._traces:
            t.append(event)

    @contextlib.contextmanager
    def tracing(self):
        """Collect every op issued inside the block as a list of TraceEvent."""
        events: list[TraceEvent] = []
        self._traces.append(events)
        try:
            yield events
        finally:
            self._traces.remove(events)

    def note(self, label: str) -> None:
        """Drop a marker into active traces (no effect on values)."""
        self._record(TraceEvent("note:" + label, None, None, None))

    def _check(self, ct):
        if not isinstance(ct, self.value_type):
            raise BackendMismatch(f"{type(ct).__name__} does not belong to the {self.kind} backend")
        return ct

    def _rng_for(self, rng, seed) -> np.random.Generator:
        if rng is not None:
            return rng
        if seed is not None:
            return np.random.default_rng(seed)
        return self._rng

    def restoring_scale(self, ct) -> float:
        """Plaintext scale that makes a rescaled ct-pt product land on Δ."""
        ct = self._check(ct)
        if ct.level < 1:
            return self.params.scale
        return self.params.data_primes[ct.level] * self.params.scale / ct.scale

    def _pt_scale(self, ct, rescale: bool, pt_scale: float | None) -> float:
        if pt_scale is not None:
            return float(pt_scale)
        return self.restoring_scale(ct) if rescale else self.params.scale

    def _rescale_flag(self, rescale: bool | None) -> bool:
        return self.auto_rescale if rescale is None else rescale

    def _require(self, attr: str, what: str):
        key = getattr(self.keys, attr)
        if key is None:
            raise MissingKey(what)
        return key

    def _rotation_plan(self, step: int) -> tuple[int, ...]:
        if self.keys.gk is None:
            raise MissingGaloisKey("rotation needs Galois keys")
        return scheme.plan_rotation(step, self.keys.galois_steps, self.slot_count)


class RealBackend(Backend):
    kind = "real"
    value_type = Ciphertext

    def _check(self, ct):
        ct = super()._check(ct)
        if ct.parts[0].coeffs.shape[1] != self.params.degree or ct.primes != self.params.level_primes(ct.level):
            raise BackendMismatch("ciphertext was made under different parameters")
        return ct

    @_op("encrypt")
    def encrypt(self, values, level: int | None = None, scale: float | None = None, rng=None, seed=None):
        pk = self._require("pk", "encryption needs the public key")
        pt = scheme.encode(self.params, values, level, scale)
        return scheme.encrypt(self.params, pt, pk, self._rng_for(rng, seed))

    def decrypt(self, ct) -> np.ndarray:
        ct = self._check(ct)
        sk = self._require("sk", "decryption needs the secret key")
        with kernels.parallelism(self.workers):
            return scheme.decode(self.params, scheme.decrypt(self.params, ct, sk))

    def _encode_at(self, ct, values, scale: float):
        return scheme.encode(self.params, values, ct.level, scale)

    @_op("add")
    def add(self, a, b):
        return scheme.eval_add(self.params, self._check(a), self._check(b))

    @_op("sub")
    def sub(self, a, b):
        return scheme.eval_sub(self.params, self._check(a), self._check(b))

    @_op("negate")
    def negate(self, a):
        return scheme.eval_negate(self.params, self._check(a))

    @_op("add_plain")
    def add_plain(self, a, values):
        a = self._check(a)
        return scheme.eval_add_plain(self.params, a, self._encode_at(a, values, a.scale))

    @_op("sub_plain")
    def sub_plain(self, a, values):
        a = self._check(a)
        return scheme.eval_sub_plain(self.params, a, self._encode_at(a, values, a.scale))

    @_op("mul_plain")
    def mul_plain(self, a, values, rescale: bool | None = None, pt_scale: float | None = None):
        a = self._check(a)
        rescale = self._rescale_flag(rescale)
        s = self._pt_scale(a, rescale, pt_scale)
        scheme.check_mul(self.params, a.level, a.scale, a.level, s, rescale)
        return scheme.eval_mul_plain(self.params, a, self._encode_at(a, values, s), rescale)

    @_op("mul")
    def mul(self, a, b, rescale: bool | None = None):
        a, b = self._check(a), self._check(b)
        return scheme.eval_mul(self.params, a, b, self.keys.rlk, self._rescale_flag(rescale), self.auto_relin)

    @_op("square")
    def square(self, a, rescale: bool | None = None):
        return self.mul.__wrapped__(self, a, a, rescale)

    @_op("relinearize")
    def relinearize(self, a):
        a = self._check(a)
        if a.size == 2:
            return a
        return scheme.relinearize(self.params, a, self._require("rlk", "relinearization needs the relinearization key"))

    @_op("rotate")
    def rotate(self, a, step: int):
        a = self._check(a)
        if a.size != 2:
            a = self.relinearize.__wrapped__(self, a)
        for s in self._rotation_plan(step):
            a = scheme._rotate_once(self.params, a, s, self.keys.gk.keys[scheme.galois_element(s, self.params)])
        return a

    @_op("rescale")
    def rescale(self, a):
        return scheme.rescale(self.params, self._check(a))

    @_op("relabel")
    def relabel(self, a, factor: float):
        """Multiply the recorded scale by ``factor``: decoded values divide by it, at no cost."""
        a = self._check(a)
        return Ciphertext(a.parts, a.scale * float(factor), a.level)

    @_op("mod_switch")
    def mod_switch_to(self, a, level: int):
        return scheme.mod_switch_to(self.params, self._check(a), level)


class MockBackend(Backend):
    kind = "mock"
    value_type = MockCiphertext

    def _new(self, slots, level, scale, size: int = 2) -> MockCiphertext:
        return MockCiphertext(np.asarray(slots, dtype=np.float64), level, float(scale), size)

    def _padded(self, values) -> np.ndarray:
        vals = np.asarray(values, dtype=np.float64).ravel()
        out = np.zeros(self.slot_count)
        out[: len(vals)] = vals
        return out

    def _encode_at(self, ct, values, scale: float) -> np.ndarray:
        vals, _, _, _ = scheme.check_encode(self.params, values, ct.level, scale)
        return self._padded(vals)

    @_op("encrypt")
    def encrypt(self, values, level: int | None = None, scale: float | None = None, rng=None, seed=None):
        self._require("pk", "encryption needs the public key")
        vals, level, scale, _ = scheme.check_encode(self.params, values, level, scale)
        return self._new(self._padded(vals), level, scale)

    def decrypt(self, ct) -> np.ndarray:
        ct = self._check(ct)
        self._require("sk", "decryption needs the secret key")
        return np.array(ct.slots)

    @_op("add")
    def add(self, a, b):
        a, b = self._check(a), self._check(b)
        scheme.check_compatible(a.level, a.scale, b.level, b.scale)
        return self._new(a.slots + b.slots, a.level, a.scale, max(a.size, b.size))

    @_op("sub")
    def sub(self, a, b):
        a, b = self._check(a), self._check(b)
        scheme.check_compatible(a.level, a.scale, b.level, b.scale)
        return self._new(a.slots - b.slots, a.level, a.scale, max(a.size, b.size))

    @_op("negate")
    def negate(self, a):
        a = self._check(a)
        return self._new(-a.slots, a.level, a.scale, a.size)

    @_op("add_plain")
    def add_plain(self, a, values):
        a = self._check(a)
        return self._new(a.slots + self._encode_at(a, values, a.scale), a.level, a.scale, a.size)

    @_op("sub_plain")
    def sub_plain(self, a, values):
        a = self._check(a)
        return self._new(a.slots - self._encode_at(a, values, a.scale), a.level, a.scale, a.size)

    def _finish_product(self, slots, level: int, scale: float, rescale: bool, size: int = 2) -> MockCiphertext:
        if rescale:
            scheme.check_rescale(self.params, level, scale)
            return self._new(slots, level - 1, scheme.rescaled_scale(self.params, level, scale), size)
        return self._new(slots, level, scale, size)

    @_op("mul_plain")
    def mul_plain(self, a, values, rescale: bool | None = None, pt_scale: float | None = None):
        a = self._check(a)
        rescale = self._rescale_flag(rescale)
        s = self._pt_scale(a, rescale, pt_scale)
        scheme.check_mul(self.params, a.level, a.scale, a.level, s, rescale)
        pt = self._encode_at(a, values, s)
        return self._finish_product(a.slots * pt, a.level, a.scale * s, rescale, a.size)

    @_op("mul")
    def mul(self, a, b, rescale: bool | None = None):
        a, b = self._check(a), self._check(b)
        rescale = self._rescale_flag(rescale)
        scheme.check_mul(self.params, a.level, a.scale, b.level, b.scale, rescale)
        if a.size != 2 or b.size != 2:
            raise ParamMismatch("ciphertext products need size-2 operands")
        if self.auto_relin:
            self._require("rlk", "ciphertext multiplication needs the relinearization key")
        size = 2 if self.auto_relin else 3
        return self._finish_product(a.slots * b.slots, a.level, a.scale * b.scale, rescale, size)

    @_op("square")
    def square(self, a, rescale: bool | None = None):
        return self.mul.__wrapped__(self, a, a, rescale)

    @_op("relinearize")
    def relinearize(self, a):
        a = self._check(a)
        if a.size == 2:
            return a
        self._require("rlk", "relinearization needs the relinearization key")
        return self._new(a.slots, a.level, a.scale)

    @_op("rotate")
    def rotate(self, a, step: int):
        a = self._check(a)
        if a.size != 2:
            a = self.relinearize.__wrapped__(self, a)
        self._rotation_plan(step)
        return self._new(np.roll(a.slots, -int(step)), a.level, a.scale)

    @_op("rescale")
    def rescale(self, a):
        a = self._check(a)
        scheme.check_rescale(self.params, a.level, a.scale)
        return self._new(a.slots, a.level - 1, scheme.rescaled_scale(self.params, a.level, a.scale), a.size)

    @_op("relabel")
    def relabel(self, a, factor: float):
        a = self._check(a)
        return self._new(a.slots / float(factor), a.level, a.scale * float(factor), a.size)

    @_op("mod_switch")
    def mod_switch_to(self, a, level: int):
        a = self._check(a)
        if level > a.level or level < 0:
            raise LevelMismatch(f"cannot switch from level {a.level} to {level}")
        return self._new(a.slots, level, a.scale, a.size)


def make_backend(kind: str, params: SchemeParams, keys: KeySet, **kwargs) -> Backend:
    if kind == "real":
        return RealBackend(params, keys, **kwargs)
    if kind == "mock":
        return MockBackend(params, keys, **kwargs)
    raise BackendMismatch(f"unknown backend {kind!r}; choose from {KINDS}")
