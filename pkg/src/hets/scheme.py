"""Leveled approximate-arithmetic RLWE scheme over an RNS modulus chain.

The coefficient modulus is ``data primes + one special prime``. Ciphertexts
live on a prefix of the data primes; the special prime only appears inside
key-switching keys (hybrid key switching with a single special modulus).
A chain of L primes therefore supports L - 2 rescaled multiplications.

Slot i of a plaintext is the evaluation at the primitive 2N-th root raised
to 5**i, so the Galois element 5**k rotates slots left by k.
"""

from __future__ import annotations

import functools
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import ring
from .errors import (
    InvalidParams,
    InvalidRotationStep,
    LevelExhausted,
    LevelMismatch,
    MissingGaloisKey,
    MissingKey,
    ParamMismatch,
    ScaleMismatch,
    ScaleOverflow,
    TooManyValues,
)
from .ring import Domain, RingParams, RingPoly

SCALE_RTOL = 2.0**-30


@dataclass(frozen=True)
class SchemeParams:
    ring: RingParams
    scale: float
    security_note: str = "unverified"
    name: str = "custom"

    def __post_init__(self):
        if len(self.ring.primes) < 2:
            raise InvalidParams("need at least one data prime and the special prime")
        if self.scale <= 1 or math.log2(self.scale) != int(math.log2(self.scale)):
            raise InvalidParams(f"scale must be a power of two > 1, got {self.scale}")
        mids = self.data_primes[1:]
        if mids and self.scale >= min(mids):
            raise InvalidParams(
                f"scale 2^{math.log2(self.scale):g} is not below the smallest mid-chain prime {min(mids)}"
            )
        if self.special_prime < max(self.data_primes):
            raise InvalidParams("special prime must be at least as large as every data prime")

    @property
    def degree(self) -> int:
        return self.ring.degree

    @property
    def slot_count(self) -> int:
        return self.ring.degree // 2

    @property
    def data_primes(self) -> tuple[int, ...]:
        return self.ring.primes[:-1]

    @property
    def special_prime(self) -> int:
        return self.ring.primes[-1]

    @property
    def max_level(self) -> int:
        return len(self.data_primes) - 1

    def level_primes(self, level: int) -> tuple[int, ...]:
        return self.data_primes[: level + 1]

    def key_primes(self, level: int) -> tuple[int, ...]:
        return self.data_primes[: level + 1] + (self.special_prime,)

    @classmethod
    def from_bits(cls, degree: int, bit_sizes, scale_bits: int, name: str = "custom",
                  security_note: str = "unverified") -> "SchemeParams":
        primes = ring.find_primes(degree, list(bit_sizes))
        return cls(RingParams(degree, primes), float(2**scale_bits), security_note, name)


PROFILES: dict[str, tuple[int, tuple[int, ...], int, str]] = {
    "mnist-8192": (8192, (31, 21, 21, 21, 21, 21, 21, 49), 21, "claimed 128-bit (not estimated)"),
    "test-4096": (4096, (40, 30, 30, 40), 30, "test parameters"),
}


@functools.lru_cache(maxsize=None)
def profile(name: str) -> SchemeParams:
    try:
        degree, bits, scale_bits, note = PROFILES[name]
    except KeyError:
        raise InvalidParams(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None
    return SchemeParams.from_bits(degree, bits, scale_bits, name, note)


# ---------------------------------------------------------------- encoding


class Encoder:
    """Canonical embedding between N/2 real slots and integer coefficients."""

    def __init__(self, degree: int):
        self.degree = degree
        slots = degree // 2
        two_n = 2 * degree
        rot = np.array([pow(5, i, two_n) for i in range(slots)], dtype=np.int64)
        self.slot_index = (rot - 1) // 2
        self.conj_index = (two_n - rot - 1) // 2
        k = np.arange(degree)
        self.twist = np.exp(1j * np.pi * k / degree)

    def to_coeffs(self, values: np.ndarray, scale: float) -> np.ndarray:
        evals = np.zeros(self.degree, dtype=np.complex128)
        z = np.zeros(self.degree // 2, dtype=np.complex128)
        z[: len(values)] = values
        evals[self.slot_index] = z
        evals[self.conj_index] = np.conj(z)
        coeffs = (np.fft.fft(evals) / self.degree * np.conj(self.twist)).real
        return coeffs * scale

    def from_coeffs(self, coeffs: np.ndarray, scale: float) -> np.ndarray:
        evals = np.fft.ifft(np.asarray(coeffs, dtype=np.float64) * self.twist) * self.degree
        return evals[self.slot_index].real / scale


@functools.lru_cache(maxsize=None)
def encoder(degree: int) -> Encoder:
    return Encoder(degree)


@dataclass(frozen=True)
class Plaintext:
    poly: RingPoly
    scale: float
    level: int


def _round_to_ints(x: np.ndarray) -> np.ndarray:
    if np.max(np.abs(x), initial=0.0) < 2.0**62:
        return np.rint(x).astype(np.int64)
    return np.array([int(round(v)) for v in x], dtype=object)


def check_encode(params: SchemeParams, values, level: int | None = None, scale: float | None = None):
    """Validate an encode request; returns (values, level, scale, scaled coefficients)."""
    vals = np.asarray(values, dtype=np.float64).ravel()
    if len(vals) > params.slot_count:
        raise TooManyValues(f"{len(vals)} values exceed {params.slot_count} slots")
    level = params.max_level if level is None else int(level)
    if not 0 <= level <= params.max_level:
        raise LevelMismatch(f"level {level} outside the chain 0..{params.max_level}")
    scale = params.scale if scale is None else float(scale)
    coeffs = encoder(params.degree).to_coeffs(vals, scale)
    if np.max(np.abs(coeffs), initial=0.0) * 2 >= math.prod(params.level_primes(level)):
        raise ScaleOverflow("encoded coefficients exceed the level modulus")
    return vals, level, scale, coeffs


def encode(params: SchemeParams, values, level: int | None = None, scale: float | None = None) -> Plaintext:
    _, level, scale, coeffs = check_encode(params, values, level, scale)
    primes = params.level_primes(level)
    t = ring.tables(params.degree, primes)
    rows = t.forward(t.reduce_signed(_round_to_ints(coeffs)))
    return Plaintext(RingPoly(rows, primes, Domain.EVAL), scale, level)


def decode(params: SchemeParams, pt: Plaintext) -> np.ndarray:
    poly = ring.to_coeff(pt.poly)
    ints = ring.crt_centered(poly.coeffs, poly.primes)
    return encoder(params.degree).from_coeffs(ints.astype(np.float64), pt.scale)


# ---------------------------------------------------------------- keys


@dataclass(frozen=True)
class SecretKey:
    s: RingPoly  # evaluation domain over all primes
    signed: np.ndarray = field(repr=False)  # ternary coefficients


@dataclass(frozen=True)
class PublicKey:
    b: RingPoly
    a: RingPoly


class SwitchKey:
    """Key-switching material: one (b_i, a_i) pair per data-prime digit.

    The uniform ``a`` halves are regenerated from ``seed``, so only ``b`` and
    the seed need to be stored or sent.
    """

    __slots__ = ("b", "seed", "primes")

    def __init__(self, b: np.ndarray, seed: int, primes: tuple[int, ...]):
        self.b = b
        self.seed = int(seed)
        self.primes = tuple(primes)
        self.b.setflags(write=False)

    @property
    def a(self) -> np.ndarray:
        # Regenerated on every use; keeping it would double key memory.
        return expand_uniform(self.seed, self.b.shape[0], self.b.shape[2], self.primes)

    def a_prefix(self, digits: int) -> np.ndarray:
        """The first ``digits`` uniform halves (a prefix of ``a``)."""
        rng = np.random.default_rng(self.seed)
        out = np.empty((digits, len(self.primes), self.b.shape[2]), dtype=np.uint64)
        for i in range(digits):
            out[i] = ring.sample_uniform_rows(self.b.shape[2], self.primes, rng)
        return out

    def __eq__(self, other):
        return isinstance(other, SwitchKey) and self.seed == other.seed and np.array_equal(self.b, other.b)


def expand_uniform(seed: int, digits: int, degree: int, primes: tuple[int, ...]) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.stack([ring.sample_uniform_rows(degree, primes, rng) for _ in range(digits)])


RelinKey = SwitchKey


@dataclass(frozen=True)
class GaloisKeys:
    steps: tuple[int, ...]  # as requested
    keys: dict[int, SwitchKey]  # galois element -> key

    def __eq__(self, other):
        return isinstance(other, GaloisKeys) and self.steps == other.steps and self.keys == other.keys


def galois_element(step: int, params: SchemeParams) -> int:
    return pow(5, step % params.slot_count, 2 * params.degree)


def _eval_small(params: SchemeParams, signed: np.ndarray) -> np.ndarray:
    t = ring.tables(params.degree, params.ring.primes)
    return t.forward(t.reduce_signed(signed))


def _make_switch_key(params: SchemeParams, sk: SecretKey, target_eval: np.ndarray,
                     rng: np.random.Generator) -> SwitchKey:
    """Key switching from ``target`` to s, with target given in eval form over all primes."""
    primes = params.ring.primes
    t = ring.tables(params.degree, primes)
    digits = len(params.data_primes)
    seed = int(rng.integers(0, 2**63 - 1))
    a = expand_uniform(seed, digits, params.degree, primes)
    special = params.special_prime
    b = np.empty_like(a)
    for i in range(digits):
        e = _eval_small(params, ring.sample_signed("error", params.degree, rng))
        bi = t.sub(e, t.mul(a[i], sk.s.coeffs))
        factor = np.uint64(special % primes[i])
        row = ring.tables(params.degree, (primes[i],)).mul(target_eval[i : i + 1], factor)
        bi[i] = t.add(bi[i : i + 1], row, t.col[i : i + 1])[0]
        b[i] = bi
    return SwitchKey(b, seed, primes)


def keygen_check_steps(params: SchemeParams, rotation_steps) -> tuple[int, ...]:
    steps = tuple(int(s) for s in rotation_steps)
    for s in steps:
        if s == 0 or abs(s) >= params.slot_count:
            raise InvalidRotationStep(f"rotation step {s} must be nonzero with |step| < {params.slot_count}")
    return steps


def keygen(params: SchemeParams, rotation_steps, rng: np.random.Generator):
    """Returns (SecretKey, PublicKey, RelinKey, GaloisKeys)."""
    steps = keygen_check_steps(params, rotation_steps)
    primes = params.ring.primes
    t = ring.tables(params.degree, primes)
    signed = ring.sample_signed("ternary", params.degree, rng)
    s_eval = _eval_small(params, signed)
    sk = SecretKey(RingPoly(s_eval, primes, Domain.EVAL), signed)

    a = ring.sample_uniform_rows(params.degree, primes, rng)
    e = _eval_small(params, ring.sample_signed("error", params.degree, rng))
    b = t.sub(e, t.mul(a, s_eval))
    pk = PublicKey(RingPoly(b, primes, Domain.EVAL), RingPoly(a, primes, Domain.EVAL))

    rlk = _make_switch_key(params, sk, t.mul(s_eval, s_eval), rng)

    keys: dict[int, SwitchKey] = {}
    for s in steps:
        g = galois_element(s, params)
        if g not in keys:
            target = _eval_small(params, ring.automorphism_signed(signed, g))
            keys[g] = _make_switch_key(params, sk, target, rng)
    return sk, pk, rlk, GaloisKeys(steps, keys)


# ---------------------------------------------------------------- ciphertexts


@dataclass(frozen=True)
class Ciphertext:
    parts: tuple[RingPoly, ...]  # evaluation domain
    scale: float
    level: int

    @property
    def size(self) -> int:
        return len(self.parts)

    @property
    def primes(self) -> tuple[int, ...]:
        return self.parts[0].primes


def _wrap(rows: np.ndarray, primes) -> RingPoly:
    return RingPoly(rows, primes, Domain.EVAL)


def _mod_down(rows: np.ndarray, ext_primes: tuple[int, ...]) -> np.ndarray:
    return ring.divide_round_last_eval(rows, ext_primes)


def encrypt(params: SchemeParams, pt: Plaintext, pk: PublicKey | None, rng: np.random.Generator) -> Ciphertext:
    """Public-key encryption performed over Q*P, then divided by P to shrink the noise."""
    if pk is None:
        raise MissingKey("encryption needs the public key")
    if not 0 <= pt.level <= params.max_level:
        raise LevelMismatch(f"plaintext level {pt.level} outside the chain")
    level = pt.level
    ext = params.key_primes(level)
    rows = list(range(level + 1)) + [len(params.ring.primes) - 1]
    t = ring.tables(params.degree, ext)
    pk_b = pk.b.coeffs[rows]
    pk_a = pk.a.coeffs[rows]
    u = t.forward(t.reduce_signed(ring.sample_signed("ternary", params.degree, rng)))
    e0 = t.forward(t.reduce_signed(ring.sample_signed("error", params.degree, rng)))
    e1 = t.forward(t.reduce_signed(ring.sample_signed("error", params.degree, rng)))
    special = params.special_prime
    p_mod = np.array([special % q for q in ext[:-1]], dtype=np.uint64).reshape(-1, 1)
    m_lift = np.zeros((len(ext), params.degree), dtype=np.uint64)
    m_lift[:-1] = ring.tables(params.degree, ext[:-1]).mul(pt.poly.coeffs, p_mod)
    c0 = t.add(t.add(t.mul(pk_b, u), e0), m_lift)
    c1 = t.add(t.mul(pk_a, u), e1)
    primes = params.level_primes(level)
    return Ciphertext((_wrap(_mod_down(c0, ext), primes), _wrap(_mod_down(c1, ext), primes)), pt.scale, level)


def decrypt(params: SchemeParams, ct: Ciphertext, sk: SecretKey | None) -> Plaintext:
    if sk is None:
        raise MissingKey("decryption needs the secret key")
    primes = ct.primes
    t = ring.tables(params.degree, primes)
    s = sk.s.coeffs[: len(primes)]
    acc = ct.parts[0].coeffs
    s_pow = s
    for part in ct.parts[1:]:
        acc = t.add(acc, t.mul(part.coeffs, s_pow))
        s_pow = t.mul(s_pow, s)
    return Plaintext(RingPoly(acc, primes, Domain.EVAL), ct.scale, ct.level)


def _same_scale(a: float, b: float) -> bool:
    return abs(a - b) <= SCALE_RTOL * max(abs(a), abs(b))


def check_compatible(level_a: int, scale_a: float, level_b: int, scale_b: float) -> None:
    if level_a != level_b:
        raise LevelMismatch(f"operands at levels {level_a} and {level_b}")
    if not _same_scale(scale_a, scale_b):
        raise ScaleMismatch(f"operand scales {scale_a:.6g} and {scale_b:.6g} differ")


def _pad_parts(ct: Ciphertext, size: int) -> tuple[np.ndarray, ...]:
    parts = [p.coeffs for p in ct.parts]
    zero = np.zeros_like(parts[0])
    return tuple(parts + [zero] * (size - len(parts)))


def eval_add(params: SchemeParams, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    check_compatible(a.level, a.scale, b.level, b.scale)
    size = max(a.size, b.size)
    t = ring.tables(params.degree, a.primes)
    parts = tuple(_wrap(t.add(x, y), a.primes) for x, y in zip(_pad_parts(a, size), _pad_parts(b, size)))
    return Ciphertext(parts, a.scale, a.level)


def eval_negate(params: SchemeParams, a: Ciphertext) -> Ciphertext:
    t = ring.tables(params.degree, a.primes)
    return Ciphertext(tuple(_wrap(t.neg(p.coeffs), a.primes) for p in a.parts), a.scale, a.level)


def eval_sub(params: SchemeParams, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    return eval_add(params, a, eval_negate(params, b))


def eval_add_plain(params: SchemeParams, a: Ciphertext, pt: Plaintext) -> Ciphertext:
    check_compatible(a.level, a.scale, pt.level, pt.scale)
    t = ring.tables(params.degree, a.primes)
    c0 = _wrap(t.add(a.parts[0].coeffs, pt.poly.coeffs), a.primes)
    return Ciphertext((c0,) + a.parts[1:], a.scale, a.level)


def eval_sub_plain(params: SchemeParams, a: Ciphertext, pt: Plaintext) -> Ciphertext:
    check_compatible(a.level, a.scale, pt.level, pt.scale)
    t = ring.tables(params.degree, a.primes)
    c0 = _wrap(t.sub(a.parts[0].coeffs, pt.poly.coeffs), a.primes)
    return Ciphertext((c0,) + a.parts[1:], a.scale, a.level)


def check_mul(params: SchemeParams, level_a: int, scale_a: float, level_b: int, scale_b: float,
              auto_rescale: bool) -> None:
    """Shared pre-checks for any product (both backends call this)."""
    if level_a != level_b:
        raise LevelMismatch(f"operands at levels {level_a} and {level_b}")
    if auto_rescale and level_a < 1:
        raise LevelExhausted("no level left to rescale after multiplication")
    modulus_bits = sum(math.log2(p) for p in params.level_primes(level_a))
    if math.log2(scale_a) + math.log2(scale_b) + 1 >= modulus_bits:
        raise ScaleOverflow(
            f"product scale 2^{math.log2(scale_a) + math.log2(scale_b):.1f} exceeds the level modulus"
        )


def check_rescale(params: SchemeParams, level: int, scale: float) -> None:
    if level < 1:
        raise LevelExhausted("rescale at level 0")
    if scale < params.data_primes[level]:
        raise ScaleMismatch(f"scale {scale:.6g} is below the prime being dropped")


def rescaled_scale(params: SchemeParams, level: int, scale: float) -> float:
    return scale / params.data_primes[level]


def _switch(params: SchemeParams, d_eval: np.ndarray, key: SwitchKey, level: int) -> tuple[np.ndarray, np.ndarray]:
    """Key-switch an eval-domain polynomial at ``level``; returns (c0, c1) eval rows."""
    degree = params.degree
    primes = params.level_primes(level)
    ext = params.key_primes(level)
    n_digits = level + 1
    n_ext = len(ext)
    d = ring.tables(degree, primes).inverse(d_eval).astype(np.int64)
    q_col = np.array(primes, dtype=np.int64).reshape(-1, 1)
    d = np.where(d > q_col // 2, d - q_col, d)  # centered digits halve the switching noise
    ext_col = np.array(ext, dtype=np.int64).reshape(1, -1, 1)
    lifted = np.mod(d[:, None, :], ext_col).astype(np.uint64).reshape(n_digits * n_ext, degree)
    row_tab = np.tile(np.arange(n_ext, dtype=np.int64), n_digits)
    t = ring.tables(degree, ext)
    lifted = t.forward(lifted, row_tab)
    key_rows = list(range(level + 1)) + [len(params.ring.primes) - 1]
    out = []
    for half in (key.b, key.a_prefix(n_digits)):
        k = np.ascontiguousarray(half[:n_digits][:, key_rows].reshape(n_digits * n_ext, degree))
        prod = t.mul(lifted, k, row_tab).reshape(n_digits, n_ext, degree)
        if n_digits * max(ext) < 2**64:
            acc = prod.sum(axis=0, dtype=np.uint64) % t.col
        else:  # pragma: no cover - only with primes near 2^61
            acc = prod[0]
            for i in range(1, n_digits):
                acc = t.add(acc, prod[i])
        out.append(_mod_down(acc, ext))
    return out[0], out[1]


def relinearize(params: SchemeParams, ct: Ciphertext, rlk: RelinKey | None) -> Ciphertext:
    if ct.size == 2:
        return ct
    if rlk is None:
        raise MissingKey("relinearization needs the relinearization key")
    k0, k1 = _switch(params, ct.parts[2].coeffs, rlk, ct.level)
    t = ring.tables(params.degree, ct.primes)
    c0 = t.add(ct.parts[0].coeffs, k0)
    c1 = t.add(ct.parts[1].coeffs, k1)
    return Ciphertext((_wrap(c0, ct.primes), _wrap(c1, ct.primes)), ct.scale, ct.level)


def rescale(params: SchemeParams, ct: Ciphertext) -> Ciphertext:
    check_rescale(params, ct.level, ct.scale)
    primes = ct.primes
    parts = tuple(_wrap(ring.divide_round_last_eval(p.coeffs, primes), primes[:-1]) for p in ct.parts)
    return Ciphertext(parts, rescaled_scale(params, ct.level, ct.scale), ct.level - 1)


def mod_switch_to(params: SchemeParams, ct: Ciphertext, level: int) -> Ciphertext:
    """Drop primes down to ``level`` without changing the scale."""
    if level > ct.level or level < 0:
        raise LevelMismatch(f"cannot switch from level {ct.level} to {level}")
    if level == ct.level:
        return ct
    primes = ct.primes[: level + 1]
    return Ciphertext(tuple(_wrap(p.coeffs[: level + 1], primes) for p in ct.parts), ct.scale, level)


def mod_switch_plain(params: SchemeParams, pt: Plaintext, level: int) -> Plaintext:
    if level > pt.level:
        raise LevelMismatch(f"cannot switch plaintext from level {pt.level} to {level}")
    primes = pt.poly.primes[: level + 1]
    return Plaintext(RingPoly(pt.poly.coeffs[: level + 1], primes, Domain.EVAL), pt.scale, level)


def eval_mul(params: SchemeParams, a: Ciphertext, b: Ciphertext, rlk: RelinKey | None,
             auto_rescale: bool = True, auto_relin: bool = True) -> Ciphertext:
    check_mul(params, a.level, a.scale, b.level, b.scale, auto_rescale)
    if a.size != 2 or b.size != 2:
        raise ParamMismatch("ciphertext products need size-2 operands")
    if auto_relin and rlk is None:
        raise MissingKey("ciphertext multiplication needs the relinearization key")
    t = ring.tables(params.degree, a.primes)
    a0, a1 = (p.coeffs for p in a.parts)
    b0, b1 = (p.coeffs for p in b.parts)
    d0 = t.mul(a0, b0)
    d1 = t.add(t.mul(a0, b1), t.mul(a1, b0))
    d2 = t.mul(a1, b1)
    out = Ciphertext(tuple(_wrap(x, a.primes) for x in (d0, d1, d2)), a.scale * b.scale, a.level)
    if auto_relin:
        out = relinearize(params, out, rlk)
    if auto_rescale:
        out = rescale(params, out)
    return out


def eval_square(params: SchemeParams, a: Ciphertext, rlk: RelinKey | None,
                auto_rescale: bool = True, auto_relin: bool = True) -> Ciphertext:
    return eval_mul(params, a, a, rlk, auto_rescale, auto_relin)


def eval_mul_plain(params: SchemeParams, a: Ciphertext, pt: Plaintext, auto_rescale: bool = True) -> Ciphertext:
    check_mul(params, a.level, a.scale, pt.level, pt.scale, auto_rescale)
    t = ring.tables(params.degree, a.primes)
    parts = tuple(_wrap(t.mul(p.coeffs, pt.poly.coeffs), a.primes) for p in a.parts)
    out = Ciphertext(parts, a.scale * pt.scale, a.level)
    if auto_rescale:
        out = rescale(params, out)
    return out


# ---------------------------------------------------------------- rotation


def normalize_step(step: int, slots: int) -> int:
    return int(step) % slots


@functools.lru_cache(maxsize=1024)
def _rotation_paths(available: frozenset, slots: int) -> dict[int, tuple[int, ...]]:
    """Shortest decomposition of every reachable left step into available key steps."""
    gens = sorted(available)
    paths: dict[int, tuple[int, ...]] = {0: ()}
    queue = deque([0])
    while queue:
        cur = queue.popleft()
        for g in gens:
            nxt = (cur + g) % slots
            if nxt not in paths:
                paths[nxt] = paths[cur] + (g,)
                queue.append(nxt)
    return paths


def plan_rotation(step: int, available_steps, slots: int) -> tuple[int, ...]:
    """Key steps (normalized, left) whose composition equals ``step``; raises MissingGaloisKey."""
    target = normalize_step(step, slots)
    if target == 0:
        return ()
    avail = frozenset(normalize_step(s, slots) for s in available_steps) - {0}
    if target in avail:
        return (target,)
    path = _rotation_paths(avail, slots).get(target)
    if path is None:
        raise MissingGaloisKey(f"no Galois keys compose a rotation by {step}")
    return path


def _rotate_once(params: SchemeParams, ct: Ciphertext, step: int, key: SwitchKey) -> Ciphertext:
    g = galois_element(step, params)
    perm = ring.galois_permutation(params.degree, g)
    c0 = ct.parts[0].coeffs[:, perm]
    c1 = ct.parts[1].coeffs[:, perm]
    k0, k1 = _switch(params, c1, key, ct.level)
    t = ring.tables(params.degree, ct.primes)
    return Ciphertext((_wrap(t.add(c0, k0), ct.primes), _wrap(k1, ct.primes)), ct.scale, ct.level)


def eval_rotate(params: SchemeParams, ct: Ciphertext, steps: int, gk: GaloisKeys | None) -> Ciphertext:
    """Rotate slots left by ``steps`` (negative rotates right)."""
    if gk is None:
        raise MissingGaloisKey("rotation needs Galois keys")
    if ct.size != 2:
        raise ParamMismatch("rotation needs a relinearized ciphertext")
    plan = plan_rotation(steps, gk.steps, params.slot_count)
    for s in plan:
        ct = _rotate_once(params, ct, s, gk.keys[galois_element(s, params)])
    return ct
