"""Negacyclic polynomial ring Z_q[x]/(x^N + 1) in RNS form.

A :class:`RingPoly` stores one residue row per active prime as a read-only
``(L, N)`` uint64 array. Every operation returns a fresh polynomial.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np
from sympy.ntheory import isprime, primitive_root

from . import kernels
from .errors import DomainMismatch, InvalidParams, LevelExhausted, ParamMismatch

MAX_PRIME = 1 << 61
ERROR_STDDEV = 3.2
# centered binomial with 42 trials: variance 10.5, stddev 3.24
_CBD_TRIALS = 42
ERROR_BOUND = int(6 * ERROR_STDDEV)


class Domain(enum.Enum):
    COEFF = "coefficient"
    EVAL = "evaluation"


def find_primes(degree: int, bit_sizes: list[int] | tuple[int, ...]) -> tuple[int, ...]:
    """Smallest primes p ≡ 1 (mod 2N) above 2**bits for each requested size, all distinct."""
    step = 2 * degree
    chosen: list[int] = []
    for bits in bit_sizes:
        cand = ((1 << bits) // step + 1) * step + 1
        while cand in chosen or not isprime(cand):
            cand += step
        if cand >= MAX_PRIME:
            raise InvalidParams(f"no NTT prime of {bits} bits below 2^61 for N={degree}")
        chosen.append(cand)
    return tuple(chosen)


@dataclass(frozen=True)
class RingParams:
    degree: int
    primes: tuple[int, ...]

    def __post_init__(self):
        n = self.degree
        if n < 16 or n & (n - 1):
            raise InvalidParams(f"degree must be a power of two >= 16, got {n}")
        if not self.primes:
            raise InvalidParams("at least one prime is required")
        if len(set(self.primes)) != len(self.primes):
            raise InvalidParams("primes must be pairwise distinct")
        for p in self.primes:
            if p % (2 * n) != 1:
                raise InvalidParams(f"prime {p} is not 1 mod 2N")
            if p >= MAX_PRIME or p < 3:
                raise InvalidParams(f"prime {p} out of range")

    @property
    def modulus_bits(self) -> float:
        return sum(math.log2(p) for p in self.primes)


def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@functools.lru_cache(maxsize=None)
def _prime_table(degree: int, p: int):
    g = primitive_root(p)
    psi = pow(g, (p - 1) // (2 * degree), p)
    ipsi = pow(psi, -1, p)
    rev = _bitrev(degree)
    pw = [1] * degree
    ipw = [1] * degree
    for i in range(1, degree):
        pw[i] = pw[i - 1] * psi % p
        ipw[i] = ipw[i - 1] * ipsi % p
    fw = [pw[r] for r in rev]
    iw = [ipw[r] for r in rev]
    sh = lambda w: (w << 64) // p  # noqa: E731
    ninv = pow(degree, -1, p)
    return (
        np.array(fw, dtype=np.uint64),
        np.array([sh(w) for w in fw], dtype=np.uint64),
        np.array(iw, dtype=np.uint64),
        np.array([sh(w) for w in iw], dtype=np.uint64),
        ninv,
        sh(ninv),
    )


class Tables:
    """Stacked per-prime NTT and Barrett tables for one ordered prime list."""

    def __init__(self, degree: int, primes: tuple[int, ...]):
        self.degree = degree
        self.primes = primes
        rows = [_prime_table(degree, p) for p in primes]
        self.psi = np.ascontiguousarray(np.stack([r[0] for r in rows]))
        self.psi_shoup = np.ascontiguousarray(np.stack([r[1] for r in rows]))
        self.ipsi = np.ascontiguousarray(np.stack([r[2] for r in rows]))
        self.ipsi_shoup = np.ascontiguousarray(np.stack([r[3] for r in rows]))
        self.ninv = np.array([r[4] for r in rows], dtype=np.uint64)
        self.ninv_shoup = np.array([r[5] for r in rows], dtype=np.uint64)
        self.p = np.array(primes, dtype=np.uint64)
        self.shift = np.array([p.bit_length() for p in primes], dtype=np.int64)
        self.mu = np.array([(1 << (2 * p.bit_length())) // p for p in primes], dtype=np.uint64)
        self.identity = np.arange(len(primes), dtype=np.int64)
        self.col = self.p.reshape(-1, 1)

    def forward(self, a: np.ndarray, row_tab: np.ndarray | None = None) -> np.ndarray:
        out = np.array(a, dtype=np.uint64, order="C", copy=True)
        rt = self.identity if row_tab is None else row_tab
        kernels.impl.ntt_forward(out, rt, self.psi, self.psi_shoup, self.p, kernels.workers())
        return out

    def inverse(self, a: np.ndarray, row_tab: np.ndarray | None = None) -> np.ndarray:
        out = np.array(a, dtype=np.uint64, order="C", copy=True)
        rt = self.identity if row_tab is None else row_tab
        kernels.impl.ntt_inverse(
            out, rt, self.ipsi, self.ipsi_shoup, self.p, self.ninv, self.ninv_shoup, kernels.workers()
        )
        return out

    def mul(self, a: np.ndarray, b: np.ndarray, row_tab: np.ndarray | None = None) -> np.ndarray:
        a = np.ascontiguousarray(a, dtype=np.uint64)
        b = np.ascontiguousarray(np.broadcast_to(b, a.shape), dtype=np.uint64)
        out = np.empty_like(a)
        rt = self.identity if row_tab is None else row_tab
        kernels.impl.mulmod(a, b, out, rt, self.p, self.mu, self.shift, kernels.workers())
        return out

    def add(self, a, b, col=None):
        p = self.col if col is None else col
        s = a + b
        return np.where(s >= p, s - p, s)

    def sub(self, a, b, col=None):
        p = self.col if col is None else col
        return np.where(a >= b, a - b, a + p - b)

    def neg(self, a, col=None):
        p = self.col if col is None else col
        return np.where(a == 0, a, p - a)

    def reduce_signed(self, values: np.ndarray) -> np.ndarray:
        """Residues of an integer vector (int64 or Python-int object array) for every prime."""
        if values.dtype == object:
            return np.array([[int(v) % p for v in values] for p in self.primes], dtype=np.uint64)
        v = values.astype(np.int64)
        return np.stack([np.mod(v, np.int64(p)).astype(np.uint64) for p in self.primes])


@functools.lru_cache(maxsize=256)
def tables(degree: int, primes: tuple[int, ...]) -> Tables:
    return Tables(degree, primes)


class RingPoly:
    """An element of R_q held as residue rows; immutable."""

    __slots__ = ("coeffs", "primes", "degree", "domain")

    def __init__(self, coeffs: np.ndarray, primes: tuple[int, ...], domain: Domain = Domain.COEFF):
        arr = np.array(coeffs, dtype=np.uint64, order="C", copy=True)
        if arr.ndim != 2 or arr.shape[0] != len(primes):
            raise ParamMismatch(f"residue matrix shape {arr.shape} does not match {len(primes)} primes")
        arr.setflags(write=False)
        self.coeffs = arr
        self.primes = tuple(int(p) for p in primes)
        self.degree = arr.shape[1]
        self.domain = domain

    @classmethod
    def from_ints(cls, values, primes: tuple[int, ...]) -> "RingPoly":
        vals = np.asarray(values)
        if vals.dtype != object and np.issubdtype(vals.dtype, np.integer):
            vals = vals.astype(np.int64)
        else:
            vals = np.array([int(v) for v in values], dtype=object)
        return cls(tables(len(vals), tuple(primes)).reduce_signed(vals), primes)

    @classmethod
    def zero(cls, degree: int, primes: tuple[int, ...], domain: Domain = Domain.COEFF) -> "RingPoly":
        return cls(np.zeros((len(primes), degree), dtype=np.uint64), primes, domain)

    @property
    def tables(self) -> Tables:
        return tables(self.degree, self.primes)

    def to_ints(self) -> list[int]:
        """CRT-reconstruct centered integer coefficients (coefficient domain only)."""
        if self.domain is not Domain.COEFF:
            raise DomainMismatch("to_ints needs coefficient domain")
        return [int(v) for v in crt_centered(self.coeffs, self.primes)]

    def __eq__(self, other):
        return (
            isinstance(other, RingPoly)
            and self.primes == other.primes
            and self.domain == other.domain
            and np.array_equal(self.coeffs, other.coeffs)
        )

    def __repr__(self):
        return f"RingPoly(N={self.degree}, L={len(self.primes)}, domain={self.domain.value})"


def crt_centered(rows: np.ndarray, primes: tuple[int, ...]) -> np.ndarray:
    """Centered CRT lift of residue rows to an object array of Python ints."""
    if len(primes) == 1:
        p = primes[0]
        v = rows[0].astype(np.int64)
        return np.where(v > p // 2, v - p, v).astype(object)
    q = math.prod(primes)
    acc = np.zeros(rows.shape[1], dtype=object)
    for i, p in enumerate(primes):
        mi = q // p
        y = tables(rows.shape[1], (p,)).mul(rows[i : i + 1], np.uint64(pow(mi % p, -1, p)))[0]
        acc = acc + y.astype(object) * mi
    acc = acc % q
    half = q // 2
    return np.where(acc > half, acc - q, acc)


def _check_pair(a: RingPoly, b: RingPoly, same_domain: bool = True) -> None:
    if a.degree != b.degree or a.primes != b.primes:
        raise ParamMismatch("ring polynomials have different degree or prime lists")
    if same_domain and a.domain is not b.domain:
        raise ParamMismatch("ring polynomials are in different domains")


def ntt_transform(p: RingPoly, direction: str) -> RingPoly:
    """``direction`` is "forward" (coefficient → evaluation) or "inverse"."""
    if direction == "forward":
        if p.domain is not Domain.COEFF:
            raise DomainMismatch("forward NTT needs a coefficient-domain polynomial")
        return RingPoly(p.tables.forward(p.coeffs), p.primes, Domain.EVAL)
    if direction == "inverse":
        if p.domain is not Domain.EVAL:
            raise DomainMismatch("inverse NTT needs an evaluation-domain polynomial")
        return RingPoly(p.tables.inverse(p.coeffs), p.primes, Domain.COEFF)
    raise ValueError(f"unknown direction {direction!r}")


def to_eval(p: RingPoly) -> RingPoly:
    return p if p.domain is Domain.EVAL else ntt_transform(p, "forward")


def to_coeff(p: RingPoly) -> RingPoly:
    return p if p.domain is Domain.COEFF else ntt_transform(p, "inverse")


def poly_mul(a: RingPoly, b: RingPoly) -> RingPoly:
    """Negacyclic product; coefficient-domain inputs are transformed, output is in evaluation domain."""
    _check_pair(a, b, same_domain=False)
    ea, eb = to_eval(a), to_eval(b)
    return RingPoly(a.tables.mul(ea.coeffs, eb.coeffs), a.primes, Domain.EVAL)


def poly_add(a: RingPoly, b: RingPoly) -> RingPoly:
    _check_pair(a, b)
    return RingPoly(a.tables.add(a.coeffs, b.coeffs), a.primes, a.domain)


def poly_sub(a: RingPoly, b: RingPoly) -> RingPoly:
    _check_pair(a, b)
    return RingPoly(a.tables.sub(a.coeffs, b.coeffs), a.primes, a.domain)


def poly_negate(a: RingPoly) -> RingPoly:
    return RingPoly(a.tables.neg(a.coeffs), a.primes, a.domain)


def divide_round_last(rows: np.ndarray, primes: tuple[int, ...]) -> np.ndarray:
    """Coefficient-domain rows over ``primes`` → round(x / p_last) over ``primes[:-1]``."""
    last = primes[-1]
    rest = primes[:-1]
    t = tables(rows.shape[1], rest)
    r = rows[-1].astype(np.int64)
    centered = np.where(r > last // 2, r - last, r)
    r_mod = t.reduce_signed(centered)
    inv = np.array([pow(last, -1, q) for q in rest], dtype=np.uint64).reshape(-1, 1)
    return t.mul(t.sub(rows[:-1], r_mod), inv)


def drop_last_prime(p: RingPoly) -> RingPoly:
    """Round-divide by the last active prime and drop it (exact RNS rescale)."""
    if p.domain is not Domain.COEFF:
        raise DomainMismatch("drop_last_prime needs coefficient domain")
    if len(p.primes) < 2:
        raise LevelExhausted("cannot drop the only remaining prime")
    return RingPoly(divide_round_last(p.coeffs, p.primes), p.primes[:-1])


def sample_signed(kind: str, degree: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "ternary":
        return rng.integers(-1, 2, degree, dtype=np.int64)
    if kind == "error":
        v = rng.binomial(_CBD_TRIALS, 0.5, degree).astype(np.int64) - _CBD_TRIALS // 2
        return np.clip(v, -ERROR_BOUND, ERROR_BOUND)
    raise ValueError(f"unknown small distribution {kind!r}")


def sample_uniform_rows(degree: int, primes: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    return np.stack([rng.integers(0, p, degree, dtype=np.uint64) for p in primes])


def sample_poly(kind: str, params: RingParams, rng: np.random.Generator) -> RingPoly:
    """``kind`` is "ternary", "error" (centered binomial, stddev ≈ 3.2) or "uniform"."""
    if kind == "uniform":
        return RingPoly(sample_uniform_rows(params.degree, params.primes, rng), params.primes)
    return RingPoly.from_ints(sample_signed(kind, params.degree, rng), params.primes)


def divide_round_last_eval(rows: np.ndarray, primes: tuple[int, ...]) -> np.ndarray:
    """Evaluation-domain version of :func:`divide_round_last` (one inverse NTT, L-1 forward)."""
    degree = rows.shape[1]
    last = primes[-1]
    rest = primes[:-1]
    t_last = tables(degree, (last,))
    t = tables(degree, rest)
    r = t_last.inverse(rows[-1:])[0].astype(np.int64)
    centered = np.where(r > last // 2, r - last, r)
    r_eval = t.forward(t.reduce_signed(centered))
    inv = np.array([pow(last, -1, q) for q in rest], dtype=np.uint64).reshape(-1, 1)
    return t.mul(t.sub(rows[:-1], r_eval), inv)


def eval_exponents(degree: int) -> np.ndarray:
    """Odd exponent e_k such that evaluation slot k holds a(psi**e_k)."""
    return 2 * _bitrev(degree) + 1


@functools.lru_cache(maxsize=512)
def galois_permutation(degree: int, galois_elt: int) -> np.ndarray:
    """Gather indices mapping eval(a) to eval(a(x**galois_elt))."""
    e = eval_exponents(degree)
    index_of = np.empty(2 * degree, dtype=np.int64)
    index_of[e] = np.arange(degree)
    return index_of[(e * galois_elt) % (2 * degree)]


def automorphism_signed(values: np.ndarray, galois_elt: int) -> np.ndarray:
    """Apply x -> x**g to a signed coefficient vector (negacyclic wrap)."""
    n = len(values)
    idx = (np.arange(n) * galois_elt) % (2 * n)
    out = np.zeros_like(values)
    wrap = idx >= n
    out[idx[~wrap]] = values[~wrap]
    out[idx[wrap] - n] = -values[wrap]
    return out
