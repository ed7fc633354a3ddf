"""Pure numpy implementation of the RNS kernels.

Same signatures and in-place semantics as the compiled ``_kernels`` module.
Modular products use a float64 quotient estimate for primes below 2**50 and
Python integers above that.
"""

from __future__ import annotations

import numpy as np

NAME = "fallback"

_FLOAT_OK = 1 << 50
_DIRECT_OK = 1 << 32


def _mulmod(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Elementwise a*b mod p; ``p`` broadcasts against a and b (all uint64)."""
    pmax = int(p.max())
    if pmax < _DIRECT_OK:
        return (a * b) % p
    if pmax < _FLOAT_OK:
        pf = p.astype(np.float64)
        q = np.floor(a.astype(np.float64) * b.astype(np.float64) / pf).astype(np.uint64)
        r = (a * b - q * p).view(np.int64)
        pi = p.astype(np.int64)
        r = np.where(r < 0, r + pi, r)
        r = np.where(r >= pi, r - pi, r)
        return r.view(np.uint64)
    a_o = a.astype(object)
    b_o = b.astype(object)
    p_o = np.broadcast_to(p, np.broadcast_shapes(a.shape, b.shape, p.shape)).astype(object)
    return ((a_o * b_o) % p_o).astype(np.uint64)


def _addmod(a, b, p):
    s = a + b
    return np.where(s >= p, s - p, s)


def _submod(a, b, p):
    return np.where(a >= b, a - b, a + p - b)


def ntt_forward(a, row_tab, psi, psi_shoup, primes, nthreads=1):
    rows, n = a.shape
    p = primes[row_tab].reshape(rows, 1, 1)
    w_all = psi[row_tab]
    m, t = 1, n
    while m < n:
        t >>= 1
        view = a.reshape(rows, m, 2, t)
        u = view[:, :, 0, :].copy()
        v = _mulmod(view[:, :, 1, :], w_all[:, m:2 * m, None], p)
        view[:, :, 0, :] = _addmod(u, v, p)
        view[:, :, 1, :] = _submod(u, v, p)
        m <<= 1


def ntt_inverse(a, row_tab, ipsi, ipsi_shoup, primes, ninv, ninv_shoup, nthreads=1):
    rows, n = a.shape
    p = primes[row_tab].reshape(rows, 1, 1)
    w_all = ipsi[row_tab]
    h, t = n >> 1, 1
    while h >= 1:
        view = a.reshape(rows, h, 2, t)
        u = view[:, :, 0, :].copy()
        v = view[:, :, 1, :].copy()
        view[:, :, 0, :] = _addmod(u, v, p)
        view[:, :, 1, :] = _mulmod(_submod(u, v, p), w_all[:, h:2 * h, None], p)
        h >>= 1
        t <<= 1
    a[...] = _mulmod(a, ninv[row_tab].reshape(rows, 1), primes[row_tab].reshape(rows, 1))


def mulmod(a, b, out, row_tab, primes, mu, shift, nthreads=1):
    out[...] = _mulmod(a, b, primes[row_tab].reshape(-1, 1))
