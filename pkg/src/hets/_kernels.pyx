# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RNS kernels: negacyclic NTT and modular products.

All arrays are C-contiguous uint64 of shape (rows, N). ``row_tab[r]`` picks
which per-prime table row ``r`` uses, so a single call can transform a stack
of residue rows that belong to different primes.
"""

from cython.parallel cimport prange
from libc.stdint cimport uint64_t, int64_t

cdef extern from *:
    ctypedef unsigned long long u128 "unsigned __int128"

NAME = "compiled"


cdef inline uint64_t _csub(uint64_t x, uint64_t p) noexcept nogil:
    # x - p when x >= p, without a data-dependent branch
    return x - (p & (<uint64_t>0 - <uint64_t>(x >= p)))


cdef inline uint64_t _mul_shoup(uint64_t a, uint64_t w, uint64_t wq, uint64_t p) noexcept nogil:
    cdef uint64_t q = <uint64_t>((<u128>a * wq) >> 64)
    return _csub(a * w - q * p, p)


cdef inline uint64_t _mul_barrett(uint64_t a, uint64_t b, uint64_t p, uint64_t mu, int s) noexcept nogil:
    cdef u128 x = <u128>a * b
    cdef uint64_t hi = <uint64_t>(x >> (s - 1))
    cdef uint64_t q = <uint64_t>((<u128>hi * mu) >> (s + 1))
    cdef uint64_t r = <uint64_t>x - q * p
    while r >= p:
        r -= p
    return r


cdef void _fwd_row(uint64_t* a, Py_ssize_t n, const uint64_t* w, const uint64_t* wq, uint64_t p) noexcept nogil:
    cdef Py_ssize_t t = n, m = 1, i, j, j1, j2
    cdef uint64_t u, v, W, Wq
    while m < n:
        t >>= 1
        for i in range(m):
            j1 = 2 * i * t
            j2 = j1 + t
            W = w[m + i]
            Wq = wq[m + i]
            for j in range(j1, j2):
                u = a[j]
                v = _mul_shoup(a[j + t], W, Wq, p)
                a[j] = _csub(u + v, p)
                a[j + t] = _csub(u + p - v, p)
        m <<= 1


cdef void _inv_row(uint64_t* a, Py_ssize_t n, const uint64_t* w, const uint64_t* wq,
                   uint64_t p, uint64_t ninv, uint64_t ninvq) noexcept nogil:
    cdef Py_ssize_t t = 1, m = n, h, i, j, j1, j2
    cdef uint64_t u, v, W, Wq
    while m > 1:
        j1 = 0
        h = m >> 1
        for i in range(h):
            j2 = j1 + t
            W = w[h + i]
            Wq = wq[h + i]
            for j in range(j1, j2):
                u = a[j]
                v = a[j + t]
                a[j] = _csub(u + v, p)
                a[j + t] = _mul_shoup(u + p - v, W, Wq, p)
            j1 += 2 * t
        t <<= 1
        m = h
    for j in range(n):
        a[j] = _mul_shoup(a[j], ninv, ninvq, p)


def ntt_forward(uint64_t[:, ::1] a, const int64_t[::1] row_tab, const uint64_t[:, ::1] psi,
                const uint64_t[:, ::1] psi_shoup, const uint64_t[::1] primes, int nthreads=1):
    cdef Py_ssize_t rows = a.shape[0], n = a.shape[1], r
    cdef int64_t k
    for r in prange(rows, nogil=True, num_threads=nthreads, schedule="static"):
        k = row_tab[r]
        _fwd_row(&a[r, 0], n, &psi[k, 0], &psi_shoup[k, 0], primes[k])


def ntt_inverse(uint64_t[:, ::1] a, const int64_t[::1] row_tab, const uint64_t[:, ::1] ipsi,
                const uint64_t[:, ::1] ipsi_shoup, const uint64_t[::1] primes, const uint64_t[::1] ninv,
                const uint64_t[::1] ninv_shoup, int nthreads=1):
    cdef Py_ssize_t rows = a.shape[0], n = a.shape[1], r
    cdef int64_t k
    for r in prange(rows, nogil=True, num_threads=nthreads, schedule="static"):
        k = row_tab[r]
        _inv_row(&a[r, 0], n, &ipsi[k, 0], &ipsi_shoup[k, 0], primes[k], ninv[k], ninv_shoup[k])


def mulmod(const uint64_t[:, ::1] a, const uint64_t[:, ::1] b, uint64_t[:, ::1] out, const int64_t[::1] row_tab,
           const uint64_t[::1] primes, const uint64_t[::1] mu, const int64_t[::1] shift, int nthreads=1):
    cdef Py_ssize_t rows = a.shape[0], n = a.shape[1], r, j
    cdef int64_t k
    cdef uint64_t p, m
    cdef int s
    for r in prange(rows, nogil=True, num_threads=nthreads, schedule="static"):
        k = row_tab[r]
        p = primes[k]
        m = mu[k]
        s = <int>shift[k]
        for j in range(n):
            out[r, j] = _mul_barrett(a[r, j], b[r, j], p, m, s)
