# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled lane for the hot kernels: SipHash-2-4 and the margin transform.

Must agree bit for bit with ``agilem.kernels.fallback``.
"""

from libc.stdint cimport uint8_t, uint64_t

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline uint64_t _rotl(uint64_t x, int b) nogil:
    return (x << b) | (x >> (64 - b))


cdef uint64_t _siphash24(uint64_t k0, uint64_t k1, const uint8_t *data, Py_ssize_t n) nogil:
    cdef uint64_t v0 = k0 ^ 0x736F6D6570736575ULL
    cdef uint64_t v1 = k1 ^ 0x646F72616E646F6DULL
    cdef uint64_t v2 = k0 ^ 0x6C7967656E657261ULL
    cdef uint64_t v3 = k1 ^ 0x7465646279746573ULL
    cdef uint64_t m
    cdef Py_ssize_t i, off
    cdef Py_ssize_t end = n - (n % 8)

    for off in range(0, end, 8):
        m = 0
        for i in range(8):
            m |= (<uint64_t>data[off + i]) << (8 * i)
        v3 ^= m
        # two compression rounds
        v0 += v1; v1 = _rotl(v1, 13); v1 ^= v0; v0 = _rotl(v0, 32)
        v2 += v3; v3 = _rotl(v3, 16); v3 ^= v2
        v0 += v3; v3 = _rotl(v3, 21); v3 ^= v0
        v2 += v1; v1 = _rotl(v1, 17); v1 ^= v2; v2 = _rotl(v2, 32)
        v0 += v1; v1 = _rotl(v1, 13); v1 ^= v0; v0 = _rotl(v0, 32)
        v2 += v3; v3 = _rotl(v3, 16); v3 ^= v2
        v0 += v3; v3 = _rotl(v3, 21); v3 ^= v0
        v2 += v1; v1 = _rotl(v1, 17); v1 ^= v2; v2 = _rotl(v2, 32)
        v0 ^= m

    m = (<uint64_t>(n & 0xFF)) << 56
    for i in range(end, n):
        m |= (<uint64_t>data[i]) << (8 * (i - end))
    v3 ^= m
    v0 += v1; v1 = _rotl(v1, 13); v1 ^= v0; v0 = _rotl(v0, 32)
    v2 += v3; v3 = _rotl(v3, 16); v3 ^= v2
    v0 += v3; v3 = _rotl(v3, 21); v3 ^= v0
    v2 += v1; v1 = _rotl(v1, 17); v1 ^= v2; v2 = _rotl(v2, 32)
    v0 += v1; v1 = _rotl(v1, 13); v1 ^= v0; v0 = _rotl(v0, 32)
    v2 += v3; v3 = _rotl(v3, 16); v3 ^= v2
    v0 += v3; v3 = _rotl(v3, 21); v3 ^= v0
    v2 += v1; v1 = _rotl(v1, 17); v1 ^= v2; v2 = _rotl(v2, 32)
    v0 ^= m

    v2 ^= 0xFF
    for i in range(4):
        v0 += v1; v1 = _rotl(v1, 13); v1 ^= v0; v0 = _rotl(v0, 32)
        v2 += v3; v3 = _rotl(v3, 16); v3 ^= v2
        v0 += v3; v3 = _rotl(v3, 21); v3 ^= v0
        v2 += v1; v1 = _rotl(v1, 17); v1 ^= v2; v2 = _rotl(v2, 32)
    return v0 ^ v1 ^ v2 ^ v3


cdef void _unpack_key(bytes key, uint64_t *k0, uint64_t *k1) except *:
    if len(key) != 16:
        raise ValueError("siphash64 key must be exactly 16 bytes")
    cdef const uint8_t *kp = <const uint8_t *>(<const char *>key)
    cdef uint64_t a = 0, b = 0
    cdef int i
    for i in range(8):
        a |= (<uint64_t>kp[i]) << (8 * i)
        b |= (<uint64_t>kp[8 + i]) << (8 * i)
    k0[0] = a
    k1[0] = b


def siphash64(key: bytes, message: bytes) -> int:
    """SipHash-2-4 of ``message`` under a 16-byte ``key``, as unsigned 64-bit."""
    cdef uint64_t k0, k1
    _unpack_key(key, &k0, &k1)
    cdef const uint8_t *mp = <const uint8_t *>(<const char *>message)
    return _siphash24(k0, k1, mp, len(message))


def siphash64_many(key: bytes, messages) -> cnp.ndarray:
    """Hash a sequence of byte strings; returns uint64 array of len(messages)."""
    cdef uint64_t k0, k1
    _unpack_key(key, &k0, &k1)
    cdef Py_ssize_t count = len(messages)
    out = np.empty(count, dtype=np.uint64)
    cdef uint64_t[::1] ov = out
    cdef Py_ssize_t i
    cdef bytes msg
    for i in range(count):
        msg = messages[i]
        ov[i] = _siphash24(k0, k1, <const uint8_t *>(<const char *>msg), len(msg))
    return out


def margin_from_probs(probs) -> cnp.ndarray:
    """Distance of each probability from the 0.5 decision boundary, |2p - 1|."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p = np.ascontiguousarray(probs, dtype=np.float64)
    out = np.empty(p.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef const double[::1] pv = p
    cdef Py_ssize_t i
    cdef double m
    with nogil:
        for i in range(pv.shape[0]):
            m = 2.0 * pv[i] - 1.0
            ov[i] = -m if m < 0.0 else m
    return out
