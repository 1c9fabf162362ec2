"""Pure-python/NumPy implementations of the hot kernels.

Same results, bit for bit, as the compiled lane in ``_core``; only speed
differs. SipHash-2-4 is integer math so equality is exact, and the margin
transform is a single fused expression in both lanes.
"""

import struct

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF


def _rotl(x: int, b: int) -> int:
    return ((x << b) & _MASK) | (x >> (64 - b))


def _sipround(v0: int, v1: int, v2: int, v3: int):
    v0 = (v0 + v1) & _MASK
    v1 = _rotl(v1, 13) ^ v0
    v0 = _rotl(v0, 32)
    v2 = (v2 + v3) & _MASK
    v3 = _rotl(v3, 16) ^ v2
    v0 = (v0 + v3) & _MASK
    v3 = _rotl(v3, 21) ^ v0
    v2 = (v2 + v1) & _MASK
    v1 = _rotl(v1, 17) ^ v2
    v2 = _rotl(v2, 32)
    return v0, v1, v2, v3


def siphash64(key: bytes, message: bytes) -> int:
    """SipHash-2-4 of ``message`` under a 16-byte ``key``, as unsigned 64-bit."""
    if len(key) != 16:
        raise ValueError("siphash64 key must be exactly 16 bytes")
    k0, k1 = struct.unpack("<QQ", key)
    v0 = k0 ^ 0x736F6D6570736575
    v1 = k1 ^ 0x646F72616E646F6D
    v2 = k0 ^ 0x6C7967656E657261
    v3 = k1 ^ 0x7465646279746573
    n = len(message)
    end = n - (n % 8)
    for off in range(0, end, 8):
        m = int.from_bytes(message[off:off + 8], "little")
        v3 ^= m
        v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
        v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
        v0 ^= m
    m = int.from_bytes(message[end:], "little") | ((n & 0xFF) << 56)
    v3 ^= m
    v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    v0 ^= m
    v2 ^= 0xFF
    for _ in range(4):
        v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    return (v0 ^ v1 ^ v2 ^ v3) & _MASK


def siphash64_many(key: bytes, messages) -> np.ndarray:
    """Hash a sequence of byte strings; returns uint64 array of len(messages)."""
    out = np.empty(len(messages), dtype=np.uint64)
    for i, msg in enumerate(messages):
        out[i] = siphash64(key, msg)
    return out


def margin_from_probs(probs: np.ndarray) -> np.ndarray:
    """Distance of each probability from the 0.5 decision boundary, |2p - 1|."""
    p = np.asarray(probs, dtype=np.float64)
    return np.abs(2.0 * p - 1.0)
