"""RC4 stream cipher.

RC4 is weak (biased early keystream, no integrity). It is kept here because
archives written by the original tooling use it; do not use it for new data.

A numba-compiled keystream loop is used when numba is importable; the pure
Python loop is always available and gives identical output.
"""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from .errors import EmptyKey

logger = logging.getLogger(__name__)

try:  # optional accelerator
    from numba import njit
except ImportError:  # pragma: no cover - depends on the environment
    njit = None


def _ksa_python(key: bytes, on_step: Callable[[int, list[int]], None] | None = None) -> list[int]:
    S = list(range(256))
    j = 0
    n = len(key)
    for i in range(256):
        j = (j + S[i] + key[i % n]) & 0xFF
        S[i], S[j] = S[j], S[i]
        if on_step is not None:
            on_step(i, S)
    return S


def _xor_python(S: list[int], i: int, j: int, data: bytes) -> tuple[bytes, int, int]:
    out = bytearray(len(data))
    for k, byte in enumerate(data):
        i = (i + 1) & 0xFF
        si = S[i]
        j = (j + si) & 0xFF
        sj = S[j]
        S[i], S[j] = sj, si
        out[k] = byte ^ S[(si + sj) & 0xFF]
    return bytes(out), i, j


if njit is not None:
    @njit(cache=True, nogil=True)
    def _xor_numba(S, i, j, data, out):  # pragma: no cover - compiled
        for k in range(data.shape[0]):
            i = (i + 1) & 0xFF
            si = S[i]
            j = (j + si) & 0xFF
            sj = S[j]
            S[i] = sj
            S[j] = si
            out[k] = data[k] ^ S[(si + sj) & 0xFF]
        return i, j
else:  # pragma: no cover
    _xor_numba = None

# below this many bytes the Python loop beats the call overhead
_NUMBA_MIN_BYTES = 4096


def _check_key(key) -> bytes:
    if isinstance(key, str):
        key = key.encode("utf-8")
    key = bytes(key)
    if not key:
        raise EmptyKey("RC4 key must not be empty")
    if len(key) > 256:
        raise EmptyKey(f"RC4 key is {len(key)} bytes, at most 256 are used")
    return key


class Rc4State:
    """Keystream generator state: permutation ``S`` and PRGA indices."""

    def __init__(self, S: list[int], i: int = 0, j: int = 0, use_numba: bool | None = None):
        self.S = list(S)
        self.i = i
        self.j = j
        self.use_numba = (_xor_numba is not None) if use_numba is None else (use_numba and _xor_numba is not None)

    def step(self) -> int:
        """One PRGA step; returns the keystream byte."""
        self.i = (self.i + 1) & 0xFF
        S = self.S
        self.j = (self.j + S[self.i]) & 0xFF
        S[self.i], S[self.j] = S[self.j], S[self.i]
        return S[(S[self.i] + S[self.j]) & 0xFF]

    def keystream(self, n: int) -> bytes:
        return self.apply(bytes(n))

    def apply(self, data: bytes) -> bytes:
        """XOR ``data`` with the next ``len(data)`` keystream bytes."""
        data = bytes(data)
        if self.use_numba and len(data) >= _NUMBA_MIN_BYTES:
            S = np.array(self.S, dtype=np.uint8)
            out = np.empty(len(data), dtype=np.uint8)
            i, j = _xor_numba(S, np.int64(self.i), np.int64(self.j), np.frombuffer(data, dtype=np.uint8), out)
            self.S, self.i, self.j = S.tolist(), int(i), int(j)
            return out.tobytes()
        result, self.i, self.j = _xor_python(self.S, self.i, self.j, data)
        return result

    def copy(self) -> "Rc4State":
        return Rc4State(self.S, self.i, self.j, self.use_numba)


def ksa(key, on_step: Callable[[int, list[int]], None] | None = None, use_numba: bool | None = None) -> Rc4State:
    """Key-scheduling; ``on_step(i, S)`` sees the table after each swap."""
    return Rc4State(_ksa_python(_check_key(key), on_step), use_numba=use_numba)


def rc4_apply(key, data: bytes, use_numba: bool | None = None) -> bytes:
    return ksa(key, use_numba=use_numba).apply(data)


def keystream(key, n: int) -> bytes:
    return ksa(key).keystream(n)
