"""Key-rate arithmetic and Toeplitz privacy amplification.

The asymptotic secret fraction is r = 1 - h(Q) - leak, with h the binary
entropy and leak the disclosed-bits-per-key-bit ratio of error correction.
Compression applies a random Toeplitz matrix over GF(2); the matrix is fully
described by its diagonal bit string, entry (i, j) = diag_bits[i - j + in_len - 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .bits import bits_to_hex, hex_to_bits
from .errors import InvalidParameterError, ProtocolError


def binary_entropy(x: float) -> float:
    """h(x) = -x log2 x - (1-x) log2 (1-x), with h(0) = h(1) = 0."""
    if not 0 <= x <= 1:
        raise InvalidParameterError("binary entropy argument must lie in [0, 1]")
    if x == 0 or x == 1:
        return 0.0
    return -x * math.log2(x) - (1 - x) * math.log2(1 - x)


def key_rate(q: float, leak: float) -> float:
    """Secret bits per reconciled key bit; r <= 0 means no secure key."""
    if not 0 <= q <= 1 or not 0 <= leak <= 1:
        raise InvalidParameterError("key_rate inputs must lie in [0, 1]")
    return 1.0 - binary_entropy(q) - leak


@dataclass(frozen=True)
class ToeplitzExtractor:
    """out_len x in_len Toeplitz matrix over GF(2).

    diag_bits has length out_len + in_len - 1 and indexes the anti-diagonals:
    entry (i, j) = diag_bits[i - j + in_len - 1].
    """

    out_len: int
    in_len: int
    diag_bits: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if not 0 < self.out_len <= self.in_len:
            raise InvalidParameterError("need 0 < out_len <= in_len")
        diag = np.asarray(self.diag_bits, dtype=np.uint8)
        if diag.size != self.out_len + self.in_len - 1:
            raise InvalidParameterError(
                f"diag_bits must hold {self.out_len + self.in_len - 1} bits"
            )
        object.__setattr__(self, "diag_bits", diag)

    def entry(self, i: int, j: int) -> int:
        return int(self.diag_bits[i - j + self.in_len - 1])

    def dense(self) -> np.ndarray:
        i = np.arange(self.out_len)[:, None]
        j = np.arange(self.in_len)[None, :]
        return self.diag_bits[i - j + self.in_len - 1]


def build_toeplitz(out_len: int, in_len: int, seed: int) -> ToeplitzExtractor:
    """Draw the diagonal bits from a seeded uniform stream."""
    if out_len > in_len:
        raise InvalidParameterError("out_len may not exceed in_len")
    rng = np.random.default_rng(seed)
    diag = rng.integers(0, 2, size=out_len + in_len - 1, dtype=np.uint8)
    return ToeplitzExtractor(out_len, in_len, diag, seed=seed)


def compress(t: ToeplitzExtractor, k: np.ndarray) -> np.ndarray:
    """GF(2) product T k via FFT convolution.

    out[i] = sum_j diag[i - j + in_len - 1] k[j] mod 2, i.e. the slice
    [in_len-1, in_len-1+out_len) of conv(k, diag). Counts stay far below the
    float64 integer limit, so rounding is exact.
    """
    k = np.asarray(k, dtype=np.uint8)
    if k.size != t.in_len:
        raise ProtocolError(f"input length {k.size} != extractor in_len {t.in_len}")
    conv = fftconvolve(k.astype(np.float64), t.diag_bits.astype(np.float64))
    window = conv[t.in_len - 1: t.in_len - 1 + t.out_len]
    return (np.rint(window).astype(np.int64) % 2).astype(np.uint8)


def compress_dense(t: ToeplitzExtractor, k: np.ndarray) -> np.ndarray:
    """Naive dense GF(2) product; reference implementation for the fast path."""
    k = np.asarray(k, dtype=np.uint8)
    if k.size != t.in_len:
        raise ProtocolError(f"input length {k.size} != extractor in_len {t.in_len}")
    return (t.dense().astype(np.int64) @ k.astype(np.int64) % 2).astype(np.uint8)


def extractor_to_wire(t: ToeplitzExtractor) -> str:
    """Wire form: `out_len in_len` on the first line, diag bits as hex after."""
    return f"{t.out_len} {t.in_len}\n{bits_to_hex(t.diag_bits)}\n"


def extractor_from_wire(text: str) -> ToeplitzExtractor:
    lines = text.strip().splitlines()
    if len(lines) != 2:
        raise ProtocolError("malformed extractor message")
    out_len, in_len = (int(v) for v in lines[0].split())
    diag = hex_to_bits(lines[1], out_len + in_len - 1)
    return ToeplitzExtractor(out_len, in_len, diag)
