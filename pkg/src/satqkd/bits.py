"""Bit-array helpers.

Keys and syndromes travel through the pipeline as numpy uint8 arrays of 0/1.
Files and wire messages use packed bytes / lowercase hex, big-endian within
each byte, zero-padded at the tail.
"""

from __future__ import annotations

import numpy as np

from .errors import ProtocolError


def as_bits(values) -> np.ndarray:
    """Coerce a sequence/string of 0s and 1s to a uint8 bit array."""
    if isinstance(values, str):
        values = [int(c) for c in values]
    arr = np.asarray(values, dtype=np.uint8)
    if arr.ndim != 1 or np.any(arr > 1):
        raise ValueError("bit array must be one-dimensional with values in {0,1}")
    return arr


def bits_to_bytes(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def bytes_to_bits(data: bytes, n_bits: int | None = None) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if n_bits is not None:
        if n_bits > bits.size:
            raise ProtocolError(f"need {n_bits} bits, packed data holds only {bits.size}")
        bits = bits[:n_bits]
    return bits.astype(np.uint8)


def bits_to_hex(bits: np.ndarray) -> str:
    return bits_to_bytes(bits).hex()


def hex_to_bits(hex_str: str, n_bits: int) -> np.ndarray:
    return bytes_to_bits(bytes.fromhex(hex_str), n_bits)


def bits_to_int(bits: np.ndarray) -> int:
    """Big-endian: bits[0] is the most significant."""
    value = 0
    for b in np.asarray(bits, dtype=np.uint8):
        value = (value << 1) | int(b)
    return value


def int_to_bits(value: int, width: int) -> np.ndarray:
    if value < 0 or value >= (1 << width):
        raise ValueError(f"{value} does not fit in {width} bits")
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def random_bits(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=n, dtype=np.uint8)


def write_key_file(path, stage: str, bits: np.ndarray) -> None:
    """Key file format: one header line `stage,length_bits`, then lowercase hex."""
    with open(path, "w") as fh:
        fh.write(f"{stage},{len(bits)}\n")
        fh.write(bits_to_hex(bits) + "\n")


def read_key_file(path) -> tuple[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip()
        payload = fh.readline().strip()
    stage, length = header.split(",")
    return stage, hex_to_bits(payload, int(length))
