"""One-time Wegman-Carter MAC over syndrome messages.

The signature is a polynomial hash evaluated at a fixed pre-shared field
point: Sign(k, a, s) = (s_M k^M + ... + s_1 k^1 + a) mod q, and the tag XORs
the encoded signature with a fresh one-time pad k2. The field is the
Mersenne prime q = 2^127 - 1 and messages are split into 127-bit chunks, so
message length drives the polynomial degree, never the modulus. A small
test prime can be injected for unit tests but is refused in protocol mode.
"""

from __future__ import annotations

import hmac
from dataclasses import dataclass

import numpy as np

from .bits import bits_to_int, int_to_bits
from .errors import InvalidKeyError, InvalidParameterError

FIELD_PRIME = (1 << 127) - 1
CHUNK_BITS = 127
TAG_BITS = 128


@dataclass(frozen=True)
class MacKeys:
    """Fixed field keys (k, a) plus the per-message one-time pad k2.

    k and a are pre-shared and stable across a session set; k2 must be a
    fresh ledger allocation for every tag. q defaults to the protocol field
    prime; anything else marks test mode.
    """

    k: int
    a: int
    k2: np.ndarray
    q: int = FIELD_PRIME

    def __post_init__(self):
        if self.q < 2:
            raise InvalidParameterError("field modulus must be at least 2")
        if not (0 <= self.k < self.q and 0 <= self.a < self.q):
            raise InvalidKeyError("k and a must be reduced modulo the field prime")
        k2 = np.asarray(self.k2, dtype=np.uint8)
        if k2.size != tag_width(self.q):
            raise InvalidKeyError(f"k2 must hold {tag_width(self.q)} bits")
        object.__setattr__(self, "k2", k2)

    @property
    def protocol_mode(self) -> bool:
        return self.q == FIELD_PRIME


def tag_width(q: int = FIELD_PRIME) -> int:
    """Tag width in bits: 128 for the protocol field, bit length of q otherwise."""
    return TAG_BITS if q == FIELD_PRIME else q.bit_length()


def chunk_width(q: int = FIELD_PRIME) -> int:
    """Chunks must stay below the modulus."""
    return CHUNK_BITS if q == FIELD_PRIME else q.bit_length() - 1


def split_chunks(message_bits: np.ndarray, q: int = FIELD_PRIME) -> list[int]:
    """Split a bit string into field elements s(1..M'), zero-padding the tail."""
    message_bits = np.asarray(message_bits, dtype=np.uint8)
    width = chunk_width(q)
    chunks = []
    for start in range(0, message_bits.size, width):
        chunks.append(bits_to_int(message_bits[start:start + width]))
    return chunks


def wc_sign(k: int, a: int, chunks: list[int], q: int = FIELD_PRIME) -> int:
    """Horner evaluation of s_M k^M + ... + s_1 k + a mod q."""
    acc = 0
    for s in reversed(chunks):
        acc = (acc + s) * k % q
    return (acc + a) % q


def wc_tag(keys: MacKeys, message_bits: np.ndarray, protocol: bool = True) -> np.ndarray:
    """tag = k2 XOR Sign, the signature encoded big-endian at the tag width."""
    if protocol and not keys.protocol_mode:
        raise InvalidParameterError("small-prime MAC keys are refused in protocol mode")
    sign = wc_sign(keys.k, keys.a, split_chunks(message_bits, keys.q), keys.q)
    return keys.k2 ^ int_to_bits(sign, tag_width(keys.q))


def wc_verify(
    keys: MacKeys, message_bits: np.ndarray, tag: np.ndarray, protocol: bool = True
) -> bool:
    """Recompute the tag and compare in constant time; False means abort."""
    expected = wc_tag(keys, message_bits, protocol=protocol)
    return hmac.compare_digest(
        np.packbits(expected).tobytes(), np.packbits(np.asarray(tag, dtype=np.uint8)).tobytes()
    )
