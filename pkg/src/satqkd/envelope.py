"""Layered encryption and pre-shared key management.

Payloads get an inner one-time-pad layer from banked QKD key (skippable by
policy when key is short) and an outer AES-256-CTR layer under a fixed
pre-shared key. Syndrome messages get the AES layer plus a one-time MAC tag.

Envelope wire format: 1-byte version (also the scheme id: 1 = AES-256-CTR),
1-byte flags (bit0 = OTP layer present), 12-byte nonce, 4-byte big-endian
ciphertext length, ciphertext.

Pre-shared pool layout: bytes [0, 32) AES key, [32, 48) MAC field key k,
[48, 64) MAC field key a, remainder one-time allocations (MAC pads k2,
bootstrap OTP material).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .bits import bits_to_bytes, bytes_to_bits
from .errors import (
    InsufficientKeyError,
    InvalidKeyError,
    LedgerError,
    NonceReuseError,
    ProtocolError,
)
from .wcmac import FIELD_PRIME, MacKeys, TAG_BITS, wc_tag, wc_verify

ENVELOPE_VERSION = 1
NONCE_BYTES = 12
AES_KEY_BYTES = 32
FLAG_OTP = 0x01

POOL_CIPHER_SPAN = (0, 32)
POOL_MAC_K_SPAN = (32, 48)
POOL_MAC_A_SPAN = (48, 64)
POOL_ONETIME_START = 64


# ---------------------------------------------------------------------------
# Pre-shared key ledger
# ---------------------------------------------------------------------------

class PresharedKeyLedger:
    """Partitioned pool of pre-shared secret bits.

    Fixed purposes (cipher key, MAC field keys) read stable spans; one-time
    purposes allocate fresh bits past the fixed region and are never
    re-issued, aborted sessions included.
    """

    def __init__(self, pool: bytes, cursor_bits: int | None = None, allocations=None):
        if len(pool) < POOL_ONETIME_START + 16:
            raise LedgerError("pre-shared pool too small for the fixed layout")
        self.pool = bytes(pool)
        self.cursor_bits = POOL_ONETIME_START * 8 if cursor_bits is None else cursor_bits
        self.allocations: list[tuple[str, int, int]] = list(allocations or [])
        self._purposes = {a[0] for a in self.allocations}

    def cipher_key(self) -> bytes:
        return self.pool[POOL_CIPHER_SPAN[0]:POOL_CIPHER_SPAN[1]]

    def mac_field_keys(self) -> tuple[int, int]:
        k = int.from_bytes(self.pool[POOL_MAC_K_SPAN[0]:POOL_MAC_K_SPAN[1]], "big") % FIELD_PRIME
        a = int.from_bytes(self.pool[POOL_MAC_A_SPAN[0]:POOL_MAC_A_SPAN[1]], "big") % FIELD_PRIME
        return k, a

    def allocate_once(self, purpose: str, n_bits: int) -> np.ndarray:
        """Consume n_bits for a one-time purpose; a purpose is issued once, ever."""
        if purpose in self._purposes:
            raise LedgerError(f"one-time purpose {purpose!r} was already issued")
        end = self.cursor_bits + n_bits
        if end > len(self.pool) * 8:
            raise LedgerError("pre-shared pool exhausted")
        bits = bytes_to_bits(self.pool, end)[self.cursor_bits:end]
        self.allocations.append((purpose, self.cursor_bits, n_bits))
        self._purposes.add(purpose)
        self.cursor_bits = end
        return bits

    def mac_keys_for(self, purpose: str) -> MacKeys:
        k, a = self.mac_field_keys()
        return MacKeys(k=k, a=a, k2=self.allocate_once(purpose, TAG_BITS))

    @property
    def consumed_bits(self) -> int:
        return self.cursor_bits

    def audit(self) -> None:
        """Raise if allocations overlap, repeat a purpose, or exceed the pool."""
        seen = set()
        spans = []
        for purpose, off, n in self.allocations:
            if purpose in seen:
                raise LedgerError(f"purpose {purpose!r} issued twice")
            seen.add(purpose)
            spans.append((off, off + n))
        spans.sort()
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if b0 < a1:
                raise LedgerError("overlapping one-time allocations")
        if spans and (spans[0][0] < POOL_ONETIME_START * 8 or spans[-1][1] > len(self.pool) * 8):
            raise LedgerError("allocation outside the one-time region")

    def to_dict(self) -> dict:
        return {
            "pool_hex": self.pool.hex(),
            "cursor_bits": self.cursor_bits,
            "allocations": [list(a) for a in self.allocations],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PresharedKeyLedger":
        return cls(
            bytes.fromhex(d["pool_hex"]),
            cursor_bits=d["cursor_bits"],
            allocations=[tuple(a) for a in d["allocations"]],
        )


# ---------------------------------------------------------------------------
# Banked QKD key store
# ---------------------------------------------------------------------------

class QkdKeyStore:
    """Accumulated QKD output consumed once, in order, as OTP material."""

    def __init__(self, bits: np.ndarray | None = None, consumed_bits: int = 0):
        self._bits = np.zeros(0, dtype=np.uint8) if bits is None else np.asarray(bits, dtype=np.uint8)
        self._consumed = consumed_bits

    def bank(self, bits: np.ndarray) -> None:
        self._bits = np.concatenate([self._bits, np.asarray(bits, dtype=np.uint8)])

    @property
    def available_bits(self) -> int:
        return int(self._bits.size - self._consumed)

    @property
    def consumed_bits(self) -> int:
        return self._consumed

    def take(self, n_bits: int) -> np.ndarray:
        if n_bits > self.available_bits:
            raise InsufficientKeyError(
                f"need {n_bits} QKD key bits, only {self.available_bits} banked"
            )
        pad = self._bits[self._consumed:self._consumed + n_bits]
        self._consumed += n_bits
        return pad

    def to_dict(self) -> dict:
        return {"key_hex": bits_to_bytes(self._bits).hex(),
                "length_bits": int(self._bits.size),
                "consumed_bits": self._consumed}

    @classmethod
    def from_dict(cls, d: dict) -> "QkdKeyStore":
        bits = bytes_to_bits(bytes.fromhex(d["key_hex"]), d["length_bits"])
        return cls(bits, consumed_bits=d["consumed_bits"])


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def otp_xor(z: np.ndarray, pad: np.ndarray) -> np.ndarray:
    """XOR a bit string with a pad prefix; self-inverse.

    The caller is responsible for marking the pad bits consumed (QkdKeyStore
    and the ledger never hand out the same bits twice).
    """
    z = np.asarray(z, dtype=np.uint8)
    pad = np.asarray(pad, dtype=np.uint8)
    if pad.size < z.size:
        raise InsufficientKeyError(f"pad holds {pad.size} bits, message needs {z.size}")
    return z ^ pad[: z.size]


def _aes_ctr(key: bytes, nonce: bytes):
    if len(key) != AES_KEY_BYTES:
        raise InvalidKeyError("AES-256 key must be exactly 32 bytes")
    if len(nonce) != NONCE_BYTES:
        raise InvalidKeyError("nonce must be exactly 12 bytes")
    return Cipher(algorithms.AES(key), modes.CTR(nonce + b"\x00" * 4))


def aes256_ctr_transform(data: bytes, key: bytes, nonce: bytes) -> bytes:
    """Raw AES-256-CTR keystream XOR (encrypt and decrypt are the same map)."""
    enc = _aes_ctr(key, nonce).encryptor()
    return enc.update(data) + enc.finalize()


@dataclass(frozen=True)
class CipherEnvelope:
    """Outer-cipher output plus the framing flags."""

    nonce: bytes
    ciphertext: bytes
    otp_applied: bool = False
    version: int = ENVELOPE_VERSION

    def to_bytes(self) -> bytes:
        flags = FLAG_OTP if self.otp_applied else 0
        return (bytes([self.version, flags]) + self.nonce
                + len(self.ciphertext).to_bytes(4, "big") + self.ciphertext)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CipherEnvelope":
        if len(blob) < 2 + NONCE_BYTES + 4:
            raise ProtocolError("envelope too short")
        version, flags = blob[0], blob[1]
        if version != ENVELOPE_VERSION:
            raise ProtocolError(f"unknown envelope version {version}")
        nonce = blob[2:2 + NONCE_BYTES]
        length = int.from_bytes(blob[2 + NONCE_BYTES:2 + NONCE_BYTES + 4], "big")
        body = blob[2 + NONCE_BYTES + 4:]
        if len(body) != length:
            raise ProtocolError(f"envelope length field {length} != body {len(body)}")
        return cls(nonce=nonce, ciphertext=body, otp_applied=bool(flags & FLAG_OTP))


def pq_encrypt(data: bytes, k_p: bytes, nonce: bytes, otp_applied: bool = False) -> CipherEnvelope:
    return CipherEnvelope(nonce=nonce, ciphertext=aes256_ctr_transform(data, k_p, nonce),
                          otp_applied=otp_applied)


def pq_decrypt(env: CipherEnvelope, k_p: bytes) -> bytes:
    return aes256_ctr_transform(env.ciphertext, k_p, env.nonce)


# ---------------------------------------------------------------------------
# Stateful context: nonce discipline + layered scheme
# ---------------------------------------------------------------------------

class CryptoContext:
    """Per-endpoint encryption state: the AES key, a nonce counter and the
    set of nonces already spent under that key.

    The leading nonce byte is an endpoint role marker so the two parties
    sharing k_p can never collide.
    """

    def __init__(self, k_p: bytes, role_byte: int = 0xA1):
        if len(k_p) != AES_KEY_BYTES:
            raise InvalidKeyError("AES-256 key must be exactly 32 bytes")
        self.k_p = k_p
        self.role_byte = role_byte
        self._counter = 0
        self._used_nonces: set[bytes] = set()

    @property
    def nonce_counter(self) -> int:
        return self._counter

    @nonce_counter.setter
    def nonce_counter(self, value: int) -> None:
        self._counter = value

    def next_nonce(self) -> bytes:
        nonce = bytes([self.role_byte]) + self._counter.to_bytes(NONCE_BYTES - 1, "big")
        self._counter += 1
        return nonce

    def encrypt(self, data: bytes, nonce: bytes | None = None, otp_applied: bool = False) -> CipherEnvelope:
        nonce = self.next_nonce() if nonce is None else nonce
        if nonce in self._used_nonces:
            raise NonceReuseError("nonce was already spent under this key")
        self._used_nonces.add(nonce)
        return pq_encrypt(data, self.k_p, nonce, otp_applied=otp_applied)

    def decrypt(self, env: CipherEnvelope) -> bytes:
        return pq_decrypt(env, self.k_p)


def layered_encrypt(
    z: bytes,
    store: QkdKeyStore,
    ctx: CryptoContext,
    policy: str = "skip",
    wait_source=None,
    max_waits: int = 8,
) -> CipherEnvelope:
    """OTP with banked QKD key, then the outer cipher.

    When the banked key is short: policy "skip" emits a single-layer
    envelope with the OTP flag clear; policy "wait" calls wait_source()
    (which should bank more key) up to max_waits times and fails with
    InsufficientKeyError when the key never suffices.
    """
    if policy not in ("wait", "skip"):
        raise ProtocolError(f"unknown short-key policy {policy!r}")
    need = len(z) * 8
    if store.available_bits < need and policy == "wait":
        waits = 0
        while store.available_bits < need:
            if wait_source is None or waits >= max_waits:
                raise InsufficientKeyError(
                    f"wait policy timed out: need {need} bits, have {store.available_bits}"
                )
            wait_source()
            waits += 1
    if store.available_bits >= need:
        pad = store.take(need)
        inner = bits_to_bytes(otp_xor(bytes_to_bits(z, need), pad)) if need else b""
        return ctx.encrypt(inner, otp_applied=True)
    return ctx.encrypt(z, otp_applied=False)


def layered_decrypt(env: CipherEnvelope, store: QkdKeyStore, ctx: CryptoContext) -> bytes:
    """Invert the outer cipher, then the OTP layer when its flag is set."""
    inner = ctx.decrypt(env)
    if not env.otp_applied:
        return inner
    need = len(inner) * 8
    pad = store.take(need)
    if need == 0:
        return b""
    return bits_to_bytes(otp_xor(bytes_to_bits(inner, need), pad))


# ---------------------------------------------------------------------------
# Syndrome packets
# ---------------------------------------------------------------------------

def encrypt_syndrome(s_bits: np.ndarray, ctx: CryptoContext, mac_keys: MacKeys) -> bytes:
    """Packet body: envelope(E_p(syndrome)) || 16-byte one-time MAC tag."""
    s_bits = np.asarray(s_bits, dtype=np.uint8)
    if s_bits.size == 0:
        raise ProtocolError("refusing to packetize a zero-length syndrome")
    tag = wc_tag(mac_keys, s_bits)
    env = ctx.encrypt(bits_to_bytes(s_bits))
    return env.to_bytes() + bits_to_bytes(tag)


def open_syndrome(
    packet: bytes, n_syndrome_bits: int, ctx: CryptoContext, mac_keys: MacKeys
) -> tuple[np.ndarray, bool]:
    """Decrypt a syndrome packet and verify its tag.

    Returns (syndrome bits, verified); the caller aborts on verified=False.
    """
    tag_bytes = TAG_BITS // 8
    if len(packet) <= tag_bytes:
        raise ProtocolError("syndrome packet too short")
    env = CipherEnvelope.from_bytes(packet[:-tag_bytes])
    tag = bytes_to_bits(packet[-tag_bytes:], TAG_BITS)
    s_bits = bytes_to_bits(ctx.decrypt(env), n_syndrome_bits)
    return s_bits, wc_verify(mac_keys, s_bits, tag)
