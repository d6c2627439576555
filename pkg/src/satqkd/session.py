"""Two-endpoint QKD-PQC session: tagging through privacy amplification.

Both endpoints run in one process against a shared emulated time tagger
(the reference hardware shares one clock); Bob runs on a worker thread and
all traffic crosses the channel abstraction, so a socket transport drops in
without code changes.

Per chunk of detection periods each endpoint sends its reduced time tags
(the positive tag when exactly one detector clicked, else -1 — detector
identities never cross the wire) and the basis bits of the kept periods.
The loop stops once the raw target and the sifted target are both met; both
sides then trim to the same raw prefix so the reconciliation length is a
session constant and the pre-shared code fits. After error estimation, a
rate is picked from the ladder, Bob's encrypted+tagged syndrome crosses,
Alice decodes, and her Toeplitz extractor message closes the attempt.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import ldpc, privacy, timetags
from .channel import SourceParams, generate_tag_frames
from .config import SessionConfig
from .envelope import (
    CryptoContext,
    PresharedKeyLedger,
    QkdKeyStore,
    encrypt_syndrome,
    open_syndrome,
)
from .errors import (
    DecodeFailureError,
    NoViableCodeError,
    ProtocolError,
    SessionAbort,
)
from .ldpc import DEFAULT_RATE_LADDER, IRREGULAR_HIGH_RATE, REGULAR_3
from .transport import (
    AUTHENTICATED_TYPES,
    MSG_ABORT,
    MSG_BASES,
    MSG_DATA_ENVELOPE,
    MSG_EXTRACTOR,
    MSG_NAMES,
    MSG_QBER_RESULT,
    MSG_QBER_SAMPLE,
    MSG_SYNDROME_PKT,
    MSG_TAGS,
    ChannelEndpoint,
    PeerAbort,
    TranscriptLog,
    inproc_pair,
    socket_pair,
)

ABORT_QBER = "qber-threshold"
ABORT_NO_CODE = "no-viable-code"
ABORT_MAC = "mac-reject"
ABORT_DECODE = "decode-failure"
ABORT_NO_RATE = "no-positive-rate"
ABORT_CHANNEL = "channel-error"

# physics-driven aborts that a retry cannot fix get the "no key" exit
NO_KEY_ABORTS = {ABORT_QBER, ABORT_NO_CODE, ABORT_NO_RATE}


class TagSource:
    """Shared emulated time tagger; both endpoints read the same chunks.

    Chunks are produced lazily in index order under a lock from one seeded
    stream, and dropped once both parties consumed them.
    """

    def __init__(self, src: SourceParams, seed: int, chunk_periods: int):
        self.src = src
        self.chunk_periods = chunk_periods
        self._rng = np.random.default_rng(seed)
        self._chunks: dict = {}
        self._next = 0
        self._lock = threading.Lock()

    def frames_for(self, chunk_idx: int, party: str) -> np.ndarray:
        with self._lock:
            while self._next <= chunk_idx:
                a, b = generate_tag_frames(self.src, self.chunk_periods, self._rng)
                self._chunks[self._next] = [a, b, 2]
                self._next += 1
            entry = self._chunks[chunk_idx]
            frames = entry[0] if party == "a" else entry[1]
            entry[2] -= 1
            if entry[2] == 0:
                del self._chunks[chunk_idx]
        return frames


@dataclass
class PresharedMaterial:
    """Everything both parties hold before the first session."""

    pool: bytes
    ladder: dict
    code_seed: int

    @classmethod
    def from_config(cls, cfg: SessionConfig) -> "PresharedMaterial":
        pool_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xC0DE]))
        pool = pool_rng.bytes(cfg.pool_bytes)
        ladder = {}
        for rate in sorted(cfg.ladder_rates):
            ladder[rate] = DEFAULT_RATE_LADDER.get(
                rate, REGULAR_3 if rate <= 0.6 else IRREGULAR_HIGH_RATE
            )
        return cls(pool=pool, ladder=ladder, code_seed=cfg.code_seed)

    def code_for(self, rate: float, n: int) -> ldpc.ParityCheckMatrix:
        return ldpc.preshared_code(n, rate, self.ladder[rate], self.code_seed)

    def new_ledger(self) -> PresharedKeyLedger:
        return PresharedKeyLedger(self.pool)


@dataclass
class PartyOutcome:
    final_key: np.ndarray | None = None
    q: float = 0.0
    rate: float = 0.0
    leak: float = 0.0
    r: float = 0.0
    counts: dict = field(default_factory=dict)
    stage_seconds: dict = field(default_factory=dict)
    abort_reason: str | None = None
    attempts: int = 0


@dataclass
class SessionResult:
    """Merged view of one session run (final keys exposed for the harness)."""

    final_key_alice: np.ndarray | None
    final_key_bob: np.ndarray | None
    q: float
    rate: float
    leak: float
    r: float
    counts: dict
    stage_seconds: dict
    abort_reason: str | None
    attempts: int
    transcript: list

    @property
    def succeeded(self) -> bool:
        return self.abort_reason is None


def throughput_kbps(r: float, sifted_bits_per_s: float) -> float:
    """Secret kbps from the secret fraction and a calibrated sifted-bit rate."""
    if sifted_bits_per_s < 0:
        raise ProtocolError("sifted_bits_per_s must be non-negative")
    return max(r, 0.0) * sifted_bits_per_s / 1000.0


# ---------------------------------------------------------------------------
# Wire payload packing
# ---------------------------------------------------------------------------

def _pack_i64(arr: np.ndarray) -> bytes:
    return np.asarray(arr, dtype=">i8").tobytes()


def _unpack_i64(blob: bytes) -> np.ndarray:
    return np.frombuffer(blob, dtype=">i8").astype(np.int64)


def _pack_bits(bits: np.ndarray) -> bytes:
    return len(bits).to_bytes(4, "big") + np.packbits(bits).tobytes()


def _unpack_bits(blob: bytes) -> np.ndarray:
    n = int.from_bytes(blob[:4], "big")
    return np.unpackbits(np.frombuffer(blob[4:], dtype=np.uint8))[:n].astype(np.uint8)


def _pack_sample(indices: np.ndarray, bits: np.ndarray) -> bytes:
    head = len(indices).to_bytes(4, "big")
    return head + np.asarray(indices, dtype=">u4").tobytes() + np.packbits(bits).tobytes()


def _unpack_sample(blob: bytes) -> tuple[np.ndarray, np.ndarray]:
    n = int.from_bytes(blob[:4], "big")
    idx = np.frombuffer(blob[4:4 + 4 * n], dtype=">u4").astype(np.int64)
    bits = np.unpackbits(np.frombuffer(blob[4 + 4 * n:], dtype=np.uint8))[:n].astype(np.uint8)
    return idx, bits


# ---------------------------------------------------------------------------
# Endpoint state machine
# ---------------------------------------------------------------------------

class _Endpoint:
    def __init__(self, role: str, cfg: SessionConfig, material: PresharedMaterial,
                 source: TagSource, channel: ChannelEndpoint, seed_seq):
        self.role = role
        self.cfg = cfg
        self.material = material
        self.source = source
        self.ch = channel
        self.rng = np.random.default_rng(seed_seq)
        self.conv = timetags.ALICE_CONVENTION if role == "a" else timetags.BOB_CONVENTION
        self.ledger = material.new_ledger()
        self.ctx = CryptoContext(self.ledger.cipher_key(),
                                 role_byte=0xA1 if role == "a" else 0xB0)
        self.keystore = QkdKeyStore()
        self.next_chunk = 0
        self.outcome = PartyOutcome()

    # -- steps a-d -----------------------------------------------------
    def collect_and_sift(self):
        cfg = self.cfg
        keys, own_bases, other_bases = [], [], []
        raw = 0
        sifted = 0
        periods = 0
        idle_chunks = 0
        while raw < cfg.n_raw_target or sifted < cfg.target_sifted:
            if idle_chunks >= 256:
                raise ProtocolError("source produced no kept coincidences for 256 chunks")
            frames = self.source.frames_for(self.next_chunk, self.role)
            self.next_chunk += 1
            periods += frames.shape[0]
            reduced = timetags.reduce_tags(frames)
            self.ch.send(MSG_TAGS, _pack_i64(reduced))
            other_reduced = _unpack_i64(self.ch.expect(MSG_TAGS))
            keep, dets = timetags.coincidence_filter_reduced(
                frames, reduced, other_reduced, cfg.t_c_ns
            )
            k_bits, b_bits = timetags.map_bits_batch(dets, self.conv)
            self.ch.send(MSG_BASES, _pack_bits(b_bits))
            b_other = _unpack_bits(self.ch.expect(MSG_BASES))
            if b_other.size != b_bits.size:
                raise ProtocolError("peer basis stream length mismatch")
            keys.append(k_bits)
            own_bases.append(b_bits)
            other_bases.append(b_other)
            raw += k_bits.size
            sifted += int(np.sum(b_bits == b_other))
            idle_chunks = idle_chunks + 1 if k_bits.size == 0 else 0

        k = np.concatenate(keys)
        b_own = np.concatenate(own_bases)
        b_oth = np.concatenate(other_bases)
        # both sides truncate at the raw position of the target-th sifted bit,
        # making the reconciliation length a session constant
        match_positions = np.flatnonzero(b_own == b_oth)
        cut = match_positions[cfg.target_sifted - 1] + 1
        raw_used = int(cut)
        k, b_own, b_oth = k[:cut], b_own[:cut], b_oth[:cut]
        raw_key = timetags.SiftedBits(k, timetags.KeyStage.RAW)
        sifted_key = timetags.sift(raw_key, b_own, b_oth)
        counts = {"periods": periods, "raw": raw_used, "sifted": sifted_key.length}
        return sifted_key, counts

    # -- step e ----------------------------------------------------------
    def estimate(self, sifted_key):
        cfg = self.cfg
        if self.role == "a":
            sample_seed = int(self.rng.integers(0, 2**63))
            idx = timetags.draw_sample_indices(sifted_key.length, cfg.sample_size, sample_seed)
            bits = sifted_key.bits[idx]
            self.ch.send(MSG_QBER_SAMPLE, _pack_sample(idx, bits))
            reply = self.ch.expect(MSG_QBER_RESULT)
            mismatches = int.from_bytes(reply[:4], "big")
            size = int.from_bytes(reply[4:8], "big")
            if size != cfg.sample_size:
                raise ProtocolError("peer sampled a different size")
            q = mismatches / size
            trimmed = timetags.remove_positions(sifted_key, idx)
        else:
            idx, bits = _unpack_sample(self.ch.expect(MSG_QBER_SAMPLE))
            q, trimmed = timetags.estimate_qber(bits, idx, sifted_key)
            mismatches = round(q * idx.size)
            self.ch.send(
                MSG_QBER_RESULT,
                mismatches.to_bytes(4, "big") + idx.size.to_bytes(4, "big"),
            )
        return q, trimmed

    # -- steps f-g ---------------------------------------------------------
    def reconcile_and_extract(self, post_key, q: float, attempt: int):
        cfg = self.cfg
        rate = ldpc.select_code_rate(q, cfg.efficiency_f, tuple(self.material.ladder))
        code = self.material.code_for(rate, post_key.length)
        leak = ldpc.leak_ec(code.n_rows, code.n_cols)
        r = privacy.key_rate(q, leak)
        self.outcome.rate, self.outcome.leak, self.outcome.r = rate, leak, r

        mac_keys = self.ledger.mac_keys_for(f"mac-k2/attempt-{attempt}")
        if self.role == "b":
            s_b = ldpc.compute_syndrome(code, post_key.bits)
            self.ch.send(MSG_SYNDROME_PKT, encrypt_syndrome(s_b, self.ctx, mac_keys))
            if r <= 0:
                raise SessionAbort(ABORT_NO_RATE, f"r = {r:.4f}")
            wire = self.ch.expect(MSG_EXTRACTOR).decode()
            extractor = privacy.extractor_from_wire(wire)
            if extractor.in_len != post_key.length:
                raise ProtocolError("extractor width does not match the key")
            return privacy.compress(extractor, post_key.bits)

        packet = self.ch.expect(MSG_SYNDROME_PKT)
        s_b, ok = open_syndrome(packet, code.n_rows, self.ctx, mac_keys)
        if not ok:
            self.ch.send(MSG_ABORT, ABORT_MAC.encode())
            raise SessionAbort(ABORT_MAC, "syndrome tag verification failed")
        if r <= 0:
            raise SessionAbort(ABORT_NO_RATE, f"r = {r:.4f}")
        # a zero estimate still leaves the decoder a tiny flip probability
        q_dec = max(q, 1e-4)
        try:
            k_hat = ldpc.decode(code, s_b, post_key.bits, q_dec, cfg.max_decode_iter)
        except DecodeFailureError as exc:
            self.ch.send(MSG_ABORT, ABORT_DECODE.encode())
            raise SessionAbort(ABORT_DECODE, str(exc)) from None
        out_len = math.ceil(r * post_key.length)
        extractor = privacy.build_toeplitz(
            out_len, post_key.length, int(self.rng.integers(0, 2**63))
        )
        self.ch.send(MSG_EXTRACTOR, privacy.extractor_to_wire(extractor).encode())
        return privacy.compress(extractor, k_hat)

    # -- one attempt -------------------------------------------------------
    def run_attempt(self, attempt: int) -> np.ndarray:
        cfg = self.cfg
        stage_t: dict = {}
        t0 = time.perf_counter()
        sifted_key, counts = self.collect_and_sift()
        stage_t["collect+sift"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        q, post_key = self.estimate(sifted_key)
        stage_t["estimate"] = time.perf_counter() - t0
        counts["post_estimation"] = post_key.length
        self.outcome.q = q
        self.outcome.counts = counts
        self.outcome.stage_seconds = stage_t

        if q >= cfg.qber_threshold:
            raise SessionAbort(ABORT_QBER, f"Q = {q:.4f} >= {cfg.qber_threshold}")

        t0 = time.perf_counter()
        try:
            final = self.reconcile_and_extract(post_key, q, attempt)
        except NoViableCodeError as exc:
            raise SessionAbort(ABORT_NO_CODE, str(exc)) from None
        stage_t["reconcile+extract"] = time.perf_counter() - t0
        counts["final"] = int(final.size)
        return final

    def run(self) -> PartyOutcome:
        cfg = self.cfg
        for attempt in range(cfg.retry_cap):
            self.outcome.attempts = attempt + 1
            try:
                final = self.run_attempt(attempt)
                self.keystore.bank(final)
                self.outcome.final_key = final
                self.outcome.abort_reason = None
                return self.outcome
            except SessionAbort as abort:
                self.outcome.abort_reason = abort.reason
            except PeerAbort as abort:
                self.outcome.abort_reason = str(abort)
        return self.outcome


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------

def run_session(
    cfg: SessionConfig,
    channel: tuple[ChannelEndpoint, ChannelEndpoint] | None = None,
    material: PresharedMaterial | None = None,
    transcript: TranscriptLog | None = None,
) -> SessionResult:
    """Run a full two-endpoint session; Bob progresses on a worker thread."""
    transcript = transcript or TranscriptLog()
    if channel is None:
        channel = inproc_pair(transcript)
    ch_a, ch_b = channel
    material = material or PresharedMaterial.from_config(cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    source = TagSource(cfg.source, seeds[0], cfg.chunk_periods)
    alice = _Endpoint("a", cfg, material, source, ch_a, seeds[1])
    bob = _Endpoint("b", cfg, material, source, ch_b, seeds[2])

    bob_box: dict = {}

    def bob_main():
        try:
            bob_box["outcome"] = bob.run()
        except Exception as exc:  # surfaced after join
            bob_box["error"] = exc

    worker = threading.Thread(target=bob_main, name="bob-endpoint")
    worker.start()
    try:
        outcome_a = alice.run()
    finally:
        worker.join(timeout=300)
    if worker.is_alive():
        raise ProtocolError("bob endpoint did not finish")
    if "error" in bob_box:
        raise bob_box["error"]
    outcome_b = bob_box["outcome"]

    if outcome_a.abort_reason != outcome_b.abort_reason:
        raise ProtocolError(
            f"endpoints disagree on the outcome: "
            f"{outcome_a.abort_reason!r} vs {outcome_b.abort_reason!r}"
        )
    return SessionResult(
        final_key_alice=outcome_a.final_key,
        final_key_bob=outcome_b.final_key,
        q=outcome_a.q,
        rate=outcome_a.rate,
        leak=outcome_a.leak,
        r=outcome_a.r,
        counts=outcome_a.counts,
        stage_seconds=outcome_a.stage_seconds,
        abort_reason=outcome_a.abort_reason,
        attempts=outcome_a.attempts,
        transcript=transcript.lines(),
    )


def open_channel_pair(transport: str, log: TranscriptLog | None = None):
    if transport == "inproc":
        return inproc_pair(log)
    if transport == "socket":
        return socket_pair(log)
    raise ProtocolError(f"unknown transport {transport!r}")


# ---------------------------------------------------------------------------
# Monitoring and transcript audit
# ---------------------------------------------------------------------------

def emulate_stream(src: SourceParams, n_periods: int, seed: int, chunk: int = 65536):
    """Chunked (alice_tags, bob_tags) frames for the live-QBER monitor."""
    rng = np.random.default_rng(seed)
    remaining = n_periods
    while remaining > 0:
        n = min(chunk, remaining)
        yield generate_tag_frames(src, n, rng)
        remaining -= n


def qber_monitor(stream, tc_ns: int = 1, window_bits: int = 1000,
                 max_windows: int | None = None) -> np.ndarray:
    """Per-window error rate of the matched-basis sifted stream.

    Takes an iterable of (alice_tags, bob_tags) chunk pairs and compares the
    two parties' sifted bits in windows of window_bits. Stops consuming the
    stream once max_windows windows are filled.
    """
    windows = []
    carried = np.zeros(0, dtype=np.uint8)
    for a_tags, b_tags in stream:
        keep, det_a, det_b = timetags.coincidence_filter_batch(a_tags, b_tags, tc_ns)
        k_a, b_a = timetags.map_bits_batch(det_a, timetags.ALICE_CONVENTION)
        k_b, b_b = timetags.map_bits_batch(det_b, timetags.BOB_CONVENTION)
        matched = b_a == b_b
        carried = np.concatenate([carried, (k_a[matched] ^ k_b[matched]).astype(np.uint8)])
        while carried.size >= window_bits:
            windows.append(float(np.mean(carried[:window_bits])))
            carried = carried[window_bits:]
            if max_windows is not None and len(windows) >= max_windows:
                return np.array(windows)
    return np.array(windows)


def audit_transcript(lines: list) -> dict:
    """Check the per-session message contract on a single-attempt transcript.

    Exactly one syndrome packet (b->a), exactly one extractor (a->b), and
    symmetric tag/basis exchange counts. Also reports which message types
    crossed without authentication.
    """
    counts: dict = {}
    for line in lines:
        direction, name, _ = line.split()
        counts[(direction, name)] = counts.get((direction, name), 0) + 1
    problems = []
    if counts.get(("b->a", "SYNDROME_PKT"), 0) != 1:
        problems.append("expected exactly one syndrome packet b->a")
    if counts.get(("a->b", "SYNDROME_PKT"), 0) != 0:
        problems.append("unexpected syndrome packet a->b")
    if counts.get(("a->b", "EXTRACTOR"), 0) != 1:
        problems.append("expected exactly one extractor a->b")
    for name in ("TAGS", "BASES"):
        if counts.get(("a->b", name), 0) != counts.get(("b->a", name), 0):
            problems.append(f"asymmetric {name} exchange")
    if counts.get(("a->b", "TAGS"), 0) < 1:
        problems.append("no tag exchange")
    if counts.get(("a->b", "TAGS")) != counts.get(("a->b", "BASES")):
        problems.append("TAGS and BASES rounds differ")
    authed = {MSG_NAMES[t] for t in AUTHENTICATED_TYPES}
    unauthenticated = sorted({name for (_, name) in counts} - authed)
    return {"counts": counts, "problems": problems, "unauthenticated": unauthenticated}


# ---------------------------------------------------------------------------
# Post-session payload transfer
# ---------------------------------------------------------------------------

def send_payload(endpoint: ChannelEndpoint, data: bytes, store: QkdKeyStore,
                 ctx: CryptoContext, policy: str = "skip") -> None:
    """Layered-encrypt a payload and ship it as a DATA_ENVELOPE message."""
    from .envelope import layered_encrypt

    env = layered_encrypt(data, store, ctx, policy=policy)
    endpoint.send(MSG_DATA_ENVELOPE, env.to_bytes())


def recv_payload(endpoint: ChannelEndpoint, store: QkdKeyStore,
                 ctx: CryptoContext, timeout: float = 60.0) -> bytes:
    from .envelope import CipherEnvelope, layered_decrypt

    blob = endpoint.expect(MSG_DATA_ENVELOPE, timeout)
    return layered_decrypt(CipherEnvelope.from_bytes(blob), store, ctx)
