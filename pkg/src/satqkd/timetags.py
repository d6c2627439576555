"""Time-tag post-processing: tagging, coincidence filtering, bit mapping,
base sifting and error-rate estimation.

A period is kept only when each party saw exactly one click and the two tags
differ by at most the coincidence window. Kept clicks map to a key bit and a
basis bit; the two parties use opposite key conventions so that the
anticorrelated source yields agreeing key bits in matched bases.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .channel import DETECTOR_NAMES, DetectionEvent
from .errors import InvalidEventError, InvalidParameterError, ProtocolError


@dataclass(frozen=True)
class TimeTagFrame:
    """One period's tags for a party: 4 entries (H, V, D, A), -1 for no click."""

    period_index: int
    tags: tuple[int, int, int, int]

    def positive_count(self) -> int:
        return sum(1 for t in self.tags if t > 0)


@dataclass(frozen=True)
class PartyConvention:
    party: str
    key_bit_of_detector: dict
    basis_bit_of_detector: dict

    def __post_init__(self):
        for name in DETECTOR_NAMES:
            if name not in self.key_bit_of_detector or name not in self.basis_bit_of_detector:
                raise InvalidParameterError(f"convention missing detector {name}")
        if self.basis_bit_of_detector["H"] != self.basis_bit_of_detector["V"]:
            raise InvalidParameterError("H and V must share a basis bit")
        if self.basis_bit_of_detector["D"] != self.basis_bit_of_detector["A"]:
            raise InvalidParameterError("D and A must share a basis bit")
        if self.basis_bit_of_detector["H"] == self.basis_bit_of_detector["D"]:
            raise InvalidParameterError("the two bases must carry different basis bits")


# Basis label convention: 0 for {H,V}, 1 for {D,A}.
ALICE_CONVENTION = PartyConvention(
    party="alice",
    key_bit_of_detector={"H": 0, "V": 1, "D": 1, "A": 0},
    basis_bit_of_detector={"H": 0, "V": 0, "D": 1, "A": 1},
)
BOB_CONVENTION = PartyConvention(
    party="bob",
    key_bit_of_detector={"H": 1, "V": 0, "D": 0, "A": 1},
    basis_bit_of_detector={"H": 0, "V": 0, "D": 1, "A": 1},
)


class KeyStage(enum.Enum):
    RAW = "raw"
    SIFTED = "sifted"
    POST_ESTIMATION = "post-estimation"


_STAGE_ORDER = {KeyStage.RAW: 0, KeyStage.SIFTED: 1, KeyStage.POST_ESTIMATION: 2}


@dataclass
class SiftedBits:
    """A key at some pipeline stage. Stage transitions only move forward."""

    bits: np.ndarray
    stage: KeyStage

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)

    @property
    def length(self) -> int:
        return int(self.bits.size)

    def advanced(self, bits: np.ndarray, stage: KeyStage) -> "SiftedBits":
        if _STAGE_ORDER[stage] <= _STAGE_ORDER[self.stage]:
            raise ProtocolError(f"stage may only move forward ({self.stage} -> {stage})")
        return SiftedBits(bits, stage)


def tag_events(events: list[DetectionEvent], period_ns: int) -> TimeTagFrame:
    """Collapse one period's events to a 4-tag frame.

    The tag is the ceiling of the earliest arrival on each detector; -1 when
    a detector saw nothing.
    """
    period_index = events[0].period_index if events else 0
    earliest = [None, None, None, None]
    for ev in events:
        if not (0 < ev.arrival_ns <= period_ns):
            raise InvalidEventError(
                f"arrival {ev.arrival_ns} ns outside (0, {period_ns}]"
            )
        if ev.period_index != period_index:
            raise InvalidEventError("events span more than one period")
        d = ev.detector_index
        if earliest[d] is None or ev.arrival_ns < earliest[d]:
            earliest[d] = ev.arrival_ns
    tags = tuple(-1 if t is None else math.ceil(t) for t in earliest)
    return TimeTagFrame(period_index, tags)


def coincidence_filter(
    ta: TimeTagFrame, tb: TimeTagFrame, tc_ns: int
) -> tuple[int, int] | None:
    """Apply the two keep conditions to a pair of frames.

    Keep iff each frame holds exactly one positive tag and the two tags are
    within tc_ns of each other. Returns the surviving (alice, bob) detector
    indices, or None to discard.
    """
    if ta.period_index != tb.period_index:
        raise ProtocolError("coincidence filter fed frames from different periods")
    if tc_ns < 0:
        raise InvalidParameterError("tc_ns must be non-negative")
    pos_a = [i for i, t in enumerate(ta.tags) if t > 0]
    pos_b = [i for i, t in enumerate(tb.tags) if t > 0]
    if len(pos_a) != 1 or len(pos_b) != 1:
        return None
    da, db = pos_a[0], pos_b[0]
    if abs(ta.tags[da] - tb.tags[db]) > tc_ns:
        return None
    return da, db


def coincidence_filter_batch(
    a_tags: np.ndarray, b_tags: np.ndarray, tc_ns: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized filter over (n, 4) tag arrays.

    Returns (keep_mask, alice_detectors, bob_detectors); detector arrays are
    aligned with the kept periods only.
    """
    if a_tags.shape != b_tags.shape:
        raise ProtocolError("tag arrays differ in shape")
    if tc_ns < 0:
        raise InvalidParameterError("tc_ns must be non-negative")
    pos_a = a_tags > 0
    pos_b = b_tags > 0
    one_a = pos_a.sum(axis=1) == 1
    one_b = pos_b.sum(axis=1) == 1
    det_a = np.argmax(pos_a, axis=1)
    det_b = np.argmax(pos_b, axis=1)
    tag_a = a_tags[np.arange(a_tags.shape[0]), det_a]
    tag_b = b_tags[np.arange(b_tags.shape[0]), det_b]
    keep = one_a & one_b & (np.abs(tag_a - tag_b) <= tc_ns)
    return keep, det_a[keep], det_b[keep]


def reduce_tags(tags: np.ndarray) -> np.ndarray:
    """Per-period wire form of a tag array: the single positive tag value when
    exactly one detector clicked, else -1.

    Only tag values cross the channel; detector identities stay local.
    """
    pos = tags > 0
    one = pos.sum(axis=1) == 1
    det = np.argmax(pos, axis=1)
    vals = tags[np.arange(tags.shape[0]), det]
    return np.where(one, vals, -1).astype(np.int64)


def coincidence_filter_reduced(
    own_tags: np.ndarray, own_reduced: np.ndarray, other_reduced: np.ndarray, tc_ns: int
) -> tuple[np.ndarray, np.ndarray]:
    """Filter as run by one endpoint: own full tags, peer's reduced tags.

    Returns (keep_mask, own_detectors_for_kept).
    """
    if own_reduced.shape != other_reduced.shape:
        raise ProtocolError("reduced tag streams differ in length")
    keep = (own_reduced > 0) & (other_reduced > 0) & (
        np.abs(own_reduced - other_reduced) <= tc_ns
    )
    pos = own_tags > 0
    det = np.argmax(pos, axis=1)
    return keep, det[keep]


def map_bits(detector_index: int, conv: PartyConvention) -> tuple[int, int]:
    """Key bit and basis bit of a surviving click under a party convention."""
    if not 0 <= detector_index <= 3:
        raise InvalidParameterError("detector index must be 0..3")
    name = DETECTOR_NAMES[detector_index]
    return conv.key_bit_of_detector[name], conv.basis_bit_of_detector[name]


def map_bits_batch(detectors: np.ndarray, conv: PartyConvention) -> tuple[np.ndarray, np.ndarray]:
    key_lut = np.array([conv.key_bit_of_detector[n] for n in DETECTOR_NAMES], dtype=np.uint8)
    basis_lut = np.array([conv.basis_bit_of_detector[n] for n in DETECTOR_NAMES], dtype=np.uint8)
    return key_lut[detectors], basis_lut[detectors]


def sift(k: SiftedBits, b_own: np.ndarray, b_other: np.ndarray) -> SiftedBits:
    """Retain key bits measured in the same basis, order preserved."""
    b_own = np.asarray(b_own, dtype=np.uint8)
    b_other = np.asarray(b_other, dtype=np.uint8)
    if not (k.length == b_own.size == b_other.size):
        raise ProtocolError(
            f"length mismatch: key {k.length}, bases {b_own.size}/{b_other.size}"
        )
    return k.advanced(k.bits[b_own == b_other], KeyStage.SIFTED)


def draw_sample_indices(n_sifted: int, n_sample: int, seed: int) -> np.ndarray:
    """Seeded uniform choice without replacement, returned sorted ascending."""
    if n_sample <= 0:
        raise InvalidParameterError("sample size must be positive")
    if n_sample > n_sifted:
        raise InvalidParameterError("sample larger than the sifted key")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_sifted, size=n_sample, replace=False))


def remove_positions(k: SiftedBits, indices: np.ndarray) -> SiftedBits:
    """Drop the sampled positions from a sifted key (sender side)."""
    return k.advanced(np.delete(k.bits, indices), KeyStage.POST_ESTIMATION)


def estimate_qber(
    sample_bits: np.ndarray, sample_indices: np.ndarray, k_b: SiftedBits
) -> tuple[float, SiftedBits]:
    """Compare a disclosed sample against the local sifted key.

    Returns the estimated error rate and the local key with the sampled
    positions removed.
    """
    sample_bits = np.asarray(sample_bits, dtype=np.uint8)
    sample_indices = np.asarray(sample_indices, dtype=np.int64)
    if sample_indices.size == 0:
        raise InvalidParameterError("empty QBER sample")
    if sample_bits.size != sample_indices.size:
        raise ProtocolError("sample bits and indices differ in length")
    if np.unique(sample_indices).size != sample_indices.size:
        raise InvalidParameterError("sample indices must be distinct")
    if sample_indices.min() < 0 or sample_indices.max() >= k_b.length:
        raise InvalidParameterError("sample index out of range")
    mismatches = int(np.sum(sample_bits != k_b.bits[sample_indices]))
    q = mismatches / sample_indices.size
    trimmed = k_b.advanced(np.delete(k_b.bits, sample_indices), KeyStage.POST_ESTIMATION)
    return q, trimmed
