"""Entangled-source and satellite-downlink channel emulator.

Two halves live here:

* a free-space link budget: total loss is atmospheric loss plus a diffraction
  term 10*log10(L^2 lam^2 / (D_T^2 D_R^2 T_T T_R (1 - P_l))), invertible for
  the link distance at a fixed loss;
* a statistical per-period detection generator for the two receivers of an
  entangled-pair source, covering arm losses, the 50:50 basis choice,
  visibility-limited correlations, detector dark counts and timing jitter.

Each party has four detectors ordered H, V, D, A (indices 0..3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, NoSolutionError

DETECTOR_NAMES = ("H", "V", "D", "A")


# ---------------------------------------------------------------------------
# Link budget
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkParams:
    """Geometry and efficiency of one free-space downlink.

    Distances/diameters in meters, transmissions as fractions in (0, 1],
    pointing loss as a fraction in [0, 1), atmospheric loss in dB.
    """

    link_distance_m: float = 2.35e5
    wavelength_m: float = 800e-9
    dt_m: float = 0.3
    dr_m: float = 0.3
    tt: float = 0.8
    tr: float = 0.8
    pointing_loss: float = 0.2
    a_atm_db: float = 1.0

    def __post_init__(self):
        for name in ("link_distance_m", "wavelength_m", "dt_m", "dr_m"):
            if getattr(self, name) <= 0:
                raise InvalidParameterError(f"{name} must be strictly positive")
        for name in ("tt", "tr"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise InvalidParameterError(f"{name} must lie in (0, 1]")
        if not 0 <= self.pointing_loss < 1:
            raise InvalidParameterError("pointing_loss must lie in [0, 1)")
        if self.a_atm_db < 0:
            raise InvalidParameterError("a_atm_db must be non-negative")


def diffraction_loss_db(p: LinkParams) -> float:
    """Beam-diffraction / telescope / pointing part of the budget (dB)."""
    num = (p.link_distance_m * p.wavelength_m) ** 2
    den = (p.dt_m * p.dr_m) ** 2 * p.tt * p.tr * (1.0 - p.pointing_loss)
    return 10.0 * math.log10(num / den)


def compute_link_loss(p: LinkParams) -> float:
    """Total link loss in dB: atmospheric plus diffraction terms."""
    total = p.a_atm_db + diffraction_loss_db(p)
    if not math.isfinite(total):
        raise InvalidParameterError("link loss is not finite for these parameters")
    return total


def solve_link_distance(a_link_db: float, p: LinkParams) -> float:
    """Invert the budget: the unique distance L giving `a_link_db` total loss.

    p.link_distance_m is ignored. Raises NoSolutionError when the requested
    loss does not exceed the atmospheric floor.
    """
    if a_link_db <= p.a_atm_db:
        raise NoSolutionError(
            f"total loss {a_link_db} dB must exceed atmospheric loss {p.a_atm_db} dB"
        )
    a_fs = a_link_db - p.a_atm_db
    scale = math.sqrt(p.tt * p.tr * (1.0 - p.pointing_loss) * 10.0 ** (a_fs / 10.0))
    return p.dt_m * p.dr_m * scale / p.wavelength_m


def transmittance_from_db(loss_db: float) -> float:
    """Power transmittance for a loss in dB."""
    if loss_db < 0:
        raise InvalidParameterError("loss_db must be non-negative")
    return 10.0 ** (-loss_db / 10.0)


# ---------------------------------------------------------------------------
# Source / detection emulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SourceParams:
    """Statistical knobs of the entangled source and the two detection arms.

    The 4.3 dB printed channel loss is split over the two arms (2.15 dB each)
    and detection losses add 3.0 dB per arm, hence the 5.15 dB default.
    pair_prob_per_period is a free calibration knob; the reference hardware
    does not report its coincidence rate.
    """

    visibility: float = 0.96
    pair_prob_per_period: float = 1.0
    dark_rate_per_s: float = 100.0
    detection_period_ns: int = 50
    jitter_sigma_ns: float = 0.3
    per_arm_loss_db: float = 5.15

    def __post_init__(self):
        if not 0 <= self.visibility <= 1:
            raise InvalidParameterError("visibility must lie in [0, 1]")
        if not 0 <= self.pair_prob_per_period <= 1:
            raise InvalidParameterError("pair_prob_per_period must lie in [0, 1]")
        if self.dark_rate_per_s < 0:
            raise InvalidParameterError("dark_rate_per_s must be non-negative")
        if int(self.detection_period_ns) != self.detection_period_ns or self.detection_period_ns <= 0:
            raise InvalidParameterError("detection_period_ns must be a positive integer")
        if self.jitter_sigma_ns < 0:
            raise InvalidParameterError("jitter_sigma_ns must be non-negative")
        if self.per_arm_loss_db < 0:
            raise InvalidParameterError("per_arm_loss_db must be non-negative")


@dataclass(frozen=True)
class DetectionEvent:
    """One click: which detector fired and when within its period."""

    period_index: int
    detector_index: int
    arrival_ns: float

    def __post_init__(self):
        if self.period_index < 0:
            raise InvalidParameterError("period_index must be non-negative")
        if self.detector_index not in (0, 1, 2, 3):
            raise InvalidParameterError("detector_index must be 0..3")


# Alice key convention H->0 V->1 D->1 A->0; Bob H->1 V->0 D->0 A->1.
# Detector index for a (basis, key bit) pair under each convention:
#   basis 0 = {H,V}, basis 1 = {D,A}.
_ALICE_DET = np.array([[0, 1],   # basis HV: key0 -> H, key1 -> V
                       [3, 2]])  # basis DA: key0 -> A, key1 -> D
_BOB_DET = np.array([[1, 0],     # basis HV: key0 -> V, key1 -> H
                     [2, 3]])    # basis DA: key0 -> D, key1 -> A


class _PeriodSample:
    """Vectorized draws for a batch of detection periods (internal)."""

    __slots__ = (
        "n", "pair", "t0", "surv_a", "surv_b", "basis_a", "basis_b",
        "key_a", "key_b", "det_a", "det_b", "t_a", "t_b",
        "dark_a", "dark_b", "dark_t_a", "dark_t_b",
    )

    def __init__(self, src: SourceParams, n: int, rng: np.random.Generator):
        period = float(src.detection_period_ns)
        eta = transmittance_from_db(src.per_arm_loss_db)
        q = (1.0 - src.visibility) / 2.0

        self.n = n
        self.pair = rng.random(n) < src.pair_prob_per_period
        # pair emission time uniform in (0, period]
        self.t0 = period * (1.0 - rng.random(n))
        self.surv_a = self.pair & (rng.random(n) < eta)
        self.surv_b = self.pair & (rng.random(n) < eta)
        self.basis_a = rng.integers(0, 2, size=n)
        self.basis_b = rng.integers(0, 2, size=n)
        self.key_a = rng.integers(0, 2, size=n)
        # matched bases: key bits agree with probability 1-q; mismatched: uniform
        flip = rng.random(n) < q
        uniform_b = rng.integers(0, 2, size=n)
        matched = self.basis_a == self.basis_b
        self.key_b = np.where(matched, self.key_a ^ flip, uniform_b)
        self.det_a = _ALICE_DET[self.basis_a, self.key_a]
        self.det_b = _BOB_DET[self.basis_b, self.key_b]

        jitter_a = rng.normal(0.0, src.jitter_sigma_ns, size=n)
        jitter_b = rng.normal(0.0, src.jitter_sigma_ns, size=n)
        tiny = 1e-9  # keep arrivals strictly inside (0, period]
        self.t_a = np.clip(self.t0 + jitter_a, tiny, period)
        self.t_b = np.clip(self.t0 + jitter_b, tiny, period)

        dark_p = src.dark_rate_per_s * period * 1e-9
        self.dark_a = rng.random((n, 4)) < dark_p
        self.dark_b = rng.random((n, 4)) < dark_p
        self.dark_t_a = period * (1.0 - rng.random((n, 4)))
        self.dark_t_b = period * (1.0 - rng.random((n, 4)))


def _collapse_to_tags(sample: _PeriodSample) -> tuple[np.ndarray, np.ndarray]:
    """Tag arrays (n, 4): ceil of the earliest click per detector, else -1."""
    out = []
    for surv, det, t_sig, dark, dark_t in (
        (sample.surv_a, sample.det_a, sample.t_a, sample.dark_a, sample.dark_t_a),
        (sample.surv_b, sample.det_b, sample.t_b, sample.dark_b, sample.dark_t_b),
    ):
        big = np.iinfo(np.int64).max
        tags = np.full((sample.n, 4), big, dtype=np.int64)
        dark_tags = np.where(dark, np.ceil(dark_t).astype(np.int64), big)
        tags = np.minimum(tags, dark_tags)
        rows = np.nonzero(surv)[0]
        sig_tags = np.ceil(t_sig[rows]).astype(np.int64)
        cols = det[rows]
        # earliest click wins when signal and dark hit the same detector
        np.minimum.at(tags, (rows, cols), sig_tags)
        tags[tags == big] = -1
        out.append(tags)
    return out[0], out[1]


def generate_tag_frames(
    src: SourceParams, n_periods: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Emulate `n_periods` detection periods, returning per-party tag arrays.

    Shape (n_periods, 4); entries are ceiled arrival times in
    1..detection_period_ns or -1 for no click. Deterministic given the rng
    state.
    """
    sample = _PeriodSample(src, n_periods, rng)
    return _collapse_to_tags(sample)


def generate_detection_period(
    src: SourceParams, rng: np.random.Generator, period_index: int = 0
) -> tuple[list[DetectionEvent], list[DetectionEvent]]:
    """Emulate a single detection period at event granularity.

    Returns (alice_events, bob_events); multiple clicks on one detector are
    possible (signal plus dark) and are collapsed later by tag_events.
    """
    s = _PeriodSample(src, 1, rng)
    parties = []
    for surv, det, t_sig, dark, dark_t in (
        (s.surv_a, s.det_a, s.t_a, s.dark_a, s.dark_t_a),
        (s.surv_b, s.det_b, s.t_b, s.dark_b, s.dark_t_b),
    ):
        events = []
        if surv[0]:
            events.append(DetectionEvent(period_index, int(det[0]), float(t_sig[0])))
        for d in range(4):
            if dark[0, d]:
                events.append(DetectionEvent(period_index, d, float(dark_t[0, d])))
        parties.append(events)
    return parties[0], parties[1]


def dump_tag_frames(path, a_tags: np.ndarray, b_tags: np.ndarray, start_index: int = 0) -> None:
    """Text dump, one line per period: `period_index, a0,a1,a2,a3, b0,b1,b2,b3`."""
    with open(path, "w") as fh:
        for i in range(a_tags.shape[0]):
            a = ",".join(str(int(v)) for v in a_tags[i])
            b = ",".join(str(int(v)) for v in b_tags[i])
            fh.write(f"{start_index + i}, {a}, {b}\n")


def load_tag_frames(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse a dump back into (period_indices, a_tags, b_tags)."""
    idx, rows_a, rows_b = [], [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            head, a, b = line.split(", ")
            idx.append(int(head))
            rows_a.append([int(v) for v in a.split(",")])
            rows_b.append([int(v) for v in b.split(",")])
    return (np.array(idx, dtype=np.int64),
            np.array(rows_a, dtype=np.int64),
            np.array(rows_b, dtype=np.int64))
