"""Link budget and detection emulator tests."""

import dataclasses
import math

import numpy as np
import pytest

from satqkd.channel import (
    LinkParams,
    SourceParams,
    compute_link_loss,
    dump_tag_frames,
    generate_detection_period,
    generate_tag_frames,
    load_tag_frames,
    solve_link_distance,
    transmittance_from_db,
)
from satqkd.errors import InvalidParameterError, NoSolutionError

FIG4 = LinkParams(link_distance_m=2.35e5, wavelength_m=800e-9, dt_m=0.3, dr_m=0.3,
                  tt=0.8, tr=0.8, pointing_loss=0.2, a_atm_db=1.0)


class TestLinkLoss:
    def test_reference_point_is_10_3_db(self):
        # independently derived: L for exactly 10.3 dB is 234848.34 m
        p = dataclasses.replace(FIG4, link_distance_m=234848.3444172303)
        assert compute_link_loss(p) == pytest.approx(10.3, abs=1e-9)

    def test_unit_log_argument_gives_atmospheric_only(self):
        # L*lambda = Dt*Dr with perfect optics makes the diffraction term vanish
        p = LinkParams(link_distance_m=0.3 * 0.3 / 800e-9, wavelength_m=800e-9,
                       dt_m=0.3, dr_m=0.3, tt=1.0, tr=1.0, pointing_loss=0.0,
                       a_atm_db=2.5)
        assert compute_link_loss(p) == pytest.approx(2.5, abs=1e-12)

    def test_doubling_both_apertures_drops_16x(self):
        big = dataclasses.replace(FIG4, dt_m=0.6, dr_m=0.6)
        delta = compute_link_loss(FIG4) - compute_link_loss(big)
        assert delta == pytest.approx(10 * math.log10(16), abs=1e-12)

    def test_zero_diameter_rejected(self):
        with pytest.raises(InvalidParameterError):
            dataclasses.replace(FIG4, dt_m=0.0)

    def test_invalid_fractions_rejected(self):
        with pytest.raises(InvalidParameterError):
            dataclasses.replace(FIG4, tt=0.0)
        with pytest.raises(InvalidParameterError):
            dataclasses.replace(FIG4, pointing_loss=1.0)


class TestSolveDistance:
    def test_paper_constants_small_aperture(self):
        assert solve_link_distance(10.3, FIG4) == pytest.approx(2.35e5, rel=5e-3)

    def test_paper_constants_metre_aperture(self):
        p = dataclasses.replace(FIG4, dt_m=1.0, dr_m=1.0)
        assert solve_link_distance(10.3, p) == pytest.approx(2.609e6, rel=5e-3)

    def test_monotone_in_aperture_product(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            d1, d2 = sorted(rng.uniform(0.05, 2.0, size=2))
            p1 = dataclasses.replace(FIG4, dt_m=d1, dr_m=d1)
            p2 = dataclasses.replace(FIG4, dt_m=d2, dr_m=d2)
            if d1 < d2:
                assert solve_link_distance(10.3, p1) < solve_link_distance(10.3, p2)

    def test_round_trip_identity_randomized(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            p = LinkParams(
                link_distance_m=1.0,
                wavelength_m=rng.uniform(400e-9, 1600e-9),
                dt_m=rng.uniform(0.05, 2.0),
                dr_m=rng.uniform(0.05, 2.0),
                tt=rng.uniform(0.2, 1.0),
                tr=rng.uniform(0.2, 1.0),
                pointing_loss=rng.uniform(0.0, 0.8),
                a_atm_db=rng.uniform(0.0, 5.0),
            )
            loss = p.a_atm_db + rng.uniform(0.5, 40.0)
            length = solve_link_distance(loss, p)
            back = compute_link_loss(dataclasses.replace(p, link_distance_m=length))
            assert abs(back - loss) < 1e-9

    def test_loss_at_or_below_atmospheric_floor(self):
        with pytest.raises(NoSolutionError):
            solve_link_distance(1.0, FIG4)
        with pytest.raises(NoSolutionError):
            solve_link_distance(0.5, FIG4)


class TestTransmittance:
    def test_zero_db(self):
        assert transmittance_from_db(0.0) == 1.0

    def test_half_power(self):
        assert transmittance_from_db(10 * math.log10(2)) == pytest.approx(0.5, abs=1e-12)

    def test_measured_channel_value(self):
        # 2.15 dB per arm reproduces the measured 0.61 transmittance
        assert transmittance_from_db(2.15) == pytest.approx(0.6095368972401691, abs=1e-12)
        assert transmittance_from_db(2.15) == pytest.approx(0.61, abs=1e-2)

    def test_negative_rejected(self):
        with pytest.raises(InvalidParameterError):
            transmittance_from_db(-0.1)


def _matched_basis_error_rate(a_tags, b_tags, tc=1000):
    from satqkd.timetags import (
        ALICE_CONVENTION,
        BOB_CONVENTION,
        coincidence_filter_batch,
        map_bits_batch,
    )

    keep, det_a, det_b = coincidence_filter_batch(a_tags, b_tags, tc)
    k_a, b_a = map_bits_batch(det_a, ALICE_CONVENTION)
    k_b, b_b = map_bits_batch(det_b, BOB_CONVENTION)
    matched = b_a == b_b
    return float(np.mean(k_a[matched] != k_b[matched])), int(matched.sum())


class TestDetectionStatistics:
    @pytest.mark.parametrize("visibility", [0.742, 0.873, 0.960])
    def test_matched_basis_error_tracks_visibility(self, visibility):
        src = SourceParams(visibility=visibility, pair_prob_per_period=1.0,
                           dark_rate_per_s=0.0, jitter_sigma_ns=0.0,
                           per_arm_loss_db=0.0)
        rng = np.random.default_rng(21)
        a, b = generate_tag_frames(src, 100_000, rng)
        rate, n = _matched_basis_error_rate(a, b)
        expected = (1 - visibility) / 2
        sigma = math.sqrt(expected * (1 - expected) / n)
        assert abs(rate - expected) < 3 * sigma

    def test_noiseless_limit_every_period_clicks_and_agrees(self):
        src = SourceParams(visibility=1.0, pair_prob_per_period=1.0,
                           dark_rate_per_s=0.0, jitter_sigma_ns=0.0,
                           per_arm_loss_db=0.0)
        rng = np.random.default_rng(3)
        a, b = generate_tag_frames(src, 5000, rng)
        assert np.all((a > 0).sum(axis=1) == 1)
        assert np.all((b > 0).sum(axis=1) == 1)
        rate, n = _matched_basis_error_rate(a, b)
        assert n > 0 and rate == 0.0

    def test_arm_survival_fraction(self):
        loss_db = 5.15
        src = SourceParams(visibility=1.0, pair_prob_per_period=1.0,
                           dark_rate_per_s=0.0, jitter_sigma_ns=0.0,
                           per_arm_loss_db=loss_db)
        rng = np.random.default_rng(17)
        n = 200_000
        a, _ = generate_tag_frames(src, n, rng)
        eta = transmittance_from_db(loss_db)
        clicks = int(np.sum((a > 0).any(axis=1)))
        sigma = math.sqrt(eta * (1 - eta) / n)
        assert abs(clicks / n - eta) < 3 * sigma

    def test_dark_counts_only_accidentals_match_brute_force(self):
        src = SourceParams(visibility=1.0, pair_prob_per_period=0.0,
                           dark_rate_per_s=2e5, jitter_sigma_ns=0.0,
                           per_arm_loss_db=0.0)
        rng = np.random.default_rng(9)
        a, b = generate_tag_frames(src, 50_000, rng)
        from satqkd.timetags import coincidence_filter, coincidence_filter_batch, TimeTagFrame

        keep, _, _ = coincidence_filter_batch(a, b, 1)
        brute = 0
        for i in range(a.shape[0]):
            fa = TimeTagFrame(i, tuple(int(x) for x in a[i]))
            fb = TimeTagFrame(i, tuple(int(x) for x in b[i]))
            brute += coincidence_filter(fa, fb, 1) is not None
        assert int(keep.sum()) == brute

    def test_same_seed_byte_identical_streams(self):
        src = SourceParams()
        a1, b1 = generate_tag_frames(src, 20_000, np.random.default_rng(123))
        a2, b2 = generate_tag_frames(src, 20_000, np.random.default_rng(123))
        assert a1.tobytes() == a2.tobytes() and b1.tobytes() == b2.tobytes()

    def test_single_period_op_deterministic_and_in_range(self):
        src = SourceParams(dark_rate_per_s=1e5)
        ev1 = generate_detection_period(src, np.random.default_rng(5), period_index=3)
        ev2 = generate_detection_period(src, np.random.default_rng(5), period_index=3)
        assert repr(ev1) == repr(ev2)
        for events in ev1:
            for ev in events:
                assert ev.period_index == 3
                assert 0 < ev.arrival_ns <= src.detection_period_ns

    def test_invalid_source_params(self):
        with pytest.raises(InvalidParameterError):
            SourceParams(visibility=1.2)
        with pytest.raises(InvalidParameterError):
            SourceParams(detection_period_ns=0)
        with pytest.raises(InvalidParameterError):
            SourceParams(pair_prob_per_period=-0.1)


def test_dump_round_trip(tmp_path):
    src = SourceParams()
    a, b = generate_tag_frames(src, 500, np.random.default_rng(2))
    path = tmp_path / "events.txt"
    dump_tag_frames(path, a, b, start_index=10)
    idx, a2, b2 = load_tag_frames(path)
    assert np.array_equal(idx, np.arange(10, 510))
    assert np.array_equal(a, a2) and np.array_equal(b, b2)
