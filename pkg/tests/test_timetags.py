"""Tagging, filtering, mapping, sifting and error-estimation tests."""

import numpy as np
import pytest

from satqkd.channel import DetectionEvent
from satqkd.errors import InvalidEventError, InvalidParameterError, ProtocolError
from satqkd.timetags import (
    ALICE_CONVENTION,
    BOB_CONVENTION,
    KeyStage,
    SiftedBits,
    TimeTagFrame,
    coincidence_filter,
    coincidence_filter_batch,
    draw_sample_indices,
    estimate_qber,
    map_bits,
    map_bits_batch,
    reduce_tags,
    remove_positions,
    sift,
    tag_events,
)


class TestTagEvents:
    def test_ceiling_of_arrival(self):
        frame = tag_events([DetectionEvent(0, 1, 11.3)], period_ns=50)
        assert frame.tags == (-1, 12, -1, -1)

    def test_no_clicks_all_minus_one(self):
        assert tag_events([], period_ns=50).tags == (-1, -1, -1, -1)

    def test_earliest_click_wins_then_ceil(self):
        events = [DetectionEvent(0, 2, 7.9), DetectionEvent(0, 2, 7.2)]
        # oracle: min arrival then ceiling
        assert tag_events(events, 50).tags[2] == int(np.ceil(min(7.9, 7.2)))

    def test_arrival_outside_period_rejected(self):
        with pytest.raises(InvalidEventError):
            tag_events([DetectionEvent(0, 0, 50.5)], period_ns=50)
        with pytest.raises(InvalidEventError):
            tag_events([DetectionEvent(0, 0, 0.0)], period_ns=50)

    def test_integer_boundary_tag_equals_period(self):
        assert tag_events([DetectionEvent(0, 3, 50.0)], 50).tags[3] == 50


class TestCoincidenceFilter:
    def test_boundary_difference_kept(self):
        ta = TimeTagFrame(0, (12, -1, -1, -1))
        tb = TimeTagFrame(0, (-1, 13, -1, -1))
        assert coincidence_filter(ta, tb, 1) == (0, 1)

    def test_window_exceeded_discarded(self):
        ta = TimeTagFrame(0, (12, -1, -1, -1))
        tb = TimeTagFrame(0, (-1, 15, -1, -1))
        assert coincidence_filter(ta, tb, 1) is None

    def test_double_click_discarded(self):
        ta = TimeTagFrame(0, (12, 7, -1, -1))
        tb = TimeTagFrame(0, (-1, 13, -1, -1))
        assert coincidence_filter(ta, tb, 1) is None

    def test_period_mismatch_is_protocol_error(self):
        with pytest.raises(ProtocolError):
            coincidence_filter(TimeTagFrame(0, (1, -1, -1, -1)),
                               TimeTagFrame(1, (1, -1, -1, -1)), 1)

    def test_batch_agrees_with_per_frame_on_a_million_frames(self):
        rng = np.random.default_rng(42)
        n = 1_000_000
        # tags in {-1} U [1, 50], several positives per frame possible
        def random_tags():
            vals = rng.integers(1, 51, size=(n, 4))
            mask = rng.random((n, 4)) < 0.35
            return np.where(mask, vals, -1).astype(np.int64)

        a_tags, b_tags = random_tags(), random_tags()
        keep, det_a, det_b = coincidence_filter_batch(a_tags, b_tags, 1)

        # brute-force re-implementation, frame by frame
        kept_positions = np.flatnonzero(keep)
        brute_keep = np.zeros(n, dtype=bool)
        brute_dets = []
        for i in range(n):
            fa = TimeTagFrame(i, tuple(int(x) for x in a_tags[i]))
            fb = TimeTagFrame(i, tuple(int(x) for x in b_tags[i]))
            res = coincidence_filter(fa, fb, 1)
            if res is not None:
                brute_keep[i] = True
                brute_dets.append(res)
        assert np.array_equal(keep, brute_keep)
        assert [tuple(x) for x in zip(det_a.tolist(), det_b.tolist())] == brute_dets
        assert kept_positions.size == len(brute_dets)

    def test_negative_window_rejected(self):
        with pytest.raises(InvalidParameterError):
            coincidence_filter(TimeTagFrame(0, (1, -1, -1, -1)),
                               TimeTagFrame(0, (1, -1, -1, -1)), -1)


def test_reduce_tags_hides_detector_identity():
    tags = np.array([[5, -1, -1, -1],
                     [-1, -1, 9, -1],
                     [3, 7, -1, -1],
                     [-1, -1, -1, -1]], dtype=np.int64)
    assert reduce_tags(tags).tolist() == [5, 9, -1, -1]


class TestMapBits:
    def test_alice_d_detector(self):
        assert map_bits(2, ALICE_CONVENTION) == (1, 1)

    def test_bob_h_detector(self):
        assert map_bits(0, BOB_CONVENTION) == (1, 0)

    def test_anticorrelated_pair_same_key_bits(self):
        # Alice H with Bob V: opposite polarizations, opposite conventions
        ka, ba = map_bits(0, ALICE_CONVENTION)
        kb, bb = map_bits(1, BOB_CONVENTION)
        assert ba == bb and ka == kb == 0

    def test_full_tables(self):
        alice = [map_bits(d, ALICE_CONVENTION)[0] for d in range(4)]
        bob = [map_bits(d, BOB_CONVENTION)[0] for d in range(4)]
        assert alice == [0, 1, 1, 0]
        assert bob == [1, 0, 0, 1]

    def test_batch_matches_scalar(self):
        dets = np.array([0, 1, 2, 3, 2, 0])
        k, b = map_bits_batch(dets, ALICE_CONVENTION)
        expected = [map_bits(int(d), ALICE_CONVENTION) for d in dets]
        assert k.tolist() == [e[0] for e in expected]
        assert b.tolist() == [e[1] for e in expected]


class TestSift:
    def test_definition_example(self):
        k = SiftedBits(np.array([1, 0, 1, 1], dtype=np.uint8), KeyStage.RAW)
        out = sift(k, np.array([0, 1, 1, 0]), np.array([0, 0, 1, 1]))
        assert out.bits.tolist() == [1, 1]
        assert out.stage is KeyStage.SIFTED

    def test_equal_bases_identity(self):
        bits = np.random.default_rng(0).integers(0, 2, 100, dtype=np.uint8)
        b = np.random.default_rng(1).integers(0, 2, 100, dtype=np.uint8)
        out = sift(SiftedBits(bits, KeyStage.RAW), b, b)
        assert np.array_equal(out.bits, bits)

    def test_random_bases_keep_half_within_3_sigma(self):
        rng = np.random.default_rng(4)
        n = 40_000
        k = SiftedBits(rng.integers(0, 2, n, dtype=np.uint8), KeyStage.RAW)
        ba = rng.integers(0, 2, n, dtype=np.uint8)
        bb = rng.integers(0, 2, n, dtype=np.uint8)
        kept = sift(k, ba, bb).length
        assert abs(kept - n / 2) < 3 * np.sqrt(n * 0.25)

    def test_length_mismatch(self):
        with pytest.raises(ProtocolError):
            sift(SiftedBits(np.zeros(4, dtype=np.uint8), KeyStage.RAW),
                 np.zeros(4), np.zeros(5))

    def test_stage_only_moves_forward(self):
        k = SiftedBits(np.zeros(4, dtype=np.uint8), KeyStage.SIFTED)
        with pytest.raises(ProtocolError):
            k.advanced(k.bits, KeyStage.RAW)


class TestEstimateQber:
    def test_quarter_mismatch(self):
        k_b = SiftedBits(np.array([0, 1, 0, 0], dtype=np.uint8), KeyStage.SIFTED)
        q, trimmed = estimate_qber(np.array([0, 1, 1, 0]), np.array([0, 1, 2, 3]), k_b)
        assert q == 0.25
        assert trimmed.length == 0

    def test_identical_keys_zero(self):
        rng = np.random.default_rng(8)
        bits = rng.integers(0, 2, 200, dtype=np.uint8)
        k_b = SiftedBits(bits, KeyStage.SIFTED)
        idx = draw_sample_indices(200, 50, seed=1)
        q, trimmed = estimate_qber(bits[idx], idx, k_b)
        assert q == 0.0
        assert trimmed.length == 150

    def test_sampled_positions_removed_everywhere(self):
        rng = np.random.default_rng(15)
        bits_a = rng.integers(0, 2, 400, dtype=np.uint8)
        bits_b = bits_a ^ (rng.random(400) < 0.05).astype(np.uint8)
        idx = draw_sample_indices(400, 100, seed=3)
        q, trimmed_b = estimate_qber(bits_a[idx],
                                     idx, SiftedBits(bits_b, KeyStage.SIFTED))
        trimmed_a = remove_positions(SiftedBits(bits_a, KeyStage.SIFTED), idx)
        assert trimmed_a.length == trimmed_b.length == 300
        # no sampled bit survives: removing the same indices keeps alignment
        keep = np.delete(np.arange(400), idx)
        assert np.array_equal(trimmed_a.bits, bits_a[keep])
        assert np.array_equal(trimmed_b.bits, bits_b[keep])
        assert q == pytest.approx(np.mean(bits_a[idx] != bits_b[idx]))

    def test_empty_sample_rejected(self):
        with pytest.raises(InvalidParameterError):
            estimate_qber(np.zeros(0), np.zeros(0, dtype=int),
                          SiftedBits(np.zeros(4, dtype=np.uint8), KeyStage.SIFTED))

    def test_duplicate_indices_rejected(self):
        with pytest.raises(InvalidParameterError):
            estimate_qber(np.array([0, 0]), np.array([1, 1]),
                          SiftedBits(np.zeros(4, dtype=np.uint8), KeyStage.SIFTED))

    def test_sampling_deterministic(self):
        assert np.array_equal(draw_sample_indices(1000, 250, seed=9),
                              draw_sample_indices(1000, 250, seed=9))
        assert not np.array_equal(draw_sample_indices(1000, 250, seed=9),
                                  draw_sample_indices(1000, 250, seed=10))


def test_pipeline_consumes_emulator_dump_and_emits_stage_key_files(tmp_path):
    """Dump format in, per-stage hex key files out, everything re-parseable."""
    from satqkd.bits import read_key_file, write_key_file
    from satqkd.channel import SourceParams, dump_tag_frames, generate_tag_frames, load_tag_frames

    src = SourceParams(visibility=0.95)
    a, b = generate_tag_frames(src, 60_000, np.random.default_rng(31))
    dump = tmp_path / "frames.txt"
    dump_tag_frames(dump, a, b)
    _, a2, b2 = load_tag_frames(dump)

    keep, det_a, det_b = coincidence_filter_batch(a2, b2, 1)
    k_a, b_a = map_bits_batch(det_a, ALICE_CONVENTION)
    k_b, b_b = map_bits_batch(det_b, BOB_CONVENTION)
    raw_a = SiftedBits(k_a, KeyStage.RAW)
    write_key_file(tmp_path / "raw.hex", raw_a.stage.value, raw_a.bits)
    sifted_a = sift(raw_a, b_a, b_b)
    sifted_b = sift(SiftedBits(k_b, KeyStage.RAW), b_b, b_a)
    write_key_file(tmp_path / "sifted.hex", sifted_a.stage.value, sifted_a.bits)

    idx = draw_sample_indices(sifted_a.length, sifted_a.length // 2, seed=1)
    q, post_b = estimate_qber(sifted_a.bits[idx], idx, sifted_b)
    post_a = remove_positions(sifted_a, idx)
    write_key_file(tmp_path / "post.hex", post_a.stage.value, post_a.bits)
    assert q < 0.06

    for name, ref in (("raw.hex", raw_a), ("sifted.hex", sifted_a), ("post.hex", post_a)):
        stage, bits = read_key_file(tmp_path / name)
        assert stage == ref.stage.value
        assert np.array_equal(bits, ref.bits)
