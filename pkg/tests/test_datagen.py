import numpy as np
import pytest

from copyalign.datagen import (MIN_SHARED_ORIGINS, PAIR_LENGTH, SPEED_GRID,
                               MatchSet, TracedSequence, delete_transform,
                               feature_perturb, freeze_transform,
                               ground_truth_box, make_negative_pair,
                               make_training_pair, mask_label,
                               match_set_from_origins, reduce_to_1fps,
                               speed_transform, step_label,
                               synth_base_sequence, temporal_transform)
from copyalign.errors import GenerationError
from copyalign.features import FeatureSequence


def _base(seed=0, length=32, dim=16, correlation=0.8):
    return synth_base_sequence(np.random.default_rng(seed), length, dim, correlation)


class TestTemporalTransforms:
    def test_identity_halves_rate(self):
        out = temporal_transform(_base(length=32), "identity", np.random.default_rng(0))
        assert len(out) == 16
        assert np.array_equal(out.origin_ids, np.arange(0, 32, 2))

    def test_speed_double(self):
        out = speed_transform(_base(length=32), 2.0)
        assert len(out) == 8
        assert np.array_equal(out.origin_ids, np.arange(0, 32, 4))

    def test_speed_one_equals_identity(self):
        base = _base(length=32)
        assert np.array_equal(speed_transform(base, 1.0).origin_ids,
                              reduce_to_1fps(base).origin_ids)

    def test_speed_fractional_pattern(self):
        out = speed_transform(_base(length=12), 0.75)
        # stride 1.5 over raw indices: 0, 1, 3, 4, 6, 7, 9, 10
        assert np.array_equal(out.origin_ids, [0, 1, 3, 4, 6, 7, 9, 10])

    def test_speed_half_keeps_everything(self):
        out = speed_transform(_base(length=10), 0.5)
        assert np.array_equal(out.origin_ids, np.arange(10))

    def test_freeze_repeats_consecutively(self):
        seq = TracedSequence(np.eye(16, dtype=np.float32), np.arange(16))
        out = freeze_transform(seq, 3, 2)
        assert len(out) == 18
        assert np.array_equal(out.origin_ids[3:6], [3, 3, 3])
        assert np.array_equal(out.frames[3], out.frames[5])

    def test_delete_removes_consecutive(self):
        seq = TracedSequence(np.eye(10, dtype=np.float32), np.arange(10))
        out = delete_transform(seq, 4, 3)
        assert np.array_equal(out.origin_ids, [0, 1, 2, 3, 7, 8, 9])

    def test_short_raw_rejected(self):
        with pytest.raises(GenerationError, match="at least 8"):
            temporal_transform(_base(length=7), "identity", np.random.default_rng(0))

    def test_origins_survive_every_kind(self):
        rng = np.random.default_rng(1)
        base = _base(length=40)
        for kind in ("speed", "freeze", "delete", "identity"):
            out = temporal_transform(base, kind, rng)
            assert np.all(np.diff(out.origin_ids) >= 0)
            assert set(out.origin_ids).issubset(set(base.origin_ids))


class TestPerturbation:
    def test_zero_strength_is_identity(self):
        seq = FeatureSequence.from_frames(np.eye(8, dtype=np.float32))
        out = feature_perturb(seq, 0.0, np.random.default_rng(0))
        assert np.array_equal(out.frames, seq.frames)

    def test_positive_strength_moves_rows(self):
        rng = np.random.default_rng(1)
        frames = rng.standard_normal((10, 32)).astype(np.float32)
        frames /= np.linalg.norm(frames, axis=1, keepdims=True)
        seq = FeatureSequence.from_frames(frames)
        out = feature_perturb(seq, 0.1, rng)
        cosines = (out.frames * seq.frames).sum(axis=1)
        assert np.all(cosines < 1.0)
        assert np.allclose(np.linalg.norm(out.frames, axis=1), 1.0, atol=1e-5)

    def test_mean_self_cosine_regression(self):
        # frozen from an independent sampling oracle (1000 rows, W=32, s=0.1):
        # mean cosine between a unit row and its perturbed copy ~ 0.872
        rng = np.random.default_rng(2)
        frames = rng.standard_normal((1000, 32)).astype(np.float32)
        frames /= np.linalg.norm(frames, axis=1, keepdims=True)
        seq = FeatureSequence.from_frames(frames)
        out = feature_perturb(seq, 0.1, rng)
        mean_cos = float((out.frames * seq.frames).sum(axis=1).mean())
        assert mean_cos == pytest.approx(0.872, abs=0.01)


class TestLabels:
    def test_mask_label_identity_pattern(self):
        ms = MatchSet({(0, 0), (1, 1), (2, 2)}, 3, 3)
        assert np.array_equal(mask_label(ms), np.eye(3, dtype=np.uint8))

    def test_mask_label_empty(self):
        ms = MatchSet(set(), 3, 4)
        assert np.array_equal(mask_label(ms), np.zeros((3, 4), dtype=np.uint8))

    def test_step_label_hand_case(self):
        # R traces a diagonal step, a rightward run, then a diagonal again
        ms = MatchSet({(0, 0), (1, 1), (1, 2), (2, 3)}, 3, 4)
        targets = step_label(ms)
        assert targets.probs[(0, 0, 0)] == 1.0
        assert targets.probs[(1, 1, 1)] == 1.0
        assert targets.probs[(1, 2, 0)] == 1.0
        assert targets.probs[(0, 2, 2)] == 1.0  # (1,2) matched, (1,3) not
        assert (1, 1, 0) not in targets.probs

    def test_step_label_split_case(self):
        ms = MatchSet({(1, 2), (2, 1)}, 4, 4)
        targets = step_label(ms)
        assert targets.probs[(1, 1, 1)] == 0.5
        assert targets.probs[(1, 1, 2)] == 0.5
        assert (1, 1, 0) not in targets.probs

    def test_step_label_pure_diagonal(self):
        n = 6
        ms = MatchSet({(i, i) for i in range(n)}, n, n)
        targets = step_label(ms)
        for i in range(n - 1):
            assert targets.probs[(i, i, 0)] == 1.0
        # diagonal positions carry only category 0
        assert all(l == 0 for (i, j, l) in targets.probs if i == j)

    def test_dense_round_trip(self):
        ms = MatchSet({(0, 0), (1, 1), (1, 2), (2, 3)}, 4, 5)
        dense = step_label(ms).to_dense()
        assert dense.shape == (3, 3, 4)
        assert dense[0, 0, 0] == 1.0
        assert dense.sum() == pytest.approx(
            sum(step_label(ms).probs.values()))


class TestPairGeneration:
    def test_identity_pair_is_diagonal(self):
        base = _base(length=32)
        a = reduce_to_1fps(base)
        p = reduce_to_1fps(base)
        ms = match_set_from_origins(a.origin_ids, p.origin_ids)
        assert ms.pairs == {(i, i) for i in range(16)}
        assert np.array_equal(mask_label(ms), np.eye(16, dtype=np.uint8))

    def test_freeze_shifts_diagonal(self):
        base = _base(length=32)
        anchor = reduce_to_1fps(base)
        positive = freeze_transform(reduce_to_1fps(base), 5, 2)
        ms = match_set_from_origins(anchor.origin_ids, positive.origin_ids[:16])
        assert {(5, 5), (5, 6), (5, 7)} <= ms.pairs
        assert (6, 8) in ms.pairs  # diagonal resumes shifted by two

    def test_generated_pairs_satisfy_contracts(self):
        for seed in range(60):
            rng = np.random.default_rng(seed)
            pair = make_training_pair(_base(seed=seed, length=36), rng)
            assert len(pair.anchor) == PAIR_LENGTH
            assert len(pair.positive) == PAIR_LENGTH
            assert len(pair.match_set.pairs) >= MIN_SHARED_ORIGINS
            # mask label is exactly the indicator of R
            expected = np.zeros((PAIR_LENGTH, PAIR_LENGTH), dtype=np.uint8)
            for i, j in pair.match_set.pairs:
                expected[i, j] = 1
            assert np.array_equal(pair.mask_label, expected)
            # target probabilities sum to one per responsible position
            position_mass = {}
            for (i, j, l), d in pair.step_targets.probs.items():
                position_mass[(i, j)] = position_mass.get((i, j), 0.0) + d
            assert all(abs(v - 1.0) < 1e-12 for v in position_mass.values())
            # category 0 never shares a position with a lateral category
            for (i, j, l) in pair.step_targets.probs:
                if l == 0:
                    assert (i, j, 1) not in pair.step_targets.probs
                    assert (i, j, 2) not in pair.step_targets.probs

    def test_match_set_monotone_in_provenance(self):
        # per-row j-extents never move backwards as i grows
        for seed in range(40):
            pair = make_training_pair(_base(seed=seed, length=36),
                                      np.random.default_rng(seed + 1000))
            by_row = {}
            for i, j in pair.match_set.pairs:
                lo, hi = by_row.get(i, (j, j))
                by_row[i] = (min(lo, j), max(hi, j))
            rows = sorted(by_row)
            for r1, r2 in zip(rows, rows[1:]):
                assert by_row[r1][0] <= by_row[r2][0]
                assert by_row[r1][1] <= by_row[r2][1]

    def test_rows_unit_norm(self):
        pair = make_training_pair(_base(length=36), np.random.default_rng(3))
        for seq in (pair.anchor, pair.positive):
            assert np.allclose(np.linalg.norm(seq.frames, axis=1), 1.0, atol=1e-5)

    def test_ground_truth_box(self):
        ms = MatchSet({(2, 5), (3, 6), (4, 7)}, 16, 16)
        (q, r) = ground_truth_box(ms)
        assert q == (2.0, 4.0)
        assert r == (5.0, 7.0)

    def test_negative_pair_has_right_shape(self):
        rng = np.random.default_rng(4)
        q, r = make_negative_pair(_base(seed=1, length=36), _base(seed=2, length=36), rng)
        assert len(q) == PAIR_LENGTH and len(r) == PAIR_LENGTH

    def test_impossible_pair_raises(self):
        # trimming to two frames caps shared origins at two, below the
        # four-match floor, so generation can never succeed
        base = _base(length=8)
        with pytest.raises(GenerationError):
            make_training_pair(base, np.random.default_rng(0), length=2,
                               max_attempts=8)
