import numpy as np
import pytest

from copyalign.encoder import (SequenceEncoderParams, encode_sequence,
                               spatial_similarity)
from copyalign.errors import ConfigError, DimensionError
from copyalign.features import FeatureSequence, l2_normalize


@pytest.fixture
def params():
    return SequenceEncoderParams.create(np.random.default_rng(0), model_dim=32,
                                        head_count=2, hidden_dim=64)


def _random_sequence(rng, m, w):
    return l2_normalize(FeatureSequence.from_frames(rng.standard_normal((m, w))))


@pytest.mark.parametrize("m", [1, 2, 5, 16, 64])
def test_shape_preserved(params, m):
    seq = _random_sequence(np.random.default_rng(m), m, 32)
    out = encode_sequence(seq, params)
    assert out.frames.shape == seq.frames.shape
    assert np.array_equal(out.timestamps, seq.timestamps)


def test_output_rows_unit_norm(params):
    seq = _random_sequence(np.random.default_rng(1), 16, 32)
    out = encode_sequence(seq, params)
    assert np.allclose(np.linalg.norm(out.frames, axis=1), 1.0, atol=1e-5)


def test_single_frame_sequence(params):
    seq = _random_sequence(np.random.default_rng(2), 1, 32)
    out = encode_sequence(seq, params)
    assert out.frames.shape == (1, 32)
    assert np.linalg.norm(out.frames[0]) == pytest.approx(1.0, abs=1e-5)


def test_dim_mismatch_is_config_error(params):
    seq = _random_sequence(np.random.default_rng(3), 4, 16)
    with pytest.raises(ConfigError):
        encode_sequence(seq, params)


def test_head_divisibility_enforced():
    with pytest.raises(ConfigError):
        SequenceEncoderParams.create(np.random.default_rng(0), model_dim=30,
                                     head_count=4)


def test_same_seed_same_weights():
    a = SequenceEncoderParams.create(np.random.default_rng(9))
    b = SequenceEncoderParams.create(np.random.default_rng(9))
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa.data, pb.data)


class TestSpatialSimilarity:
    def test_self_similarity_diagonal_is_one(self):
        seq = _random_sequence(np.random.default_rng(4), 6, 8)
        sim = spatial_similarity(seq, seq)
        assert np.allclose(np.diag(sim.values), 1.0, atol=1e-5)

    def test_orthogonal_rows_are_zero(self):
        u = FeatureSequence.from_frames(np.array([[1.0, 0.0], [0.0, 1.0]]))
        v = FeatureSequence.from_frames(np.array([[0.0, 1.0]]))
        sim = spatial_similarity(u, v)
        assert sim.values[0, 0] == pytest.approx(0.0, abs=1e-7)
        assert sim.values[1, 0] == pytest.approx(1.0, abs=1e-7)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(5)
        u = _random_sequence(rng, 4, 8)
        v = _random_sequence(rng, 5, 8)
        sim = spatial_similarity(u, v)
        expected = np.empty((4, 5))
        for i in range(4):
            for j in range(5):
                expected[i, j] = float(np.dot(u.frames[i], v.frames[j]))
        assert np.allclose(sim.values, expected, atol=1e-6)
        assert sim.row_count == 4 and sim.col_count == 5

    def test_cosine_bound(self):
        rng = np.random.default_rng(6)
        u = _random_sequence(rng, 12, 24)
        v = _random_sequence(rng, 9, 24)
        sim = spatial_similarity(u, v)
        assert np.all(sim.values <= 1 + 1e-5)
        assert np.all(sim.values >= -1 - 1e-5)

    def test_dim_mismatch(self):
        u = FeatureSequence.from_frames(np.ones((2, 3), dtype=np.float32))
        v = FeatureSequence.from_frames(np.ones((2, 4), dtype=np.float32))
        with pytest.raises(DimensionError):
            spatial_similarity(u, v)

    def test_bypass_mode_equals_raw_cosine(self):
        # with the encoder disabled the pipeline reduces to raw-feature cosine
        rng = np.random.default_rng(7)
        u = _random_sequence(rng, 5, 16)
        v = _random_sequence(rng, 7, 16)
        sim = spatial_similarity(u, v)
        assert np.allclose(sim.values, u.frames @ v.frames.T)


def test_encoding_changes_similarity_structure(params):
    # the encoder must actually transform inputs (not an identity map)
    rng = np.random.default_rng(8)
    u = _random_sequence(rng, 8, 32)
    enc = encode_sequence(u, params)
    assert not np.allclose(enc.frames, u.frames, atol=1e-3)
