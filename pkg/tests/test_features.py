import numpy as np
import pytest

from copyalign.errors import DataError, DegenerateInputError, DimensionError
from copyalign.features import (FeatureSequence, l2_normalize, load_features,
                                read_feature_csv, read_feature_file,
                                write_feature_file)


def test_normalize_hand_value():
    seq = FeatureSequence.from_frames(np.array([[3.0, 4.0]]))
    out = l2_normalize(seq)
    assert np.allclose(out.frames, [[0.6, 0.8]])


def test_normalize_unit_row_unchanged():
    seq = FeatureSequence.from_frames(np.array([[1.0, 0.0, 0.0]]))
    out = l2_normalize(seq)
    assert np.allclose(out.frames, seq.frames)


def test_normalize_zero_row_reports_index():
    seq = FeatureSequence.from_frames(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(DegenerateInputError, match="row 1"):
        l2_normalize(seq)


def test_normalized_rows_are_unit():
    rng = np.random.default_rng(0)
    seq = l2_normalize(FeatureSequence.from_frames(rng.standard_normal((20, 16))))
    assert np.allclose(np.linalg.norm(seq.frames, axis=1), 1.0, atol=1e-5)


def test_timestamps_must_increase():
    with pytest.raises(DataError, match="strictly increasing"):
        FeatureSequence(np.zeros((3, 2), dtype=np.float32) + 1,
                        np.array([0.0, 2.0, 1.0]))


def test_timestamp_count_must_match():
    with pytest.raises(DimensionError):
        FeatureSequence(np.ones((3, 2)), np.array([0.0, 1.0]))


class TestBinaryFormat:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        seq = FeatureSequence(rng.standard_normal((7, 5)).astype(np.float32),
                              np.arange(7) * 0.5, fps=2.0)
        path = tmp_path / "seq.vsfq"
        write_feature_file(path, seq)
        back = read_feature_file(path)
        assert np.array_equal(back.frames, seq.frames)
        assert np.array_equal(back.timestamps, seq.timestamps)
        assert back.fps == 2.0

    def test_writes_are_deterministic(self, tmp_path):
        seq = FeatureSequence.from_frames(np.eye(4, dtype=np.float32))
        a, b = tmp_path / "a.vsfq", tmp_path / "b.vsfq"
        write_feature_file(a, seq)
        write_feature_file(b, seq)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.vsfq"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(DataError, match="magic"):
            read_feature_file(path)

    def test_truncated(self, tmp_path):
        seq = FeatureSequence.from_frames(np.eye(4, dtype=np.float32))
        path = tmp_path / "t.vsfq"
        write_feature_file(path, seq)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(DataError):
            read_feature_file(path)


class TestCsvImport:
    def test_basic(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("1.0,0.0\n0.0,1.0\n")
        seq = read_feature_csv(path, fps=2.0)
        assert seq.frames.shape == (2, 2)
        assert np.allclose(seq.timestamps, [0.0, 0.5])

    def test_ragged_rows_rejected(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("1.0,0.0\n0.0\n")
        with pytest.raises(DataError, match="expected 2"):
            read_feature_csv(path)

    def test_sniffing(self, tmp_path):
        seq = FeatureSequence.from_frames(np.eye(3, dtype=np.float32))
        binary = tmp_path / "b.vsfq"
        write_feature_file(binary, seq)
        text = tmp_path / "c.csv"
        text.write_text("1,0,0\n0,1,0\n0,0,1\n")
        assert np.allclose(load_features(binary).frames, load_features(text).frames)
