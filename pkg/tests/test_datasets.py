import struct

import numpy as np
import pytest

from relu_phase import datasets
from relu_phase.datasets import Dataset, IDXFormatError


def test_default_dataset():
    ds = datasets.default_dataset()
    assert ds.n == 4 and ds.d == 2
    assert np.all(ds.X[:, 1] == 1.0)
    assert ds.name == "builtin:fig2"
    assert datasets.validate(ds, theory_mode=True).ok


def test_dataset_is_read_only_copy():
    X = np.array([[0.5, 1.0]])
    ds = Dataset(X, [0.5])
    X[0, 0] = 9.0
    assert ds.X[0, 0] == 0.5
    with pytest.raises(ValueError):
        ds.X[0, 0] = 1.0


def test_shape_mismatch():
    with pytest.raises(ValueError):
        Dataset(np.ones((3, 2)), np.ones(2))


def test_duplicate_inputs_rejected():
    with pytest.raises(ValueError):
        datasets.synthetic_1d([(0.1, 0.2), (0.1, 0.3)])


def test_fingerprint_tracks_content():
    a = datasets.default_dataset()
    b = datasets.synthetic_1d(datasets.DEFAULT_POINTS)
    c = datasets.synthetic_1d([(0.1, 0.8), (0.35, 0.2), (0.6, 0.6), (0.85, 0.41)])
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


def test_validate_flags_problems():
    ds = Dataset(np.array([[0.5, 0.9], [2.0, 1.0]]), [0.1, 0.2])
    rep = datasets.validate(ds, theory_mode=True)
    text = " ".join(rep.violations)
    assert not rep.ok
    assert "bias" in text and "outside [0, 1]" in text and "1/2" in text
    assert datasets.validate(Dataset(np.array([[0.5, 1.0]]), [0.2])).ok


def test_validate_non_finite():
    ds = Dataset(np.array([[np.nan, 1.0]]), [0.7])
    assert not datasets.validate(ds).ok


def test_idx_roundtrip(tmp_path):
    rs = np.random.default_rng(0)
    imgs = rs.integers(0, 256, size=(5, 3, 4), dtype=np.uint8)
    labels = np.array([0, 9, 3, 4, 5], dtype=np.uint8)
    datasets.write_idx_images(tmp_path / "i", imgs)
    datasets.write_idx_labels(tmp_path / "l", labels)
    assert np.array_equal(datasets.read_idx_images(tmp_path / "i"), imgs)
    ds = datasets.from_idx(tmp_path / "i", tmp_path / "l", count=3)
    assert ds.n == 3 and ds.d == 13
    assert np.allclose(ds.X[:, :-1], imgs[:3].reshape(3, -1) / 255.0)
    assert np.allclose(ds.y, labels[:3] / 9.0)
    assert datasets.validate(ds, theory_mode=True).violations == [] or ds.y.max() < 0.5


def test_idx_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(struct.pack(">iiii", 1234, 1, 1, 1) + b"\x00")
    with pytest.raises(IDXFormatError, match="magic"):
        datasets.read_idx_images(tmp_path / "x")


def test_idx_truncated(tmp_path):
    (tmp_path / "x").write_bytes(struct.pack(">iiii", 2051, 2, 2, 2) + b"\x00" * 5)
    with pytest.raises(IDXFormatError, match="truncated"):
        datasets.read_idx_images(tmp_path / "x")
    (tmp_path / "y").write_bytes(struct.pack(">i", 2049))
    with pytest.raises(IDXFormatError, match="truncated"):
        datasets.read_idx_labels(tmp_path / "y")


def test_idx_count_mismatch(tmp_path):
    datasets.write_idx_images(tmp_path / "i", np.zeros((2, 2, 2), dtype=np.uint8))
    datasets.write_idx_labels(tmp_path / "l", np.zeros(3, dtype=np.uint8))
    with pytest.raises(IDXFormatError):
        datasets.from_idx(tmp_path / "i", tmp_path / "l")


def test_csv_roundtrip(tmp_path):
    ds = datasets.default_dataset()
    datasets.to_csv(ds, tmp_path / "d.csv")
    back = datasets.load(str(tmp_path / "d.csv"))
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)


def test_load_variants(tmp_path):
    assert datasets.load("builtin:fig2").fingerprint() == datasets.default_dataset().fingerprint()
    datasets.write_idx_images(tmp_path / "i", np.zeros((4, 2, 2), dtype=np.uint8))
    datasets.write_idx_labels(tmp_path / "l", np.arange(4, dtype=np.uint8))
    assert datasets.load(f"idx:{tmp_path / 'i'},{tmp_path / 'l'},2").n == 2
    with pytest.raises(ValueError):
        datasets.load("idx:only-one")
