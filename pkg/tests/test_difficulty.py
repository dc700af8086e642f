import numpy as np
import pytest

from difftrain.data import FeatureSequence
from difftrain.difficulty import (DifficultyIndicator, augment, augment_matrix,
                                  indicator_from_reconstruction,
                                  read_indicator_csv, re_sum, re_vector,
                                  write_indicator_csv)


def test_re_vector_examples():
    assert np.all(re_vector([1.0, 0.5], [1.0, 0.5]) == 0.0)
    assert np.array_equal(re_vector([1.0, 0.5], [0.5, 1.0]), [0.5, -0.5])
    out = re_vector(np.zeros((4, 7)), np.ones((4, 7)))
    assert out.shape == (4, 7)


def test_re_vector_width_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        re_vector([1.0], [1.0, 2.0])


def test_re_sum_examples():
    assert re_sum([0.3, 0.3], [0.3, 0.3]) == 0.0
    # signed terms can cancel; the absolute variant keeps them
    assert re_sum([1.0, 0.5], [0.5, 1.0]) == pytest.approx(0.0)
    assert re_sum([1.0, 0.5], [0.5, 1.0], absolute=True) == pytest.approx(1.0)
    assert re_sum([0.1, 0.2, 0.3], [0.0, 0.0, 0.0]) == pytest.approx(0.6)


def test_reconstruction_identity():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 5))
    x_hat = rng.normal(size=(20, 5))
    assert np.allclose(re_vector(x, x_hat) + x_hat, x)


def test_indicator_from_reconstruction_shapes():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(30, 20))
    x_hat = rng.normal(size=(30, 20))
    vec = indicator_from_reconstruction(x, x_hat, "re_vector")
    assert vec.width == 20 and vec.num_frames == 30
    scalar = indicator_from_reconstruction(x, x_hat, "re_sum")
    assert scalar.width == 1
    assert np.allclose(scalar.trace[:, 0], (x - x_hat).sum(axis=1))
    with pytest.raises(ValueError):
        indicator_from_reconstruction(x, x_hat, "pu")


def test_indicator_validation():
    with pytest.raises(ValueError, match="mode"):
        DifficultyIndicator(mode="bogus", trace=np.zeros((3, 1)))
    with pytest.raises(ValueError, match="width 1"):
        DifficultyIndicator(mode="re_sum", trace=np.zeros((3, 2)))
    with pytest.raises(ValueError, match="finite"):
        DifficultyIndicator(mode="pu", trace=np.array([[np.nan]]))


def test_augment_widths():
    rng = np.random.default_rng(2)
    seq = FeatureSequence("s", "train", rng.normal(size=(10, 88)))
    scalar = DifficultyIndicator(mode="re_sum", trace=np.zeros((10, 1)))
    assert augment(seq, scalar).num_features == 89
    vector = DifficultyIndicator(mode="re_vector", trace=rng.normal(size=(10, 88)))
    assert augment(seq, vector).num_features == 176


def test_augment_preserves_original_columns():
    rng = np.random.default_rng(3)
    seq = FeatureSequence("s", "dev", rng.normal(size=(6, 4)))
    ind = DifficultyIndicator(mode="re_sum", trace=np.zeros((6, 1)))
    out = augment(seq, ind)
    assert np.array_equal(out.values[:, :4], seq.values)
    assert out.subject_id == "s" and out.partition == "dev"


def test_augment_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        augment_matrix(np.zeros((5, 2)), np.zeros((4, 1)))


def test_indicator_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    ind = DifficultyIndicator(mode="re_vector", trace=rng.normal(size=(12, 3)))
    path = tmp_path / "ind.csv"
    write_indicator_csv(path, ind, frame_period=0.04)
    header = path.read_text().splitlines()[0]
    assert header == "time_s,d_1,d_2,d_3"
    loaded = read_indicator_csv(path, mode="re_vector")
    assert np.allclose(loaded.trace, ind.trace)
