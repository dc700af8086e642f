import json
import math

import numpy as np
import pytest

from difftrain.data import (DataFormatError, FeatureSequence, GoldStandard,
                            RaterAnnotations, StandardizationStats,
                            SyntheticConfig, apply_standardization,
                            build_regression_dataset, compensate_delay,
                            compute_gold_standard, fit_standardization,
                            generate_synthetic, load_features, load_manifest,
                            regression_dataset_from_synthetic,
                            resample_nearest, write_synthetic)


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# load_features
# ---------------------------------------------------------------------------

def test_load_features_basic(tmp_path):
    path = _write(tmp_path, "f.csv",
                  "time_s,f1,f2\n0.0,1.0,2.0\n0.04,3.0,4.0\n0.08,5.0,6.0\n")
    seq = load_features(path, 0.04, subject_id="s1", partition="dev")
    assert seq.num_frames == 3
    assert seq.num_features == 2
    assert seq.values[1, 1] == 4.0
    assert seq.subject_id == "s1" and seq.partition == "dev"


def test_load_features_non_numeric_cell_location(tmp_path):
    path = _write(tmp_path, "f.csv", "time_s,f1,f2\n0.0,1.0,2.0\n0.04,oops,4.0\n")
    with pytest.raises(DataFormatError, match=r"row 3.*column 2"):
        load_features(path)


def test_load_features_missing_and_empty(tmp_path):
    with pytest.raises(DataFormatError, match="not found"):
        load_features(tmp_path / "nope.csv")
    path = _write(tmp_path, "empty.csv", "")
    with pytest.raises(DataFormatError, match="empty"):
        load_features(path)
    path = _write(tmp_path, "header_only.csv", "time_s,f1\n")
    with pytest.raises(DataFormatError, match="no data rows"):
        load_features(path)


def test_load_features_ragged_row(tmp_path):
    path = _write(tmp_path, "f.csv", "time_s,f1,f2\n0.0,1.0,2.0\n0.04,3.0\n")
    with pytest.raises(DataFormatError, match="row 3"):
        load_features(path)


def test_load_features_requires_time_header(tmp_path):
    path = _write(tmp_path, "f.csv", "t,f1\n0.0,1.0\n")
    with pytest.raises(DataFormatError, match="time_s"):
        load_features(path)


def test_load_features_non_finite(tmp_path):
    path = _write(tmp_path, "f.csv", "time_s,f1\n0.0,1.0\n0.04,nan\n")
    with pytest.raises(DataFormatError, match="non-finite"):
        load_features(path)


def test_load_features_corpus_scale(tmp_path):
    # 67.5k frames x 88 features, the full per-partition size of the
    # benchmark corpus this mirrors
    rng = np.random.default_rng(0)
    frames, width = 67500, 88
    data = np.column_stack([np.arange(frames) * 0.04,
                            rng.normal(size=(frames, width)).astype(np.float32)])
    header = "time_s," + ",".join(f"f{i}" for i in range(width))
    path = tmp_path / "big.csv"
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.4f")
    seq = load_features(path, 0.04)
    assert seq.num_frames == 67500
    assert seq.num_features == 88


# ---------------------------------------------------------------------------
# gold standard / perception uncertainty
# ---------------------------------------------------------------------------

def test_gold_standard_hand_values():
    ann = RaterAnnotations("s", "arousal", np.array([[0.2], [0.4], [0.6]]))
    gold = compute_gold_standard(ann)
    assert gold.mean_trace[0] == pytest.approx(0.4, abs=1e-15)
    assert gold.uncertainty_trace[0] == pytest.approx(0.2, abs=1e-12)


def test_gold_standard_two_raters():
    ann = RaterAnnotations("s", "valence", np.array([[0.0], [0.2]]))
    gold = compute_gold_standard(ann)
    assert gold.mean_trace[0] == pytest.approx(0.1)
    assert gold.uncertainty_trace[0] == pytest.approx(math.sqrt(0.02), abs=1e-12)


def test_gold_standard_identical_raters_zero_uncertainty():
    trace = np.linspace(-0.5, 0.5, 20)
    ann = RaterAnnotations("s", "arousal", np.tile(trace, (4, 1)))
    gold = compute_gold_standard(ann)
    assert np.all(gold.uncertainty_trace == 0.0)
    assert np.allclose(gold.mean_trace, trace)


def test_annotations_require_two_raters():
    with pytest.raises(ValueError, match="K=2"):
        RaterAnnotations("s", "arousal", np.zeros((1, 5)))


# ---------------------------------------------------------------------------
# delay compensation
# ---------------------------------------------------------------------------

def _gold(values, fp=0.04):
    return GoldStandard(mean_trace=np.asarray(values, dtype=float),
                        uncertainty_trace=np.zeros(len(values)),
                        dimension="arousal", frame_period=fp)


def test_delay_zero_identity():
    gold = _gold([0.1, 0.2, 0.3])
    out = compensate_delay(gold, 0.0)
    assert np.array_equal(out.mean_trace, gold.mean_trace)


def test_delay_two_frames_with_tail_replication():
    out = compensate_delay(_gold([1.0, 2.0, 3.0, 4.0]), 0.08)
    assert np.array_equal(out.mean_trace, [3.0, 4.0, 4.0, 4.0])
    assert out.delay_applied == pytest.approx(0.08)


def test_delay_paper_setting_is_sixty_frames():
    trace = np.arange(100, dtype=float)
    out = compensate_delay(_gold(trace), 2.4)
    assert out.mean_trace[0] == 60.0
    assert np.all(out.mean_trace[40:] == 99.0)


def test_delay_exceeding_duration_errors():
    with pytest.raises(ValueError, match="exceeds"):
        compensate_delay(_gold([1.0, 2.0]), 0.08)


def test_delay_composes():
    trace = np.sin(np.arange(50) / 5.0)
    once = compensate_delay(_gold(trace), 0.20)
    twice = compensate_delay(compensate_delay(_gold(trace), 0.12), 0.08)
    assert np.allclose(once.mean_trace[:-5], twice.mean_trace[:-5])
    assert twice.delay_applied == pytest.approx(0.20)


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------

def _feature_seq(values, partition="train"):
    return FeatureSequence("s", partition, np.asarray(values, dtype=float))


def test_fit_standardization_hand_values():
    stats = fit_standardization([_feature_seq([[4.0], [6.0]])])
    assert stats.means[0] == pytest.approx(5.0)
    assert stats.stds[0] == pytest.approx(math.sqrt(2.0))


def test_fit_standardization_constant_column_floored():
    stats = fit_standardization([_feature_seq([[3.0], [3.0], [3.0]])])
    assert stats.stds[0] == stats.epsilon_floor


def test_fit_standardization_concatenation_equivalence():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(7, 3))
    b = rng.normal(size=(5, 3))
    split = fit_standardization([_feature_seq(a), _feature_seq(b)])
    joined = fit_standardization([_feature_seq(np.vstack([a, b]))])
    assert np.allclose(split.means, joined.means)
    assert np.allclose(split.stds, joined.stds)


def test_apply_standardization_arithmetic():
    stats = StandardizationStats(means=[5.0], stds=[2.0])
    seq = apply_standardization(_feature_seq([[9.0]]), stats)
    assert seq.values[0, 0] == pytest.approx(2.0)


def test_apply_standardization_self_normalizes():
    rng = np.random.default_rng(2)
    seqs = [_feature_seq(rng.normal(2.0, 3.0, size=(40, 4))) for _ in range(3)]
    stats = fit_standardization(seqs)
    out = np.vstack([apply_standardization(s, stats).values for s in seqs])
    assert np.all(np.abs(out.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(out.std(axis=0, ddof=1) - 1.0) < 1e-6)


def test_apply_standardization_width_mismatch():
    stats = StandardizationStats(means=[0.0, 0.0], stds=[1.0, 1.0])
    with pytest.raises(ValueError, match="width"):
        apply_standardization(_feature_seq([[1.0]]), stats)


def test_empty_training_set_rejected():
    with pytest.raises(ValueError, match="empty"):
        fit_standardization([])


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def test_resample_nearest_picks_closest():
    src_t = np.array([0.0, 0.1, 0.2])
    vals = np.array([[1.0, 2.0, 3.0]])
    out = resample_nearest(src_t, vals, np.array([0.0, 0.04, 0.06, 0.19]))
    assert np.array_equal(out, [[1.0, 1.0, 2.0, 3.0]])


def test_resample_ties_resolve_earlier():
    out = resample_nearest(np.array([0.0, 1.0]), np.array([5.0, 9.0]),
                           np.array([0.5]))
    assert out[0] == 5.0


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

def test_synthetic_deterministic(small_synth):
    cfg = small_synth.config
    again = generate_synthetic(cfg, seed=11)
    for a, b in zip(small_synth.subjects, again.subjects):
        assert np.array_equal(a.features.values, b.features.values)
        for dim in cfg.dimensions:
            assert np.array_equal(a.annotations[dim].traces,
                                  b.annotations[dim].traces)


def test_synthetic_shapes(small_synth):
    cfg = small_synth.config
    assert len(small_synth.subjects) == sum(cfg.subjects_per_partition)
    assert len(small_synth.partition("dev")) == cfg.subjects_per_partition[1]
    subj = small_synth.subjects[0]
    assert subj.features.values.shape == (cfg.num_frames, cfg.num_features)
    ann = subj.annotations["arousal"]
    assert ann.traces.shape == (cfg.num_raters, cfg.num_frames)


def test_synthetic_uncertainty_is_informative(small_synth):
    ann = small_synth.subjects[0].annotations["arousal"]
    gold = compute_gold_standard(ann)
    assert gold.uncertainty_trace.max() > 0.0
    # the noise schedule varies over time, so the uncertainty does too
    assert gold.uncertainty_trace.std() > 0.0


def test_synthetic_rejects_bad_config():
    with pytest.raises(ValueError):
        SyntheticConfig(num_features=0)
    with pytest.raises(ValueError):
        SyntheticConfig(num_raters=1)


# ---------------------------------------------------------------------------
# manifest round trip and dataset assembly
# ---------------------------------------------------------------------------

def test_write_and_build_round_trip(tmp_path, small_synth):
    manifest_path = write_synthetic(small_synth, tmp_path)
    manifest = load_manifest(manifest_path)
    assert len(manifest.entries) == len(small_synth.subjects)
    ds = build_regression_dataset(manifest, "arousal")
    in_memory = regression_dataset_from_synthetic(small_synth, "arousal")
    for a, b in zip(ds.sequences, in_memory.sequences):
        assert a.subject_id == b.subject_id
        assert np.allclose(a.features, b.features, atol=1e-12)
        assert np.allclose(a.target, b.target, atol=1e-12)


def test_dataset_standardized_on_train(small_dataset):
    train = np.vstack([s.features for s in small_dataset.partition("train")])
    assert np.all(np.abs(train.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(train.std(axis=0, ddof=1) - 1.0) < 1e-6)


def test_build_dataset_unknown_dimension(small_synth, tmp_path):
    manifest_path = write_synthetic(small_synth, tmp_path)
    with pytest.raises(ValueError, match="dimension"):
        build_regression_dataset(manifest_path, "nope")


def test_manifest_missing_field(tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text("{\"frame_period\": 0.04}")
    with pytest.raises(DataFormatError, match="missing manifest field"):
        load_manifest(bad)


def test_manifest_delay_defaults_to_standard_lag(tmp_path):
    minimal = {"frame_period": 0.04, "dimensions": ["arousal"], "subjects": []}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(minimal))
    assert load_manifest(path).delay == 2.4


def test_synthetic_manifest_records_generator(tmp_path, small_synth):
    manifest_path = write_synthetic(small_synth, tmp_path)
    raw = json.loads(manifest_path.read_text())
    assert raw["delay"] == 0.0
    assert raw["generator"]["seed"] == 11
    assert raw["generator"]["config"]["num_raters"] == 4
