import numpy as np
import pytest

from difftrain import network as nw
from difftrain.data import GoldStandard
from difftrain.difficulty import DifficultyIndicator
from difftrain.training import (MtlWeights, TrainingConfig, TrainRun,
                                augmented_dataset, default_structure_grid,
                                dev_emotion_ccc, extract_difficulty,
                                grid_search_structure, joint_loss,
                                train_stage1, train_stage2)

FAST = TrainingConfig(stage1_epochs=3, stage2_epochs=3, chunk_length=80, seed=5)


def _net_config(dataset, aux="none", layers=1, units=12, seed=5):
    return nw.NetworkConfig(input_dim=dataset.num_features, num_layers=layers,
                            units_per_layer=units, aux_head=aux, seed=seed)


# ---------------------------------------------------------------------------
# joint loss
# ---------------------------------------------------------------------------

def _bundle(emotion, aux=None):
    return nw.PredictionBundle(emotion_trace=np.asarray(emotion, dtype=float),
                               aux_trace=None if aux is None else
                               np.asarray(aux, dtype=float),
                               final_hidden=[])


def _gold(mean, unc=None):
    mean = np.asarray(mean, dtype=float)
    unc = np.zeros_like(mean) if unc is None else np.asarray(unc, dtype=float)
    return GoldStandard(mean_trace=mean, uncertainty_trace=unc,
                        dimension="arousal")


def test_joint_loss_weighted_mixture():
    # emotion SSE 2 and reconstruction SSE 4 over a single frame
    bundle = _bundle([np.sqrt(2.0)], [[2.0]])
    gold = _gold([0.0])
    loss, _, _ = joint_loss(bundle, gold, np.zeros((1, 1)),
                            MtlWeights(w1=0.5, w2=0.5), "reconstruction")
    assert loss == pytest.approx(3.0)


def test_joint_loss_perfect_predictions():
    x = np.array([[0.1, 0.2], [0.3, 0.4]])
    bundle = _bundle([0.5, -0.5], x)
    gold = _gold([0.5, -0.5])
    loss, e_grad, a_grad = joint_loss(bundle, gold, x, MtlWeights(), "reconstruction")
    assert loss == 0.0
    assert np.all(e_grad == 0.0) and np.all(a_grad == 0.0)


def test_joint_loss_uncertainty_hand_value():
    bundle = _bundle([0.3], [[0.5]])
    gold = _gold([0.1], [0.2])
    loss, _, _ = joint_loss(bundle, gold, None, MtlWeights(w1=1.0, w2=1.0),
                            "uncertainty")
    assert loss == pytest.approx(0.04 + 0.3)


def test_joint_loss_uncertainty_squared_variant():
    bundle = _bundle([0.1], [[0.5]])
    gold = _gold([0.1], [0.2])
    loss, _, _ = joint_loss(bundle, gold, None, MtlWeights(w1=1.0, w2=1.0),
                            "uncertainty", pu_squared=True)
    assert loss == pytest.approx(0.09)


def test_joint_loss_normalized_by_frames():
    bundle = _bundle([1.0, 1.0], [[0.0], [0.0]])
    gold = _gold([0.0, 0.0])
    loss, _, _ = joint_loss(bundle, gold, np.zeros((2, 1)),
                            MtlWeights(w1=1.0, w2=0.0), "reconstruction")
    assert loss == pytest.approx(1.0)  # mean, not sum


def test_joint_loss_l2_regularizer_needs_net():
    bundle = _bundle([0.0])
    with pytest.raises(ValueError, match="network"):
        joint_loss(bundle, _gold([0.0]), None,
                   MtlWeights(w1=1.0, w2=0.0, reg_lambda=0.1, regularizer="l2"),
                   "none")


def test_joint_loss_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        joint_loss(_bundle([0.0, 0.1]), _gold([0.0]), None, MtlWeights(), "none")


def test_mtl_weights_validation():
    with pytest.raises(ValueError):
        MtlWeights(w1=0.0, w2=0.0)
    with pytest.raises(ValueError):
        MtlWeights(w1=-0.1, w2=0.5)


# ---------------------------------------------------------------------------
# stage 1
# ---------------------------------------------------------------------------

def test_stage1_zero_epochs_returns_initialized_network(small_dataset):
    tcfg = TrainingConfig(stage1_epochs=0, seed=5)
    run = train_stage1(small_dataset, _net_config(small_dataset), MtlWeights(),
                       tcfg, aux_head="none")
    assert run.dev_ccc_history == ()
    assert run.train_loss_history == ()
    assert run.best_epoch == 0 and run.best_dev_ccc is None
    fresh = nw.init_network(_net_config(small_dataset))
    for (name, a), (_, b) in zip(run.best_net.iter_params(),
                                 fresh.iter_params()):
        assert np.array_equal(a, b), name


def test_stage1_selection_tracks_best_dev_ccc(small_dataset):
    run = train_stage1(small_dataset, _net_config(small_dataset, "reconstruction"),
                       MtlWeights(), FAST, aux_head="reconstruction")
    assert len(run.dev_ccc_history) == FAST.stage1_epochs
    assert run.best_dev_ccc == max(run.dev_ccc_history)
    assert run.best_epoch == int(np.argmax(run.dev_ccc_history)) + 1
    # the stored checkpoint reproduces the recorded dev CCC
    replayed = dev_emotion_ccc(run.best_net, small_dataset.partition("dev"))
    assert replayed == pytest.approx(run.best_dev_ccc, abs=1e-12)


def test_stage1_monotone_run_selects_final_epoch(small_dataset):
    run = train_stage1(small_dataset, _net_config(small_dataset), MtlWeights(1.0, 0.0),
                       FAST, aux_head="none")
    history = np.array(run.dev_ccc_history)
    if np.all(np.diff(history) > 0):
        assert run.best_epoch == len(history)
    else:  # selection rule still has to point at the maximum
        assert run.best_epoch == int(np.argmax(history)) + 1


def test_stage1_zero_aux_weight_equals_single_task(small_dataset):
    single = train_stage1(small_dataset, _net_config(small_dataset),
                          MtlWeights(w1=1.0, w2=0.0), FAST, aux_head="none")
    mtl = train_stage1(small_dataset, _net_config(small_dataset, "reconstruction"),
                       MtlWeights(w1=1.0, w2=0.0), FAST,
                       aux_head="reconstruction")
    assert single.train_loss_history == pytest.approx(mtl.train_loss_history,
                                                      abs=1e-12)
    assert single.dev_ccc_history == pytest.approx(mtl.dev_ccc_history,
                                                   abs=1e-12)
    assert single.best_epoch == mtl.best_epoch


def test_stage1_learns_on_synthetic_data(small_dataset):
    # desk-scale sanity check only; the halving criterion runs on the full
    # reference dataset in the acceptance suite
    tcfg = TrainingConfig(stage1_epochs=15, chunk_length=40, seed=5)
    run = train_stage1(small_dataset, _net_config(small_dataset, "reconstruction"),
                       MtlWeights(), tcfg, aux_head="reconstruction")
    assert run.train_loss_history[-1] < 0.6 * run.train_loss_history[0]
    assert run.best_dev_ccc > 0.0


def test_train_run_invariant_enforced(small_dataset):
    net = nw.init_network(_net_config(small_dataset))
    with pytest.raises(ValueError, match="best dev CCC"):
        TrainRun(stage=1, best_net=net, best_epoch=1, best_dev_ccc=0.1,
                 dev_ccc_history=(0.1, 0.4), train_loss_history=(1.0, 0.5))


# ---------------------------------------------------------------------------
# difficulty extraction
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def re_run(small_dataset):
    return train_stage1(small_dataset,
                        nw.NetworkConfig(input_dim=small_dataset.num_features,
                                         num_layers=1, units_per_layer=12,
                                         aux_head="reconstruction", seed=5),
                        MtlWeights(), FAST, aux_head="reconstruction")


def test_extract_difficulty_pu_is_head_output(small_dataset):
    tcfg = TrainingConfig(stage1_epochs=2, chunk_length=80, seed=5)
    run = train_stage1(small_dataset, _net_config(small_dataset, "uncertainty"),
                       MtlWeights(), tcfg, aux_head="uncertainty")
    indicators = extract_difficulty(run, small_dataset, "pu")
    assert len(indicators) == len(small_dataset.sequences)
    seq = small_dataset.sequences[0]
    bundle = nw.forward(run.best_net, seq.features, want_cache=False)
    assert np.array_equal(indicators[0].trace, bundle.aux_trace)


def test_extract_difficulty_vector_width(re_run, small_dataset):
    indicators = extract_difficulty(re_run, small_dataset, "re_vector")
    assert indicators[0].width == small_dataset.num_features


def test_extract_difficulty_sum_matches_vector(re_run, small_dataset):
    vec = extract_difficulty(re_run, small_dataset, "re_vector")
    scalar = extract_difficulty(re_run, small_dataset, "re_sum")
    for v, s in zip(vec, scalar):
        assert np.allclose(v.trace.sum(axis=1), s.trace[:, 0], atol=1e-12)


def test_extract_difficulty_mode_head_mismatch(re_run, small_dataset):
    with pytest.raises(ValueError, match="head"):
        extract_difficulty(re_run, small_dataset, "pu")


# ---------------------------------------------------------------------------
# stage 2
# ---------------------------------------------------------------------------

def test_stage2_scalar_indicator_width(re_run, small_dataset):
    indicators = extract_difficulty(re_run, small_dataset, "re_sum")
    run = train_stage2(small_dataset, indicators,
                       _net_config(small_dataset), FAST)
    assert run.stage == 2
    assert run.best_net.config.input_dim == small_dataset.num_features + 1
    assert run.best_net.config.aux_head == "none"


def test_stage2_vector_indicator_width(re_run, small_dataset):
    indicators = extract_difficulty(re_run, small_dataset, "re_vector")
    run = train_stage2(small_dataset, indicators,
                       _net_config(small_dataset), FAST)
    assert run.best_net.config.input_dim == 2 * small_dataset.num_features


def test_stage2_does_not_touch_stage1_model(re_run, small_dataset):
    before = nw.get_flat_params(re_run.best_net).copy()
    indicators = extract_difficulty(re_run, small_dataset, "re_sum")
    train_stage2(small_dataset, indicators, _net_config(small_dataset), FAST)
    assert np.array_equal(nw.get_flat_params(re_run.best_net), before)


def test_augmented_dataset_standardizes_indicator(re_run, small_dataset):
    indicators = extract_difficulty(re_run, small_dataset, "re_sum")
    augmented = augmented_dataset(small_dataset, indicators)
    r = small_dataset.num_features
    train_cols = np.vstack([s.features[:, r:]
                            for s in augmented.partition("train")])
    assert abs(train_cols.mean()) < 1e-9
    assert abs(train_cols.std(ddof=1) - 1.0) < 1e-6
    # original feature columns pass through bit-exactly
    for orig, aug in zip(small_dataset.sequences, augmented.sequences):
        assert np.array_equal(aug.features[:, :r], orig.features)


def test_zero_indicator_column_is_a_no_op(small_dataset):
    # with d == 0 everywhere the augmented column is exactly zero, so the
    # stage-2 network behaves like a plain net whose extra weights are unused
    zero = [DifficultyIndicator(mode="re_sum",
                                trace=np.zeros((s.num_frames, 1)))
            for s in small_dataset.sequences]
    augmented = augmented_dataset(small_dataset, zero)
    seq = augmented.sequences[0]
    assert np.all(seq.features[:, -1] == 0.0)
    wide = nw.init_network(_net_config(augmented, seed=3))
    narrow = nw.init_network(_net_config(small_dataset, seed=3))
    r = small_dataset.num_features
    for layer_w, layer_n in zip(wide.layers, narrow.layers):
        for gate in "zrc":
            layer_n[f"w{gate}"][...] = layer_w[f"w{gate}"][:, :r]
            layer_n[f"u{gate}"][...] = layer_w[f"u{gate}"]
    narrow.head_w[...] = wide.head_w
    narrow.head_b[...] = wide.head_b
    out_wide = nw.forward(wide, seq.features, want_cache=False).emotion_trace
    out_narrow = nw.forward(narrow, seq.features[:, :r],
                            want_cache=False).emotion_trace
    assert np.allclose(out_wide, out_narrow, atol=1e-15)


def test_stage2_rejects_mixed_widths(small_dataset):
    bad = [DifficultyIndicator(mode="re_sum", trace=np.zeros((s.num_frames, 1)))
           for s in small_dataset.sequences]
    bad[0] = DifficultyIndicator(mode="re_vector",
                                 trace=np.zeros((small_dataset.sequences[0].num_frames, 2)))
    with pytest.raises(ValueError, match="width"):
        train_stage2(small_dataset, bad, _net_config(small_dataset), FAST)


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

def _fake_run(config, score):
    return TrainRun(stage=1, best_net=nw.init_network(config), best_epoch=1,
                    best_dev_ccc=score, dev_ccc_history=(score,),
                    train_loss_history=(1.0,))


def test_default_grid_has_fifteen_configs(small_dataset):
    grid = default_structure_grid(_net_config(small_dataset))
    assert len(grid) == 15
    assert {c.num_layers for c in grid} == {1, 3, 5, 7, 9}
    assert {c.units_per_layer for c in grid} == {40, 80, 120}


def test_grid_search_single_config(small_dataset):
    cfg = _net_config(small_dataset)
    best_cfg, run = grid_search_structure([cfg], lambda c: _fake_run(c, 0.4))
    assert best_cfg == cfg and run.best_dev_ccc == 0.4


def test_grid_search_prefers_higher_ccc(small_dataset):
    small = _net_config(small_dataset, units=8)
    big = _net_config(small_dataset, units=16)
    scores = {8: 0.2, 16: 0.5}
    best_cfg, _ = grid_search_structure(
        [small, big], lambda c: _fake_run(c, scores[c.units_per_layer]))
    assert best_cfg == big


def test_grid_search_tie_prefers_fewer_parameters(small_dataset):
    small = _net_config(small_dataset, units=8)
    big = _net_config(small_dataset, units=16)
    best_cfg, _ = grid_search_structure([big, small],
                                        lambda c: _fake_run(c, 0.3))
    assert best_cfg == small


def test_grid_search_empty_grid():
    with pytest.raises(ValueError, match="empty"):
        grid_search_structure([], lambda c: None)
