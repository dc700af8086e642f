"""Two-stage training: a first multi-task stage that learns an emotion head
alongside an auxiliary difficulty head (input reconstruction or perception
uncertainty), difficulty extraction with the selected model, and a second
single-task stage on difficulty-augmented inputs. Also the network-structure
grid search.

Optimization details: sequences are walked in chunks (hidden state carried
within a sequence), gradients are averaged over a fixed number of chunks per
optimizer step, clipped by global norm, then applied with Adam. Model
selection uses the emotion CCC on the concatenated development partition,
computed on raw (un-post-processed) predictions.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .data import (GoldStandard, LabeledSequence, RegressionDataset,
                   StandardizationStats)
from .difficulty import (DifficultyIndicator, augment_matrix,
                         indicator_from_reconstruction)
from .metrics import ccc
from .network import (GruNetwork, NetworkConfig, PredictionBundle,
                      adam_step, backward, clip_gradients, forward,
                      init_adam_state, init_network, parameter_count)

AUX_FOR_MODE = {"re_vector": "reconstruction", "re_sum": "reconstruction",
                "pu": "uncertainty"}


@dataclass(frozen=True)
class MtlWeights:
    """Loss mixture: total = w1*emotion + w2*auxiliary + reg_lambda*R(theta)."""

    w1: float = 0.5
    w2: float = 0.5
    reg_lambda: float = 0.0
    regularizer: str = "none"

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.reg_lambda < 0:
            raise ValueError("loss weights must be non-negative")
        if self.w1 + self.w2 <= 0:
            raise ValueError("at least one task weight must be positive")
        if self.regularizer not in ("none", "l2"):
            raise ValueError(f"unknown regularizer {self.regularizer!r}")


@dataclass(frozen=True)
class TrainingConfig:
    stage1_epochs: int = 50
    stage2_epochs: int = 50
    learning_rate: float = 0.001
    chunk_length: int = 300
    batch_chunks: int = 4
    clip_norm: float = 5.0
    seed: int = 0
    pu_squared: bool = False   # squared-error variant of the uncertainty loss

    def __post_init__(self):
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.chunk_length < 1 or self.batch_chunks < 1:
            raise ValueError("chunk length and batch size must be positive")


@dataclass(frozen=True)
class TrainRun:
    stage: int
    best_net: GruNetwork
    best_epoch: int
    best_dev_ccc: float | None
    dev_ccc_history: tuple[float, ...]
    train_loss_history: tuple[float, ...]

    def __post_init__(self):
        if self.dev_ccc_history:
            if self.best_dev_ccc != max(self.dev_ccc_history):
                raise ValueError("selected model must carry the best dev CCC")
        elif self.best_dev_ccc is not None:
            raise ValueError("no epochs ran, so there is no best dev CCC")


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _loss_and_grads(emotion, aux, target, aux_target, weights: MtlWeights,
                    aux_head: str, pu_squared: bool):
    """Frame-normalized loss plus per-frame gradients on both heads."""
    t_len = emotion.shape[0]
    err = emotion - target
    loss = weights.w1 * float(err @ err) / t_len
    emotion_grad = (2.0 * weights.w1 / t_len) * err
    aux_grad = None
    if aux_head == "reconstruction":
        diff = aux - aux_target
        loss += weights.w2 * float(np.sum(diff * diff)) / t_len
        aux_grad = (2.0 * weights.w2 / t_len) * diff
    elif aux_head == "uncertainty":
        diff = aux[:, 0] - aux_target
        if pu_squared:
            loss += weights.w2 * float(diff @ diff) / t_len
            aux_grad = ((2.0 * weights.w2 / t_len) * diff)[:, None]
        else:
            loss += weights.w2 * float(np.sum(np.abs(diff))) / t_len
            aux_grad = ((weights.w2 / t_len) * np.sign(diff))[:, None]
    elif aux_head != "none":
        raise ValueError(f"unknown auxiliary head {aux_head!r}")
    return loss, emotion_grad, aux_grad


def joint_loss(bundle: PredictionBundle, gold: GoldStandard, inputs,
               weights: MtlWeights, aux_head: str, pu_squared: bool = False,
               net: GruNetwork | None = None):
    """Combined loss for one sequence and its per-frame output gradients.

    The emotion and reconstruction terms are squared errors, the uncertainty
    term an absolute error (squared variant via pu_squared); all terms are
    normalized by the frame count. Returns (loss, emotion_grad, aux_grad).
    """
    target = gold.mean_trace
    if bundle.emotion_trace.shape[0] != target.shape[0]:
        raise ValueError("prediction and gold standard lengths differ")
    if aux_head == "reconstruction":
        aux_target = np.asarray(inputs, dtype=np.float64)
        if bundle.aux_trace is None or bundle.aux_trace.shape != aux_target.shape:
            raise ValueError("reconstruction head does not match the input shape")
    elif aux_head == "uncertainty":
        aux_target = gold.uncertainty_trace
        if bundle.aux_trace is None or bundle.aux_trace.shape[0] != aux_target.shape[0]:
            raise ValueError("uncertainty head does not match the label length")
    else:
        aux_target = None
    loss, e_grad, a_grad = _loss_and_grads(bundle.emotion_trace, bundle.aux_trace,
                                           target, aux_target, weights, aux_head,
                                           pu_squared)
    if weights.reg_lambda > 0 and weights.regularizer == "l2":
        if net is None:
            raise ValueError("l2 regularization needs the network parameters")
        loss += weights.reg_lambda * 0.5 * sum(
            float(np.sum(a * a)) for _, a in net.iter_params())
    return loss, e_grad, a_grad


# ---------------------------------------------------------------------------
# Epoch loop
# ---------------------------------------------------------------------------

def predict_sequences(net: GruNetwork, sequences: Sequence[LabeledSequence]
                      ) -> list[np.ndarray]:
    return [forward(net, s.features, want_cache=False).emotion_trace
            for s in sequences]


def dev_emotion_ccc(net: GruNetwork, sequences: Sequence[LabeledSequence]) -> float:
    preds = predict_sequences(net, sequences)
    pred_cat = np.concatenate(preds)
    gold_cat = np.concatenate([s.target for s in sequences])
    return ccc(pred_cat, gold_cat).r_c


def _run_epoch(net, adam, sequences, weights, aux_head, tcfg, stage, epoch):
    rng = np.random.default_rng([tcfg.seed, stage, epoch])
    order = rng.permutation(len(sequences))
    pending: dict[str, np.ndarray] = {}
    pending_count = 0
    total_loss = 0.0
    total_frames = 0

    def flush():
        nonlocal pending, pending_count
        if pending_count == 0:
            return
        for g in pending.values():
            g /= pending_count
        if weights.reg_lambda > 0 and weights.regularizer == "l2":
            for name, arr in net.iter_params():
                pending[name] += weights.reg_lambda * arr
        clip_gradients(pending, tcfg.clip_norm)
        adam_step(net, pending, adam)
        pending = {}
        pending_count = 0

    for seq_idx in order:
        seq = sequences[seq_idx]
        hidden = None
        for start in range(0, seq.num_frames, tcfg.chunk_length):
            stop = min(start + tcfg.chunk_length, seq.num_frames)
            bundle = forward(net, seq.features[start:stop], hidden)
            hidden = bundle.final_hidden
            aux_target = None
            if aux_head == "reconstruction":
                aux_target = seq.features[start:stop]
            elif aux_head == "uncertainty":
                aux_target = seq.uncertainty[start:stop]
            loss, e_grad, a_grad = _loss_and_grads(
                bundle.emotion_trace, bundle.aux_trace, seq.target[start:stop],
                aux_target, weights, aux_head, tcfg.pu_squared)
            grads = backward(net, bundle, e_grad, a_grad)
            if pending:
                for name, g in grads.items():
                    pending[name] += g
            else:
                pending = grads
            pending_count += 1
            frames = stop - start
            total_loss += loss * frames
            total_frames += frames
            if pending_count >= tcfg.batch_chunks:
                flush()
    flush()
    return total_loss / total_frames


def _train_loop(dataset: RegressionDataset, net_config: NetworkConfig,
                weights: MtlWeights, tcfg: TrainingConfig, aux_head: str,
                epochs: int, stage: int) -> TrainRun:
    train_seqs = dataset.partition("train")
    dev_seqs = dataset.partition("dev")
    if not train_seqs or not dev_seqs:
        raise ValueError("training needs non-empty train and dev partitions")
    config = replace(net_config, input_dim=dataset.num_features, aux_head=aux_head)
    net = init_network(config)
    adam = init_adam_state(net, tcfg.learning_rate)
    best_net = net.copy()
    best_epoch = 0
    best_ccc = None
    loss_history = []
    ccc_history = []
    for epoch in range(1, epochs + 1):
        loss = _run_epoch(net, adam, train_seqs, weights, aux_head, tcfg,
                          stage, epoch)
        dev_ccc = dev_emotion_ccc(net, dev_seqs)
        loss_history.append(loss)
        ccc_history.append(dev_ccc)
        if best_ccc is None or dev_ccc > best_ccc:
            best_ccc = dev_ccc
            best_epoch = epoch
            best_net = net.copy()
    return TrainRun(stage=stage, best_net=best_net, best_epoch=best_epoch,
                    best_dev_ccc=best_ccc,
                    dev_ccc_history=tuple(ccc_history),
                    train_loss_history=tuple(loss_history))


def train_stage1(dataset: RegressionDataset, net_config: NetworkConfig,
                 weights: MtlWeights, tcfg: TrainingConfig,
                 aux_head: str = "reconstruction") -> TrainRun:
    """First stage: joint optimization of emotion and auxiliary losses with
    dev-set model selection. aux_head='none' gives plain single-task training."""
    if aux_head == "uncertainty":
        for seq in dataset.sequences:
            if not np.all(np.isfinite(seq.uncertainty)):
                raise ValueError(
                    f"{seq.subject_id}: uncertainty labels required for the "
                    "uncertainty head")
    return _train_loop(dataset, net_config, weights, tcfg, aux_head,
                       tcfg.stage1_epochs, stage=1)


def extract_difficulty(run: TrainRun, dataset: RegressionDataset, mode: str,
                       absolute_sum: bool = False) -> list[DifficultyIndicator]:
    """Run the selected model over every sequence (all partitions) and compute
    one difficulty trace per sequence, aligned with dataset.sequences."""
    if mode not in AUX_FOR_MODE:
        raise ValueError(f"unknown difficulty mode {mode!r}")
    net = run.best_net
    needed = AUX_FOR_MODE[mode]
    if net.config.aux_head != needed:
        raise ValueError(
            f"mode {mode!r} needs a {needed!r} head, model has "
            f"{net.config.aux_head!r}")
    tag = f"stage{run.stage}-epoch{run.best_epoch}"
    indicators = []
    for seq in dataset.sequences:
        bundle = forward(net, seq.features, want_cache=False)
        if mode == "pu":
            ind = DifficultyIndicator(mode="pu", trace=bundle.aux_trace,
                                      source_model=tag)
        else:
            ind = indicator_from_reconstruction(seq.features, bundle.aux_trace,
                                                mode, absolute=absolute_sum,
                                                source_model=tag)
        indicators.append(ind)
    return indicators


def augmented_dataset(dataset: RegressionDataset,
                      indicators: Sequence[DifficultyIndicator]
                      ) -> RegressionDataset:
    """Standardize indicators with training-set statistics and concatenate
    them onto the features, mirroring the input standardization."""
    if len(indicators) != len(dataset.sequences):
        raise ValueError("need one difficulty indicator per sequence")
    train_traces = [ind.trace for ind, seq in zip(indicators, dataset.sequences)
                    if seq.partition == "train"]
    stacked = np.concatenate(train_traces, axis=0)
    stds = stacked.std(axis=0, ddof=1) if stacked.shape[0] > 1 else \
        np.zeros(stacked.shape[1])
    ind_stats = StandardizationStats(means=stacked.mean(axis=0), stds=stds)
    sequences = []
    for seq, ind in zip(dataset.sequences, indicators):
        if ind.num_frames != seq.num_frames:
            raise ValueError(
                f"{seq.subject_id}: indicator has {ind.num_frames} frames, "
                f"sequence has {seq.num_frames}")
        scaled = (ind.trace - ind_stats.means) / ind_stats.stds
        sequences.append(LabeledSequence(
            subject_id=seq.subject_id, partition=seq.partition,
            features=augment_matrix(seq.features, scaled), gold=seq.gold))
    width = dataset.num_features + indicators[0].width
    stats = StandardizationStats(
        means=np.concatenate([dataset.stats.means, ind_stats.means]),
        stds=np.concatenate([dataset.stats.stds, ind_stats.stds]))
    assert stats.num_features == width
    return RegressionDataset(dimension=dataset.dimension,
                             frame_period=dataset.frame_period,
                             sequences=tuple(sequences), stats=stats)


def train_stage2(dataset: RegressionDataset,
                 indicators: Sequence[DifficultyIndicator],
                 net_config: NetworkConfig, tcfg: TrainingConfig) -> TrainRun:
    """Second stage: fresh single-task network on difficulty-augmented inputs."""
    widths = {ind.width for ind in indicators}
    if len(widths) != 1:
        raise ValueError("indicators must share one width")
    width = widths.pop()
    if width not in (1, dataset.num_features):
        raise ValueError(
            f"indicator width {width} must be 1 or r={dataset.num_features}")
    stage2_data = augmented_dataset(dataset, indicators)
    weights = MtlWeights(w1=1.0, w2=0.0)
    return _train_loop(stage2_data, net_config, weights, tcfg, "none",
                       tcfg.stage2_epochs, stage=2)


# ---------------------------------------------------------------------------
# Structure grid search
# ---------------------------------------------------------------------------

def default_structure_grid(base: NetworkConfig) -> list[NetworkConfig]:
    from .network import STRUCTURE_LAYER_GRID, STRUCTURE_UNIT_GRID
    return [replace(base, num_layers=n, units_per_layer=u)
            for n in STRUCTURE_LAYER_GRID for u in STRUCTURE_UNIT_GRID]


def grid_search_structure(grid: Sequence[NetworkConfig],
                          trainer: Callable[[NetworkConfig], TrainRun]
                          ) -> tuple[NetworkConfig, TrainRun]:
    """Train every configuration; highest best-dev CCC wins, ties broken
    toward fewer parameters, then grid order."""
    grid = list(grid)
    if not grid:
        raise ValueError("structure grid is empty")
    best = None
    for index, config in enumerate(grid):
        run = trainer(config)
        score = run.best_dev_ccc if run.best_dev_ccc is not None else float("-inf")
        key = (-score, parameter_count(config), index)
        if best is None or key < best[0]:
            best = (key, config, run)
    return best[1], best[2]
