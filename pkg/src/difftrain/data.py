"""Frame-aligned data handling: feature/annotation ingestion, gold standards,
annotation-delay compensation, feature standardization, and a deterministic
synthetic dataset generator for desk-scale experiments.

All container types are immutable after construction (frozen dataclasses with
read-only arrays), so they are safe to share across threads.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PARTITIONS = ("train", "dev", "test")
DIMENSIONS = ("arousal", "valence")
DEFAULT_FRAME_PERIOD = 0.04
DEFAULT_DELAY = 2.4
EPSILON_FLOOR = 1e-8


class DataFormatError(ValueError):
    """Raised for files that violate the expected CSV/manifest layout."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class FeatureSequence:
    """A T x r matrix of per-frame features for one subject."""

    subject_id: str
    partition: str
    values: np.ndarray
    frame_period: float = DEFAULT_FRAME_PERIOD

    def __post_init__(self):
        if self.partition not in PARTITIONS:
            raise ValueError(f"unknown partition {self.partition!r}")
        if self.frame_period <= 0:
            raise ValueError("frame_period must be positive")
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ValueError(f"feature matrix must be T x r with T,r >= 1, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            t, j = np.argwhere(~np.isfinite(vals))[0]
            raise ValueError(f"non-finite feature value at frame {t}, column {j}")
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_features(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class RaterAnnotations:
    """K rater traces (rows) over T frames for one subject and dimension."""

    subject_id: str
    dimension: str
    traces: np.ndarray
    frame_period: float = DEFAULT_FRAME_PERIOD

    def __post_init__(self):
        if self.dimension not in DIMENSIONS:
            raise ValueError(f"unknown dimension {self.dimension!r}")
        traces = np.asarray(self.traces, dtype=np.float64)
        if traces.ndim != 2 or traces.shape[0] < 2:
            raise ValueError("need a K x T matrix with at least K=2 raters")
        if not np.all(np.isfinite(traces)):
            raise ValueError(f"non-finite rating for subject {self.subject_id}")
        if np.any(np.abs(traces) > 1.0 + 1e-12):
            raise ValueError("ratings must lie in [-1, 1]")
        object.__setattr__(self, "traces", _freeze(traces))

    @property
    def num_raters(self) -> int:
        return self.traces.shape[0]

    @property
    def num_frames(self) -> int:
        return self.traces.shape[1]


@dataclass(frozen=True)
class GoldStandard:
    """Per-frame mean rating plus the inter-rater standard deviation."""

    mean_trace: np.ndarray
    uncertainty_trace: np.ndarray
    dimension: str
    frame_period: float = DEFAULT_FRAME_PERIOD
    delay_applied: float = 0.0

    def __post_init__(self):
        mean = np.asarray(self.mean_trace, dtype=np.float64).reshape(-1)
        unc = np.asarray(self.uncertainty_trace, dtype=np.float64).reshape(-1)
        if mean.shape != unc.shape:
            raise ValueError("mean and uncertainty traces must have equal length")
        if np.any(unc < 0):
            raise ValueError("uncertainty trace must be non-negative")
        object.__setattr__(self, "mean_trace", _freeze(mean))
        object.__setattr__(self, "uncertainty_trace", _freeze(unc))

    @property
    def num_frames(self) -> int:
        return self.mean_trace.shape[0]


@dataclass(frozen=True)
class StandardizationStats:
    """Column-wise moments of the training partition, std floored for safety."""

    means: np.ndarray
    stds: np.ndarray
    epsilon_floor: float = EPSILON_FLOOR

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64).reshape(-1)
        stds = np.maximum(np.asarray(self.stds, dtype=np.float64).reshape(-1),
                          self.epsilon_floor)
        if means.shape != stds.shape:
            raise ValueError("means and stds must have equal length")
        object.__setattr__(self, "means", _freeze(means))
        object.__setattr__(self, "stds", _freeze(stds))

    @property
    def num_features(self) -> int:
        return self.means.shape[0]


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _read_csv_matrix(path, first_column: str) -> tuple[list[str], np.ndarray]:
    """Parse a numeric CSV with a header row; report row/column on failure.

    Returns (header names, data matrix including the leading time column).
    Row numbers in error messages are 1-based and count the header row.
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: file not found")
    with path.open("r", newline="") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise DataFormatError(f"{path}: empty file")
        header = next(csv.reader([header_line]))
        header = [h.strip() for h in header]
        if header[0] != first_column:
            raise DataFormatError(
                f"{path}: first column must be {first_column!r}, got {header[0]!r}")
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # loadtxt warns on empty data
                data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except Exception:
            _diagnose_csv(path, len(header))
            raise  # _diagnose_csv should have raised; keep the original otherwise
    if data.size == 0:
        raise DataFormatError(f"{path}: no data rows")
    if data.shape[1] != len(header):
        raise DataFormatError(
            f"{path}: data rows have {data.shape[1]} columns, header has {len(header)}")
    if not np.all(np.isfinite(data)):
        t, j = np.argwhere(~np.isfinite(data))[0]
        raise DataFormatError(
            f"{path}: non-finite value at row {t + 2}, column {header[j]!r}")
    return header, data


def _diagnose_csv(path: Path, expected_cols: int):
    """Slow second pass pinpointing the first malformed cell."""
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # header already validated
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != expected_cols:
                raise DataFormatError(
                    f"{path}: row {row_no} has {len(row)} cells, expected {expected_cols}")
            for col_no, cell in enumerate(row, start=1):
                try:
                    float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: non-numeric cell {cell!r} at row {row_no}, "
                        f"column {col_no}") from None


def load_features(path, frame_period: float = DEFAULT_FRAME_PERIOD,
                  subject_id: str | None = None,
                  partition: str = "train") -> FeatureSequence:
    """Load one subject's feature CSV (``time_s`` column, then r features)."""
    header, data = _read_csv_matrix(path, "time_s")
    if len(header) < 2:
        raise DataFormatError(f"{path}: need at least one feature column")
    sid = subject_id if subject_id is not None else Path(path).stem
    return FeatureSequence(subject_id=sid, partition=partition,
                           values=data[:, 1:], frame_period=frame_period)


def load_annotations(path, dimension: str,
                     frame_period: float = DEFAULT_FRAME_PERIOD,
                     subject_id: str | None = None) -> tuple[RaterAnnotations, np.ndarray]:
    """Load one subject's rater CSV (``time_s`` then ``rater_1..rater_K``).

    Returns the annotations plus the raw time axis so callers can resample
    onto a feature frame grid.
    """
    header, data = _read_csv_matrix(path, "time_s")
    expected = [f"rater_{i}" for i in range(1, len(header))]
    if header[1:] != expected:
        raise DataFormatError(
            f"{path}: rater columns must be named rater_1..rater_K, got {header[1:]}")
    sid = subject_id if subject_id is not None else Path(path).stem
    ann = RaterAnnotations(subject_id=sid, dimension=dimension,
                           traces=data[:, 1:].T, frame_period=frame_period)
    return ann, data[:, 0].copy()


def resample_nearest(src_times: np.ndarray, src_values: np.ndarray,
                     dst_times: np.ndarray) -> np.ndarray:
    """Nearest-frame resampling along the last axis (ties resolve earlier)."""
    src_times = np.asarray(src_times, dtype=np.float64)
    dst_times = np.asarray(dst_times, dtype=np.float64)
    idx = np.searchsorted(src_times, dst_times)
    idx = np.clip(idx, 1, len(src_times) - 1)
    left = src_times[idx - 1]
    right = src_times[idx]
    choose_left = (dst_times - left) <= (right - dst_times)
    idx = np.where(choose_left, idx - 1, idx)
    return np.asarray(src_values)[..., idx]


# ---------------------------------------------------------------------------
# Gold standards
# ---------------------------------------------------------------------------

def compute_gold_standard(annotations: RaterAnnotations) -> GoldStandard:
    """Mean rating per frame plus inter-rater standard deviation ((K-1) form)."""
    traces = annotations.traces
    mean = traces.mean(axis=0)
    uncertainty = traces.std(axis=0, ddof=1)
    # frames where every rater agrees exactly must come out exact, not with
    # the ~1e-17 residue float averaging leaves behind
    agree = np.all(traces == traces[0], axis=0)
    if agree.any():
        mean = np.where(agree, traces[0], mean)
        uncertainty = np.where(agree, 0.0, uncertainty)
    return GoldStandard(mean_trace=mean, uncertainty_trace=uncertainty,
                        dimension=annotations.dimension,
                        frame_period=annotations.frame_period)


def _seconds_to_frames(seconds: float, frame_period: float) -> int:
    frames = seconds / frame_period
    rounded = round(frames)
    if abs(frames - rounded) > 1e-6:
        raise ValueError(
            f"{seconds} s is not a whole number of {frame_period} s frames")
    return int(rounded)


def compensate_delay(gold: GoldStandard, delay: float) -> GoldStandard:
    """Shift the gold standard earlier by ``delay`` seconds.

    Frames shifted past the end replicate the final frame rather than
    inventing new dynamics.
    """
    if delay < 0:
        raise ValueError("delay must be non-negative")
    n = _seconds_to_frames(delay, gold.frame_period)
    t = gold.num_frames
    if n >= t:
        raise ValueError(f"delay of {n} frames exceeds sequence length {t}")
    if n == 0:
        return gold
    idx = np.minimum(np.arange(t) + n, t - 1)
    return GoldStandard(mean_trace=gold.mean_trace[idx],
                        uncertainty_trace=gold.uncertainty_trace[idx],
                        dimension=gold.dimension,
                        frame_period=gold.frame_period,
                        delay_applied=gold.delay_applied + delay)


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

def fit_standardization(train_features: Sequence[FeatureSequence],
                        epsilon_floor: float = EPSILON_FLOOR) -> StandardizationStats:
    """Column-wise mean/std over all training frames, std floored."""
    seqs = list(train_features)
    if not seqs:
        raise ValueError("cannot fit standardization on an empty training set")
    stacked = np.concatenate([s.values for s in seqs], axis=0)
    means = stacked.mean(axis=0)
    if stacked.shape[0] > 1:
        stds = stacked.std(axis=0, ddof=1)
    else:
        stds = np.zeros_like(means)
    return StandardizationStats(means=means, stds=stds, epsilon_floor=epsilon_floor)


def apply_standardization(seq: FeatureSequence,
                          stats: StandardizationStats) -> FeatureSequence:
    if seq.num_features != stats.num_features:
        raise ValueError(
            f"feature width {seq.num_features} does not match stats width "
            f"{stats.num_features}")
    values = (seq.values - stats.means) / stats.stds
    return replace(seq, values=values)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    """Desk-scale dataset: smooth latent targets, nonlinear feature mixing,
    raters with a time-varying noise magnitude so uncertainty is informative."""

    subjects_per_partition: tuple[int, int, int] = (9, 9, 9)
    num_frames: int = 1500
    num_features: int = 20
    num_raters: int = 6
    frame_period: float = DEFAULT_FRAME_PERIOD
    dimensions: tuple[str, ...] = DIMENSIONS
    delay: float = 0.0
    latent_smoothing: int = 75       # moving-average window, frames
    latent_scale: float = 0.45
    feature_noise: float = 0.05
    rater_noise_base: float = 0.04
    rater_noise_amp: float = 0.12
    rater_noise_cycles: float = 3.0

    def __post_init__(self):
        if len(self.subjects_per_partition) != 3 or min(self.subjects_per_partition) < 1:
            raise ValueError("need at least one subject per partition")
        if self.num_frames < 1 or self.num_features < 1 or self.num_raters < 2:
            raise ValueError("frames/features must be positive and raters >= 2")
        if self.latent_smoothing < 1 or self.frame_period <= 0:
            raise ValueError("invalid smoothing window or frame period")
        for d in self.dimensions:
            if d not in DIMENSIONS:
                raise ValueError(f"unknown dimension {d!r}")


@dataclass(frozen=True)
class SyntheticSubject:
    features: FeatureSequence
    annotations: dict[str, RaterAnnotations]


@dataclass(frozen=True)
class SyntheticDataset:
    config: SyntheticConfig
    seed: int
    subjects: tuple[SyntheticSubject, ...]

    def partition(self, name: str) -> list[SyntheticSubject]:
        return [s for s in self.subjects if s.features.partition == name]


def _smooth_latent(rng: np.random.Generator, t: int, window: int, scale: float) -> np.ndarray:
    steps = rng.normal(size=t + window)
    walk = np.cumsum(steps)
    kernel = np.ones(window) / window
    smooth = np.convolve(walk, kernel, mode="valid")[:t]
    smooth = smooth - smooth.mean()
    sd = smooth.std()
    if sd > 0:
        smooth = smooth * (scale / sd)
    return np.clip(smooth, -0.9, 0.9)


def _feature_basis(latent: np.ndarray) -> np.ndarray:
    return np.stack([latent, latent ** 2, np.sin(3.0 * latent),
                     np.cos(2.0 * latent), np.tanh(2.0 * latent)], axis=1)


def generate_synthetic(config: SyntheticConfig, seed: int) -> SyntheticDataset:
    """Deterministic in (config, seed); see SyntheticConfig for the recipe."""
    mix_rng = np.random.default_rng([seed, 1000])
    # one fixed mixing matrix per dimension so features carry both targets
    mixers = {dim: mix_rng.uniform(-1.0, 1.0, size=(5, config.num_features))
              for dim in config.dimensions}
    subjects = []
    counts = dict(zip(PARTITIONS, config.subjects_per_partition))
    subj_index = 0
    for partition in PARTITIONS:
        for i in range(counts[partition]):
            sid = f"{partition}_{i + 1:02d}"
            latents = {}
            for d_idx, dim in enumerate(config.dimensions):
                rng = np.random.default_rng([seed, subj_index, d_idx])
                latents[dim] = _smooth_latent(rng, config.num_frames,
                                              config.latent_smoothing,
                                              config.latent_scale)
            feat_rng = np.random.default_rng([seed, subj_index, 500])
            values = np.zeros((config.num_frames, config.num_features))
            for dim in config.dimensions:
                values += _feature_basis(latents[dim]) @ mixers[dim]
            values += config.feature_noise * feat_rng.normal(size=values.shape)
            features = FeatureSequence(subject_id=sid, partition=partition,
                                       values=values,
                                       frame_period=config.frame_period)
            annotations = {}
            for d_idx, dim in enumerate(config.dimensions):
                rng = np.random.default_rng([seed, subj_index, 900 + d_idx])
                phase = rng.uniform(0, 2 * np.pi)
                t_axis = np.arange(config.num_frames) / config.num_frames
                sched = config.rater_noise_base + config.rater_noise_amp * 0.5 * (
                    1.0 + np.sin(2 * np.pi * config.rater_noise_cycles * t_axis + phase))
                noise = rng.normal(size=(config.num_raters, config.num_frames))
                traces = np.clip(latents[dim][None, :] + noise * sched[None, :],
                                 -1.0, 1.0)
                annotations[dim] = RaterAnnotations(
                    subject_id=sid, dimension=dim, traces=traces,
                    frame_period=config.frame_period)
            subjects.append(SyntheticSubject(features=features,
                                             annotations=annotations))
            subj_index += 1
    return SyntheticDataset(config=config, seed=seed, subjects=tuple(subjects))


# ---------------------------------------------------------------------------
# Manifest + regression-ready dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    partition: str
    features: Path
    annotations: dict[str, Path]


@dataclass(frozen=True)
class Manifest:
    frame_period: float
    delay: float
    dimensions: tuple[str, ...]
    entries: tuple[ManifestEntry, ...]


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: manifest not found")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from None
    try:
        base = path.parent
        entries = tuple(
            ManifestEntry(
                subject_id=str(e["id"]),
                partition=str(e["partition"]),
                features=base / e["features"],
                annotations={d: base / p for d, p in e["annotations"].items()},
            )
            for e in raw["subjects"])
        # the benchmark-standard annotation lag is the default; manifests
        # override it (synthetic ones pin it to 0 since their labels align)
        manifest = Manifest(frame_period=float(raw["frame_period"]),
                            delay=float(raw.get("delay", DEFAULT_DELAY)),
                            dimensions=tuple(raw["dimensions"]),
                            entries=entries)
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"{path}: missing manifest field ({exc})") from None
    for e in manifest.entries:
        if e.partition not in PARTITIONS:
            raise DataFormatError(f"{path}: unknown partition {e.partition!r}")
    return manifest


def write_synthetic(dataset: SyntheticDataset, out_dir) -> Path:
    """Materialize a synthetic dataset as CSV files plus a manifest."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    cfg = dataset.config
    entries = []
    for subj in dataset.subjects:
        feats = subj.features
        t_axis = np.arange(feats.num_frames) * cfg.frame_period
        feat_path = out / "features" / f"{feats.subject_id}.csv"
        header = "time_s," + ",".join(f"f{i + 1}" for i in range(feats.num_features))
        np.savetxt(feat_path, np.column_stack([t_axis, feats.values]),
                   delimiter=",", header=header, comments="", fmt="%.17g")
        ann_paths = {}
        for dim, ann in subj.annotations.items():
            ann_path = out / "annotations" / f"{feats.subject_id}_{dim}.csv"
            header = "time_s," + ",".join(
                f"rater_{k + 1}" for k in range(ann.num_raters))
            np.savetxt(ann_path, np.column_stack([t_axis, ann.traces.T]),
                       delimiter=",", header=header, comments="", fmt="%.17g")
            ann_paths[dim] = str(ann_path.relative_to(out))
        entries.append({"id": feats.subject_id, "partition": feats.partition,
                        "features": str(feat_path.relative_to(out)),
                        "annotations": ann_paths})
    manifest = {"frame_period": cfg.frame_period, "delay": cfg.delay,
                "dimensions": list(cfg.dimensions), "subjects": entries,
                "generator": {"seed": dataset.seed,
                              "config": asdict(cfg)}}
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


@dataclass(frozen=True)
class LabeledSequence:
    """Standardized features paired with a (delay-compensated) gold standard."""

    subject_id: str
    partition: str
    features: np.ndarray
    gold: GoldStandard

    def __post_init__(self):
        feats = _freeze(np.asarray(self.features, dtype=np.float64))
        if feats.shape[0] != self.gold.num_frames:
            raise ValueError(
                f"{self.subject_id}: features have {feats.shape[0]} frames, "
                f"gold standard has {self.gold.num_frames}")
        object.__setattr__(self, "features", feats)

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def target(self) -> np.ndarray:
        return self.gold.mean_trace

    @property
    def uncertainty(self) -> np.ndarray:
        return self.gold.uncertainty_trace


@dataclass(frozen=True)
class RegressionDataset:
    """Everything one training run needs for a single emotion dimension."""

    dimension: str
    frame_period: float
    sequences: tuple[LabeledSequence, ...]
    stats: StandardizationStats

    def partition(self, name: str) -> list[LabeledSequence]:
        if name not in PARTITIONS:
            raise ValueError(f"unknown partition {name!r}")
        return [s for s in self.sequences if s.partition == name]

    @property
    def num_features(self) -> int:
        return self.stats.num_features


def _assemble_dataset(dimension: str, frame_period: float, delay: float,
                      items: Iterable[tuple[FeatureSequence, RaterAnnotations]]
                      ) -> RegressionDataset:
    prepared = []
    for feats, ann in items:
        if ann.num_frames != feats.num_frames:
            raise ValueError(
                f"{feats.subject_id}: {ann.num_frames} annotation frames vs "
                f"{feats.num_frames} feature frames after resampling")
        gold = compute_gold_standard(ann)
        if delay > 0:
            gold = compensate_delay(gold, delay)
        prepared.append((feats, gold))
    train_feats = [f for f, _ in prepared if f.partition == "train"]
    if not train_feats:
        raise ValueError("dataset has no training sequences")
    stats = fit_standardization(train_feats)
    sequences = tuple(
        LabeledSequence(subject_id=f.subject_id, partition=f.partition,
                        features=apply_standardization(f, stats).values, gold=g)
        for f, g in prepared)
    return RegressionDataset(dimension=dimension, frame_period=frame_period,
                             sequences=sequences, stats=stats)


def build_regression_dataset(manifest: Manifest | str | Path,
                             dimension: str) -> RegressionDataset:
    """Load every subject in the manifest and prepare it for training."""
    if not isinstance(manifest, Manifest):
        manifest = load_manifest(manifest)
    if dimension not in manifest.dimensions:
        raise ValueError(f"dimension {dimension!r} not listed in manifest")
    items = []
    for entry in manifest.entries:
        feats = load_features(entry.features, manifest.frame_period,
                              subject_id=entry.subject_id,
                              partition=entry.partition)
        ann, times = load_annotations(entry.annotations[dimension], dimension,
                                      manifest.frame_period,
                                      subject_id=entry.subject_id)
        feat_times = np.arange(feats.num_frames) * manifest.frame_period
        if ann.num_frames != feats.num_frames:
            traces = resample_nearest(times, ann.traces, feat_times)
            ann = RaterAnnotations(subject_id=ann.subject_id,
                                   dimension=dimension, traces=traces,
                                   frame_period=manifest.frame_period)
        items.append((feats, ann))
    return _assemble_dataset(dimension, manifest.frame_period, manifest.delay, items)


def regression_dataset_from_synthetic(dataset: SyntheticDataset,
                                      dimension: str) -> RegressionDataset:
    """In-memory pipeline mirroring build_regression_dataset for synthetic data."""
    cfg = dataset.config
    if dimension not in cfg.dimensions:
        raise ValueError(f"dimension {dimension!r} not generated")
    items = [(s.features, s.annotations[dimension]) for s in dataset.subjects]
    return _assemble_dataset(dimension, cfg.frame_period, cfg.delay, items)
