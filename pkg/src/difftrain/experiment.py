"""Experiment orchestration: single-system runs (single-task baseline, joint
multi-task training, or the full two-stage difficulty-augmented systems),
late-fusion scenarios, comparison reports with significance marks, and plot
emission.

Every output file embeds the config hash and seed; nothing writes timestamps,
so reruns with identical config and seed are bit-identical.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .data import RegressionDataset, build_regression_dataset
from .fusion import (apply_dynamic_tuning, apply_slr,
                     contribution_analysis, fit_dynamic_tuning, fit_slr)
from .metrics import SIGNIFICANCE_LEVEL, ccc, fisher_compare
from .network import NetworkConfig, save_checkpoint
from .postprocess import apply_chain, optimize_chain
from .training import (MtlWeights, TrainingConfig, TrainRun,
                       augmented_dataset, default_structure_grid,
                       extract_difficulty, grid_search_structure,
                       predict_sequences, train_stage1, train_stage2)

SYSTEMS = ("baseline", "mtl_re", "mtl_pu", "ddat_re_vector", "ddat_re_sum",
           "ddat_pu")
_SYSTEM_AUX = {"baseline": "none", "mtl_re": "reconstruction",
               "mtl_pu": "uncertainty", "ddat_re_vector": "reconstruction",
               "ddat_re_sum": "reconstruction", "ddat_pu": "uncertainty"}
_SYSTEM_MODE = {"ddat_re_vector": "re_vector", "ddat_re_sum": "re_sum",
                "ddat_pu": "pu"}


class StageError(RuntimeError):
    """Any pipeline failure, tagged with the stage it occurred in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class pipeline_stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


@dataclass(frozen=True)
class ExperimentConfig:
    manifest: str
    system: str
    dimension: str
    num_layers: int = 1
    units_per_layer: int = 40
    use_grid: bool = False
    stage1_epochs: int = 50
    stage2_epochs: int = 50
    learning_rate: float = 0.001
    chunk_length: int = 300
    batch_chunks: int = 4
    clip_norm: float = 5.0
    w1: float = 0.5
    w2: float = 0.5
    reg_lambda: float = 0.0
    regularizer: str = "none"
    re_absolute: bool = False
    pu_squared: bool = False
    postprocess: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}; pick from {SYSTEMS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def sha256(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(stage1_epochs=self.stage1_epochs,
                              stage2_epochs=self.stage2_epochs,
                              learning_rate=self.learning_rate,
                              chunk_length=self.chunk_length,
                              batch_chunks=self.batch_chunks,
                              clip_norm=self.clip_norm, seed=self.seed,
                              pu_squared=self.pu_squared)

    def mtl_weights(self) -> MtlWeights:
        if self.system == "baseline":
            return MtlWeights(w1=1.0, w2=0.0, reg_lambda=self.reg_lambda,
                              regularizer=self.regularizer)
        return MtlWeights(w1=self.w1, w2=self.w2, reg_lambda=self.reg_lambda,
                          regularizer=self.regularizer)


# ---------------------------------------------------------------------------
# Prediction CSV round trip
# ---------------------------------------------------------------------------

def write_prediction_csv(path, sequences, predictions, frame_period: float,
                         config_hash: str, seed: int):
    """Rows: subject_id, time_s, prediction, gold; one block per sequence."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_sha256={config_hash} seed={seed}\n")
        fh.write("subject_id,time_s,prediction,gold\n")
        for seq, pred in zip(sequences, predictions):
            for t in range(seq.num_frames):
                fh.write(f"{seq.subject_id},{t * frame_period:.6f},"
                         f"{pred[t]:.17g},{seq.target[t]:.17g}\n")


def read_prediction_csv(path):
    """Returns (subject ids per row, time, prediction, gold) arrays."""
    path = Path(path)
    subjects, times, preds, golds = [], [], [], []
    with path.open("r", newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader, None)
        if header != ["subject_id", "time_s", "prediction", "gold"]:
            raise ValueError(f"{path}: not a prediction CSV (header {header})")
        for row in reader:
            subjects.append(row[0])
            times.append(float(row[1]))
            preds.append(float(row[2]))
            golds.append(float(row[3]))
    if not preds:
        raise ValueError(f"{path}: no prediction rows")
    return (subjects, np.array(times), np.array(preds), np.array(golds))


def _write_indicator_partition(directory: Path, dataset: RegressionDataset,
                               indicators, partition: str, config_hash: str,
                               seed: int) -> list[str]:
    directory.mkdir(parents=True, exist_ok=True)
    rel_paths = []
    for seq, ind in zip(dataset.sequences, indicators):
        if seq.partition != partition:
            continue
        path = directory / f"{seq.subject_id}.csv"
        t_axis = np.arange(ind.num_frames) * dataset.frame_period
        header = (f"# config_sha256={config_hash} seed={seed}\n"
                  "time_s," + ",".join(f"d_{i + 1}" for i in range(ind.width)))
        np.savetxt(path, np.column_stack([t_axis, ind.trace]), delimiter=",",
                   header=header, comments="", fmt="%.17g")
        rel_paths.append(str(path))
    return rel_paths


def _load_trace_csv(path) -> np.ndarray:
    """(time_s, v_1..v_k) CSV with optional leading # comments -> (T, k)."""
    with open(path) as fh:
        rows = [line for line in fh if not line.startswith("#")]
    data = np.loadtxt(rows[1:], delimiter=",", ndmin=2)
    return data[:, 1:]


# ---------------------------------------------------------------------------
# Single-system experiment
# ---------------------------------------------------------------------------

def _run_summary(run: TrainRun) -> dict:
    return {"best_epoch": run.best_epoch, "best_dev_ccc": run.best_dev_ccc,
            "dev_ccc_history": list(run.dev_ccc_history),
            "train_loss_history": list(run.train_loss_history)}


def run_experiment(config: ExperimentConfig, out_dir) -> dict:
    """Execute one system end to end; returns the experiment record."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = config.training_config()
    aux = _SYSTEM_AUX[config.system]

    with pipeline_stage("load-data"):
        dataset = build_regression_dataset(config.manifest, config.dimension)

    base_net = NetworkConfig(input_dim=dataset.num_features,
                             num_layers=config.num_layers,
                             units_per_layer=config.units_per_layer,
                             aux_head=aux, seed=config.seed)
    if config.use_grid:
        with pipeline_stage("structure-search"):
            grid = default_structure_grid(base_net)
            chosen, stage1 = grid_search_structure(
                grid, lambda c: train_stage1(dataset, c, config.mtl_weights(),
                                             tcfg, aux_head=aux))
            base_net = chosen
    else:
        with pipeline_stage("train-stage1"):
            stage1 = train_stage1(dataset, base_net, config.mtl_weights(),
                                  tcfg, aux_head=aux)

    stage2 = None
    indicators = None
    stage2_width = None
    if config.system in _SYSTEM_MODE:
        mode = _SYSTEM_MODE[config.system]
        with pipeline_stage("extract-difficulty"):
            indicators = extract_difficulty(stage1, dataset, mode,
                                            absolute_sum=config.re_absolute)
        with pipeline_stage("train-stage2"):
            stage2 = train_stage2(dataset, indicators, base_net, tcfg)
            stage2_width = dataset.num_features + indicators[0].width

    final_net = stage2.best_net if stage2 is not None else stage1.best_net

    with pipeline_stage("predict"):
        final_data = dataset
        if stage2 is not None:
            final_data = augmented_dataset(dataset, indicators)
        split = {}
        for part in ("dev", "test"):
            seqs = final_data.partition(part)
            preds = predict_sequences(final_net, seqs)
            split[part] = (seqs, preds)

    pp_params = None
    post_preds = {}
    if config.postprocess:
        with pipeline_stage("postprocess"):
            dev_seqs, dev_preds = split["dev"]
            pp_params = optimize_chain(dev_preds,
                                       [s.target for s in dev_seqs],
                                       dataset.frame_period)
            for part in ("dev", "test"):
                seqs, preds = split[part]
                post_preds[part] = apply_chain(preds, pp_params,
                                               dataset.frame_period)

    with pipeline_stage("metrics"):
        metrics = {}
        for part in ("dev", "test"):
            seqs, preds = split[part]
            gold_cat = np.concatenate([s.target for s in seqs])
            entry = {"ccc_raw": ccc(np.concatenate(preds), gold_cat).r_c,
                     "n": int(gold_cat.shape[0]), "ccc_post": None}
            if part in post_preds:
                entry["ccc_post"] = ccc(np.concatenate(post_preds[part]),
                                        gold_cat).r_c
            metrics[part] = entry

    with pipeline_stage("write-outputs"):
        cfg_hash = config.sha256
        (out / "preds").mkdir(exist_ok=True)
        (out / "checkpoints").mkdir(exist_ok=True)
        pred_files = {}
        for part in ("dev", "test"):
            seqs, preds = split[part]
            path = out / "preds" / f"{part}.csv"
            write_prediction_csv(path, seqs, preds, dataset.frame_period,
                                 cfg_hash, config.seed)
            pred_files[part] = str(path.relative_to(out))
            if part in post_preds:
                path = out / "preds" / f"{part}_post.csv"
                write_prediction_csv(path, seqs, post_preds[part],
                                     dataset.frame_period, cfg_hash, config.seed)
                pred_files[f"{part}_post"] = str(path.relative_to(out))
        save_checkpoint(out / "checkpoints" / "stage1.npz", stage1.best_net)
        checkpoints = {"stage1": "checkpoints/stage1.npz"}
        difficulty_files = None
        if stage2 is not None:
            save_checkpoint(out / "checkpoints" / "stage2.npz", stage2.best_net)
            checkpoints["stage2"] = "checkpoints/stage2.npz"
            difficulty_files = {}
            for part in ("dev", "test"):
                paths = _write_indicator_partition(
                    out / "difficulty" / part, dataset, indicators, part,
                    cfg_hash, config.seed)
                difficulty_files[part] = [
                    str(Path(p).relative_to(out)) for p in paths]
        record = {
            "kind": "experiment",
            "version": __version__,
            "config": config.to_dict(),
            "config_sha256": cfg_hash,
            "seed": config.seed,
            "system": config.system,
            "dimension": config.dimension,
            "network": {"num_layers": base_net.num_layers,
                        "units_per_layer": base_net.units_per_layer,
                        "input_dim": dataset.num_features,
                        "stage2_input_dim": stage2_width},
            "stage1": {**_run_summary(stage1), "checkpoint": checkpoints["stage1"]},
            "stage2": None if stage2 is None else
                      {**_run_summary(stage2), "checkpoint": checkpoints["stage2"]},
            "postprocess": None if pp_params is None else pp_params.to_dict(),
            "metrics": metrics,
            "predictions": pred_files,
            "difficulty": difficulty_files,
        }
        record_path = out / "record.json"
        record_path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return record


# ---------------------------------------------------------------------------
# Fusion scenarios
# ---------------------------------------------------------------------------

def _stream_from_record(entry: dict, base: Path) -> dict:
    record_path = base / entry["record"]
    record = json.loads(record_path.read_text())
    if record.get("kind") != "experiment":
        raise ValueError(f"{record_path}: not an experiment record")
    rec_dir = record_path.parent
    use = entry.get("use", "post" if record.get("postprocess") else "raw")
    suffix = "_post" if use == "post" else ""
    preds = record["predictions"]
    if f"dev{suffix}" not in preds:
        raise ValueError(
            f"{record_path}: no {use!r} predictions (post-processing was "
            "disabled for this run)")
    out = {"name": entry.get("name", record["system"]),
           "dev": str(rec_dir / preds[f"dev{suffix}"]),
           "test": str(rec_dir / preds[f"test{suffix}"]),
           "dynamic_tuning": entry.get("dynamic_tuning", False)}
    if record.get("difficulty"):
        out["difficulty_dev"] = [str(rec_dir / p)
                                 for p in record["difficulty"]["dev"]]
        out["difficulty_test"] = [str(rec_dir / p)
                                  for p in record["difficulty"]["test"]]
    return out


def _load_stream_difficulty(paths) -> np.ndarray:
    """Concatenate per-sequence traces; vector traces collapse to their
    per-frame sum, the scalar form used for dynamic tuning."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    parts = [_load_trace_csv(p) for p in paths]
    trace = np.concatenate(parts, axis=0)
    return trace.sum(axis=1)


def run_fusion(scenario: dict, out_dir) -> dict:
    """Fit fusion on dev streams, apply to test, report CCCs and shares.

    scenario: {"name": str, "streams": [...]} where each stream either
    references an experiment record ({"record": path, "use": "raw"|"post",
    "dynamic_tuning": bool}) or lists prediction CSVs directly ({"name",
    "dev", "test", optional "difficulty_dev"/"difficulty_test"}).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = Path(scenario.get("base_dir", "."))
    scenario_hash = hashlib.sha256(
        json.dumps(scenario, sort_keys=True).encode()).hexdigest()

    with pipeline_stage("load-streams"):
        specs = []
        for entry in scenario["streams"]:
            if "record" in entry:
                specs.append(_stream_from_record(entry, base))
            else:
                spec = dict(entry)
                spec["dev"] = str(base / spec["dev"])
                spec["test"] = str(base / spec["test"])
                specs.append(spec)
        if not specs:
            raise ValueError("fusion scenario lists no streams")
        loaded = []
        reference = None
        for spec in specs:
            stream = {"name": spec.get("name", "stream"),
                      "dynamic_tuning": bool(spec.get("dynamic_tuning", False))}
            for part in ("dev", "test"):
                subjects, times, preds, golds = read_prediction_csv(spec[part])
                stream[part] = {"subjects": subjects, "times": times,
                                "pred": preds, "gold": golds}
            if reference is None:
                reference = stream
            else:
                for part in ("dev", "test"):
                    ref = reference[part]
                    cur = stream[part]
                    if (len(ref["pred"]) != len(cur["pred"])
                            or ref["subjects"] != cur["subjects"]
                            or not np.allclose(ref["gold"], cur["gold"],
                                               atol=1e-9)):
                        raise ValueError(
                            f"stream {stream['name']!r} is not aligned with "
                            f"{reference['name']!r} on {part}")
            if stream["dynamic_tuning"]:
                for part in ("dev", "test"):
                    key = f"difficulty_{part}"
                    if key not in spec:
                        raise ValueError(
                            f"stream {stream['name']!r} requests dynamic "
                            f"tuning but lists no {key}")
                    trace = _load_stream_difficulty(spec[key])
                    if trace.shape[0] != stream[part]["pred"].shape[0]:
                        raise ValueError(
                            f"stream {stream['name']!r}: difficulty length "
                            f"{trace.shape[0]} != predictions "
                            f"{stream[part]['pred'].shape[0]} on {part}")
                    stream[part]["difficulty"] = trace
            loaded.append(stream)

    with pipeline_stage("fit-fusion"):
        dev_gold = reference["dev"]["gold"]
        test_gold = reference["test"]["gold"]
        tuned = {"dev": [], "test": []}
        stream_reports = []
        for stream in loaded:
            report = {"name": stream["name"],
                      "dynamic_tuning": stream["dynamic_tuning"],
                      "dev_ccc": ccc(stream["dev"]["pred"], dev_gold).r_c,
                      "test_ccc": ccc(stream["test"]["pred"], test_gold).r_c}
            if stream["dynamic_tuning"]:
                model = fit_dynamic_tuning(stream["dev"]["pred"],
                                           stream["dev"]["difficulty"], dev_gold)
                report["tuning"] = model.to_dict()
                for part in ("dev", "test"):
                    tuned[part].append(apply_dynamic_tuning(
                        model, stream[part]["pred"], stream[part]["difficulty"]))
                report["tuned_dev_ccc"] = ccc(tuned["dev"][-1], dev_gold).r_c
                report["tuned_test_ccc"] = ccc(tuned["test"][-1], test_gold).r_c
            else:
                for part in ("dev", "test"):
                    tuned[part].append(stream[part]["pred"])
            stream_reports.append(report)
        model = fit_slr(tuned["dev"], dev_gold)
        fused = {part: apply_slr(model, tuned[part]) for part in ("dev", "test")}
        shares = contribution_analysis(model, tuned["dev"])

    with pipeline_stage("write-outputs"):
        fused_files = {}
        for part in ("dev", "test"):
            path = out / f"fused_{part}.csv"
            ref = reference[part]
            with path.open("w", newline="") as fh:
                fh.write(f"# scenario_sha256={scenario_hash}\n")
                fh.write("subject_id,time_s,prediction,gold\n")
                for sid, t, p, g in zip(ref["subjects"], ref["times"],
                                        fused[part], ref["gold"]):
                    fh.write(f"{sid},{t:.6f},{p:.17g},{g:.17g}\n")
            fused_files[part] = str(path.relative_to(out))
        report = {
            "kind": "fusion",
            "version": __version__,
            "name": scenario.get("name", "fusion"),
            "scenario": scenario,
            "scenario_sha256": scenario_hash,
            "streams": stream_reports,
            "model": model.to_dict(),
            "contributions_percent": {
                s["name"]: float(share)
                for s, share in zip(stream_reports, shares)},
            "metrics": {
                "dev": {"ccc": ccc(fused["dev"], dev_gold).r_c,
                        "n": int(dev_gold.shape[0])},
                "test": {"ccc": ccc(fused["test"], test_gold).r_c,
                         "n": int(test_gold.shape[0])}},
            "fused": fused_files,
        }
        (out / "fusion_report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n")
        (out / "fusion_report.txt").write_text(format_fusion_report(report))
    return report


def format_fusion_report(report: dict) -> str:
    lines = [f"fusion scenario: {report['name']}",
             f"{'stream':<18} {'dev':>8} {'test':>8} {'tuned dev':>10} "
             f"{'tuned test':>11} {'share %':>8}"]
    shares = report["contributions_percent"]
    for s in report["streams"]:
        tuned_dev = s.get("tuned_dev_ccc")
        tuned_test = s.get("tuned_test_ccc")
        lines.append(
            f"{s['name']:<18} {s['dev_ccc']:>8.3f} {s['test_ccc']:>8.3f} "
            f"{'' if tuned_dev is None else format(tuned_dev, '10.3f'):>10} "
            f"{'' if tuned_test is None else format(tuned_test, '11.3f'):>11} "
            f"{shares[s['name']]:>8.1f}")
    m = report["metrics"]
    lines.append(f"{'fused':<18} {m['dev']['ccc']:>8.3f} {m['test']['ccc']:>8.3f}")
    coeffs = ", ".join(f"{c:.4f}" for c in report["model"]["coefficients"])
    lines.append(f"intercept {report['model']['intercept']:.4f}; "
                 f"coefficients [{coeffs}]")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Reports and plots
# ---------------------------------------------------------------------------

def load_records(paths) -> list[dict]:
    records = []
    for p in paths:
        rec = json.loads(Path(p).read_text())
        rec["_path"] = str(p)
        records.append(rec)
    return records


def emit_report(records: Sequence[dict], reference_system: str | None = None
                ) -> tuple[str, list[dict]]:
    """CCC comparison table: one row per record (system x dimension), dev and
    test columns for raw and post-processed predictions. Cells that beat the
    reference system significantly (one-tailed p < .05) are starred."""
    if not records:
        raise ValueError("no experiment records given")
    experiments = [r for r in records if r.get("kind") == "experiment"]
    if not experiments:
        raise ValueError("no experiment records given")
    references = {}
    if reference_system is not None:
        for rec in experiments:
            if rec["system"] == reference_system:
                references[rec["dimension"]] = rec
    rows = []
    for rec in experiments:
        row = {"system": rec["system"], "dimension": rec["dimension"]}
        ref = references.get(rec["dimension"])
        for part in ("dev", "test"):
            cell = rec["metrics"][part]
            row[f"n_{part}"] = cell["n"]
            for kind in ("raw", "post"):
                value = cell[f"ccc_{kind}"]
                star = False
                if ref is not None and ref is not rec and value is not None:
                    ref_cell = ref["metrics"][part]
                    ref_value = ref_cell[f"ccc_{kind}"]
                    if (ref_value is not None and abs(value) < 1.0
                            and abs(ref_value) < 1.0):
                        test = fisher_compare(value, cell["n"], ref_value,
                                              ref_cell["n"])
                        star = test.p < SIGNIFICANCE_LEVEL
                row[f"{part}_{kind}"] = value
                row[f"star_{part}_{kind}"] = star
        rows.append(row)

    def cell(row, part, kind):
        value = row[f"{part}_{kind}"]
        if value is None:
            return "-"
        return f"{value:.3f}" + ("*" if row[f"star_{part}_{kind}"] else "")

    lines = [f"{'system':<16} {'dim':<8} {'n':>7} {'dev raw':>9} "
             f"{'dev post':>9} {'test raw':>9} {'test post':>10}"]
    for row in rows:
        lines.append(f"{row['system']:<16} {row['dimension']:<8} "
                     f"{row['n_test']:>7} {cell(row, 'dev', 'raw'):>9} "
                     f"{cell(row, 'dev', 'post'):>9} "
                     f"{cell(row, 'test', 'raw'):>9} "
                     f"{cell(row, 'test', 'post'):>10}")
    if reference_system is not None:
        lines.append(f"* p < {SIGNIFICANCE_LEVEL} (one-tailed, Fisher r-to-z) "
                     f"vs {reference_system}")
    return "\n".join(lines) + "\n", rows


def _plot_style():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "difftrain"
    return plt


def emit_plots(records: Sequence[dict], out_dir, subject: str | None = None
               ) -> list[Path]:
    """Prediction-vs-gold trace figures for experiment records, contribution
    bars for fusion reports. Returns the written files."""
    if not records:
        raise ValueError("no records to plot")
    plt = _plot_style()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for rec in records:
        if rec.get("kind") == "experiment":
            rec_dir = Path(rec["_path"]).parent
            subjects, times, preds, golds = read_prediction_csv(
                rec_dir / rec["predictions"]["test"])
            sid = subject if subject is not None else subjects[0]
            mask = np.array([s == sid for s in subjects])
            if not mask.any():
                raise ValueError(f"subject {sid!r} not in test predictions")
            fig, axes = plt.subplots(2, 1, figsize=(9, 5), sharex=True)
            axes[0].plot(times[mask], golds[mask], label="gold standard",
                         color="black", lw=0.9)
            axes[0].plot(times[mask], preds[mask], label="prediction",
                         color="tab:red", lw=0.9)
            axes[0].set_title(
                f"{rec['system']} / {rec['dimension']} / {sid} (raw)")
            axes[0].legend(loc="upper right")
            if rec["predictions"].get("test_post"):
                _, ptimes, ppreds, pgolds = read_prediction_csv(
                    rec_dir / rec["predictions"]["test_post"])
                axes[1].plot(ptimes[mask], pgolds[mask], color="black", lw=0.9)
                axes[1].plot(ptimes[mask], ppreds[mask], color="tab:blue", lw=0.9)
                axes[1].set_title("post-processed")
            else:
                axes[1].set_title("post-processing disabled")
            axes[1].set_xlabel("time (s)")
            path = out / f"{rec['system']}_{rec['dimension']}_trace.svg"
        elif rec.get("kind") == "fusion":
            shares = rec["contributions_percent"]
            fig, ax = plt.subplots(figsize=(6, 4))
            names = list(shares)
            ax.bar(names, [shares[n] for n in names], color="tab:blue")
            ax.set_ylabel("contribution (%)")
            ax.set_title(f"fusion {rec['name']}: stream contributions")
            path = out / f"fusion_{rec['name']}_contributions.svg"
        else:
            raise ValueError(f"unknown record kind {rec.get('kind')!r}")
        fig.tight_layout()
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written
