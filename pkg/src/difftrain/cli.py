"""Command-line entry point: dataset preparation, single-system training
runs, fusion scenarios, comparison reports, and plots.

Exit status is 0 on success and 1 on failure, with a stage-tagged diagnostic
on stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .data import (DIMENSIONS, SyntheticConfig, compensate_delay,
                   compute_gold_standard, generate_synthetic,
                   load_annotations, load_manifest, write_synthetic)
from .experiment import (SYSTEMS, ExperimentConfig, StageError, emit_plots,
                         emit_report, load_records, pipeline_stage,
                         run_experiment, run_fusion)


def _add_synth(sub):
    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--subjects", type=int, nargs=3, default=[9, 9, 9],
                   metavar=("TRAIN", "DEV", "TEST"))
    p.add_argument("--frames", type=int, default=1500)
    p.add_argument("--features", type=int, default=20)
    p.add_argument("--raters", type=int, default=6)
    p.add_argument("--frame-period", type=float, default=0.04)
    p.add_argument("--delay", type=float, default=0.0,
                   help="annotation delay to record in the manifest (s)")


def _cmd_synth(args) -> int:
    with pipeline_stage("synth-data"):
        cfg = SyntheticConfig(subjects_per_partition=tuple(args.subjects),
                              num_frames=args.frames,
                              num_features=args.features,
                              num_raters=args.raters,
                              frame_period=args.frame_period,
                              delay=args.delay)
        dataset = generate_synthetic(cfg, args.seed)
        manifest = write_synthetic(dataset, args.out)
    print(f"wrote {manifest} ({len(dataset.subjects)} subjects, "
          f"{cfg.num_frames} frames, {cfg.num_features} features)")
    return 0


def _add_prepare(sub):
    p = sub.add_parser("prepare-data",
                       help="derive delay-compensated gold standards")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)


def _cmd_prepare(args) -> int:
    with pipeline_stage("prepare-data"):
        manifest = load_manifest(args.manifest)
        manifest_sha = hashlib.sha256(Path(args.manifest).read_bytes()).hexdigest()
        out = Path(args.out)
        (out / "gold").mkdir(parents=True, exist_ok=True)
        summary = {"frame_period": manifest.frame_period,
                   "delay": manifest.delay,
                   "source_manifest": str(args.manifest),
                   "manifest_sha256": manifest_sha,
                   "dimensions": list(manifest.dimensions), "subjects": []}
        for entry in manifest.entries:
            files = {}
            for dim in manifest.dimensions:
                ann, _ = load_annotations(entry.annotations[dim], dim,
                                          manifest.frame_period,
                                          subject_id=entry.subject_id)
                gold = compute_gold_standard(ann)
                if manifest.delay > 0:
                    gold = compensate_delay(gold, manifest.delay)
                path = out / "gold" / f"{entry.subject_id}_{dim}.csv"
                t_axis = np.arange(gold.num_frames) * manifest.frame_period
                np.savetxt(path,
                           np.column_stack([t_axis, gold.mean_trace,
                                            gold.uncertainty_trace]),
                           delimiter=",", comments="",
                           header=(f"# manifest_sha256={manifest_sha}\n"
                                   "time_s,mean,uncertainty"), fmt="%.17g")
                files[dim] = str(path.relative_to(out))
            summary["subjects"].append({"id": entry.subject_id,
                                        "partition": entry.partition,
                                        "gold": files})
        (out / "prepared.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote gold standards for {len(summary['subjects'])} subjects "
          f"to {args.out}")
    return 0


def _add_train(sub):
    p = sub.add_parser("train", help="run one system end to end")
    p.add_argument("--manifest", required=True)
    p.add_argument("--system", required=True, choices=SYSTEMS)
    p.add_argument("--dimension", required=True, choices=DIMENSIONS)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--units", type=int, default=40)
    p.add_argument("--grid", action="store_true",
                   help="search the full layer/width structure grid")
    p.add_argument("--stage1-epochs", type=int, default=50)
    p.add_argument("--stage2-epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--chunk", type=int, default=300)
    p.add_argument("--batch-chunks", type=int, default=4)
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--w1", type=float, default=0.5)
    p.add_argument("--w2", type=float, default=0.5)
    p.add_argument("--re-absolute", action="store_true",
                   help="absolute-sum variant of the scalar error indicator")
    p.add_argument("--pu-squared", action="store_true",
                   help="squared-error variant of the uncertainty loss")
    p.add_argument("--no-postprocess", action="store_true")
    p.add_argument("--seed", type=int, default=0)


def _cmd_train(args) -> int:
    config = ExperimentConfig(
        manifest=args.manifest, system=args.system, dimension=args.dimension,
        num_layers=args.layers, units_per_layer=args.units, use_grid=args.grid,
        stage1_epochs=args.stage1_epochs, stage2_epochs=args.stage2_epochs,
        learning_rate=args.lr, chunk_length=args.chunk,
        batch_chunks=args.batch_chunks, clip_norm=args.clip,
        w1=args.w1, w2=args.w2, re_absolute=args.re_absolute,
        pu_squared=args.pu_squared, postprocess=not args.no_postprocess,
        seed=args.seed)
    record = run_experiment(config, args.out)
    for part in ("dev", "test"):
        cell = record["metrics"][part]
        post = "-" if cell["ccc_post"] is None else f"{cell['ccc_post']:.3f}"
        print(f"{args.system} {args.dimension} {part}: "
              f"ccc raw {cell['ccc_raw']:.3f}, post {post}")
    print(f"record: {Path(args.out) / 'record.json'}")
    return 0


def _add_fuse(sub):
    p = sub.add_parser("fuse", help="late-fuse prediction streams")
    p.add_argument("--scenario", required=True,
                   help="JSON scenario file (see README)")
    p.add_argument("--out", required=True)


def _cmd_fuse(args) -> int:
    with pipeline_stage("load-scenario"):
        scenario_path = Path(args.scenario)
        scenario = json.loads(scenario_path.read_text())
        scenario.setdefault("base_dir", str(scenario_path.parent))
    report = run_fusion(scenario, args.out)
    m = report["metrics"]
    print(f"fused {report['name']}: dev ccc {m['dev']['ccc']:.3f}, "
          f"test ccc {m['test']['ccc']:.3f}")
    print(f"report: {Path(args.out) / 'fusion_report.json'}")
    return 0


def _add_report(sub):
    p = sub.add_parser("report", help="comparison table with significance marks")
    p.add_argument("--records", required=True, nargs="+")
    p.add_argument("--out", required=True,
                   help="output basename; writes <out>.txt and <out>.json")
    p.add_argument("--reference", default=None, choices=SYSTEMS,
                   help="system to run significance tests against")


def _cmd_report(args) -> int:
    with pipeline_stage("report"):
        records = load_records(args.records)
        text, rows = emit_report(records, reference_system=args.reference)
        base = Path(args.out)
        base.parent.mkdir(parents=True, exist_ok=True)
        base.with_suffix(".txt").write_text(text)
        base.with_suffix(".json").write_text(
            json.dumps(rows, indent=2, sort_keys=True) + "\n")
    print(text, end="")
    return 0


def _add_plot(sub):
    p = sub.add_parser("plot", help="trace and contribution figures")
    p.add_argument("--records", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--subject", default=None)


def _cmd_plot(args) -> int:
    with pipeline_stage("plot"):
        records = load_records(args.records)
        written = emit_plots(records, args.out, subject=args.subject)
    for path in written:
        print(f"wrote {path}")
    return 0


_COMMANDS = {"synth-data": _cmd_synth, "prepare-data": _cmd_prepare,
             "train": _cmd_train, "fuse": _cmd_fuse, "report": _cmd_report,
             "plot": _cmd_plot}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="difftrain",
        description="difficulty-aware recurrent emotion-trace regression")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_synth(sub)
    _add_prepare(sub)
    _add_train(sub)
    _add_fuse(sub)
    _add_report(sub)
    _add_plot(sub)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - final safety net
        print(f"error [{args.command}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
