"""Command-line entry point wiring all pipeline stages.

Exit codes: 0 success, 1 domain error (printed, no traceback), 2 usage.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import DomainError
from .evaluation import ARM_NAMES, run_experiment_matrix
from .manifest import SplitSpec, load_manifest, save_manifest, split_grouped
from .models import BACKBONE_NAMES
from .pipeline import (
    PipelineConfig,
    run_maskproc_stage,
    run_pipeline,
    run_register_stage,
    run_synth_stage,
    write_run_meta,
)
from .registration import MatcherConfig
from .reporting import LAYOUTS, emit_table
from .synth import GenConfig
from .training import TrainConfig


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a synthetic paired-spectrum dataset")
    p.add_argument("--config", help="GenConfig JSON file")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--fruits-per-class", type=int)
    p.add_argument("--views-per-fruit", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)


def _add_register(sub):
    p = sub.add_parser("register", help="align narrowband images to their visible frames")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--matcher", choices=["builtin", "sidecar"], default="builtin")
    p.add_argument("--sidecar-dir", help="directory of correspondence JSON files")
    p.add_argument("--threshold", type=float, default=2.0, help="RANSAC inlier threshold, px")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=8)
    p.add_argument("--patch-size", type=int, default=32)
    p.add_argument("--search-radius", type=int, default=24)
    p.add_argument("--ncc-min", type=float, default=0.6)


def _add_maskproc(sub):
    p = sub.add_parser("maskproc", help="filter small regions out of defect masks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-area", type=int, default=20)
    p.add_argument("--connectivity", type=int, choices=[4, 8], default=8)


def _add_split(sub):
    p = sub.add_parser("split", help="grouped train/val split of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=42)


def _add_train(sub):
    p = sub.add_parser("train", help="train one model on one experiment arm")
    p.add_argument("--manifest", required=True)
    p.add_argument("--arm", required=True, choices=list(ARM_NAMES))
    p.add_argument("--out", required=True)
    p.add_argument("--model", default="tiny", choices=list(BACKBONE_NAMES))
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=42)
    p.add_argument("--weights-dir")


def _add_eval(sub):
    p = sub.add_parser("eval", help="run the model x arm experiment matrix")
    p.add_argument("--manifest", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--models", default="tiny", help="comma-separated backbone names")
    p.add_argument("--arms", default="single_nb", help="comma-separated arm names")
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=42)
    p.add_argument("--weights-dir")


def _add_report(sub):
    p = sub.add_parser("report", help="render accuracy tables from results")
    p.add_argument("--results", help="results directory from eval/pipeline")
    p.add_argument("--values", help="JSON file {model: {arm: accuracy}}")
    p.add_argument("--layout", required=True, choices=list(LAYOUTS))
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.add_argument("--out", help="write to file instead of stdout")


def _add_pipeline(sub):
    p = sub.add_parser("pipeline", help="run all stages end to end")
    p.add_argument("--config", help="PipelineConfig JSON file")
    p.add_argument("--out", help="output root (overrides config)")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fruitband",
        description="Paired visible/narrowband fruit-defect imaging pipeline.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for add in (_add_synth, _add_register, _add_maskproc, _add_split,
                _add_train, _add_eval, _add_report, _add_pipeline):
        add(sub)
    return parser


def _cmd_synth(args) -> int:
    cfg = GenConfig.from_json(args.config) if args.config else GenConfig()
    if args.out:
        cfg.output_dir = args.out
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.fruits_per_class is not None:
        cfg.fruits_per_class = args.fruits_per_class
    if args.views_per_fruit is not None:
        cfg.views_per_fruit = args.views_per_fruit
    if args.noise_sigma is not None:
        cfg.noise_sigma = args.noise_sigma
    manifest = run_synth_stage(cfg, jobs=args.jobs)
    write_run_meta(cfg.output_dir, "synth", cfg.to_dict())
    print(f"wrote {len(manifest)} records under {cfg.output_dir}")
    return 0


def _cmd_register(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = MatcherConfig(
        grid=args.grid, patch_size=args.patch_size, search_radius=args.search_radius,
        ncc_min=args.ncc_min, inlier_threshold_px=args.threshold, seed=args.seed,
    )
    sidecar = args.sidecar_dir if args.matcher == "sidecar" else None
    if args.matcher == "sidecar" and not sidecar:
        print("error: --matcher sidecar requires --sidecar-dir", file=sys.stderr)
        return 2
    _, report = run_register_stage(manifest, args.out, cfg, sidecar_dir=sidecar,
                                   stage_key={"manifest": args.manifest})
    write_run_meta(args.out, "register", {"matcher": vars(cfg) | {"out_size": None},
                                          "manifest": args.manifest})
    n_ok = sum(1 for r in report["records"] if r.get("status") == "ok")
    print(f"registered {n_ok}/{len(report['records'])} pairs into {args.out}")
    return 0


def _cmd_maskproc(args) -> int:
    manifest = load_manifest(args.manifest)
    out = run_maskproc_stage(manifest, args.out, min_area=args.min_area,
                             connectivity=args.connectivity,
                             stage_key={"manifest": args.manifest})
    write_run_meta(args.out, "maskproc", {"min_area": args.min_area,
                                          "connectivity": args.connectivity,
                                          "manifest": args.manifest})
    print(f"filtered masks for {len(out)} records into {args.out}")
    return 0


def _cmd_split(args) -> int:
    manifest = load_manifest(args.manifest)
    train_m, val_m = split_grouped(manifest, SplitSpec(args.val_fraction, args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .manifest import rebase_manifest

    save_manifest(rebase_manifest(train_m, out), out / "train.json")
    save_manifest(rebase_manifest(val_m, out), out / "val.json")
    write_run_meta(out, "split", {"manifest": args.manifest,
                                  "val_fraction": args.val_fraction, "seed": args.seed})
    print(f"train {len(train_m)} / val {len(val_m)} records -> {out}")
    return 0


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_dict(json.loads(Path(args.config).read_text())) \
        if args.config else TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        cfg.epochs = args.epochs
    return cfg


def _cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _train_config(args)
    results = run_experiment_matrix(
        manifest, [args.model], [args.arm], cfg, results_dir=args.out,
        split_spec=SplitSpec(args.val_fraction, args.split_seed),
        weights_dir=args.weights_dir,
    )
    write_run_meta(args.out, "train", {"model": args.model, "arm": args.arm,
                                       "train": cfg.to_dict(), "manifest": args.manifest})
    r = results[0]
    print(f"{r.model_name}/{r.arm}: best val accuracy {r.accuracy_pct:.2f}% "
          f"(epoch {r.best_epoch}); artifacts under {args.out}")
    return 0


def _cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _train_config(args)
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    arms = [a.strip() for a in args.arms.split(",") if a.strip()]
    results = run_experiment_matrix(
        manifest, models, arms, cfg, results_dir=args.results,
        split_spec=SplitSpec(args.val_fraction, args.split_seed),
        weights_dir=args.weights_dir,
    )
    write_run_meta(args.results, "eval", {"models": models, "arms": arms,
                                          "train": cfg.to_dict(), "manifest": args.manifest})
    for r in results:
        print(f"{r.model_name}/{r.arm}: {r.accuracy_pct:.2f}%")
    return 0


def _collect_results(results_dir: str) -> list:
    entries = []
    for result_file in sorted(Path(results_dir).glob("*/*/result.json")):
        doc = json.loads(result_file.read_text())
        entries.append((doc["model_name"], doc["arm"], doc["accuracy_pct"]))
    return entries


def _cmd_report(args) -> int:
    if (args.results is None) == (args.values is None):
        print("error: pass exactly one of --results or --values", file=sys.stderr)
        return 2
    if args.values:
        results = json.loads(Path(args.values).read_text())
    else:
        results = _collect_results(args.results)
    table = emit_table(results, args.layout, args.format)
    if args.out:
        Path(args.out).write_text(table)
    else:
        sys.stdout.write(table)
    return 0


def _cmd_pipeline(args) -> int:
    cfg = PipelineConfig.from_json(args.config) if args.config else PipelineConfig()
    if args.out:
        cfg.output_root = args.out
    if args.seed is not None:
        cfg.master_seed = args.seed
        cfg.train.seed = args.seed
        cfg.gen.master_seed = args.seed
    summary = run_pipeline(cfg, jobs=args.jobs)
    for r in summary["results"]:
        print(f"{r['model_name']}/{r['arm']}: {r['accuracy_pct']:.2f}%")
    for path in summary["reports"]:
        print(f"report: {path}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "register": _cmd_register,
    "maskproc": _cmd_maskproc,
    "split": _cmd_split,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "report": _cmd_report,
    "pipeline": _cmd_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.subcommand](args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
