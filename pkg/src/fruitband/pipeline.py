"""Pipeline orchestration: synth -> register -> maskproc -> train/eval -> report.

Each stage writes its outputs plus a small meta file holding the hash of the
configuration that produced them; a rerun skips any stage whose outputs and
hash already match, so repeated pipeline invocations cost only cache checks.
Every run directory gets a run_meta.json sufficient to reproduce the run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .errors import DomainError, MatchFailure, NoModelFound
from .evaluation import run_experiment_matrix
from .imio import load_png, save_png
from .manifest import (
    Manifest,
    SplitSpec,
    load_manifest,
    rebase_manifest,
    save_manifest,
    validate_manifest,
)
from .maskops import filter_regions
from .registration import MatcherConfig, load_sidecar_correspondences, register_pair
from .reporting import LAYOUTS, emit_table
from .synth import GenConfig, generate_dataset
from .training import TrainConfig


@dataclass
class PipelineConfig:
    output_root: str = "pipeline_out"
    manifest: str | None = None  # ingest an existing dataset instead of synth
    weights_dir: str | None = None
    gen: GenConfig = field(default_factory=GenConfig)
    register: dict = field(default_factory=dict)       # MatcherConfig overrides
    maskproc: dict = field(default_factory=lambda: {"min_area": 20, "connectivity": 8})
    train: TrainConfig = field(default_factory=TrainConfig)
    models: list[str] = field(default_factory=lambda: ["tiny"])
    arms: list[str] = field(default_factory=lambda: ["single_nb"])
    val_fraction: float = 0.2
    split_seed: int = 42
    input_size: tuple[int, int] = (224, 224)
    master_seed: int = 42

    @classmethod
    def from_json(cls, path: str | Path) -> "PipelineConfig":
        doc = json.loads(Path(path).read_text())
        cfg = cls()
        for key in ("output_root", "manifest", "weights_dir", "models", "arms",
                    "val_fraction", "split_seed", "master_seed"):
            if key in doc:
                setattr(cfg, key, doc[key])
        if "input_size" in doc:
            cfg.input_size = (int(doc["input_size"][0]), int(doc["input_size"][1]))
        if "gen" in doc:
            cfg.gen = GenConfig.from_dict(doc["gen"])
        if "register" in doc:
            cfg.register = dict(doc["register"])
        if "maskproc" in doc:
            cfg.maskproc = dict(doc["maskproc"])
        if "train" in doc:
            cfg.train = TrainConfig.from_dict(doc["train"])
        cfg.train.seed = cfg.master_seed
        cfg.gen.master_seed = cfg.master_seed
        return cfg

    def to_dict(self) -> dict:
        return {
            "output_root": self.output_root,
            "manifest": self.manifest,
            "weights_dir": self.weights_dir,
            "gen": self.gen.to_dict(),
            "register": self.register,
            "maskproc": self.maskproc,
            "train": self.train.to_dict(),
            "models": self.models,
            "arms": self.arms,
            "val_fraction": self.val_fraction,
            "split_seed": self.split_seed,
            "input_size": list(self.input_size),
            "master_seed": self.master_seed,
        }


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def write_run_meta(out_dir: str | Path, subcommand: str, config_doc: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "subcommand": subcommand,
        "artifact_version": __version__,
        "config_hash": config_hash(config_doc),
        "config": config_doc,
    }
    (out_dir / "run_meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def _stage_is_cached(stage_dir: Path, meta_name: str, stage_hash: str) -> bool:
    meta_path = stage_dir / meta_name
    if not meta_path.is_file():
        return False
    try:
        return json.loads(meta_path.read_text()).get("stage_hash") == stage_hash
    except (json.JSONDecodeError, OSError):
        return False


def _write_stage_meta(stage_dir: Path, meta_name: str, stage_hash: str) -> None:
    (stage_dir / meta_name).write_text(json.dumps({"stage_hash": stage_hash}) + "\n")


def run_synth_stage(gen: GenConfig, jobs: int = 1) -> Manifest:
    out = Path(gen.output_dir)
    stage_hash = config_hash(gen.to_dict())
    if _stage_is_cached(out, "synth.meta.json", stage_hash) and (out / "manifest.json").is_file():
        return load_manifest(out / "manifest.json")
    manifest = generate_dataset(gen, jobs=jobs)
    _write_stage_meta(out, "synth.meta.json", stage_hash)
    return manifest


def run_register_stage(manifest: Manifest, out_dir: str | Path,
                       matcher_cfg: MatcherConfig | None = None,
                       sidecar_dir: str | Path | None = None,
                       stage_key: dict | None = None) -> tuple[Manifest, dict]:
    """Warp each narrowband image onto its visible frame.

    Writes registered PNGs, a rebased manifest, and a per-record report.
    When sidecar_dir is set, correspondences come from
    <sidecar_dir>/<fruit_id>_<view>.json instead of the built-in matcher.
    """
    out_dir = Path(out_dir)
    cfg = matcher_cfg or MatcherConfig()
    stage_hash = config_hash({"matcher": vars(cfg) | {"out_size": None}, "key": stage_key or {}})
    report_path = out_dir / "registration_report.json"
    if _stage_is_cached(out_dir, "register.meta.json", stage_hash) \
            and (out_dir / "manifest.json").is_file() and report_path.is_file():
        return load_manifest(out_dir / "manifest.json"), json.loads(report_path.read_text())

    out_dir.mkdir(parents=True, exist_ok=True)
    rebased = rebase_manifest(manifest, out_dir)
    report = {"records": []}
    new_records = []
    for rec_old, rec in zip(manifest.records, rebased.records):
        moving = load_png(manifest.resolve(rec_old.narrowband_path))
        fixed = load_png(manifest.resolve(rec_old.visible_path))
        entry = {"fruit_id": rec.fruit_id, "view_index": rec.view_index}
        rel = f"{rec.fruit_id}_{rec.view_index:03d}_nb_reg.png"
        try:
            corrs = None
            if sidecar_dir is not None:
                corrs = load_sidecar_correspondences(
                    Path(sidecar_dir) / f"{rec.fruit_id}_{rec.view_index:03d}.json"
                )
            registered, hom, diag = register_pair(moving, fixed, cfg, correspondences=corrs)
            save_png(out_dir / rel, registered)
            entry.update(diag.to_dict())
            new_records.append(
                type(rec)(rec.fruit_id, rec.view_index, rec.defect_class,
                          rec.visible_path, rel, rec.mask_path)
            )
        except (MatchFailure, NoModelFound) as exc:
            entry.update({"status": f"failed: {exc}", "n_matches": 0, "n_inliers": 0,
                          "mean_residual_px": float("nan")})
            new_records.append(rec)
        report["records"].append(entry)

    registered_manifest = Manifest(new_records, manifest.class_names, out_dir)
    save_manifest(registered_manifest, out_dir / "manifest.json")
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    _write_stage_meta(out_dir, "register.meta.json", stage_hash)
    return registered_manifest, report


def run_maskproc_stage(manifest: Manifest, out_dir: str | Path,
                       min_area: int = 20, connectivity: int = 8,
                       stage_key: dict | None = None) -> Manifest:
    """Filter small regions out of every mask; returns the rebased manifest."""
    out_dir = Path(out_dir)
    stage_hash = config_hash({"min_area": min_area, "connectivity": connectivity,
                              "key": stage_key or {}})
    if _stage_is_cached(out_dir, "maskproc.meta.json", stage_hash) \
            and (out_dir / "manifest.json").is_file():
        return load_manifest(out_dir / "manifest.json")
    out_dir.mkdir(parents=True, exist_ok=True)
    rebased = rebase_manifest(manifest, out_dir)
    new_records = []
    for rec_old, rec in zip(manifest.records, rebased.records):
        if rec_old.mask_path is None:
            new_records.append(rec)
            continue
        mask = load_png(manifest.resolve(rec_old.mask_path))
        filtered = filter_regions(mask, min_area=min_area, connectivity=connectivity)
        rel = f"{rec.fruit_id}_{rec.view_index:03d}_mask.png"
        save_png(out_dir / rel, (filtered * 255).astype("uint8"))
        new_records.append(
            type(rec)(rec.fruit_id, rec.view_index, rec.defect_class,
                      rec.visible_path, rec.narrowband_path, rel)
        )
    out_manifest = Manifest(new_records, manifest.class_names, out_dir)
    save_manifest(out_manifest, out_dir / "manifest.json")
    _write_stage_meta(out_dir, "maskproc.meta.json", stage_hash)
    return out_manifest


def run_pipeline(cfg: PipelineConfig, jobs: int = 1) -> dict:
    """Run every stage, honoring per-stage caches; returns a summary dict."""
    root = Path(cfg.output_root)
    root.mkdir(parents=True, exist_ok=True)
    write_run_meta(root, "pipeline", cfg.to_dict())

    if cfg.manifest is not None:
        manifest = load_manifest(cfg.manifest)
    else:
        cfg.gen.output_dir = str(root / "data")
        manifest = run_synth_stage(cfg.gen, jobs=jobs)
    issues = validate_manifest(manifest)
    if issues:
        raise DomainError(
            f"manifest failed validation with {len(issues)} issues; first: {issues[0].message}"
        )

    matcher = MatcherConfig(**{k: v for k, v in cfg.register.items()
                               if k in vars(MatcherConfig())})
    gen_key = {"source": cfg.manifest or cfg.gen.to_dict()}
    registered, _ = run_register_stage(manifest, root / "registered", matcher,
                                       stage_key=gen_key)
    masked = run_maskproc_stage(registered, root / "masks",
                                min_area=int(cfg.maskproc.get("min_area", 20)),
                                connectivity=int(cfg.maskproc.get("connectivity", 8)),
                                stage_key=gen_key)

    results = run_experiment_matrix(
        masked, cfg.models, cfg.arms, cfg.train,
        results_dir=root / "results",
        split_spec=SplitSpec(cfg.val_fraction, cfg.split_seed),
        input_size=cfg.input_size,
        weights_dir=cfg.weights_dir,
    )

    reports_dir = root / "reports"
    reports_dir.mkdir(exist_ok=True)
    written = []
    for layout, columns in LAYOUTS.items():
        if any(r.arm in dict(columns) for r in results):
            for fmt, ext in (("text", "txt"), ("csv", "csv")):
                path = reports_dir / f"{layout}.{ext}"
                path.write_text(emit_table(results, layout, fmt))
                written.append(str(path))
    return {
        "records": len(manifest),
        "results": [r.to_dict() for r in results],
        "reports": written,
    }
