"""Accuracy metrics, experiment arms, and the model x arm experiment matrix.

An arm names which record fields feed which classifier branch (narrowband,
visible, or defect mask). The matrix trains and evaluates one classifier
per (model, arm) cell with a seed derived from (master seed, model, arm),
persisting each cell under its own directory so interrupted runs resume
from cached results.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyEvaluation, LabelOutOfRange, LengthMismatch, MissingModality
from .imio import load_png, resize_bilinear
from .manifest import Manifest, SplitSpec, split_grouped
from .maskops import mask_to_model_input
from .models import BackboneSpec, ClassifierSpec, build_classifier, load_weights
from .training import ArrayDataset, TrainConfig, evaluate, train


def accuracy(predictions, labels) -> float:
    """Percent of matching entries; full precision (rounding is for tables)."""
    preds = list(predictions)
    labs = list(labels)
    if len(preds) != len(labs):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(labs)} labels")
    if not preds:
        raise EmptyEvaluation("cannot compute accuracy of an empty evaluation")
    matches = sum(1 for p, l in zip(preds, labs) if p == l)
    return 100.0 * matches / len(preds)


def confusion_matrix(predictions, labels, num_classes: int = 3) -> np.ndarray:
    """Entry (i, j) counts true class i predicted as class j."""
    preds = np.asarray(list(predictions), dtype=np.int64)
    labs = np.asarray(list(labels), dtype=np.int64)
    if len(preds) != len(labs):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(labs)} labels")
    for name, arr in (("predictions", preds), ("labels", labs)):
        if len(arr) and (arr.min() < 0 or arr.max() >= num_classes):
            raise LabelOutOfRange(f"{name} outside [0, {num_classes})")
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(out, (labs, preds), 1)
    return out


# --- experiment arms ----------------------------------------------------------

@dataclass(frozen=True)
class ExperimentArm:
    name: str
    mode: str  # "single" | "multi"
    branch_a: str  # "nb" | "vis" | "mask"
    branch_b: str | None = None

    def requires_masks(self) -> bool:
        return "mask" in (self.branch_a, self.branch_b)


ARMS = {
    "single_nb": ExperimentArm("single_nb", "single", "nb"),
    "single_vis": ExperimentArm("single_vis", "single", "vis"),
    "multi_nb_mask": ExperimentArm("multi_nb_mask", "multi", "nb", "mask"),
    "multi_vis_mask": ExperimentArm("multi_vis_mask", "multi", "vis", "mask"),
    "multi_nb_vis": ExperimentArm("multi_nb_vis", "multi", "nb", "vis"),
}

ARM_NAMES = tuple(ARMS)


def get_arm(name: str) -> ExperimentArm:
    if name not in ARMS:
        raise MissingModality(f"unknown arm {name!r}, expected one of {ARM_NAMES}")
    return ARMS[name]


def _load_branch(manifest: Manifest, record, source: str, size_hw: tuple[int, int]) -> np.ndarray:
    if source == "nb":
        img = load_png(manifest.resolve(record.narrowband_path))
        img = resize_bilinear(img, size_hw)
        return np.repeat(img[:, :, None], 3, axis=2)
    if source == "vis":
        return resize_bilinear(load_png(manifest.resolve(record.visible_path)), size_hw)
    if source == "mask":
        if record.mask_path is None:
            raise MissingModality(f"record {record.fruit_id}/{record.view_index} has no mask")
        mask = load_png(manifest.resolve(record.mask_path))
        return (mask_to_model_input(mask, size_hw) * 255).astype(np.uint8)
    raise ValueError(f"unknown branch source {source!r}")


def load_arm_dataset(manifest: Manifest, arm: ExperimentArm,
                     input_size: tuple[int, int] = (224, 224)) -> ArrayDataset:
    """Materialize the manifest's records as model-ready uint8 arrays."""
    if arm.requires_masks():
        missing = [i for i, r in enumerate(manifest.records) if r.mask_path is None]
        if missing:
            raise MissingModality(
                f"arm {arm.name} needs masks but {len(missing)} records have none "
                f"(first: record {missing[0]})"
            )
    class_index = {name: i for i, name in enumerate(manifest.class_names)}
    xa = np.stack([_load_branch(manifest, r, arm.branch_a, input_size) for r in manifest.records]) \
        if manifest.records else np.zeros((0, *input_size, 3), dtype=np.uint8)
    xb = None
    if arm.mode == "multi":
        xb = np.stack([_load_branch(manifest, r, arm.branch_b, input_size) for r in manifest.records]) \
            if manifest.records else np.zeros((0, *input_size, 3), dtype=np.uint8)
    labels = np.array([class_index[r.defect_class] for r in manifest.records], dtype=np.int64)
    return ArrayDataset(inputs_a=xa, labels=labels, inputs_b=xb)


# --- experiment matrix --------------------------------------------------------

@dataclass
class ExperimentResult:
    model_name: str
    arm: str
    accuracy_pct: float          # best-epoch val accuracy
    final_accuracy_pct: float    # last-epoch val accuracy
    best_epoch: int
    confusion: list[list[int]]
    history_path: str
    checkpoint_path: str | None

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "arm": self.arm,
            "accuracy_pct": self.accuracy_pct,
            "final_accuracy_pct": self.final_accuracy_pct,
            "best_epoch": self.best_epoch,
            "confusion": self.confusion,
            "history_path": self.history_path,
            "checkpoint_path": self.checkpoint_path,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentResult":
        return cls(**{k: doc[k] for k in (
            "model_name", "arm", "accuracy_pct", "final_accuracy_pct",
            "best_epoch", "confusion", "history_path", "checkpoint_path",
        )})


def cell_seed(master_seed: int, model_name: str, arm_name: str) -> int:
    digest = hashlib.sha256(f"{master_seed}/{model_name}/{arm_name}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def _manifest_digest(manifest: Manifest) -> str:
    doc = {
        "class_names": list(manifest.class_names),
        "records": [
            (r.fruit_id, r.view_index, r.defect_class, r.visible_path,
             r.narrowband_path, r.mask_path)
            for r in manifest.records
        ],
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def classifier_spec_for(model_name: str, arm: ExperimentArm,
                        input_size: tuple[int, int] = (224, 224)) -> ClassifierSpec:
    pretrained = model_name != "tiny"
    backbone = BackboneSpec(name=model_name, pretrained=pretrained,
                            input_size=(*input_size, 3))
    if arm.mode == "single":
        return ClassifierSpec(mode="single", backbone_a=backbone)
    return ClassifierSpec(mode="multi", backbone_a=backbone, backbone_b=backbone,
                          share_weights=False)


def run_experiment_matrix(manifest: Manifest, models: list[str], arms: list[str],
                          train_cfg: TrainConfig, results_dir: str | Path,
                          split_spec: SplitSpec | None = None,
                          input_size: tuple[int, int] = (224, 224),
                          weights_dir: str | Path | None = None) -> list[ExperimentResult]:
    """Train and evaluate every (model, arm) cell, reusing cached cells.

    A cell is cached by the hash of (model spec, arm, train config, manifest
    content); deleting its result.json forces just that cell to recompute.
    """
    results_dir = Path(results_dir)
    split_spec = split_spec or SplitSpec()
    manifest_hash = _manifest_digest(manifest)
    train_manifest, val_manifest = split_grouped(manifest, split_spec)

    results = []
    datasets: dict[str, tuple[ArrayDataset, ArrayDataset]] = {}
    for model_name in models:
        for arm_name in arms:
            arm = get_arm(arm_name)
            spec = classifier_spec_for(model_name, arm, input_size)
            cfg_hash = hashlib.sha256(json.dumps({
                "spec": spec.to_dict(),
                "arm": arm_name,
                "train": train_cfg.to_dict(),
                "split": {"val_fraction": split_spec.val_fraction, "seed": split_spec.seed},
                "manifest": manifest_hash,
            }, sort_keys=True).encode()).hexdigest()

            cell_dir = results_dir / model_name / arm_name
            result_path = cell_dir / "result.json"
            if result_path.is_file():
                doc = json.loads(result_path.read_text())
                if doc.get("config_hash") == cfg_hash:
                    results.append(ExperimentResult.from_dict(doc))
                    continue

            if arm_name not in datasets:
                datasets[arm_name] = (
                    load_arm_dataset(train_manifest, arm, input_size),
                    load_arm_dataset(val_manifest, arm, input_size),
                )
            train_set, val_set = datasets[arm_name]

            seed = cell_seed(train_cfg.seed, model_name, arm_name)
            cfg = TrainConfig(
                learning_rate=train_cfg.learning_rate,
                epochs=train_cfg.epochs,
                batch_size=train_cfg.batch_size,
                seed=seed,
                train_backbone=train_cfg.train_backbone,
            )
            cell_dir.mkdir(parents=True, exist_ok=True)
            classifier = build_classifier(spec, seed=seed, weights_dir=weights_dir)
            history, best_path = train(classifier, train_set, val_set, cfg, out_dir=cell_dir)

            best_epoch, best_acc = history.best()
            if best_path is not None:
                best_model = load_weights(spec, best_path, weights_dir=weights_dir)
            else:
                best_model = classifier
            _, eval_acc, preds = evaluate(best_model, val_set)
            conf = confusion_matrix(preds, val_set.labels, spec.head.num_classes)

            result = ExperimentResult(
                model_name=model_name,
                arm=arm_name,
                accuracy_pct=eval_acc,
                final_accuracy_pct=history.epochs[-1].val_accuracy if len(history) else 0.0,
                best_epoch=best_epoch,
                confusion=conf.tolist(),
                history_path=str(cell_dir / "history.json"),
                checkpoint_path=str(best_path) if best_path else None,
            )
            doc = result.to_dict()
            doc["config_hash"] = cfg_hash
            doc["cell_seed"] = seed
            result_path.write_text(json.dumps(doc, indent=2) + "\n")
            results.append(result)
    return results
