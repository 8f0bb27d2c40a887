"""Seeded training loop: Adam + categorical cross-entropy, best-checkpoint
tracking, and deterministic resume.

Every source of randomness is derived by name: batch order from
(seed, epoch), dropout masks from (seed, epoch, step). Two runs with the
same config and initial weights produce identical histories; resuming from
the last checkpoint reproduces the remaining epochs exactly.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .errors import CorruptCheckpoint, EmptyDataset, LabelOutOfRange, NonFiniteLoss
from .models.classifier import DefectClassifier, save_weights

EVAL_BATCH_SIZE = 64


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 25
    batch_size: int = 32
    seed: int = 42
    # None -> backbone default (tiny trains end to end, adapters stay frozen)
    train_backbone: bool | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "train_backbone": self.train_backbone,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        cfg = cls()
        for key in ("learning_rate", "epochs", "batch_size", "seed", "train_backbone"):
            if key in doc:
                setattr(cfg, key, doc[key])
        return cfg


@dataclass
class EpochStats:
    train_loss: float
    val_loss: float
    val_accuracy: float  # percent


@dataclass
class History:
    epochs: list[EpochStats] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def best(self) -> tuple[int, float]:
        """(epoch index, val_accuracy) of the best epoch; (-1, 0.0) if empty."""
        if not self.epochs:
            return -1, 0.0
        idx = max(range(len(self.epochs)), key=lambda i: self.epochs[i].val_accuracy)
        return idx, self.epochs[idx].val_accuracy

    def to_json(self) -> str:
        rows = [
            {"train_loss": e.train_loss, "val_loss": e.val_loss, "val_accuracy": e.val_accuracy}
            for e in self.epochs
        ]
        return json.dumps(rows, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "History":
        rows = json.loads(text)
        return cls([EpochStats(r["train_loss"], r["val_loss"], r["val_accuracy"]) for r in rows])


@dataclass
class ArrayDataset:
    """In-memory dataset: NHWC image batches plus integer labels.

    inputs_b is the second branch for multi-input classifiers.
    """

    inputs_a: np.ndarray
    labels: np.ndarray
    inputs_b: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def batch(self, indices: np.ndarray):
        xa = self.inputs_a[indices]
        if self.inputs_b is not None:
            return (xa, self.inputs_b[indices]), self.labels[indices]
        return xa, self.labels[indices]


def make_batches(dataset, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Index batches covering a (seed, epoch)-derived permutation of the data."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(dataset)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def _step_seed(seed: int, epoch: int, step: int) -> int:
    return (seed * 1000003 + epoch * 8191 + step) % (2**31)


def _batch_tensors(classifier: DefectClassifier, dataset: ArrayDataset, indices: np.ndarray):
    inputs, labels = dataset.batch(indices)
    if isinstance(inputs, tuple):
        ta = classifier._to_torch(inputs[0], "a")
        tb = classifier._to_torch(inputs[1], "b")
    else:
        ta = classifier._to_torch(inputs, "a")
        tb = None
    return ta, tb, torch.from_numpy(labels.astype(np.int64))


def evaluate(classifier: DefectClassifier, dataset: ArrayDataset) -> tuple[float, float, np.ndarray]:
    """(mean cross-entropy, accuracy percent, predicted labels) on a dataset."""
    if len(dataset) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    classifier.eval()
    losses = []
    preds = []
    with torch.no_grad():
        for start in range(0, len(dataset), EVAL_BATCH_SIZE):
            idx = np.arange(start, min(start + EVAL_BATCH_SIZE, len(dataset)))
            ta, tb, yb = _batch_tensors(classifier, dataset, idx)
            logits = classifier.forward_logits(ta, tb, dropout_seed=None)
            losses.append(float(F.cross_entropy(logits, yb, reduction="sum")))
            preds.append(logits.argmax(dim=1).numpy())
    preds = np.concatenate(preds)
    loss = sum(losses) / len(dataset)
    acc = 100.0 * float((preds == dataset.labels).mean())
    return loss, acc, preds


def _check_labels(dataset: ArrayDataset, num_classes: int, name: str) -> None:
    if len(dataset) and (dataset.labels.min() < 0 or dataset.labels.max() >= num_classes):
        raise LabelOutOfRange(
            f"{name} labels must lie in [0, {num_classes}), "
            f"found range [{dataset.labels.min()}, {dataset.labels.max()}]"
        )


def train(classifier: DefectClassifier, train_set: ArrayDataset, val_set: ArrayDataset,
          cfg: TrainConfig, out_dir: str | Path | None = None,
          resume_from: str | Path | None = None) -> tuple[History, Path | None]:
    """Run the training loop; returns the history and the best checkpoint path.

    Checkpoints are written only when out_dir is given: best.ckpt whenever
    val accuracy improves, last.ckpt (with optimizer state) every epoch.
    """
    num_classes = classifier.spec.head.num_classes
    if cfg.epochs > 0 and (len(train_set) == 0 or len(val_set) == 0):
        raise EmptyDataset("training needs non-empty train and val sets")
    _check_labels(train_set, num_classes, "train")
    _check_labels(val_set, num_classes, "val")

    history = History()
    best_path: Path | None = None
    best_acc = -1.0
    start_epoch = 0

    params = classifier.trainable_parameters(cfg.train_backbone)
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate,
                                 betas=(0.9, 0.999), eps=1e-8)

    class_weights = _class_weights(train_set, num_classes) if cfg.epochs > 0 else None
    if cfg.epochs > 0 and resume_from is None:
        _calibrate_first_dense_layer(classifier, train_set)

    if resume_from is not None:
        start_epoch, best_acc, history = _load_train_state(
            classifier, optimizer, resume_from
        )
        if out_dir is not None and best_acc >= 0:
            best_path = Path(out_dir) / "best.ckpt"

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(start_epoch, cfg.epochs):
        classifier.train()
        batches = make_batches(train_set, cfg.batch_size, cfg.seed, epoch)
        total_loss = 0.0
        for step, idx in enumerate(batches):
            ta, tb, yb = _batch_tensors(classifier, train_set, idx)
            optimizer.zero_grad()
            logits = classifier.forward_logits(
                ta, tb, dropout_seed=_step_seed(cfg.seed, epoch, step)
            )
            loss = F.cross_entropy(logits, yb, weight=class_weights)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch {step}")
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach()) * len(idx)

        val_loss, val_acc, _ = evaluate(classifier, val_set)
        history.epochs.append(EpochStats(
            train_loss=total_loss / len(train_set),
            val_loss=val_loss,
            val_accuracy=val_acc,
        ))

        if out_dir is not None:
            if val_acc > best_acc:
                best_acc = val_acc
                best_path = out_dir / "best.ckpt"
                save_weights(classifier, best_path)
            _save_train_state(classifier, optimizer, out_dir / "last.ckpt",
                              epoch + 1, best_acc, history)
        else:
            best_acc = max(best_acc, val_acc)

    if out_dir is not None:
        (out_dir / "history.json").write_text(history.to_json())
    return history, best_path


def _class_weights(train_set: ArrayDataset, num_classes: int) -> torch.Tensor | None:
    """Inverse-frequency loss weights; None when the data is balanced.

    Grouped splits routinely leave the classes mildly unbalanced; without
    reweighting the short, fixed-rate training budget is spent fitting class
    priors instead of the class signal.
    """
    if len(train_set) == 0:
        return None
    counts = np.bincount(train_set.labels, minlength=num_classes).astype(np.float64)
    if counts.min() == counts.max():
        return None
    weights = counts.sum() / (num_classes * np.maximum(counts, 1.0))
    return torch.from_numpy(weights).float()


CALIBRATION_SAMPLE_LIMIT = 256


def _calibrate_first_dense_layer(classifier: DefectClassifier, train_set: ArrayDataset) -> None:
    """Fold pooled-feature standardization into the first dense layer's init.

    The pooled backbone features of fresh conv stacks are strongly
    correlated and far from zero-mean, which makes early gradient steps
    follow a single common-brightness direction. Rescaling fc1's columns by
    the per-feature std and absorbing the mean into its bias makes the head
    start as if it saw standardized features (the layer remains fully
    trainable). Deterministic: uses a fixed leading slice of the train set.
    """
    if len(train_set) == 0:
        return
    idx = np.arange(min(len(train_set), CALIBRATION_SAMPLE_LIMIT))
    classifier.eval()
    with torch.no_grad():
        ta, tb, _ = _batch_tensors(classifier, train_set, idx)
        feat = classifier.backbone_a(ta)
        if classifier.spec.mode == "multi":
            feat = torch.cat([feat, classifier.backbone_b(tb)], dim=1)
        pooled = feat.mean(dim=(2, 3))
        mean = pooled.mean(dim=0)
        std = pooled.std(dim=0).clamp_min(1e-3)
        classifier.fc1.weight.div_(std)
        classifier.fc1.bias.sub_(classifier.fc1.weight @ mean)


# --- resumable training state -----------------------------------------------

def _save_train_state(classifier: DefectClassifier, optimizer: torch.optim.Adam,
                      path: Path, next_epoch: int, best_acc: float, history: History) -> None:
    model_state = {k: v.detach().numpy() for k, v in classifier.state_dict().items()}
    opt_arrays = {}
    opt_steps = {}
    for i, p in enumerate(optimizer.param_groups[0]["params"]):
        st = optimizer.state.get(p)
        if st:
            opt_arrays[f"exp_avg_{i}"] = st["exp_avg"].numpy()
            opt_arrays[f"exp_avg_sq_{i}"] = st["exp_avg_sq"].numpy()
            opt_steps[str(i)] = int(st["step"])
    model_buf, opt_buf = io.BytesIO(), io.BytesIO()
    np.savez(model_buf, **model_state)
    np.savez(opt_buf, **opt_arrays)
    meta = {
        "next_epoch": next_epoch,
        "best_val_accuracy": best_acc,
        "optimizer_steps": opt_steps,
        "spec": classifier.spec.to_dict(),
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("state.json", json.dumps(meta, indent=2))
        zf.writestr("model.npz", model_buf.getvalue())
        zf.writestr("optimizer.npz", opt_buf.getvalue())
        zf.writestr("history.json", history.to_json())


def _load_train_state(classifier: DefectClassifier, optimizer: torch.optim.Adam,
                      path: str | Path) -> tuple[int, float, History]:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("state.json"))
            model_raw = zf.read("model.npz")
            opt_raw = zf.read("optimizer.npz")
            history = History.from_json(zf.read("history.json").decode())
    except (zipfile.BadZipFile, KeyError, OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    if meta["spec"] != classifier.spec.to_dict():
        raise CorruptCheckpoint(f"{path}: checkpoint was written for a different spec")
    arrays = np.load(io.BytesIO(model_raw))
    classifier.load_state_dict({k: torch.from_numpy(np.array(arrays[k])) for k in arrays.files})
    opt_arrays = np.load(io.BytesIO(opt_raw))
    for i, p in enumerate(optimizer.param_groups[0]["params"]):
        key = str(i)
        if key in meta["optimizer_steps"]:
            optimizer.state[p] = {
                "step": torch.tensor(float(meta["optimizer_steps"][key])),
                "exp_avg": torch.from_numpy(np.array(opt_arrays[f"exp_avg_{i}"])),
                "exp_avg_sq": torch.from_numpy(np.array(opt_arrays[f"exp_avg_sq_{i}"])),
            }
    return int(meta["next_epoch"]), float(meta["best_val_accuracy"]), history
