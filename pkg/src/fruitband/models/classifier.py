"""Classifier assembly: backbone branches, dense head, and checkpointing.

Single-input: backbone -> global average pool -> dense + dropout ->
dense + dropout -> dense softmax output. Multi-input runs two branches
(optionally weight-shared), concatenates the feature maps along the depth
axis, and applies the same head structure to the fused map.

Dropout is seeded explicitly: a train-mode forward with the same dropout
seed reproduces its output bit for bit, which keeps whole training runs
replayable.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..errors import (
    BranchShapeMismatch,
    CorruptCheckpoint,
    ShapeMismatch,
    SpecMismatch,
)
from .backbones import TinyBackbone, bias_init_, build_backbone, he_init_
from .specs import ClassifierSpec

# the output layer starts near zero so early logits are dominated by the
# learned signal instead of init noise; see trainer tuning notes in README
OUTPUT_INIT_STD = 0.01

CHECKPOINT_SPEC_NAME = "spec.json"
CHECKPOINT_WEIGHTS_NAME = "weights.npz"


class SeededDropout(nn.Module):
    """Dropout whose mask derives from (dropout_seed, salt), not global RNG."""

    def __init__(self, p: float, salt: int):
        super().__init__()
        self.p = p
        self.salt = salt

    def forward(self, x: torch.Tensor, dropout_seed: int | None) -> torch.Tensor:
        if dropout_seed is None or self.p == 0.0:
            return x
        gen = torch.Generator().manual_seed((int(dropout_seed) * 1000003 + self.salt) % (2**63))
        mask = (torch.rand(x.shape, generator=gen) >= self.p).to(x.dtype)
        return x * mask / (1.0 - self.p)


class DefectClassifier(nn.Module):
    """A built classifier; use forward()/predict_proba() or the trainer."""

    def __init__(self, spec: ClassifierSpec, generator: torch.Generator,
                 weights_dir: str | Path | None = None):
        super().__init__()
        self.spec = spec
        self.backbone_a = build_backbone(spec.backbone_a, generator, weights_dir)
        if spec.mode == "multi":
            branch_b = spec.branch_b()
            if branch_b.input_size[:2] != spec.backbone_a.input_size[:2]:
                raise BranchShapeMismatch(
                    f"branch input sizes differ: {spec.backbone_a.input_size} vs {branch_b.input_size}"
                )
            if spec.share_weights:
                self.backbone_b = self.backbone_a
            else:
                self.backbone_b = build_backbone(branch_b, generator, weights_dir)
        else:
            self.backbone_b = None

        depth = spec.fused_depth()
        h0, h1 = spec.head.hidden_sizes
        self.fc1 = nn.Linear(depth, h0)
        self.fc2 = nn.Linear(h0, h1)
        self.fc_out = nn.Linear(h1, spec.head.num_classes)
        he_init_(self.fc1.weight, fan_in=depth, generator=generator)
        bias_init_(self.fc1.bias, fan_in=depth, generator=generator)
        he_init_(self.fc2.weight, fan_in=h0, generator=generator)
        bias_init_(self.fc2.bias, fan_in=h0, generator=generator)
        with torch.no_grad():
            self.fc_out.weight.copy_(
                torch.randn(self.fc_out.weight.shape, generator=generator) * OUTPUT_INIT_STD
            )
        nn.init.zeros_(self.fc_out.bias)
        self.drop1 = SeededDropout(spec.head.dropout_rate, salt=1)
        self.drop2 = SeededDropout(spec.head.dropout_rate, salt=2)

    # --- torch-side forward ---

    def forward_logits(self, xa: torch.Tensor, xb: torch.Tensor | None = None,
                       dropout_seed: int | None = None) -> torch.Tensor:
        feat = self.backbone_a(xa)
        if self.spec.mode == "multi":
            feat_b = self.backbone_b(xb)
            if feat.shape[2:] != feat_b.shape[2:]:
                raise BranchShapeMismatch(
                    f"branch feature maps differ: {tuple(feat.shape)} vs {tuple(feat_b.shape)}"
                )
            feat = torch.cat([feat, feat_b], dim=1)
        pooled = feat.mean(dim=(2, 3))
        x = torch.relu(self.fc1(pooled))
        x = self.drop1(x, dropout_seed)
        x = torch.relu(self.fc2(x))
        x = self.drop2(x, dropout_seed)
        return self.fc_out(x)

    # --- numpy-facing API ---

    def _to_torch(self, arr: np.ndarray, branch: str) -> torch.Tensor:
        spec = self.spec.backbone_a if branch == "a" else self.spec.branch_b()
        a = np.asarray(arr)
        if a.ndim != 4 or a.shape[3] != 3:
            raise ShapeMismatch(f"branch {branch}: expected (N, H, W, 3), got {a.shape}")
        if a.shape[1:3] != tuple(spec.input_size[:2]):
            raise ShapeMismatch(
                f"branch {branch}: expected {tuple(spec.input_size[:2])} images, got {a.shape[1:3]}"
            )
        if a.dtype == np.uint8:
            a = a.astype(np.float32) / 255.0
        return torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32)).permute(0, 3, 1, 2)

    def predict_proba(self, inputs, mode: str = "eval",
                      dropout_seed: int | None = None) -> np.ndarray:
        """Class probabilities for a batch of NHWC images (multi: a pair)."""
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        xa, xb = self._split_inputs(inputs)
        ta = self._to_torch(xa, "a")
        if len(ta) == 0:
            return np.zeros((0, self.spec.head.num_classes), dtype=np.float32)
        tb = self._to_torch(xb, "b") if xb is not None else None
        seed = dropout_seed if mode == "train" else None
        if mode == "train" and seed is None:
            seed = 0
        was_training = self.training
        self.train(mode == "train")
        try:
            with torch.no_grad():
                logits = self.forward_logits(ta, tb, dropout_seed=seed)
        finally:
            self.train(was_training)
        return torch.softmax(logits, dim=1).numpy()

    def _split_inputs(self, inputs):
        if self.spec.mode == "multi":
            if not isinstance(inputs, (tuple, list)) or len(inputs) != 2:
                raise ShapeMismatch("multi-input classifier expects a pair of batches")
            return inputs[0], inputs[1]
        if isinstance(inputs, (tuple, list)):
            if len(inputs) != 1:
                raise ShapeMismatch("single-input classifier expects one batch")
            return inputs[0], None
        return inputs, None

    def trainable_parameters(self, train_backbone: bool | None = None):
        """Parameters the optimizer should update.

        Pretrained adapters are frozen feature extractors by default; the
        tiny backbone trains end to end. train_backbone overrides.
        """
        head_params = list(self.fc1.parameters()) + list(self.fc2.parameters()) \
            + list(self.fc_out.parameters())
        backbones = [self.backbone_a]
        if self.spec.mode == "multi" and not self.spec.share_weights:
            backbones.append(self.backbone_b)
        params = list(head_params)
        for bb in backbones:
            default_on = isinstance(bb, TinyBackbone)
            enabled = default_on if train_backbone is None else train_backbone
            if enabled:
                trainable = [p for p in bb.parameters() if p.requires_grad]
                if not trainable and train_backbone:
                    raise SpecMismatch("this backbone adapter cannot be fine-tuned")
                params += trainable
        return params

    def head_parameters(self):
        return list(self.fc1.parameters()) + list(self.fc2.parameters()) \
            + list(self.fc_out.parameters())


def build_single_input(spec: ClassifierSpec, seed: int = 0,
                       weights_dir: str | Path | None = None) -> DefectClassifier:
    if spec.mode != "single":
        raise SpecMismatch(f"expected a single-input spec, got mode {spec.mode!r}")
    return DefectClassifier(spec, torch.Generator().manual_seed(seed), weights_dir)


def build_multi_input(spec: ClassifierSpec, seed: int = 0,
                      weights_dir: str | Path | None = None) -> DefectClassifier:
    if spec.mode != "multi":
        raise SpecMismatch(f"expected a multi-input spec, got mode {spec.mode!r}")
    return DefectClassifier(spec, torch.Generator().manual_seed(seed), weights_dir)


def build_classifier(spec: ClassifierSpec, seed: int = 0,
                     weights_dir: str | Path | None = None) -> DefectClassifier:
    if spec.mode == "single":
        return build_single_input(spec, seed, weights_dir)
    return build_multi_input(spec, seed, weights_dir)


def forward(classifier: DefectClassifier, inputs, mode: str = "eval",
            dropout_seed: int | None = None) -> np.ndarray:
    """Probability batch for inputs; train mode applies seeded dropout."""
    return classifier.predict_proba(inputs, mode=mode, dropout_seed=dropout_seed)


def save_weights(classifier: DefectClassifier, path: str | Path) -> None:
    """Write a checkpoint: the spec as JSON plus every named parameter array."""
    state = {k: v.detach().numpy() for k, v in classifier.state_dict().items()}
    buf = io.BytesIO()
    np.savez(buf, **state)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(CHECKPOINT_SPEC_NAME, json.dumps(classifier.spec.to_dict(), indent=2))
        zf.writestr(CHECKPOINT_WEIGHTS_NAME, buf.getvalue())


def load_weights(spec: ClassifierSpec, path: str | Path,
                 weights_dir: str | Path | None = None) -> DefectClassifier:
    """Rebuild a classifier from a checkpoint; the spec must match exactly."""
    try:
        with zipfile.ZipFile(path) as zf:
            stored = json.loads(zf.read(CHECKPOINT_SPEC_NAME))
            weights_raw = zf.read(CHECKPOINT_WEIGHTS_NAME)
    except (zipfile.BadZipFile, KeyError, OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    if stored != spec.to_dict():
        raise SpecMismatch(
            f"checkpoint spec differs from requested spec: {stored} != {spec.to_dict()}"
        )
    classifier = build_classifier(spec, seed=0, weights_dir=weights_dir)
    try:
        arrays = np.load(io.BytesIO(weights_raw))
        state = {k: torch.from_numpy(np.array(arrays[k])) for k in arrays.files}
        classifier.load_state_dict(state)
    except Exception as exc:
        raise CorruptCheckpoint(f"{path}: cannot restore parameters ({exc})") from exc
    return classifier
