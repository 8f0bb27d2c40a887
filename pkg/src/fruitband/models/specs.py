"""Classifier specifications: backbone, head, and single/multi wiring."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import SpecMismatch

# final feature-map depth of each supported backbone
FEATURE_DEPTHS = {
    "tiny": 64,
    "mobilenet_v1": 1024,
    "densenet121": 1024,
    "resnet50": 2048,
    "vgg19": 512,
}

BACKBONE_NAMES = tuple(FEATURE_DEPTHS)


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    pretrained: bool = False
    input_size: tuple[int, int, int] = (224, 224, 3)
    feature_depth: int = 0  # 0 -> filled from the registry

    def __post_init__(self):
        if self.name not in FEATURE_DEPTHS:
            raise SpecMismatch(f"unknown backbone {self.name!r}, expected one of {BACKBONE_NAMES}")
        if self.name == "tiny" and self.pretrained:
            raise SpecMismatch("the tiny backbone has no pretrained weights")
        expected = FEATURE_DEPTHS[self.name]
        if self.feature_depth == 0:
            object.__setattr__(self, "feature_depth", expected)
        elif self.feature_depth != expected:
            raise SpecMismatch(
                f"feature_depth {self.feature_depth} does not match {self.name} ({expected})"
            )
        if len(self.input_size) != 3 or self.input_size[2] != 3:
            raise SpecMismatch(f"input_size must be (H, W, 3), got {self.input_size}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "pretrained": self.pretrained,
            "input_size": list(self.input_size),
            "feature_depth": self.feature_depth,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BackboneSpec":
        return cls(
            name=doc["name"],
            pretrained=bool(doc.get("pretrained", False)),
            input_size=tuple(doc.get("input_size", (224, 224, 3))),
            feature_depth=int(doc.get("feature_depth", 0)),
        )


@dataclass(frozen=True)
class HeadSpec:
    pooling: str = "gap"
    hidden_sizes: tuple[int, int] = (256, 128)
    dropout_rate: float = 0.5
    num_classes: int = 3

    def __post_init__(self):
        if self.pooling != "gap":
            raise SpecMismatch(f"only global average pooling is supported, got {self.pooling!r}")
        if len(self.hidden_sizes) != 2:
            raise SpecMismatch(f"hidden_sizes must have length 2, got {self.hidden_sizes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise SpecMismatch(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.num_classes < 2:
            raise SpecMismatch(f"num_classes must be >= 2, got {self.num_classes}")

    def to_dict(self) -> dict:
        return {
            "pooling": self.pooling,
            "hidden_sizes": list(self.hidden_sizes),
            "dropout_rate": self.dropout_rate,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "HeadSpec":
        return cls(
            pooling=doc.get("pooling", "gap"),
            hidden_sizes=tuple(doc.get("hidden_sizes", (256, 128))),
            dropout_rate=float(doc.get("dropout_rate", 0.5)),
            num_classes=int(doc.get("num_classes", 3)),
        )


@dataclass(frozen=True)
class ClassifierSpec:
    mode: str  # "single" | "multi"
    backbone_a: BackboneSpec
    backbone_b: BackboneSpec | None = None
    share_weights: bool = False
    head: HeadSpec = field(default_factory=HeadSpec)

    def __post_init__(self):
        if self.mode not in ("single", "multi"):
            raise SpecMismatch(f"mode must be 'single' or 'multi', got {self.mode!r}")
        if self.mode == "multi":
            if self.backbone_b is None and not self.share_weights:
                raise SpecMismatch("multi mode needs backbone_b or share_weights")
            if self.share_weights and self.backbone_b is not None \
                    and self.backbone_b != self.backbone_a:
                raise SpecMismatch("share_weights requires identical branch specs")

    def branch_b(self) -> BackboneSpec | None:
        """Effective second-branch spec (mirrors branch a under weight sharing)."""
        if self.mode != "multi":
            return None
        return self.backbone_a if self.share_weights else self.backbone_b

    def fused_depth(self) -> int:
        """Depth of the feature map entering the head."""
        if self.mode == "single":
            return self.backbone_a.feature_depth
        return self.backbone_a.feature_depth + self.branch_b().feature_depth

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "backbone_a": self.backbone_a.to_dict(),
            "backbone_b": self.backbone_b.to_dict() if self.backbone_b else None,
            "share_weights": self.share_weights,
            "head": self.head.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ClassifierSpec":
        return cls(
            mode=doc["mode"],
            backbone_a=BackboneSpec.from_dict(doc["backbone_a"]),
            backbone_b=BackboneSpec.from_dict(doc["backbone_b"]) if doc.get("backbone_b") else None,
            share_weights=bool(doc.get("share_weights", False)),
            head=HeadSpec.from_dict(doc.get("head", {})),
        )
