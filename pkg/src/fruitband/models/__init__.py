from .specs import BACKBONE_NAMES, FEATURE_DEPTHS, BackboneSpec, ClassifierSpec, HeadSpec
from .backbones import TinyBackbone, build_backbone, resolve_weights_dir
from .classifier import (
    DefectClassifier,
    build_classifier,
    build_multi_input,
    build_single_input,
    forward,
    load_weights,
    save_weights,
)

__all__ = [
    "BACKBONE_NAMES",
    "FEATURE_DEPTHS",
    "BackboneSpec",
    "ClassifierSpec",
    "HeadSpec",
    "TinyBackbone",
    "build_backbone",
    "resolve_weights_dir",
    "DefectClassifier",
    "build_classifier",
    "build_multi_input",
    "build_single_input",
    "forward",
    "load_weights",
    "save_weights",
]
