"""Feature-extractor backbones.

The tiny backbone is built here from scratch: four stride-2 conv blocks
(16/32/64/64 channels) with LeakyReLU, ending in a 64-deep feature map.
Named backbones (mobilenet_v1, densenet121, resnet50, vgg19) are adapters
over TorchScript weight assets resolved from a local cache directory; the
asset carries both architecture and weights, so none of those network
internals live in this repository and no test needs network access.
"""

from __future__ import annotations

import math
import os
from pathlib import Path

import torch
from torch import nn

from ..errors import PretrainedWeightsUnavailable, SpecMismatch
from .specs import BackboneSpec

WEIGHTS_DIR_ENV = "FRUITBAND_WEIGHTS_DIR"

# input normalization convention per pretrained architecture, applied to
# [0, 1] inputs: (mean, std) per channel
_PRETRAINED_NORM = {
    "mobilenet_v1": ((0.5, 0.5, 0.5), (0.5, 0.5, 0.5)),
    "densenet121": ((0.485, 0.456, 0.406), (0.229, 0.224, 0.225)),
    "resnet50": ((0.485, 0.456, 0.406), (0.229, 0.224, 0.225)),
    "vgg19": ((0.485, 0.456, 0.406), (0.229, 0.224, 0.225)),
}

TINY_CHANNELS = (16, 32, 64, 64)


def he_init_(tensor: torch.Tensor, fan_in: int, generator: torch.Generator) -> None:
    with torch.no_grad():
        tensor.copy_(torch.randn(tensor.shape, generator=generator) * math.sqrt(2.0 / fan_in))


def bias_init_(tensor: torch.Tensor, fan_in: int, generator: torch.Generator) -> None:
    # uniform +-1/sqrt(fan_in): filters then threshold at varied input levels,
    # which lets pooled features encode absolute intensity tiers
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        tensor.copy_((torch.rand(tensor.shape, generator=generator) * 2.0 - 1.0) * bound)


class TinyBackbone(nn.Module):
    """Four stride-2 conv blocks, 3 -> 16 -> 32 -> 64 -> 64."""

    feature_depth = TINY_CHANNELS[-1]

    def __init__(self, generator: torch.Generator | None = None):
        super().__init__()
        generator = generator or torch.Generator().manual_seed(0)
        layers = []
        c_in = 3
        for c_out in TINY_CHANNELS:
            conv = nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1)
            he_init_(conv.weight, fan_in=c_in * 9, generator=generator)
            bias_init_(conv.bias, fan_in=c_in * 9, generator=generator)
            layers += [conv, nn.LeakyReLU(0.1)]
            c_in = c_out
        self.blocks = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.blocks(x)


class ScriptedBackboneAdapter(nn.Module):
    """Wraps a TorchScript feature extractor loaded from the weight cache.

    The scripted module must map NCHW float batches to NCHW feature maps
    whose channel count equals the spec's feature_depth. Parameters are
    frozen; these backbones act as fixed feature extractors.
    """

    def __init__(self, spec: BackboneSpec, scripted: torch.jit.ScriptModule):
        super().__init__()
        self.scripted = scripted
        self.feature_depth = spec.feature_depth
        if spec.pretrained:
            mean, std = _PRETRAINED_NORM[spec.name]
            self.register_buffer("norm_mean", torch.tensor(mean).view(1, 3, 1, 1))
            self.register_buffer("norm_std", torch.tensor(std).view(1, 3, 1, 1))
        else:
            self.norm_mean = None
            self.norm_std = None
        for p in self.scripted.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.norm_mean is not None:
            x = (x - self.norm_mean) / self.norm_std
        out = self.scripted(x)
        if out.ndim != 4 or out.shape[1] != self.feature_depth:
            raise SpecMismatch(
                f"adapter produced {tuple(out.shape)}, expected depth {self.feature_depth}"
            )
        return out


def resolve_weights_dir(weights_dir: str | Path | None = None) -> Path:
    if weights_dir is not None:
        return Path(weights_dir)
    env = os.environ.get(WEIGHTS_DIR_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "fruitband" / "weights"


def build_backbone(spec: BackboneSpec, generator: torch.Generator | None = None,
                   weights_dir: str | Path | None = None) -> nn.Module:
    """Instantiate the backbone for a spec.

    tiny needs no assets; named backbones load <weights_dir>/<name>.pt and
    raise PretrainedWeightsUnavailable when the asset is missing. No network
    access ever happens here.
    """
    if spec.name == "tiny":
        return TinyBackbone(generator=generator)
    asset = resolve_weights_dir(weights_dir) / f"{spec.name}.pt"
    if not asset.is_file():
        raise PretrainedWeightsUnavailable(
            f"no weight asset for {spec.name!r}: expected {asset}"
        )
    try:
        scripted = torch.jit.load(str(asset), map_location="cpu")
    except Exception as exc:
        raise PretrainedWeightsUnavailable(f"cannot load {asset}: {exc}") from exc
    adapter = ScriptedBackboneAdapter(spec, scripted)
    # validate the advertised depth with a dummy forward
    h, w, _ = spec.input_size
    with torch.no_grad():
        adapter(torch.zeros(1, 3, h, w))
    return adapter


def backbone_is_trainable(module: nn.Module) -> bool:
    return isinstance(module, TinyBackbone)
