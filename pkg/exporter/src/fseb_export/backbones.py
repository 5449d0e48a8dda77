"""Pre-trained CNN backbones as fixed feature extractors.

Each backbone is cut at its penultimate pooled features: the final conv
stage followed by global average pooling and a flatten.  Classifier heads
are dropped.  Weights are either the published ImageNet weights or a
seeded random initialization (for offline/deterministic runs); the
backbones are never fine-tuned here.
"""

from __future__ import annotations

import torch
from torch import nn
from torchvision import models

SUPPORTED = ("resnet18", "resnet34", "mobilenetv2", "vgg16", "efficientnet")

_BUILDERS = {
    "resnet18": (models.resnet18, "ResNet18_Weights"),
    "resnet34": (models.resnet34, "ResNet34_Weights"),
    "mobilenetv2": (models.mobilenet_v2, "MobileNet_V2_Weights"),
    "vgg16": (models.vgg16, "VGG16_Weights"),
    "efficientnet": (models.efficientnet_b0, "EfficientNet_B0_Weights"),
}


class UnknownBackboneError(ValueError):
    pass


def build_extractor(name: str, weights: str = "pretrained",
                    seed: int = 0) -> tuple[nn.Module, str]:
    """Return (feature extractor in eval mode, weight-version tag)."""
    if name not in _BUILDERS:
        raise UnknownBackboneError(
            f"unknown backbone {name!r}; supported: {', '.join(SUPPORTED)}")
    builder, weights_enum_name = _BUILDERS[name]
    if weights == "pretrained":
        weights_enum = getattr(models, weights_enum_name).DEFAULT
        model = builder(weights=weights_enum)
        tag = str(weights_enum)
    elif weights == "random":
        torch.manual_seed(seed)
        model = builder(weights=None)
        tag = f"random-seed{seed}"
    else:
        raise ValueError(f"weights must be 'pretrained' or 'random', got {weights!r}")
    model.eval()
    if name.startswith("resnet"):
        # resnet already ends in a global avgpool; drop only the fc head
        extractor = nn.Sequential(*list(model.children())[:-1], nn.Flatten(1))
    else:
        extractor = nn.Sequential(model.features, nn.AdaptiveAvgPool2d(1),
                                  nn.Flatten(1))
    extractor.eval()
    for p in extractor.parameters():
        p.requires_grad_(False)
    return extractor, tag


def feature_dim(extractor: nn.Module) -> int:
    """Probe the output width with a dummy forward pass."""
    with torch.no_grad():
        out = extractor(torch.zeros(1, 3, 224, 224))
    return int(out.shape[1])
