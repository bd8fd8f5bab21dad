"""Depth regression models: a backbone plus a single linear output unit.

Three backbones share the scalar-head contract: ``pretrained_conv`` is a
VGG16 initialized from ImageNet classification weights with its final
classifier layer swapped for one linear unit; ``tiny_conv`` is a small
convnet trainable from scratch in minutes for desk-scale experiments;
``mlp_on_features`` flattens pixels through an (optionally empty) MLP,
which with no hidden layers is exactly a linear model and gives a convex
training surrogate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .levels import clamp_depth_cm

log = logging.getLogger(__name__)

BACKBONES = ("pretrained_conv", "tiny_conv", "mlp_on_features")


@dataclass
class ModelConfig:
    backbone: str = "tiny_conv"
    input_size: tuple[int, int, int] = (512, 512, 3)  # (H, W, C)
    tiny_channels: tuple[int, ...] = (12, 24, 48)
    mlp_hidden: tuple[int, ...] = ()
    freeze_backbone: bool = False
    pretrained: bool = True  # only meaningful for pretrained_conv

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}; choose from {BACKBONES}")
        h, w, c = self.input_size
        if h <= 0 or w <= 0 or c <= 0:
            raise ValueError(f"input_size must be positive, got {self.input_size}")


class TinyConv(nn.Module):
    """A few conv blocks, global average pooling, one linear output."""

    def __init__(self, channels=(12, 24, 48), in_channels=3):
        super().__init__()
        layers = []
        c_in = in_channels
        for c in channels:
            layers += [nn.Conv2d(c_in, c, 3, padding=1), nn.ReLU(inplace=True), nn.MaxPool2d(2)]
            c_in = c
        layers += [nn.Conv2d(c_in, c_in, 3, padding=1), nn.ReLU(inplace=True)]
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(c_in, 1)

    def forward(self, x):
        x = self.pool(self.features(x)).flatten(1)
        return self.head(x).squeeze(-1)


class MlpOnPixels(nn.Module):
    def __init__(self, input_size, hidden=()):
        super().__init__()
        h, w, c = input_size
        dims = [h * w * c, *hidden]
        layers = [nn.Flatten()]
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            layers += [nn.Linear(d_in, d_out), nn.ReLU(inplace=True)]
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(dims[-1], 1)

    def forward(self, x):
        return self.head(self.body(x)).squeeze(-1)


class Vgg16Regressor(nn.Module):
    """ImageNet-pretrained VGG16 with the top classifier layer replaced by
    a single linear unit combining the 4096 penultimate features."""

    def __init__(self, pretrained=True):
        super().__init__()
        from torchvision import models

        weights = None
        if pretrained:
            try:
                weights = models.VGG16_Weights.IMAGENET1K_V1
                vgg = models.vgg16(weights=weights)
            except Exception as exc:  # weights not downloadable in this env
                log.warning("could not fetch VGG16 pretrained weights (%s); "
                            "falling back to random init", exc)
                vgg = models.vgg16(weights=None)
        else:
            vgg = models.vgg16(weights=None)
        in_features = vgg.classifier[-1].in_features
        vgg.classifier[-1] = nn.Linear(in_features, 1)
        nn.init.normal_(vgg.classifier[-1].weight, std=1e-3)
        nn.init.zeros_(vgg.classifier[-1].bias)
        self.vgg = vgg

    def forward(self, x):
        return self.vgg(x).squeeze(-1)


def build_model(cfg: ModelConfig) -> nn.Module:
    """Construct a model mapping (B, C, H, W) image batches to (B,) depths."""
    if cfg.backbone == "tiny_conv":
        model = TinyConv(cfg.tiny_channels, in_channels=cfg.input_size[2])
    elif cfg.backbone == "mlp_on_features":
        model = MlpOnPixels(cfg.input_size, cfg.mlp_hidden)
    else:
        model = Vgg16Regressor(pretrained=cfg.pretrained)
    if cfg.freeze_backbone:
        head = model.head if hasattr(model, "head") else model.vgg.classifier[-1]
        head_params = set(head.parameters())
        for p in model.parameters():
            if p not in head_params:
                p.requires_grad_(False)
    return model


def to_batch(images: np.ndarray) -> torch.Tensor:
    """Convert (B, H, W, C) or (H, W, C) float arrays in [0,1] to a torch batch."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected (B, H, W, C) images, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


@torch.no_grad()
def predict(model: nn.Module, images: np.ndarray) -> np.ndarray:
    """Depth predictions in cm, clamped to [0, 170] for reporting.

    Clamping happens only here, never inside training losses, so gradients
    stay intact during optimization.
    """
    was_training = model.training
    model.eval()
    try:
        out = model(to_batch(images)).cpu().numpy().reshape(-1)
    finally:
        model.train(was_training)
    return np.array([clamp_depth_cm(float(v)) for v in out])


def save_checkpoint(path: str | Path, model: nn.Module, cfg: ModelConfig, meta: dict) -> Path:
    """Write a self-describing checkpoint: config echo, weights, metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {"model_config": asdict(cfg), "state_dict": model.state_dict(), "meta": dict(meta)},
        path,
    )
    return path


def load_checkpoint(path: str | Path) -> tuple[nn.Module, ModelConfig, dict]:
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    raw = dict(blob["model_config"])
    for key in ("input_size", "tiny_channels", "mlp_hidden"):
        if key in raw and raw[key] is not None:
            raw[key] = tuple(raw[key])
    cfg = ModelConfig(**raw)
    if cfg.backbone == "pretrained_conv":
        cfg.pretrained = False  # weights come from the checkpoint, not the hub
    model = build_model(cfg)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, cfg, blob.get("meta", {})
