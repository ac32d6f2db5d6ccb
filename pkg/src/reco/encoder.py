"""Online / momentum encoder pair: backbone + 2-layer projection head, EMA weight updates."""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass
from typing import Mapping

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError, NumericError, ParameterError

NORM_TOL = 1e-5


class Branch(str, enum.Enum):
    ONLINE = "q"
    MOMENTUM = "k"


@dataclass
class EmbeddingBatch:
    vectors: torch.Tensor
    branch: Branch

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2:
            raise ParameterError("embeddings must be a (batch, dim) matrix")
        if self.branch is Branch.MOMENTUM and self.vectors.requires_grad:
            raise ContractError("momentum-branch embeddings must not carry gradient")

    @property
    def grad_enabled(self) -> bool:
        return self.vectors.requires_grad

    def __len__(self) -> int:
        return self.vectors.shape[0]


def check_unit_norm(x: torch.Tensor, name: str = "embeddings", tol: float = 1e-4) -> None:
    norms = x.detach().norm(dim=-1)
    if norms.numel() and (norms - 1).abs().max() > tol:
        raise ContractError(f"{name} must be l2-normalised (max |norm-1| = {(norms - 1).abs().max():.3g})")


def _conv_block(cin: int, cout: int, pool: bool) -> list[nn.Module]:
    layers: list[nn.Module] = [
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    ]
    if pool:
        layers.append(nn.MaxPool2d(2))
    return layers


class SmallConvNet(nn.Module):
    """Four conv-BN-ReLU blocks (32-64-128-256), ~0.39M parameters, global average pooled."""

    def __init__(self, in_channels: int = 3, widths: tuple[int, ...] = (32, 64, 128, 256)):
        super().__init__()
        layers: list[nn.Module] = []
        cin = in_channels
        for i, w in enumerate(widths):
            layers += _conv_block(cin, w, pool=i < len(widths) - 1)
            cin = w
        self.features = nn.Sequential(*layers)
        self.out_dim = cin

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.adaptive_avg_pool2d(self.features(x), 1).flatten(1)


def _resnet(name: str, image_size: int) -> tuple[nn.Module, int]:
    from torchvision import models

    net = getattr(models, name)(weights=None)
    if image_size <= 64:
        # small-image stem: 3x3 stride-1 conv, no max-pool
        net.conv1 = nn.Conv2d(3, 64, 3, 1, 1, bias=False)
        net.maxpool = nn.Identity()
    out_dim = net.fc.in_features
    net.fc = nn.Identity()
    return net, out_dim


def build_backbone(name: str, image_size: int = 32) -> tuple[nn.Module, int]:
    if name == "small":
        net = SmallConvNet()
        return net, net.out_dim
    if name in ("resnet18", "resnet50"):
        return _resnet(name, image_size)
    raise ParameterError(f"unknown encoder preset {name!r} (small, resnet18, resnet50)")


class Encoder(nn.Module):
    def __init__(self, backbone: str = "small", embedding_dim: int = 128, image_size: int = 32):
        super().__init__()
        self.backbone, width = build_backbone(backbone, image_size)
        self.head = nn.Sequential(nn.Linear(width, width), nn.ReLU(inplace=True), nn.Linear(width, embedding_dim))
        self.feature_dim = width
        self.embedding_dim = embedding_dim

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.head(self.backbone(x)), dim=1)


def build_encoder(cfg) -> Encoder:
    return Encoder(cfg.encoder, cfg.embedding_dim, cfg.image_size)


def _first_nonfinite_layer(model: nn.Module, x: torch.Tensor) -> str:
    found: list[str] = []
    hooks = []
    for name, mod in model.named_modules():
        if len(list(mod.children())) == 0:
            def hook(_m, _inp, out, name=name):
                if not found and torch.is_tensor(out) and not torch.isfinite(out).all():
                    found.append(name)
            hooks.append(mod.register_forward_hook(hook))
    try:
        with torch.no_grad():
            model(x)
    finally:
        for h in hooks:
            h.remove()
    return found[0] if found else "<output>"


def encode(model: Encoder, images: torch.Tensor, branch: Branch = Branch.ONLINE) -> EmbeddingBatch:
    if images.shape[0] == 0:
        raise ParameterError("cannot encode an empty batch")
    if branch is Branch.MOMENTUM:
        with torch.no_grad():
            out = model(images)
    else:
        out = model(images)
    if not torch.isfinite(out).all():
        was_training = model.training
        layer = _first_nonfinite_layer(model.eval(), images)
        model.train(was_training)
        raise NumericError(f"non-finite activations first produced by layer {layer!r}")
    return EmbeddingBatch(out, branch)


def init_momentum(online: nn.Module) -> nn.Module:
    """Independent deep copy of ``online`` with gradients disabled."""
    for name, p in online.named_parameters():
        if not torch.isfinite(p).all():
            raise NumericError(f"online parameter {name} is not finite")
    momentum = copy.deepcopy(online)
    for p in momentum.parameters():
        p.requires_grad_(False)
    return momentum


def _param_map(obj) -> Mapping[str, torch.Tensor]:
    if isinstance(obj, nn.Module):
        return dict(obj.named_parameters())
    return obj


@torch.no_grad()
def ema_update(momentum, online, m: float) -> None:
    """In place: momentum <- m * momentum + (1 - m) * online, parameters only (not BN buffers)."""
    if not 0.0 <= m <= 1.0:
        raise ParameterError(f"momentum coefficient must lie in [0, 1], got {m}")
    target, source = _param_map(momentum), _param_map(online)
    if target.keys() != source.keys():
        raise ParameterError("online and momentum parameter names differ")
    for name, p_k in target.items():
        p_q = source[name]
        if p_k.shape != p_q.shape:
            raise ParameterError(f"shape mismatch for {name}: {tuple(p_k.shape)} vs {tuple(p_q.shape)}")
        p_k.mul_(m).add_(p_q.detach(), alpha=1.0 - m)


@dataclass
class EncoderState:
    online: Encoder
    momentum: Encoder
    m: float = 0.999

    @classmethod
    def create(cls, online: Encoder, m: float = 0.999) -> "EncoderState":
        return cls(online, init_momentum(online), m)

    def ema_update(self) -> "EncoderState":
        ema_update(self.momentum, self.online, self.m)
        return self
