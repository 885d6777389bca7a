"""Unimodal and late-fusion bimodal 3D CNN classifiers."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

MIN_INPUT_DIM = 4


@dataclass
class BackboneSpec:
    block_widths: tuple = (32, 64, 128, 256, 256)
    width_scale: int = 1
    head_width: int = 64
    dropout_rate: float = 0.2
    norm_groups: int = 8
    num_classes: int = 3
    conv_kernel: int = 3

    def __post_init__(self):
        self.block_widths = tuple(int(w) for w in self.block_widths)
        if len(self.block_widths) != 5:
            raise ValueError("backbone has exactly five convolutional blocks")
        if any(w % self.width_scale for w in self.block_widths):
            raise ValueError(f"width_scale {self.width_scale} must divide {self.block_widths}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be a positive odd integer")

    @property
    def widths(self) -> tuple:
        return tuple(w // self.width_scale for w in self.block_widths)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_widths"] = list(self.block_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneSpec":
        return cls(**d)


def pooling_plan(dims, n_blocks: int = 5) -> list:
    """Which blocks max-pool. Inputs of 32+ voxels pool in every block;
    smaller inputs stop pooling once an axis would fall below 2."""
    dims = [int(d) for d in dims]
    if len(dims) != 3 or min(dims) < MIN_INPUT_DIM:
        raise ValueError(f"input dims {tuple(dims)} too small; need >= {MIN_INPUT_DIM} per axis")
    if min(dims) >= 2 ** n_blocks:
        return [True] * n_blocks
    plan = []
    for _ in range(n_blocks):
        ok = all(d // 2 >= 2 for d in dims)
        plan.append(ok)
        if ok:
            dims = [d // 2 for d in dims]
    return plan


def _gn(channels, groups):
    return nn.GroupNorm(math.gcd(channels, groups), channels)


class Trunk(nn.Module):
    """Five conv blocks plus the 1x1x1 head, ending in global average pooling."""

    def __init__(self, spec: BackboneSpec, input_dims):
        super().__init__()
        layers = []
        cin = 1
        for width, pool in zip(spec.widths, pooling_plan(input_dims)):
            layers += [
                nn.Conv3d(cin, width, spec.conv_kernel, padding=spec.conv_kernel // 2),
                _gn(width, spec.norm_groups),
                nn.MaxPool3d(2) if pool else nn.Identity(),
                nn.ReLU(),
            ]
            cin = width
        layers += [
            nn.Conv3d(cin, spec.head_width, 1),
            _gn(spec.head_width, spec.norm_groups),
            nn.ReLU(),
            nn.AdaptiveAvgPool3d(1),
            nn.Flatten(),
        ]
        self.layers = nn.Sequential(*layers)

    def forward(self, x):
        return self.layers(x)


class _Classifier(nn.Module):
    n_inputs = 1

    def forward(self, *xs):
        return torch.softmax(self.logits(*xs), dim=1)


class UnimodalCNN(_Classifier):
    n_inputs = 1

    def __init__(self, spec: BackboneSpec, input_dims):
        super().__init__()
        self.spec, self.input_dims = spec, tuple(input_dims)
        self.trunk = Trunk(spec, input_dims)
        self.dropout = nn.Dropout(spec.dropout_rate)
        self.fc = nn.Linear(spec.head_width, spec.num_classes)

    def logits(self, x):
        return self.fc(self.dropout(self.trunk(x)))


class BimodalCNN(_Classifier):
    """Two identical trunks (T1, DWI) whose pooled features are concatenated."""

    n_inputs = 2

    def __init__(self, spec: BackboneSpec, input_dims):
        super().__init__()
        self.spec, self.input_dims = spec, tuple(input_dims)
        self.trunk_t1 = Trunk(spec, input_dims)
        self.trunk_dwi = Trunk(spec, input_dims)
        self.dropout = nn.Dropout(spec.dropout_rate)
        self.fc = nn.Linear(2 * spec.head_width, spec.num_classes)

    def logits(self, x_t1, x_dwi):
        fused = torch.cat([self.trunk_t1(x_t1), self.trunk_dwi(x_dwi)], dim=1)
        return self.fc(self.dropout(fused))


def _seeded(cls, spec, input_dims, seed):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return cls(spec, input_dims)


def build_unimodal(spec: BackboneSpec, input_dims, seed: int = 0) -> UnimodalCNN:
    return _seeded(UnimodalCNN, spec, input_dims, seed)


def build_bimodal(spec: BackboneSpec, input_dims, seed: int = 0) -> BimodalCNN:
    return _seeded(BimodalCNN, spec, input_dims, seed)
