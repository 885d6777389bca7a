"""Conditional 3D residual U-Net that predicts the noise in an FA volume.

Input is two channels (clean T1, noisy FA), output one channel (noise).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn
import torch.nn.functional as F


@dataclass
class DenoiserSpec:
    channel_widths: tuple = (128, 128, 256)
    width_scale: int = 1
    attention_at_final_encoder_stage: bool = True
    residual_blocks_per_stage: int = 2
    norm_groups: int = 8
    time_embedding_dim: int | None = None
    in_channels: int = 2
    out_channels: int = 1
    dims: tuple | None = None

    def __post_init__(self):
        self.channel_widths = tuple(int(c) for c in self.channel_widths)
        if self.dims is not None:
            self.dims = tuple(int(d) for d in self.dims)
        if len(self.channel_widths) != 3:
            raise ValueError("denoiser has exactly 3 stages")
        if self.in_channels != 2 or self.out_channels != 1:
            raise ValueError("denoiser maps 2 input channels (T1, noisy FA) to 1 output channel")
        if any(c % self.width_scale for c in self.channel_widths):
            raise ValueError(f"width_scale {self.width_scale} must divide {self.channel_widths}")
        if self.residual_blocks_per_stage < 1 or self.norm_groups < 1:
            raise ValueError("residual_blocks_per_stage and norm_groups must be positive")
        if self.dims is not None:
            check_dims(self.dims)

    @property
    def widths(self) -> tuple:
        return tuple(c // self.width_scale for c in self.channel_widths)

    @property
    def temb_dim(self) -> int:
        return self.time_embedding_dim or 4 * self.widths[0]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_widths"] = list(self.channel_widths)
        d["dims"] = list(self.dims) if self.dims is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserSpec":
        return cls(**d)


def check_dims(dims) -> None:
    if any(int(d) % 4 for d in dims):
        raise ValueError(f"spatial dims {tuple(dims)} must be divisible by 4 (two stride-2 downsamplings)")


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def _groups(channels: int, groups: int) -> int:
    return math.gcd(channels, groups)


class ResBlock(nn.Module):
    def __init__(self, cin, cout, temb_dim, groups):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin, groups), cin)
        self.conv1 = nn.Conv3d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(temb_dim, cout)
        self.norm2 = nn.GroupNorm(_groups(cout, groups), cout)
        self.conv2 = nn.Conv3d(cout, cout, 3, padding=1)
        self.skip = nn.Conv3d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(F.silu(emb))[:, :, None, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class SelfAttention3D(nn.Module):
    """Single-head attention over all spatial positions."""

    def __init__(self, channels, groups):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(channels, groups), channels)
        self.qkv = nn.Conv3d(channels, 3 * channels, 1)
        self.proj = nn.Conv3d(channels, channels, 1)

    def forward(self, x):
        b, c = x.shape[:2]
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, -1).unbind(1)
        w = torch.softmax(torch.einsum("bci,bcj->bij", q, k) / math.sqrt(c), dim=-1)
        h = torch.einsum("bij,bcj->bci", w, v).reshape(x.shape)
        return x + self.proj(h)


class Stage(nn.Module):
    def __init__(self, cin, cout, n_blocks, temb_dim, groups, attention):
        super().__init__()
        self.blocks = nn.ModuleList(
            ResBlock(cin if i == 0 else cout, cout, temb_dim, groups) for i in range(n_blocks)
        )
        self.attns = nn.ModuleList(
            SelfAttention3D(cout, groups) if attention else nn.Identity() for _ in range(n_blocks)
        )

    def forward(self, x, emb):
        for block, attn in zip(self.blocks, self.attns):
            x = attn(block(x, emb))
        return x


class Upsample(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv3d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class ConditionalUNet3D(nn.Module):
    def __init__(self, spec: DenoiserSpec):
        super().__init__()
        self.spec = spec
        w0, w1, w2 = spec.widths
        td, g, nb = spec.temb_dim, spec.norm_groups, spec.residual_blocks_per_stage
        attn = spec.attention_at_final_encoder_stage
        self.time_mlp = nn.Sequential(nn.Linear(w0, td), nn.SiLU(), nn.Linear(td, td))
        self.conv_in = nn.Conv3d(spec.in_channels, w0, 3, padding=1)

        self.enc = nn.ModuleList([
            Stage(w0, w0, nb, td, g, False),
            Stage(w0, w1, nb, td, g, False),
            Stage(w1, w2, nb, td, g, attn),
        ])
        self.down = nn.ModuleList([
            nn.Conv3d(w0, w0, 3, stride=2, padding=1),
            nn.Conv3d(w1, w1, 3, stride=2, padding=1),
        ])
        # decoder stages consume [upsampled features, encoder skip]
        self.dec = nn.ModuleList([
            Stage(w2 + w2, w2, nb, td, g, attn),
            Stage(w2 + w1, w1, nb, td, g, False),
            Stage(w1 + w0, w0, nb, td, g, False),
        ])
        self.up = nn.ModuleList([Upsample(w2), Upsample(w1)])
        self.norm_out = nn.GroupNorm(_groups(w0, g), w0)
        self.conv_out = nn.Conv3d(w0, spec.out_channels, 3, padding=1)

    def forward(self, x, t):
        if x.shape[1] != self.spec.in_channels:
            raise ValueError(f"expected {self.spec.in_channels} input channels, got {x.shape[1]}")
        check_dims(x.shape[2:])
        t = torch.as_tensor(t).reshape(-1).expand(x.shape[0])
        emb = self.time_mlp(timestep_embedding(t, self.spec.widths[0]).to(x.dtype))

        h = self.conv_in(x)
        skips = []
        for i, stage in enumerate(self.enc):
            h = stage(h, emb)
            skips.append(h)
            if i < len(self.down):
                h = self.down[i](h)
        for i, stage in enumerate(self.dec):
            h = stage(torch.cat([h, skips.pop()], dim=1), emb)
            if i < len(self.up):
                h = self.up[i](h)
        return self.conv_out(F.silu(self.norm_out(h)))


def build_denoiser(spec: DenoiserSpec, seed: int = 0) -> ConditionalUNet3D:
    """Construct the denoiser with parameters initialised from ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return ConditionalUNet3D(spec)
