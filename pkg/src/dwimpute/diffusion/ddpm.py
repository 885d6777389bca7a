"""Training, ancestral sampling and evaluation of the T1-conditioned FA denoiser."""
from __future__ import annotations

import json
import logging
import math
import time
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..hashing import digest
from ..metrics import image_metrics
from ..volume import Volume3D
from .schedule import NoiseSchedule
from .unet import DenoiserSpec, build_denoiser

log = logging.getLogger(__name__)


@dataclass
class DdpmTrainConfig:
    epochs: int = 300
    learning_rate: float = 5e-5
    batch_size: int = 4
    seed: int = 0
    max_steps: int | None = None
    mixed_precision: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("epochs, learning_rate and batch_size must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DdpmCheckpoint:
    model: torch.nn.Module
    spec: DenoiserSpec
    schedule: NoiseSchedule
    meta: dict = field(default_factory=dict)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.model.state_dict(), directory / "weights.pt")
        meta = dict(self.meta, spec=self.spec.to_dict(), schedule=self.schedule.to_dict())
        (directory / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")

    @classmethod
    def load(cls, directory) -> "DdpmCheckpoint":
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text())
        spec = DenoiserSpec.from_dict(meta.pop("spec"))
        schedule = NoiseSchedule.from_dict(meta.pop("schedule"))
        model = build_denoiser(spec)
        model.load_state_dict(torch.load(directory / "weights.pt", weights_only=True))
        model.eval()
        return cls(model, spec, schedule, meta)

    @property
    def fingerprint(self) -> str:
        return self.meta.get("config_hash") or digest({"spec": self.spec.to_dict(), "schedule": self.schedule.to_dict()})


def _stack_pairs(paired):
    if not paired:
        raise ValueError("empty paired training set")
    dims = paired[0][0].dims
    for t1, fa in paired:
        for v in (t1, fa):
            if v.dims != dims:
                raise ValueError(f"dim mismatch: {v.dims} vs {dims}")
            if v.range_tag != "unit":
                raise ValueError("training volumes must be unit-range")
    t1 = torch.from_numpy(np.stack([p[0].voxels for p in paired]))[:, None]
    fa = torch.from_numpy(np.stack([p[1].voxels for p in paired]))[:, None]
    return t1, fa


def noise_prediction_loss(model, t1, fa, t, eps, schedule: NoiseSchedule):
    """MSE between the predicted and the injected noise on the FA channel."""
    abar = torch.as_tensor(schedule.alpha_bars, dtype=fa.dtype)[t].reshape(-1, 1, 1, 1, 1)
    x_t = abar.sqrt() * fa + (1.0 - abar).sqrt() * eps
    pred = model(torch.cat([t1, x_t], dim=1), t)
    return F.mse_loss(pred, eps)


def _config_hash(cfg, spec, schedule, dims):
    return digest({"train": cfg.to_dict(), "spec": spec.to_dict(), "schedule": schedule.to_dict(), "dims": list(dims)})


def train_ddpm(paired, cfg: DdpmTrainConfig, spec: DenoiserSpec, schedule: NoiseSchedule,
               val_pairs=None, device="cpu") -> DdpmCheckpoint:
    """Fit the denoiser on (T1, FA) volume pairs.

    Each step draws t uniformly, Gaussian noise per voxel, noises the FA
    volume, feeds [T1, noisy FA] to the model and regresses the noise.
    Validation loss (if ``val_pairs`` given) is recorded, never acted on.
    """
    t1_all, fa_all = _stack_pairs(paired)
    dims = tuple(t1_all.shape[2:])
    if spec.dims is None:
        spec = DenoiserSpec.from_dict(dict(spec.to_dict(), dims=list(dims)))
    elif tuple(spec.dims) != dims:
        raise ValueError(f"spec declares dims {spec.dims}, data has {dims}")

    model = build_denoiser(spec, seed=cfg.seed).to(device)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(cfg.seed)
    n = len(t1_all)
    amp = (torch.autocast(device_type=torch.device(device).type, dtype=torch.bfloat16)
           if cfg.mixed_precision else nullcontext())

    step_losses, epoch_losses, val_losses = [], [], []
    steps = 0
    start = time.time()
    for epoch in range(cfg.epochs):
        model.train()
        order = torch.randperm(n, generator=gen)
        batch_losses = []
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            t = torch.randint(0, schedule.T, (len(idx),), generator=gen)
            eps = torch.randn(fa_all[idx].shape, generator=gen)
            with amp:
                loss = noise_prediction_loss(model, t1_all[idx].to(device), fa_all[idx].to(device),
                                             t.to(device), eps.to(device), schedule)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            batch_losses.append(loss.item())
            steps += 1
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
        step_losses.extend(batch_losses)
        epoch_losses.append(float(np.mean(batch_losses)))
        if val_pairs:
            val_losses.append(validation_loss(model, val_pairs, schedule, seed=cfg.seed))
        log.debug("ddpm epoch %d loss %.5f", epoch, epoch_losses[-1])
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            break

    model.eval()
    meta = {
        "epochs_completed": len(epoch_losses),
        "steps": steps,
        "final_loss": epoch_losses[-1],
        "seed": cfg.seed,
        "config_hash": _config_hash(cfg, spec, schedule, dims),
        "train_config": cfg.to_dict(),
        "step_losses": step_losses,
        "epoch_losses": epoch_losses,
        "val_losses": val_losses,
        "train_seconds": time.time() - start,
    }
    return DdpmCheckpoint(model.cpu(), spec, schedule, meta)


@torch.no_grad()
def validation_loss(model, pairs, schedule: NoiseSchedule, seed: int = 0) -> float:
    t1, fa = _stack_pairs(pairs)
    gen = torch.Generator().manual_seed(seed + 1)
    t = torch.randint(0, schedule.T, (len(t1),), generator=gen)
    eps = torch.randn(fa.shape, generator=gen)
    was_training = model.training
    model.eval()
    loss = noise_prediction_loss(model, t1, fa, t, eps, schedule).item()
    model.train(was_training)
    return loss


def reverse_step(x_t, t: int, eps_hat, schedule: NoiseSchedule, z=None):
    """One ancestral step: x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t) + sqrt(beta_t) z.

    The noise term is dropped at t = 0 or when ``z`` is None.
    """
    beta = float(schedule.betas[t])
    alpha = 1.0 - beta
    abar = float(schedule.alpha_bars[t])
    mean = (x_t - (beta / math.sqrt(1.0 - abar)) * eps_hat) / math.sqrt(alpha)
    if t == 0 or z is None:
        return mean
    return mean + math.sqrt(beta) * z


def _generator(rng) -> torch.Generator:
    if isinstance(rng, torch.Generator):
        return rng
    if isinstance(rng, np.random.Generator):
        rng = int(rng.integers(0, 2 ** 63 - 1))
    return torch.Generator().manual_seed(int(rng))


@torch.no_grad()
def sample_conditional_batch(t1s, ckpt: DdpmCheckpoint, seeds, clip_x0: bool = False,
                             batch_size: int = 16) -> list:
    """Sample one FA volume per T1 volume; sample i draws its noise only from ``seeds[i]``."""
    if len(t1s) != len(seeds):
        raise ValueError("need one seed per T1 volume")
    dims = ckpt.spec.dims
    for v in t1s:
        if dims is not None and tuple(v.dims) != tuple(dims):
            raise ValueError(f"T1 dims {v.dims} do not match checkpoint dims {tuple(dims)}")
        if v.range_tag != "unit":
            raise ValueError("T1 must be unit-range")
    model, sched = ckpt.model, ckpt.schedule
    model.eval()
    abars = sched.alpha_bars
    out = []
    for start in range(0, len(t1s), batch_size):
        chunk = t1s[start:start + batch_size]
        gens = [_generator(s) for s in seeds[start:start + batch_size]]
        cond = torch.from_numpy(np.stack([v.voxels for v in chunk]))[:, None]

        def noise():
            return torch.stack([torch.randn(cond.shape[1:], generator=g) for g in gens])

        x = noise()
        for t in range(sched.T - 1, -1, -1):
            eps_hat = model(torch.cat([cond, x], dim=1), torch.full((len(chunk),), t))
            if clip_x0:
                x0 = ((x - math.sqrt(1 - abars[t]) * eps_hat) / math.sqrt(abars[t])).clamp(0, 1)
                eps_hat = (x - math.sqrt(abars[t]) * x0) / math.sqrt(1 - abars[t])
            x = reverse_step(x, t, eps_hat, sched, noise() if t > 0 else None)
        x = x.clamp(0.0, 1.0).numpy()
        out.extend(Volume3D(x[i, 0], v.spacing_mm, "unit") for i, v in enumerate(chunk))
    return out


def sample_conditional(t1: Volume3D, ckpt: DdpmCheckpoint, rng=0, clip_x0: bool = False) -> Volume3D:
    return sample_conditional_batch([t1], ckpt, [rng], clip_x0=clip_x0)[0]


def evaluate_translation(ckpt, test_pairs, seed: int = 0, sampler=None) -> dict:
    """Mean SSIM-3D, PSNR, L1 and MSE of sampled FA against the real FA.

    ``sampler(list_of_t1) -> list_of_fa`` replaces DDPM sampling when given.
    """
    if not test_pairs:
        raise ValueError("empty test set")
    t1s = [p[0] for p in test_pairs]
    if sampler is None:
        preds = sample_conditional_batch(t1s, ckpt, [seed + i for i in range(len(t1s))])
    else:
        preds = list(sampler(t1s))
    reports = [image_metrics(pred, fa) for pred, (_, fa) in zip(preds, test_pairs)]
    return {
        "ssim3d": float(np.mean([r.ssim3d for r in reports])),
        "psnr_db": float(np.mean([r.psnr_db for r in reports])),
        "l1": float(np.mean([r.l1 for r in reports])),
        "mse": float(np.mean([r.mse for r in reports])),
        "n": len(reports),
    }
