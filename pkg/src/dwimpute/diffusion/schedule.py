from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..volume import Volume3D


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule of the forward noising process (float64 arrays of length T)."""

    betas: np.ndarray
    beta_start: float
    beta_end: float

    @property
    def T(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def to_dict(self) -> dict:
        return {"kind": "scaled_linear", "T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return scaled_linear_schedule(int(d["T"]), float(d["beta_start"]), float(d["beta_end"]))


def scaled_linear_schedule(T: int = 1000, beta_start: float = 5e-4, beta_end: float = 1.95e-2) -> NoiseSchedule:
    """Betas linear in sqrt(beta) from ``beta_start`` to ``beta_end``, then squared."""
    if T < 2:
        raise ValueError("T must be >= 2")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ValueError("need 0 < beta_start < beta_end < 1")
    frac = np.arange(T, dtype=np.float64) / (T - 1)
    lo, hi = np.sqrt(beta_start), np.sqrt(beta_end)
    betas = (lo + frac * (hi - lo)) ** 2
    betas[0], betas[-1] = beta_start, beta_end
    betas.setflags(write=False)
    return NoiseSchedule(betas, float(beta_start), float(beta_end))


def forward_noise(x0, t: int, epsilon, s: NoiseSchedule):
    """Closed-form sample of x_t given x_0: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    Works on Volume3D (returns a raw-tagged Volume3D) or on plain arrays.
    """
    if not 0 <= t < s.T:
        raise ValueError(f"timestep {t} outside [0, {s.T})")
    as_volume = isinstance(x0, Volume3D)
    a = x0.voxels if as_volume else np.asarray(x0, dtype=np.float64)
    e = epsilon.voxels if isinstance(epsilon, Volume3D) else np.asarray(epsilon, dtype=np.float64)
    if a.shape != e.shape:
        raise ValueError(f"dim mismatch: x0 {a.shape} vs epsilon {e.shape}")
    abar = s.alpha_bars[t]
    out = np.sqrt(abar) * a.astype(np.float64) + np.sqrt(1.0 - abar) * e.astype(np.float64)
    if as_volume:
        return Volume3D(out, x0.spacing_mm, "raw")
    return out
