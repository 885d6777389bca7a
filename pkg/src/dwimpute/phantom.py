"""Synthetic paired T1 / FA head phantoms.

Each subject is an ellipsoidal brain made of a cortical (grey matter) band,
a white matter shell and a central ventricle. Ventricle size grows and the
cortical band thins from CN to MCI to AD, which gives the classifiers
something to find. The FA map is derived from a diffusion tensor field built
on the same geometry, so T1 -> FA translation is learnable.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .manifest import DIAGNOSES, SPLITS, DatasetManifest, ScanRecord
from .volume import Volume3D, minmax_normalize, write_volume

MIN_DIM = 8

# (ventricle radius fraction, cortical band thickness), both relative to the
# brain's semi-axes
DEFAULT_CLASS_GEOMETRY = {
    "CN": (0.22, 0.22),
    "MCI": (0.30, 0.19),
    "AD": (0.38, 0.16),
}

# T1-only split sizes of the reference cohort; scaled down for defaults
REFERENCE_COUNTS = {
    "train": {"CN": 1505, "MCI": 1821, "AD": 575},
    "val": {"CN": 317, "MCI": 403, "AD": 121},
    "test": {"CN": 294, "MCI": 398, "AD": 167},
}

# tissue intensities before smoothing / normalization
_T1_CSF, _T1_GM, _T1_WM = 0.15, 0.55, 0.85
# eigenvalues in units of 1e-3 mm^2/s
_EIG_CSF = (3.0, 3.0, 3.0)
_EIG_GM = (1.0, 0.75, 0.7)


class EigenTriple(NamedTuple):
    lambda1: float
    lambda2: float
    lambda3: float


def fractional_anisotropy(e) -> np.ndarray | float:
    """FA of one eigenvalue triple, or of an array whose last axis holds triples.

    The all-zero triple has FA 0.
    """
    lam = np.asarray(e, dtype=np.float64)
    if lam.shape[-1] != 3:
        raise ValueError(f"last axis must hold 3 eigenvalues, got shape {lam.shape}")
    if np.any(lam < 0):
        raise ValueError("eigenvalues must be nonnegative")
    # sorting makes the result exactly invariant to eigenvalue order
    l3, l2, l1 = np.moveaxis(np.sort(lam, axis=-1), -1, 0)
    num = np.sqrt((l1 - l2) ** 2 + (l2 - l3) ** 2 + (l3 - l1) ** 2)
    den = np.sqrt(l1 ** 2 + l2 ** 2 + l3 ** 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        fa = np.where(den > 0, math.sqrt(0.5) * num / np.where(den > 0, den, 1.0), 0.0)
    fa = np.clip(fa, 0.0, 1.0)
    return float(fa) if fa.ndim == 0 else fa


@dataclass
class TensorField:
    """Per-voxel diffusion tensor eigenvalues, shape ``dims + (3,)``."""

    triples: np.ndarray
    spacing_mm: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.triples = np.asarray(self.triples, dtype=np.float64)
        if self.triples.ndim != 4 or self.triples.shape[-1] != 3:
            raise ValueError(f"triples must have shape (nx, ny, nz, 3), got {self.triples.shape}")

    @property
    def dims(self):
        return self.triples.shape[:3]


def fa_map(f: TensorField) -> Volume3D:
    return Volume3D(fractional_anisotropy(f.triples), f.spacing_mm, "unit")


@dataclass
class PhantomSpec:
    dims: tuple = (16, 16, 16)
    class_geometry: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_GEOMETRY))
    t1_noise_sigma: float = 0.03
    fa_noise_sigma: float = 0.05
    seed: int = 0
    spacing_mm: tuple = (2.0, 2.0, 2.0)
    scans_per_subject: int = 1

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        self.class_geometry = {k: tuple(float(x) for x in v) for k, v in self.class_geometry.items()}
        if set(self.class_geometry) != set(DIAGNOSES):
            raise ValueError(f"class_geometry needs exactly {DIAGNOSES}")
        radii = [self.class_geometry[d][0] for d in DIAGNOSES]
        if not all(a < b for a, b in zip(radii, radii[1:])):
            raise ValueError(f"ventricle radius fractions must increase CN < MCI < AD, got {radii}")
        for d, (radius, band) in self.class_geometry.items():
            if not (0 < radius and 0 < band and radius + band < 0.9):
                raise ValueError(f"{d}: geometry {radius, band} leaves no white matter")
        if self.t1_noise_sigma < 0 or self.fa_noise_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.scans_per_subject < 1:
            raise ValueError("scans_per_subject must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["spacing_mm"] = list(self.spacing_mm)
        d["class_geometry"] = {k: list(v) for k, v in self.class_geometry.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        return cls(**d)


def scaled_counts(scale: float = 0.02) -> dict:
    """Reference cohort split sizes scaled down, at least one subject per cell."""
    return {
        split: {dx: max(1, round(n * scale)) for dx, n in per.items()}
        for split, per in REFERENCE_COUNTS.items()
    }


def subject_rng(seed: int, split: str, diagnosis: str, index: int) -> np.random.Generator:
    # keyed on position within (split, diagnosis) so growing one cell leaves others alone
    return np.random.default_rng([seed, SPLITS.index(split), DIAGNOSES.index(diagnosis), index])


def _sample_geometry(spec: PhantomSpec, diagnosis: str, rng: np.random.Generator) -> dict:
    radius, band = spec.class_geometry[diagnosis]
    dims = np.array(spec.dims, dtype=np.float64)
    return {
        "center": (dims - 1) / 2 + rng.uniform(-0.5, 0.5, 3),
        "semi_axes": 0.42 * dims * rng.uniform(0.94, 1.06, 3),
        "ventricle": radius + rng.normal(0.0, 0.012),
        "band": band + rng.normal(0.0, 0.008),
    }


def _radial(spec: PhantomSpec, geom: dict) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in spec.dims], indexing="ij")
    return np.sqrt(sum(((g - c) / a) ** 2 for g, c, a in zip(grids, geom["center"], geom["semi_axes"])))


def _render(spec: PhantomSpec, geom: dict, rng: np.random.Generator):
    r = _radial(spec, geom)
    vent, band = geom["ventricle"], geom["band"]
    brain = r <= 1.0
    csf = r <= vent
    gm = brain & (r > 1.0 - band)
    wm = brain & ~gm & ~csf

    t1 = np.zeros(spec.dims)
    t1[csf] = _T1_CSF
    t1[gm] = _T1_GM
    t1[wm] = _T1_WM
    t1 = ndimage.gaussian_filter(t1, 0.6, mode="constant")
    t1 = t1 + rng.normal(0.0, spec.t1_noise_sigma, spec.dims)

    # white matter FA peaks mid-shell and falls toward both tissue borders
    s = np.clip((r - vent) / max(1.0 - band - vent, 1e-6), 0.0, 1.0)
    perp = 0.35 + 0.3 * (2.0 * s - 1.0) ** 2
    eig = np.zeros(spec.dims + (3,))
    eig[csf] = _EIG_CSF
    eig[gm] = _EIG_GM
    eig[wm, 0] = 1.6
    eig[wm, 1] = perp[wm]
    eig[wm, 2] = perp[wm]
    for k in range(3):
        eig[..., k] = ndimage.gaussian_filter(eig[..., k], 0.6, mode="constant")
    noise = rng.normal(0.0, spec.fa_noise_sigma, spec.dims + (3,))
    eig[brain] = np.maximum(eig[brain] * (1.0 + noise[brain]), 0.0)

    t1_vol = minmax_normalize(Volume3D(t1, spec.spacing_mm, "raw"))
    fa_vol = fa_map(TensorField(eig, spec.spacing_mm))
    return t1_vol, fa_vol


def generate_subject(spec: PhantomSpec, diagnosis: str, subject_rng: np.random.Generator,
                     subject_id: str = "subject", scan_id: str | None = None,
                     noise_rng: np.random.Generator | None = None):
    """Render one paired (T1, FA) scan.

    Geometry is drawn from ``subject_rng``; noise comes from ``noise_rng`` when
    given (repeat scans of one subject share geometry), else from
    ``subject_rng``.
    """
    if min(spec.dims) < MIN_DIM:
        raise ValueError(f"phantom needs at least {MIN_DIM} voxels per axis, got {spec.dims}")
    if diagnosis not in DIAGNOSES:
        raise ValueError(f"unknown diagnosis {diagnosis!r}")
    geom = _sample_geometry(spec, diagnosis, subject_rng)
    t1, fa = _render(spec, geom, noise_rng if noise_rng is not None else subject_rng)
    scan_id = scan_id or subject_id
    record = ScanRecord(
        subject_id=subject_id, scan_id=scan_id, diagnosis=diagnosis,
        has_t1=True, has_dwi=True,
        t1_path=f"volumes/{scan_id}_t1.vol", dwi_path=f"volumes/{scan_id}_fa.vol",
    )
    return t1, fa, record


def ventricle_voxel_count(t1: Volume3D, threshold: float = 0.45) -> int:
    """Size of the dark connected region containing the volume centre."""
    dark = t1.voxels < threshold
    labels, _ = ndimage.label(dark)
    centre = tuple(n // 2 for n in t1.dims)
    lab = labels[centre]
    return int((labels == lab).sum()) if lab else 0


def _paired_allocation(n_per_dx: dict, fraction: float) -> dict:
    """Split ceil(fraction * n) paired subjects across diagnoses by largest remainder."""
    n = sum(n_per_dx.values())
    k = math.ceil(round(fraction * n, 9))
    quotas = {dx: fraction * c for dx, c in n_per_dx.items()}
    alloc = {dx: min(n_per_dx[dx], math.floor(round(q, 9))) for dx, q in quotas.items()}
    order = sorted(DIAGNOSES, key=lambda dx: (-(quotas.get(dx, 0) - alloc.get(dx, 0)), DIAGNOSES.index(dx)))
    while sum(alloc.values()) < k:
        for dx in order:
            if sum(alloc.values()) >= k:
                break
            if alloc.get(dx, 0) < n_per_dx.get(dx, 0):
                alloc[dx] += 1
    return alloc


def generate_dataset(spec: PhantomSpec, counts: dict, paired_fraction: float, out_dir) -> DatasetManifest:
    """Write a phantom cohort under ``out_dir`` and return its manifest.

    ``counts`` maps split -> diagnosis -> number of subjects. In every split
    exactly ceil(paired_fraction * n) subjects keep their FA map; the rest are
    T1-only. The manifest is written to ``out_dir/manifest.json``.
    """
    if not 0.0 <= paired_fraction <= 1.0:
        raise ValueError("paired_fraction must be in [0, 1]")
    out_dir = Path(out_dir)
    records = []
    for split in SPLITS:
        per = {dx: int(counts.get(split, {}).get(dx, 0)) for dx in DIAGNOSES}
        if any(c < 0 for c in per.values()):
            raise ValueError(f"negative count in split {split}")
        alloc = _paired_allocation(per, paired_fraction)
        for dx in DIAGNOSES:
            for i in range(per[dx]):
                subject_id = f"{split}-{dx}-{i:04d}"
                paired = i < alloc[dx]
                for k in range(spec.scans_per_subject):
                    rng = subject_rng(spec.seed, split, dx, i)
                    noise = None if k == 0 else np.random.default_rng(
                        [spec.seed, SPLITS.index(split), DIAGNOSES.index(dx), i, k])
                    scan_id = subject_id if spec.scans_per_subject == 1 else f"{subject_id}-s{k}"
                    t1, fa, rec = generate_subject(spec, dx, rng, subject_id, scan_id, noise)
                    rec.split = split
                    write_volume(t1, out_dir / rec.t1_path)
                    if paired:
                        write_volume(fa, out_dir / rec.dwi_path)
                    else:
                        rec.has_dwi, rec.dwi_path = False, None
                    records.append(rec)
    manifest = DatasetManifest(records, root=out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest


def load_spec_file(path):
    """Read a phantom spec JSON: PhantomSpec fields plus optional counts / paired_fraction."""
    d = json.loads(Path(path).read_text())
    counts = d.pop("counts", None) or scaled_counts()
    paired_fraction = float(d.pop("paired_fraction", 0.25))
    return PhantomSpec.from_dict(d), counts, paired_fraction
