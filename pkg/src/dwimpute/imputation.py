"""Filling in missing FA volumes and assembling augmented training sets."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .hashing import derive_seed
from .manifest import DIAGNOSES, ScanRecord
from .volume import Volume3D

KINDS = ("DDPM", "Blank", "AvgDX", "None")
PROVENANCE = {"DDPM": "imputed-ddpm", "Blank": "imputed-blank", "AvgDX": "imputed-avgdx"}


@dataclass
class Scan:
    """A record together with its loaded volumes (``fa`` is None for T1-only scans)."""

    record: ScanRecord
    t1: Volume3D
    fa: Optional[Volume3D] = None


@dataclass
class ImputationStrategy:
    kind: str = "None"
    ddpm_checkpoint: object = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {KINDS}")
        if (self.kind == "DDPM") != (self.ddpm_checkpoint is not None):
            raise ValueError("a DDPM checkpoint is required for, and only for, the DDPM strategy")


@dataclass(frozen=True)
class AugmentationPlan:
    add_cn: int = 0
    add_mci: int = 0
    add_ad: int = 0

    def __post_init__(self):
        if min(self.add_cn, self.add_mci, self.add_ad) < 0:
            raise ValueError("plan counts must be >= 0")

    @property
    def total(self) -> int:
        return self.add_cn + self.add_mci + self.add_ad

    def count(self, diagnosis: str) -> int:
        return {"CN": self.add_cn, "MCI": self.add_mci, "AD": self.add_ad}[diagnosis]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def parse(cls, text: str) -> "AugmentationPlan":
        """Parse ``"cn=0,mci=200,ad=100"``."""
        counts = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            key, _, value = part.partition("=")
            key = key.strip().lower()
            if key not in ("cn", "mci", "ad") or not value.strip().isdigit():
                raise ValueError(f"bad plan entry {part!r}; expected e.g. cn=0,mci=200,ad=100")
            counts[f"add_{key}"] = int(value)
        return cls(**counts)


@dataclass
class AugmentedDataset:
    records: list
    source_plan: AugmentationPlan
    strategy: str
    seed: Optional[int]
    n_real: int = 0
    imputed: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)


def impute_blank(dims, spacing_mm=(1.0, 1.0, 1.0)) -> Volume3D:
    return Volume3D.zeros(dims, spacing_mm, "unit")


def impute_avgdx(diagnosis: str, paired_train) -> Volume3D:
    """Voxelwise mean FA over the real training scans of one diagnosis.

    ``paired_train`` holds :class:`Scan` objects or ``(record, fa)`` pairs.
    """
    fas = []
    spacing = None
    for item in paired_train:
        rec, fa = (item.record, item.fa) if isinstance(item, Scan) else item
        if rec.diagnosis == diagnosis and rec.provenance == "real" and rec.split == "train" and fa is not None:
            fas.append(fa.voxels.astype(np.float64))
            spacing = fa.spacing_mm
    if not fas:
        raise ValueError(f"no real training FA scans with diagnosis {diagnosis}; cannot average")
    mean = np.clip(np.mean(fas, axis=0), 0.0, 1.0)
    return Volume3D(mean, spacing, "unit")


def _select(pool, plan: AugmentationPlan, rng: np.random.Generator) -> list:
    by_dx = {dx: [s for s in pool if s.record.diagnosis == dx] for dx in DIAGNOSES}
    short = {dx: plan.count(dx) - len(by_dx[dx]) for dx in DIAGNOSES if plan.count(dx) > len(by_dx[dx])}
    if short:
        detail = ", ".join(f"{dx} short by {n}" for dx, n in short.items())
        raise ValueError(f"T1-only pool too small for plan: {detail}")
    chosen = []
    for dx in DIAGNOSES:
        k = plan.count(dx)
        if k:
            idx = np.sort(rng.choice(len(by_dx[dx]), size=k, replace=False))
            chosen.extend(by_dx[dx][i] for i in idx)
    return chosen


def ddpm_impute(scans, checkpoint, seed: int, cache: dict | None = None) -> list:
    """Sample FA for each T1 scan; the noise for a scan depends only on (seed, scan_id)."""
    from .diffusion import sample_conditional_batch

    key = getattr(checkpoint, "fingerprint", id(checkpoint))
    out = {}
    todo = []
    for s in scans:
        ck = (key, seed, s.record.scan_id)
        if cache is not None and ck in cache:
            out[s.record.scan_id] = cache[ck]
        else:
            todo.append(s)
    if todo:
        seeds = [derive_seed(seed, s.record.scan_id) for s in todo]
        for s, fa in zip(todo, sample_conditional_batch([s.t1 for s in todo], checkpoint, seeds)):
            out[s.record.scan_id] = fa
            if cache is not None:
                cache[(key, seed, s.record.scan_id)] = fa
    return [out[s.record.scan_id] for s in scans]


def build_augmented_training_set(paired_train, t1_only_pool, plan: AugmentationPlan,
                                 strategy: ImputationStrategy, rng: np.random.Generator,
                                 cache: dict | None = None) -> AugmentedDataset:
    """Real paired training scans plus ``plan`` T1-only scans per class with FA filled in.

    ``rng`` is a Generator or an integer seed. Scans are drawn per class
    uniformly without replacement. With strategy ``None`` the drawn scans
    are added as T1-only records.
    """
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed, rng = int(rng), np.random.default_rng(int(rng))
    for s in t1_only_pool:
        if s.record.split != "train" or s.record.has_dwi:
            raise ValueError(f"{s.record.scan_id}: pool scans must be T1-only training scans")
    chosen = _select(t1_only_pool, plan, rng)

    kind = strategy.kind
    if kind == "None":
        fas = [None] * len(chosen)
    elif kind == "Blank":
        fas = [impute_blank(s.t1.dims, s.t1.spacing_mm) for s in chosen]
    elif kind == "AvgDX":
        means = {dx: impute_avgdx(dx, paired_train) for dx in DIAGNOSES if plan.count(dx)}
        fas = [means[s.record.diagnosis] for s in chosen]
    else:
        fas = ddpm_impute(chosen, strategy.ddpm_checkpoint, strategy.seed, cache)

    added = []
    for s, fa in zip(chosen, fas):
        if fa is None:
            added.append(Scan(s.record, s.t1, None))
            continue
        rec = dataclasses.replace(
            s.record, has_dwi=True, dwi_path=f"imputed/{s.record.scan_id}_fa.vol",
            provenance=PROVENANCE[kind],
        )
        added.append(Scan(rec, s.t1, fa))
    return AugmentedDataset(list(paired_train) + added, plan, kind, seed,
                            n_real=len(paired_train), imputed=added)
