"""Scan records, dataset manifests and split validation."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

SCHEMA_VERSION = 1
DIAGNOSES = ("CN", "MCI", "AD")
SPLITS = ("train", "val", "test")
PROVENANCES = ("real", "imputed-ddpm", "imputed-blank", "imputed-avgdx")


@dataclass
class ScanRecord:
    subject_id: str
    scan_id: str
    diagnosis: str
    has_t1: bool
    has_dwi: bool
    t1_path: Optional[str] = None
    dwi_path: Optional[str] = None
    split: str = "train"
    provenance: str = "real"

    @property
    def label(self) -> int:
        return DIAGNOSES.index(self.diagnosis)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScanRecord":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown ScanRecord fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Violation:
    rule: str
    records: list
    message: str

    def __str__(self):
        return f"[{self.rule}] {self.message}"


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION
    # directory that relative paths resolve against; not serialized
    root: Optional[Path] = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict, root=None) -> "DatasetManifest":
        return cls(
            [ScanRecord.from_dict(r) for r in d["records"]],
            int(d.get("schema_version", SCHEMA_VERSION)),
            Path(root) if root is not None else None,
        )

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), root=path.parent)

    def resolve(self, rel) -> Path:
        p = Path(rel)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p

    def select(self, split=None, paired=None, diagnosis=None) -> list:
        out = []
        for r in self.records:
            if split is not None and r.split != split:
                continue
            if paired is not None and (r.has_t1 and r.has_dwi) != paired:
                continue
            if diagnosis is not None and r.diagnosis != diagnosis:
                continue
            out.append(r)
        return out


def validate_manifest(m: DatasetManifest) -> list:
    """Return every broken manifest invariant as a :class:`Violation`.

    An empty list means the manifest is well formed.
    """
    out = []
    for r in m.records:
        if r.diagnosis not in DIAGNOSES:
            out.append(Violation("diagnosis-domain", [r.scan_id], f"{r.scan_id}: unknown diagnosis {r.diagnosis!r}"))
        if r.split not in SPLITS:
            out.append(Violation("split-domain", [r.scan_id], f"{r.scan_id}: unknown split {r.split!r}"))
        if r.provenance not in PROVENANCES:
            out.append(Violation("provenance-domain", [r.scan_id], f"{r.scan_id}: unknown provenance {r.provenance!r}"))
        if r.has_dwi and not r.has_t1:
            out.append(Violation("modality-implication", [r.scan_id], f"{r.scan_id}: has DWI but no T1"))
        for mod, flag, path in (("t1", r.has_t1, r.t1_path), ("dwi", r.has_dwi, r.dwi_path)):
            if flag != (path is not None):
                out.append(Violation(
                    "path-presence", [r.scan_id],
                    f"{r.scan_id}: has_{mod}={flag} but {mod}_path={path!r}",
                ))

    by_scan = defaultdict(list)
    by_subject = defaultdict(set)
    for r in m.records:
        by_scan[r.scan_id].append(r)
        by_subject[r.subject_id].add(r.split)
    for scan_id, recs in by_scan.items():
        if len(recs) > 1:
            out.append(Violation("unique-scan-id", [scan_id], f"scan_id {scan_id!r} used {len(recs)} times"))
    for subject, splits in by_subject.items():
        if len(splits) > 1:
            scans = [r.scan_id for r in m.records if r.subject_id == subject]
            out.append(Violation(
                "subject-disjoint", scans,
                f"subject {subject!r} appears in splits {sorted(splits)}",
            ))
    return out
