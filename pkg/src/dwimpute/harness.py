"""Seeded experiment runs over (modality, augmentation plan, imputation strategy) cells.

Every run writes ``<output_dir>/runs/<config hash>/<seed>.json``; finished
runs are skipped when an experiment is re-run. Reports aggregate runs that
share a config hash into ``mean±std`` rows.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
import traceback
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .classifier import (
    BackboneSpec, FitConfig, SearchSpace, VolumeData, build_bimodal, build_unimodal, fit,
    hyperparameter_search, predict_proba,
)
from .hashing import derive_seed, digest
from .imputation import AugmentationPlan, ImputationStrategy, Scan, build_augmented_training_set
from .manifest import DatasetManifest, validate_manifest
from .metrics import CLASSIFICATION_METRICS, MetricReport, ScoreMatrix, aggregate_runs, classification_metrics
from .volume import read_volume

log = logging.getLogger(__name__)

MODALITIES = ("T1+DWI", "DWI", "T1")
STRATEGIES = ("None", "DDPM", "Blank", "AvgDX")
MODALITY_ALIASES = {"t1": "T1", "dwi": "DWI", "both": "T1+DWI", "t1+dwi": "T1+DWI"}
TABLE_COLUMNS = ("CN", "MCI", "AD", "Total", "Imputation", "Acc", "Bal Acc",
                 "Micro AUC", "Macro AUC", "Macro Prec", "Macro F1")


class ConfigError(ValueError):
    """An experiment configuration or its inputs are invalid."""


def normalize_modality(m: str) -> str:
    if m in MODALITIES:
        return m
    try:
        return MODALITY_ALIASES[m.lower()]
    except KeyError:
        raise ConfigError(f"unknown modality {m!r}") from None


@dataclass
class ExperimentConfig:
    modality: str
    manifest: str
    strategy: str = "None"
    plan: AugmentationPlan = field(default_factory=AugmentationPlan)
    n_runs: int = 5
    seeds: list | None = None
    base_seed: int = 0
    ddpm_checkpoint: str | None = None
    imputation_seed: int = 0
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    fit: FitConfig = field(default_factory=FitConfig)
    search: SearchSpace | None = None
    output_dir: str = "experiments"

    def __post_init__(self):
        self.modality = normalize_modality(self.modality)
        if isinstance(self.plan, str):
            self.plan = AugmentationPlan.parse(self.plan)
        elif isinstance(self.plan, dict):
            self.plan = AugmentationPlan(**self.plan)
        if isinstance(self.backbone, dict):
            self.backbone = BackboneSpec.from_dict(self.backbone)
        if isinstance(self.fit, dict):
            self.fit = FitConfig(**self.fit)
        if isinstance(self.search, dict):
            self.search = SearchSpace(**self.search)
        self.validate()

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        if self.seeds is not None and len(self.seeds) != self.n_runs:
            raise ConfigError("seeds must list exactly n_runs values")
        if (self.strategy == "DDPM") != (self.ddpm_checkpoint is not None):
            raise ConfigError("ddpm_checkpoint is required for, and only for, the DDPM strategy")
        if self.modality == "T1" and self.strategy != "None":
            raise ConfigError("the T1 modality takes no imputation; strategy must be None")
        if self.modality != "T1" and self.strategy == "None" and self.plan.total:
            raise ConfigError(f"{self.modality} with added samples needs an imputation strategy")

    def run_seeds(self) -> list:
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        return [derive_seed(self.base_seed, i) % 2 ** 31 for i in range(self.n_runs)]

    def to_dict(self) -> dict:
        return {
            "modality": self.modality,
            "manifest": self.manifest,
            "strategy": self.strategy,
            "plan": self.plan.to_dict(),
            "n_runs": self.n_runs,
            "seeds": self.seeds,
            "base_seed": self.base_seed,
            "ddpm_checkpoint": self.ddpm_checkpoint,
            "imputation_seed": self.imputation_seed,
            "backbone": self.backbone.to_dict(),
            "fit": self.fit.to_dict(),
            "search": self.search.to_dict() if self.search else None,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None


def config_hash(cfg: ExperimentConfig) -> str:
    """Digest of the canonical config, ignoring where results are written."""
    d = cfg.to_dict()
    d.pop("output_dir")
    return digest(d)


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    modality: str
    strategy: str
    plan: dict
    metrics: MetricReport | None
    train_size: int
    n_real: int
    n_added: int
    wall_clock_seconds: float
    started_at: str
    finished_at: str
    status: str = "ok"
    error: str | None = None
    best_epoch: int | None = None
    fit_config: dict | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["metrics"] = self.metrics.to_dict() if self.metrics else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        d["metrics"] = MetricReport.from_dict(d["metrics"]) if d.get("metrics") else None
        return cls(**d)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1) + "\n")
    os.replace(tmp, path)


def load_scans(manifest: DatasetManifest, records) -> list:
    out = []
    for r in records:
        t1 = read_volume(manifest.resolve(r.t1_path)) if r.has_t1 else None
        fa = read_volume(manifest.resolve(r.dwi_path)) if r.has_dwi else None
        out.append(Scan(r, t1, fa))
    return out


@dataclass
class ExperimentData:
    paired_train: list
    t1_only_pool: list
    val: list
    test: list


def load_experiment_data(manifest_path) -> ExperimentData:
    manifest = DatasetManifest.load(manifest_path)
    problems = validate_manifest(manifest)
    if problems:
        raise ConfigError("manifest invalid: " + "; ".join(map(str, problems[:5])))

    def real(recs):
        return [r for r in recs if r.provenance == "real"]

    return ExperimentData(
        paired_train=load_scans(manifest, real(manifest.select("train", paired=True))),
        t1_only_pool=load_scans(manifest, real(r for r in manifest.select("train", paired=False) if r.has_t1)),
        val=load_scans(manifest, real(manifest.select("val", paired=True))),
        test=load_scans(manifest, real(manifest.select("test", paired=True))),
    )


def to_volume_data(scans, modality: str) -> VolumeData:
    if modality == "T1":
        cols = [[s.t1 for s in scans]]
    elif modality == "DWI":
        cols = [[s.fa for s in scans]]
    else:
        cols = [[s.t1 for s in scans], [s.fa for s in scans]]
    for col in cols:
        if any(v is None for v in col):
            raise ConfigError(f"{modality}: some scans lack a required volume")
    return VolumeData(
        tuple(np.stack([v.voxels for v in col]) for col in cols),
        np.array([s.record.label for s in scans]),
    )


def _builder(cfg: ExperimentConfig, dims, seed):
    build = build_bimodal if cfg.modality == "T1+DWI" else build_unimodal
    return lambda: build(cfg.backbone, dims, seed=seed)


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _single_run(cfg, data, seed, checkpoint, cache):
    strategy = ImputationStrategy(cfg.strategy, checkpoint, cfg.imputation_seed)
    aug = build_augmented_training_set(data.paired_train, data.t1_only_pool, cfg.plan, strategy,
                                       np.random.default_rng(seed), cache=cache)
    train = to_volume_data(aug.records, cfg.modality)
    val = to_volume_data(data.val, cfg.modality)
    test = to_volume_data(data.test, cfg.modality)
    builder = _builder(cfg, train.dims, seed)
    base = FitConfig(**dict(cfg.fit.to_dict(), seed=seed))
    if cfg.search is not None:
        trained = hyperparameter_search(cfg.search, builder, train, val, base, cfg.modality).best_model
    else:
        trained = fit(builder(), train, val, base, modality=cfg.modality)
    probs, _ = predict_proba(trained.model, test)
    metrics = classification_metrics(ScoreMatrix(probs, test.labels))
    return aug, metrics, trained


def run_experiment(cfg: ExperimentConfig, data: ExperimentData | None = None,
                   cache: dict | None = None, checkpoints: dict | None = None) -> list:
    """Train and evaluate one classifier per seed; return the RunRecords (resumed or new)."""
    from .diffusion import DdpmCheckpoint

    h = config_hash(cfg)
    run_dir = Path(cfg.output_dir) / "runs" / h
    data = data or load_experiment_data(cfg.manifest)
    expected = len(data.paired_train) + cfg.plan.total
    checkpoint = None
    if cfg.strategy == "DDPM":
        checkpoints = {} if checkpoints is None else checkpoints
        if cfg.ddpm_checkpoint not in checkpoints:
            checkpoints[cfg.ddpm_checkpoint] = DdpmCheckpoint.load(cfg.ddpm_checkpoint)
        checkpoint = checkpoints[cfg.ddpm_checkpoint]
    cache = {} if cache is None else cache

    records = []
    for seed in cfg.run_seeds():
        path = run_dir / f"{seed}.json"
        if path.exists():
            prev = RunRecord.from_dict(json.loads(path.read_text()))
            if prev.status == "ok":
                log.info("skip finished run %s/%s", h, seed)
                records.append(prev)
                continue
        started, t0 = _now(), time.time()
        try:
            aug, metrics, trained = _single_run(cfg, data, seed, checkpoint, cache)
            if len(aug) != expected:
                raise RuntimeError(f"training set has {len(aug)} scans, expected {expected}")
            rec = RunRecord(h, seed, cfg.modality, cfg.strategy, cfg.plan.to_dict(), metrics,
                            len(aug), aug.n_real, len(aug.imputed), time.time() - t0, started, _now(),
                            best_epoch=trained.best_epoch, fit_config=trained.fit_config)
        except Exception as e:  # one failed seed must not sink the others
            log.error("run %s/%s failed: %s", h, seed, e)
            rec = RunRecord(h, seed, cfg.modality, cfg.strategy, cfg.plan.to_dict(), None,
                            expected, len(data.paired_train), cfg.plan.total, time.time() - t0,
                            started, _now(), status="failed",
                            error="".join(traceback.format_exception_only(type(e), e)).strip())
        _write_json(path, rec.to_dict())
        records.append(rec)
    _write_json(run_dir / "config.json", cfg.to_dict())
    return records


def load_grid(path, out_dir=None, base_seed=None) -> list:
    """Read an experiment file: one config, or ``{"defaults": {...}, "experiments": [...]}``.

    Relative manifest / checkpoint paths resolve against the file's directory.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    if "experiments" in doc:
        defaults = doc.get("defaults", {})
        items = [dict(defaults, **e) for e in doc["experiments"]]
        if "output_dir" in doc:
            for e in items:
                e.setdefault("output_dir", doc["output_dir"])
    else:
        items = [doc]
    cfgs = []
    for item in items:
        for key in ("manifest", "ddpm_checkpoint", "output_dir"):
            if item.get(key) and not os.path.isabs(item[key]):
                item[key] = str(path.parent / item[key])
        if out_dir is not None:
            item["output_dir"] = str(out_dir)
        if base_seed is not None:
            item["base_seed"] = int(base_seed)
        cfgs.append(ExperimentConfig.from_dict(item))
    return cfgs


def run_grid(cfgs, report_dir=None) -> list:
    """Run several experiments sharing data loads and DDPM imputations; write reports."""
    data_cache, cache, checkpoints = {}, {}, {}
    records = []
    for cfg in cfgs:
        if cfg.manifest not in data_cache:
            data_cache[cfg.manifest] = load_experiment_data(cfg.manifest)
        records += run_experiment(cfg, data_cache[cfg.manifest], cache, checkpoints)
    if cfgs:
        write_reports(records, Path(report_dir or cfgs[0].output_dir))
    return records


def load_run_records(directory) -> list:
    records = []
    for p in sorted(Path(directory).rglob("*.json")):
        if p.name == "config.json" or p.name.endswith(".tmp"):
            continue
        try:
            d = json.loads(p.read_text())
        except json.JSONDecodeError:
            continue
        if isinstance(d, dict) and "config_hash" in d and "seed" in d:
            records.append(RunRecord.from_dict(d))
    return records


@dataclass
class TableRow:
    modality: str
    plan: dict
    strategy: str
    total: int
    cells: dict
    n_runs: int
    config_hash: str

    def values(self) -> list:
        return [str(self.plan["add_cn"]), str(self.plan["add_mci"]), str(self.plan["add_ad"]),
                str(self.total), "--" if self.strategy == "None" else self.strategy,
                *(self.cells[m].format() for m in CLASSIFICATION_METRICS)]


@dataclass
class ResultsTable:
    rows: list
    columns: tuple = TABLE_COLUMNS

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow(row.values())
        return buf.getvalue()

    def to_text(self) -> str:
        body = [list(self.columns)] + [r.values() for r in self.rows]
        widths = [max(len(line[i]) for line in body) for i in range(len(self.columns))]

        def fmt(line):
            return "  ".join(v.rjust(w) for v, w in zip(line, widths)).rstrip()

        out = [fmt(body[0]), "-" * len(fmt(body[0]))]
        current = None
        for row, line in zip(self.rows, body[1:]):
            if row.modality != current:
                current = row.modality
                out.append(f"[{current}]")
            out.append(fmt(line))
        out.append("mean±std over runs, metrics x100")
        return "\n".join(out) + "\n"


def render_table(records, group_by: str = "config_hash") -> ResultsTable:
    """Aggregate successful runs into Table-style rows."""
    groups = {}
    for r in records:
        if r.status == "ok":
            groups.setdefault(getattr(r, group_by), []).append(r)
    rows = []
    for key, recs in groups.items():
        first = recs[0]
        totals = {r.train_size for r in recs}
        if len(totals) != 1:
            raise ValueError(f"group {key} mixes training-set sizes {sorted(totals)}")
        rows.append(TableRow(first.modality, first.plan, first.strategy, first.train_size,
                             aggregate_runs([r.metrics for r in recs]), len(recs), first.config_hash))
    rows.sort(key=lambda r: (MODALITIES.index(r.modality), r.total, STRATEGIES.index(r.strategy),
                             (r.plan["add_cn"], r.plan["add_mci"], r.plan["add_ad"]), r.config_hash))
    return ResultsTable(rows)


def write_reports(records, out_dir) -> ResultsTable:
    table = render_table(records)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(table.to_csv())
    (out_dir / "report.txt").write_text(table.to_text())
    return table
