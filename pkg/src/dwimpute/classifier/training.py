"""Supervised fitting with early stopping, grid search and inference."""
from __future__ import annotations

import copy
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from ..hashing import digest
from .models import BackboneSpec, build_bimodal, build_unimodal

log = logging.getLogger(__name__)

MODALITIES = ("T1", "DWI", "T1+DWI")


@dataclass
class VolumeData:
    """Stacked volumes per modality, each (N, X, Y, Z), with integer labels."""

    inputs: tuple
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = tuple(np.asarray(x, dtype=np.float32) for x in self.inputs)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not self.inputs or any(len(x) != len(self.labels) for x in self.inputs):
            raise ValueError("every modality needs one volume per label")
        if any(x.ndim != 4 for x in self.inputs):
            raise ValueError("inputs must be (N, X, Y, Z) arrays")

    def __len__(self):
        return len(self.labels)

    @property
    def dims(self):
        return self.inputs[0].shape[1:]

    def tensors(self, idx=None):
        xs = self.inputs if idx is None else tuple(x[idx] for x in self.inputs)
        return tuple(torch.from_numpy(np.ascontiguousarray(x))[:, None] for x in xs)


@dataclass
class FitConfig:
    max_epochs: int = 100
    patience: int = 10
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("max_epochs, patience and batch_size must be positive")
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        if self.learning_rate <= 0 or self.weight_decay <= 0:
            raise ValueError("learning_rate and weight_decay must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SearchSpace:
    learning_rates: tuple = (1e-4, 1e-5, 5e-5, 1e-6)
    weight_decays: tuple = (1e-4, 1e-5, 1e-6)
    strategy: str = "exhaustive"
    budget: int | None = None

    def __post_init__(self):
        self.learning_rates = tuple(float(x) for x in self.learning_rates)
        self.weight_decays = tuple(float(x) for x in self.weight_decays)
        if not self.learning_rates or not self.weight_decays:
            raise ValueError("search grids must be nonempty")
        if self.strategy not in ("exhaustive", "random-k"):
            raise ValueError(f"unknown search strategy {self.strategy!r}")
        if self.strategy == "random-k" and (self.budget is None or self.budget < 1):
            raise ValueError("random-k search needs a positive budget")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["learning_rates"] = list(self.learning_rates)
        d["weight_decays"] = list(self.weight_decays)
        return d


@dataclass
class TrainedClassifier:
    model: torch.nn.Module
    spec: BackboneSpec
    modality: str
    best_epoch: int
    epochs_trained: int
    val_accuracy_history: list
    train_loss_history: list
    config_hash: str
    fit_config: dict = field(default_factory=dict)

    @property
    def best_val_accuracy(self) -> float:
        return self.val_accuracy_history[self.best_epoch - 1]

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.model.state_dict(), directory / "weights.pt")
        meta = {
            "spec": self.spec.to_dict(),
            "modality": self.modality,
            "input_dims": list(self.model.input_dims),
            "best_epoch": self.best_epoch,
            "epochs_trained": self.epochs_trained,
            "val_accuracy_history": self.val_accuracy_history,
            "train_loss_history": self.train_loss_history,
            "config_hash": self.config_hash,
            "fit_config": self.fit_config,
        }
        (directory / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")

    @classmethod
    def load(cls, directory) -> "TrainedClassifier":
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text())
        spec = BackboneSpec.from_dict(meta["spec"])
        builder = build_bimodal if meta["modality"] == "T1+DWI" else build_unimodal
        model = builder(spec, meta["input_dims"])
        model.load_state_dict(torch.load(directory / "weights.pt", weights_only=True))
        model.eval()
        return cls(model, spec, meta["modality"], meta["best_epoch"], meta["epochs_trained"],
                   meta["val_accuracy_history"], meta["train_loss_history"], meta["config_hash"],
                   meta.get("fit_config", {}))


class EarlyStopping:
    """Tracks the best score; signals a stop after ``patience`` epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0

    def step(self, score: float, epoch: int) -> bool:
        if score > self.best:
            self.best, self.best_epoch = score, epoch
            return False
        return epoch - self.best_epoch >= self.patience


def _check(model, data: VolumeData):
    if len(data) == 0:
        raise ValueError("empty dataset")
    if len(data.inputs) != model.n_inputs:
        raise ValueError(f"model expects {model.n_inputs} modalities, data has {len(data.inputs)}")
    if tuple(data.dims) != tuple(model.input_dims):
        raise ValueError(f"data dims {data.dims} do not match model dims {model.input_dims}")
    k = model.spec.num_classes
    if np.any((data.labels < 0) | (data.labels >= k)):
        raise ValueError(f"labels outside [0, {k})")


def _modality(model) -> str:
    return "T1+DWI" if model.n_inputs == 2 else getattr(model, "modality", "T1")


@torch.no_grad()
def predict_proba(model, data: VolumeData, batch_size: int = 32):
    """Softmax rows and argmax labels; dropout off."""
    if len(data.inputs) != model.n_inputs:
        raise ValueError(f"model expects {model.n_inputs} modalities, data has {len(data.inputs)}")
    if tuple(data.dims) != tuple(model.input_dims):
        raise ValueError(f"data dims {data.dims} do not match model dims {model.input_dims}")
    was_training = model.training
    model.eval()
    probs = []
    for i in range(0, len(data), batch_size):
        xs = data.tensors(slice(i, i + batch_size))
        probs.append(model(*xs).double().numpy())
    model.train(was_training)
    probs = np.concatenate(probs) if probs else np.zeros((0, model.spec.num_classes))
    return probs, probs.argmax(axis=1)


def accuracy(model, data: VolumeData) -> float:
    _, pred = predict_proba(model, data)
    return float(np.mean(pred == data.labels))


def fit(model, train_set: VolumeData, val_set: VolumeData, cfg: FitConfig,
        modality: str | None = None, val_scorer: Callable | None = None) -> TrainedClassifier:
    """Minimise cross-entropy with AdamW; keep the weights of the best validation epoch.

    ``val_scorer(model, epoch) -> accuracy`` overrides the validation pass.
    """
    _check(model, train_set)
    _check(model, val_set)
    modality = modality or _modality(model)
    scorer = val_scorer or (lambda m, epoch: accuracy(m, val_set))
    config_hash = digest({"fit": cfg.to_dict(), "spec": model.spec.to_dict(), "modality": modality})

    opt = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    stopper = EarlyStopping(cfg.patience)
    val_hist, loss_hist = [], []
    best_state = copy.deepcopy(model.state_dict())
    gen = torch.Generator().manual_seed(cfg.seed)
    n = len(train_set)
    epoch = 0
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)  # dropout masks
        for epoch in range(1, cfg.max_epochs + 1):
            model.train()
            order = torch.randperm(n, generator=gen).numpy()
            total = 0.0
            for i in range(0, n, cfg.batch_size):
                idx = np.sort(order[i:i + cfg.batch_size])
                xs = train_set.tensors(idx)
                y = torch.from_numpy(train_set.labels[idx])
                loss = F.cross_entropy(model.logits(*xs), y)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            loss_hist.append(total / n)
            score = float(scorer(model, epoch))
            val_hist.append(score)
            improved = score > stopper.best
            stop = stopper.step(score, epoch)
            if improved:
                best_state = copy.deepcopy(model.state_dict())
            log.debug("epoch %d loss %.4f val_acc %.4f", epoch, loss_hist[-1], score)
            if stop:
                break
    model.load_state_dict(best_state)
    model.eval()
    return TrainedClassifier(model, model.spec, modality, stopper.best_epoch, epoch,
                             val_hist, loss_hist, config_hash, cfg.to_dict())


class SearchResult(NamedTuple):
    best_config: FitConfig
    table: list
    best_model: TrainedClassifier


def _grid(space: SearchSpace, seed: int) -> list:
    points = list(itertools.product(space.learning_rates, space.weight_decays))
    if space.strategy == "random-k" and space.budget < len(points):
        rng = np.random.default_rng(seed)
        keep = sorted(rng.choice(len(points), size=space.budget, replace=False))
        points = [points[i] for i in keep]
    return points


def hyperparameter_search(space: SearchSpace, builder: Callable, train: VolumeData, val: VolumeData,
                          base_cfg: FitConfig, modality: str | None = None) -> SearchResult:
    """Fit one model per (learning rate, weight decay) point and keep the best.

    ``builder()`` must return a freshly initialised model. Ties on validation
    accuracy go to the larger learning rate, then the larger weight decay.
    """
    rows, fitted = [], []
    for lr, wd in _grid(space, base_cfg.seed):
        cfg = FitConfig(**dict(base_cfg.to_dict(), learning_rate=lr, weight_decay=wd))
        trained = fit(builder(), train, val, cfg, modality=modality)
        rows.append({"learning_rate": lr, "weight_decay": wd,
                     "val_accuracy": trained.best_val_accuracy, "best_epoch": trained.best_epoch})
        fitted.append((cfg, trained))
    best = min(range(len(rows)), key=lambda i: (-rows[i]["val_accuracy"], -rows[i]["learning_rate"],
                                                 -rows[i]["weight_decay"]))
    return SearchResult(fitted[best][0], rows, fitted[best][1])
