"""Classification and image-quality metrics, plus run aggregation."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

from .volume import Volume3D

CLASSIFICATION_METRICS = ("accuracy", "balanced_accuracy", "micro_auc", "macro_auc", "macro_precision", "macro_f1")
IMAGE_METRICS = ("ssim3d", "psnr_db", "l1", "mse")


@dataclass
class ScoreMatrix:
    probs: np.ndarray
    true_labels: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        if self.probs.ndim != 2 or len(self.probs) != len(self.true_labels):
            raise ValueError("probs must be (n_samples, n_classes) matching true_labels")
        if len(self.probs) < 1:
            raise ValueError("need at least one sample")
        if np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("probability rows must sum to 1")
        k = self.probs.shape[1]
        if np.any((self.true_labels < 0) | (self.true_labels >= k)):
            raise ValueError(f"labels must lie in [0, {k})")

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]


@dataclass
class MetricReport:
    """Metrics in [0, 1]; ``None`` marks a metric undefined for the given data."""

    accuracy: float | None = None
    balanced_accuracy: float | None = None
    micro_auc: float | None = None
    macro_auc: float | None = None
    macro_precision: float | None = None
    macro_f1: float | None = None
    ssim3d: float | None = None
    psnr_db: float | None = None
    l1: float | None = None
    mse: float | None = None
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["psnr_db"] is not None and math.isinf(d["psnr_db"]):
            d["psnr_db"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        d = {k: v for k, v in d.items() if k in {f.name for f in fields(cls)}}
        if d.get("psnr_db") == "inf":
            d["psnr_db"] = math.inf
        return cls(**d)


def binary_auc(scores, positives) -> float | None:
    """ROC AUC from the Mann-Whitney rank statistic; ties get half credit."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def confusion_matrix(true_labels, pred_labels, n_classes) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true_labels, pred_labels), 1)
    return cm


def classification_metrics(scores: ScoreMatrix) -> MetricReport:
    """Accuracy, balanced accuracy, micro/macro one-vs-rest AUC, macro precision and F1.

    A class missing from the true labels has undefined recall, F1 and AUC, so
    every macro metric becomes ``None`` and ``warnings`` names the class.
    Precision and F1 of a class that is present use 0/0 := 0.
    """
    y, p, k = scores.true_labels, scores.probs, scores.n_classes
    pred = p.argmax(axis=1)
    cm = confusion_matrix(y, pred, k)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    tp = np.diag(cm).astype(np.float64)

    present = support > 0
    warnings = [f"class {c} absent from labels; macro metrics undefined"
                for c in range(k) if not present[c]]

    precision = np.divide(tp, predicted, out=np.zeros(k), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros(k), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(k), where=denom > 0)

    onehot = np.eye(k, dtype=bool)[y]
    aucs = [binary_auc(p[:, c], onehot[:, c]) for c in range(k)]
    all_present = bool(present.all())

    def macro(values):
        return float(np.mean(values)) if all_present else None

    return MetricReport(
        accuracy=float(tp.sum() / len(y)),
        balanced_accuracy=macro(recall),
        micro_auc=binary_auc(p.ravel(), onehot.ravel()),
        macro_auc=macro(aucs) if None not in aucs else None,
        macro_precision=macro(precision),
        macro_f1=macro(f1),
        warnings=warnings,
    )


def _arrays(a, b):
    x = a.voxels if isinstance(a, Volume3D) else np.asarray(a)
    y = b.voxels if isinstance(b, Volume3D) else np.asarray(b)
    if x.shape != y.shape:
        raise ValueError(f"dim mismatch: {x.shape} vs {y.shape}")
    return x.astype(np.float64), y.astype(np.float64)


def mse(a, b) -> float:
    x, y = _arrays(a, b)
    return float(np.mean((x - y) ** 2))


def l1(a, b) -> float:
    x, y = _arrays(a, b)
    return float(np.mean(np.abs(x - y)))


def psnr_from_mse(m: float, peak: float = 1.0) -> float:
    if m == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / m)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit-range volumes (+inf when identical)."""
    return psnr_from_mse(mse(a, b))


def ssim3d(a, b, window: int = 7, data_range: float = 1.0, full: bool = False):
    """Mean SSIM over all fully contained ``window``^3 cubes (uniform weights).

    When an axis is shorter than the window, a single global window is used;
    with ``full=True`` the return value is ``(ssim, used_global_fallback)``.
    """
    x, y = _arrays(a, b)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    fallback = min(x.shape) < window
    if fallback:
        mx, my = x.mean(), y.mean()
        vx, vy = x.var(), y.var()
        cxy = ((x - mx) * (y - my)).mean()
    else:
        # uniform_filter centres that are >= window//2 from every edge see whole windows
        h = window // 2
        crop = tuple(slice(h, n - h) for n in x.shape)

        def box(z):
            return ndimage.uniform_filter(z, size=window, mode="constant")[crop]

        mx, my = box(x), box(y)
        vx = box(x * x) - mx * mx
        vy = box(y * y) - my * my
        cxy = box(x * y) - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    value = float(np.mean(s))
    return (value, fallback) if full else value


def image_metrics(pred, target) -> MetricReport:
    m = mse(pred, target)
    value, fallback = ssim3d(pred, target, full=True)
    warnings = ["ssim3d: volume smaller than window, global SSIM used"] if fallback else []
    return MetricReport(ssim3d=value, psnr_db=psnr_from_mse(m), l1=l1(pred, target), mse=m, warnings=warnings)


@dataclass
class AggregateCell:
    mean: float | None
    std: float | None
    n: int
    warning: str | None = None

    def format(self, scale: float = 100.0) -> str:
        if self.mean is None:
            return "--"
        return f"{self.mean * scale:.2f}±{self.std * scale:.2f}"


def aggregate_runs(reports, metrics=CLASSIFICATION_METRICS) -> dict:
    """Per metric mean and sample standard deviation over runs.

    Fewer than two defined values give std 0 plus a warning; no defined
    values give an empty cell.
    """
    out = {}
    for name in metrics:
        values = [getattr(r, name) for r in reports]
        defined = [v for v in values if v is not None]
        warning = None
        if len(defined) < len(values):
            warning = f"{name}: undefined in {len(values) - len(defined)} of {len(values)} runs"
        if not defined:
            out[name] = AggregateCell(None, None, 0, warning or f"{name}: no runs")
            continue
        arr = np.asarray(defined, dtype=np.float64)
        if len(arr) < 2:
            out[name] = AggregateCell(float(arr[0]), 0.0, 1, warning or f"{name}: single run, std reported as 0")
        else:
            out[name] = AggregateCell(float(arr.mean()), float(arr.std(ddof=1)), len(arr), warning)
    return out
