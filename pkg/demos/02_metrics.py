# Classification and image-quality metrics, and how runs are aggregated.
import numpy as np

from dwimpute.metrics import (
    MetricReport, ScoreMatrix, aggregate_runs, classification_metrics, image_metrics,
)

rng = np.random.default_rng(1)
labels = np.repeat([0, 1, 2], 10)

# An informative but imperfect scorer: true-class logit gets a bonus
logits = rng.normal(size=(30, 3))
logits[np.arange(30), labels] += 1.0
probs = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
report = classification_metrics(ScoreMatrix(probs, labels))
for name in ("accuracy", "balanced_accuracy", "micro_auc", "macro_auc", "macro_precision", "macro_f1"):
    print(f"{name:18s} {getattr(report, name):.3f}")

# If a class never occurs in the labels, the macro metrics are undefined
# (None) and the report says why
partial = classification_metrics(ScoreMatrix(probs[:20], labels[:20]))
print("\nwithout class 2:", partial.macro_auc, partial.warnings)

# Image metrics between a volume and noisy copies of it
clean = rng.uniform(0.2, 0.8, (16, 16, 16))
for sigma in (0.01, 0.05, 0.1):
    noisy = np.clip(clean + rng.normal(0, sigma, clean.shape), 0, 1)
    m = image_metrics(noisy, clean)
    print(f"sigma {sigma:4.2f}: SSIM {m.ssim3d:.3f}  PSNR {m.psnr_db:5.2f} dB  L1 {m.l1:.4f}  MSE {m.mse:.5f}")
print("identical volumes:", image_metrics(clean, clean).to_dict()["psnr_db"])

# Runs are summarised as mean±std (sample std), on the x100 scale
runs = [MetricReport(accuracy=a) for a in (0.60, 0.70)]
print("\naccuracy over two runs:", aggregate_runs(runs, ["accuracy"])["accuracy"].format())
