# 3D CNN classifiers on phantom volumes: unimodal on T1, late fusion on T1+FA.
import numpy as np

from dwimpute.classifier import (
    BackboneSpec, FitConfig, SearchSpace, VolumeData, build_bimodal, build_unimodal, fit,
    hyperparameter_search, pooling_plan, predict_proba,
)
from dwimpute.metrics import ScoreMatrix, classification_metrics
from dwimpute.phantom import PhantomSpec, generate_subject, subject_rng

DXS = ("CN", "MCI", "AD")
spec = PhantomSpec(dims=(16, 16, 16))


def cohort(split, n):
    subjects = [generate_subject(spec, DXS[i % 3], subject_rng(1, split, DXS[i % 3], i)) for i in range(n)]
    t1 = np.stack([s[0].voxels for s in subjects])
    fa = np.stack([s[1].voxels for s in subjects])
    return t1, fa, np.array([i % 3 for i in range(n)])


t1_tr, fa_tr, y_tr = cohort("train", 48)
t1_va, fa_va, y_va = cohort("val", 15)
t1_te, fa_te, y_te = cohort("test", 15)

backbone = BackboneSpec(width_scale=8)
print("pooling in each block for 16^3 input:", pooling_plan((16, 16, 16)))
cfg = FitConfig(max_epochs=30, patience=10, learning_rate=1e-3, batch_size=8)

for name, build, tr, va, te in [
    ("T1", build_unimodal, (t1_tr,), (t1_va,), (t1_te,)),
    ("T1+DWI", build_bimodal, (t1_tr, fa_tr), (t1_va, fa_va), (t1_te, fa_te)),
]:
    model = build(backbone, (16, 16, 16), seed=0)
    n = sum(p.numel() for p in model.parameters())
    trained = fit(model, VolumeData(tr, y_tr), VolumeData(va, y_va), cfg, modality=name)
    probs, _ = predict_proba(trained.model, VolumeData(te, y_te))
    r = classification_metrics(ScoreMatrix(probs, y_te))
    print(f"{name:7s} {n:6d} params | best epoch {trained.best_epoch:2d} of {trained.epochs_trained:2d} "
          f"| test acc {r.accuracy:.2f}, macro AUC {r.macro_auc:.2f}")

# Grid search over learning rate and weight decay; the table lists every point
small = FitConfig(max_epochs=6, patience=3, batch_size=8)
result = hyperparameter_search(
    SearchSpace(learning_rates=(1e-3, 1e-4), weight_decays=(1e-4, 1e-5)),
    lambda: build_unimodal(backbone, (16, 16, 16), seed=0),
    VolumeData((t1_tr,), y_tr), VolumeData((t1_va,), y_va), small,
)
for row in result.table:
    print(row)
print("chosen:", result.best_config.learning_rate, result.best_config.weight_decay)
