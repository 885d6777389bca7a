# Train the T1-conditioned denoiser on phantom pairs and translate T1 -> FA.
#
# Kept small so it finishes in a few minutes on a laptop CPU. Raise EPOCHS and
# the number of pairs for better samples.
import time

import numpy as np

from dwimpute.diffusion import (
    DdpmTrainConfig, DenoiserSpec, evaluate_translation, forward_noise,
    sample_conditional, scaled_linear_schedule, train_ddpm,
)
from dwimpute.imputation import impute_blank
from dwimpute.phantom import PhantomSpec, generate_subject, subject_rng

EPOCHS = 30
DXS = ("CN", "MCI", "AD")

schedule = scaled_linear_schedule()  # 1000 steps, beta from 5e-4 to 1.95e-2
print("betas:", schedule.betas[[0, 499, 999]], "alpha_bar at the end:", schedule.alpha_bars[-1])

spec = PhantomSpec(dims=(16, 16, 16))
pairs = [generate_subject(spec, DXS[i % 3], subject_rng(0, "train", DXS[i % 3], i))[:2] for i in range(24)]
held_out = [generate_subject(spec, DXS[i % 3], subject_rng(0, "test", DXS[i % 3], i))[:2] for i in range(3)]

# What the network sees: the FA map drowned in noise, next to its clean T1
t1, fa = pairs[0]
eps = np.random.default_rng(0).standard_normal(fa.dims)
for t in (0, 250, 999):
    xt = forward_noise(fa, t, eps, schedule)
    corr = np.corrcoef(xt.voxels.ravel(), fa.voxels.ravel())[0, 1]
    print(f"t={t:4d}: corr(x_t, FA) = {corr:.3f}")

start = time.time()
cfg = DdpmTrainConfig(epochs=EPOCHS, learning_rate=5e-4, batch_size=4, seed=0)
ckpt = train_ddpm(pairs, cfg, DenoiserSpec(width_scale=8), schedule)
losses = ckpt.meta["epoch_losses"]
print(f"trained {ckpt.meta['steps']} steps in {time.time() - start:.0f}s, "
      f"loss {losses[0]:.3f} -> {losses[-1]:.3f}")

fa_hat = sample_conditional(held_out[0][0], ckpt, rng=0)
print("sample dims", fa_hat.dims, "range", fa_hat.voxels.min(), fa_hat.voxels.max())

ddpm = evaluate_translation(ckpt, held_out, seed=0)
blank = evaluate_translation(None, held_out, sampler=lambda t1s: [impute_blank(v.dims) for v in t1s])
for name, r in (("ddpm", ddpm), ("blank", blank)):
    print(f"{name:5s}: SSIM {r['ssim3d']:.3f}  PSNR {r['psnr_db']:.2f} dB  MSE {r['mse']:.4f}")
