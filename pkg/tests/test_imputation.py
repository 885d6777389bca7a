import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dwimpute.diffusion import DdpmCheckpoint, DenoiserSpec, scaled_linear_schedule
from dwimpute.imputation import (
    AugmentationPlan, ImputationStrategy, Scan, build_augmented_training_set,
    impute_avgdx, impute_blank,
)
from dwimpute.manifest import ScanRecord
from dwimpute.metrics import ssim3d
from dwimpute.volume import Volume3D

DXS = ("CN", "MCI", "AD")


def scan(i, dx, paired, dims=(2, 2, 2), fa_value=None, split="train"):
    rec = ScanRecord(f"{split}-{dx}-{i}", f"{split}-{dx}-{i}", dx, True, paired,
                     f"v/{i}_t1.vol", f"v/{i}_fa.vol" if paired else None, split)
    t1 = Volume3D(np.full(dims, 0.5), range_tag="unit")
    fa = None
    if paired:
        fa = Volume3D(np.full(dims, fa_value if fa_value is not None else 0.3), range_tag="unit")
    return Scan(rec, t1, fa)


def cohort(n_paired, pool_per_class, dims=(2, 2, 2)):
    paired = [scan(i, DXS[i % 3], True, dims) for i in range(n_paired)]
    pool = [scan(1000 + 10 * i + k, dx, False, dims) for k, dx in enumerate(DXS) for i in range(pool_per_class)]
    return paired, pool


class ZeroNet(torch.nn.Module):
    def forward(self, x, t):
        return torch.zeros_like(x[:, :1])


def stub_checkpoint(dims=(4, 4, 4)):
    return DdpmCheckpoint(ZeroNet(), DenoiserSpec(width_scale=8, dims=dims), scaled_linear_schedule(5, 1e-3, 2e-2))


def test_blank():
    v = impute_blank((16, 16, 16))
    assert v.voxels.size == 4096 and not v.voxels.any()
    assert impute_blank((4, 4, 4)) == impute_blank((4, 4, 4))
    fa = Volume3D(np.random.default_rng(0).uniform(size=(8, 8, 8)), range_tag="unit")
    assert ssim3d(impute_blank(fa.dims), fa) < ssim3d(fa, fa)


def test_avgdx_examples():
    one = scan(0, "CN", True, fa_value=0.37)
    assert impute_avgdx("CN", [one]) == one.fa
    two = [scan(0, "AD", True, fa_value=0.0), scan(1, "AD", True, fa_value=1.0)]
    np.testing.assert_array_equal(impute_avgdx("AD", two).voxels, 0.5)
    with pytest.raises(ValueError):
        impute_avgdx("MCI", two)


def test_avgdx_matches_voxel_loop():
    rng = np.random.default_rng(5)
    scans = []
    for i in range(5):
        s = scan(i, "MCI", True, dims=(3, 4, 5))
        s.fa = Volume3D(rng.uniform(size=(3, 4, 5)), range_tag="unit")
        scans.append(s)
    scans.append(scan(9, "CN", True, dims=(3, 4, 5), fa_value=1.0))
    got = impute_avgdx("MCI", scans).voxels
    for x in range(3):
        for y in range(4):
            for z in range(5):
                total = 0.0
                for s in scans[:5]:
                    total += float(s.fa.voxels[x, y, z])
                assert abs(got[x, y, z] - total / 5) < 1e-6


def test_avgdx_ignores_imputed_and_other_splits():
    real = scan(0, "CN", True, fa_value=0.2)
    fake = scan(1, "CN", True, fa_value=0.9)
    fake.record.provenance = "imputed-blank"
    other = scan(2, "CN", True, fa_value=0.9, split="val")
    np.testing.assert_allclose(impute_avgdx("CN", [real, fake, other]).voxels, 0.2, rtol=1e-6)


def test_plan_parse_and_validation():
    p = AugmentationPlan.parse("cn=0,mci=200,ad=100")
    assert (p.add_cn, p.add_mci, p.add_ad, p.total) == (0, 200, 100, 300)
    with pytest.raises(ValueError):
        AugmentationPlan.parse("cn=-1")
    with pytest.raises(ValueError):
        AugmentationPlan(0, -1, 0)


def test_strategy_validation():
    with pytest.raises(ValueError):
        ImputationStrategy("DDPM")
    with pytest.raises(ValueError):
        ImputationStrategy("Blank", ddpm_checkpoint=object())
    with pytest.raises(ValueError):
        ImputationStrategy("GAN")


@pytest.mark.parametrize("plan, total", [((0, 0, 0), 642), ((0, 200, 100), 942), ((350, 350, 350), 1692)])
def test_training_set_totals(plan, total):
    paired, pool = cohort(642, 350)
    aug = build_augmented_training_set(paired, pool, AugmentationPlan(*plan), ImputationStrategy("Blank"), 0)
    assert len(aug) == total
    assert sum(r.record.provenance == "imputed-blank" for r in aug.records) == sum(plan)
    if sum(plan) == 0:
        assert aug.records == paired


def test_real_records_untouched_and_provenance():
    paired, pool = cohort(6, 4)
    before = [(s.record.to_dict(), s.fa.voxels.tobytes()) for s in paired]
    aug = build_augmented_training_set(paired, pool, AugmentationPlan(1, 2, 3), ImputationStrategy("AvgDX"), 1)
    assert [(s.record.to_dict(), s.fa.voxels.tobytes()) for s in aug.records[:6]] == before
    added = aug.records[6:]
    assert [s.record.diagnosis for s in added].count("AD") == 3
    assert all(s.record.provenance == "imputed-avgdx" and s.record.has_dwi for s in added)
    # the pool itself is not mutated
    assert all(not s.record.has_dwi for s in pool)


def test_none_strategy_adds_t1_only():
    paired, pool = cohort(3, 2)
    aug = build_augmented_training_set(paired, pool, AugmentationPlan(1, 1, 1), ImputationStrategy("None"), 0)
    assert len(aug) == 6 and all(s.fa is None and s.record.provenance == "real" for s in aug.records[3:])


def test_pool_shortfall_is_reported_per_class():
    paired, pool = cohort(3, 2)
    with pytest.raises(ValueError, match="AD short by 3"):
        build_augmented_training_set(paired, pool, AugmentationPlan(0, 1, 5), ImputationStrategy("Blank"), 0)


def test_pool_must_be_t1_only_train():
    paired, pool = cohort(3, 2)
    with pytest.raises(ValueError):
        build_augmented_training_set(paired, pool + [paired[0]], AugmentationPlan(), ImputationStrategy("Blank"), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4), st.integers(0, 2**31 - 1))
def test_blank_and_avgdx_do_not_depend_on_rng_beyond_selection(cn, mci, ad, seed):
    paired, pool = cohort(6, 4)
    plan = AugmentationPlan(cn, mci, ad)
    a = build_augmented_training_set(paired, pool, plan, ImputationStrategy("AvgDX"), seed)
    b = build_augmented_training_set(paired, pool, plan, ImputationStrategy("Blank"), seed)
    assert [s.record.scan_id for s in a.imputed] == [s.record.scan_id for s in b.imputed]
    means = {dx: impute_avgdx(dx, paired) for dx in DXS}
    assert all(s.fa == means[s.record.diagnosis] for s in a.imputed)
    assert all(not s.fa.voxels.any() for s in b.imputed)
    assert len(a) == 6 + plan.total


def test_ddpm_output_depends_only_on_checkpoint_scan_and_seed():
    paired, pool = cohort(3, 4, dims=(4, 4, 4))
    ckpt = stub_checkpoint()
    strat = ImputationStrategy("DDPM", ckpt, seed=11)
    a = build_augmented_training_set(paired, pool, AugmentationPlan(2, 2, 2), strat, 0)
    b = build_augmented_training_set(paired, pool, AugmentationPlan(4, 4, 4), strat, 1)
    fa_b = {s.record.scan_id: s.fa for s in b.imputed}
    assert all(s.fa == fa_b[s.record.scan_id] for s in a.imputed)
    assert all(s.record.provenance == "imputed-ddpm" for s in a.imputed)

    other = build_augmented_training_set(paired, pool, AugmentationPlan(4, 4, 4),
                                         ImputationStrategy("DDPM", ckpt, seed=12), 1)
    assert any(s.fa != fa_b[s.record.scan_id] for s in other.imputed)


def test_ddpm_cache_reuses_samples():
    paired, pool = cohort(3, 2, dims=(4, 4, 4))
    cache = {}
    strat = ImputationStrategy("DDPM", stub_checkpoint(), seed=0)
    a = build_augmented_training_set(paired, pool, AugmentationPlan(1, 1, 1), strat, 0, cache=cache)
    assert len(cache) == 3
    b = build_augmented_training_set(paired, pool, AugmentationPlan(1, 1, 1), strat, 0, cache=cache)
    assert len(cache) == 3
    assert all(x.fa is y.fa for x, y in zip(a.imputed, b.imputed))
