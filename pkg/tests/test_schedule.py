import numpy as np
import pytest

from dwimpute.diffusion import NoiseSchedule, forward_noise, scaled_linear_schedule
from dwimpute.volume import Volume3D


def test_default_schedule_endpoints_and_monotonicity():
    s = scaled_linear_schedule(1000, 5e-4, 1.95e-2)
    assert s.T == 1000
    assert s.betas[0] == 5e-4
    assert s.betas[-1] == 1.95e-2
    assert np.all(np.diff(s.betas) > 0)
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert np.all(s.alphas + s.betas == 1.0)


def test_schedule_interior_matches_sqrt_linear_form():
    s = scaled_linear_schedule(1000, 5e-4, 1.95e-2)
    for t in (1, 250, 499, 998):
        root = np.sqrt(5e-4) + t / 999 * (np.sqrt(1.95e-2) - np.sqrt(5e-4))
        assert s.betas[t] == pytest.approx(root ** 2, rel=1e-14)


def test_schedule_validation_and_roundtrip():
    with pytest.raises(ValueError):
        scaled_linear_schedule(1)
    with pytest.raises(ValueError):
        scaled_linear_schedule(10, 0.1, 0.01)
    s = scaled_linear_schedule(50, 1e-4, 2e-2)
    back = NoiseSchedule.from_dict(s.to_dict())
    np.testing.assert_array_equal(back.betas, s.betas)


def test_forward_noise_zero_epsilon_at_t0():
    s = scaled_linear_schedule()
    x0 = Volume3D(np.full((2, 2, 2), 0.5))
    out = forward_noise(x0, 0, Volume3D.zeros((2, 2, 2)), s)
    assert out.range_tag == "raw"
    np.testing.assert_allclose(out.voxels, np.sqrt(1 - 5e-4) * 0.5, rtol=1e-6)


def test_forward_noise_last_step_is_almost_pure_noise():
    s = scaled_linear_schedule()
    x0 = Volume3D(np.ones((4, 4, 4)))
    eps = Volume3D(np.random.default_rng(0).standard_normal((4, 4, 4)))
    out = forward_noise(x0, 999, eps, s)
    assert np.abs(out.voxels - eps.voxels).max() < 0.1


def test_forward_noise_errors():
    s = scaled_linear_schedule(10)
    with pytest.raises(ValueError):
        forward_noise(np.zeros(3), 10, np.zeros(3), s)
    with pytest.raises(ValueError):
        forward_noise(np.zeros(3), 0, np.zeros(4), s)


def forward_moments_within_tolerance(n=100_000, x0=1.0, timesteps=(0, 499, 999), seed=0):
    s = scaled_linear_schedule()
    rng = np.random.default_rng(seed)
    results = []
    for t in timesteps:
        xt = forward_noise(np.full(n, x0), t, rng.standard_normal(n), s)
        abar = s.alpha_bars[t]
        mean_target, var_target = np.sqrt(abar) * x0, 1.0 - abar
        se_mean = np.sqrt(var_target / n)
        se_var = var_target * np.sqrt(2.0 / (n - 1))
        ok = abs(xt.mean() - mean_target) < 4 * se_mean and abs(xt.var(ddof=1) - var_target) < 4 * se_var
        results.append((t, bool(ok)))
    return results


def test_forward_moments():
    assert all(ok for _, ok in forward_moments_within_tolerance())
