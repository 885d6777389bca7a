import numpy as np
import pytest
import torch

from dwimpute.phantom import PhantomSpec, generate_dataset

torch.set_num_threads(1)

ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def finite_difference_errors(loss_fn, params, n=10, h=1e-6, seed=0, min_grad=1e-7):
    """Relative errors between backprop and central differences on ``n`` random scalars.

    ``loss_fn()`` must be deterministic and computed in float64.
    """
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    loss_fn().backward()
    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in params])
    errors = []
    tries = 0
    while len(errors) < n and tries < 50 * n:
        tries += 1
        pi = rng.choice(len(params), p=sizes / sizes.sum())
        p = params[pi]
        j = int(rng.integers(p.numel()))
        analytic = p.grad.reshape(-1)[j].item()
        flat = p.data.reshape(-1)
        orig = flat[j].item()
        with torch.no_grad():
            flat[j] = orig + h
            up = loss_fn().item()
            flat[j] = orig - h
            down = loss_fn().item()
            flat[j] = orig
        numeric = (up - down) / (2 * h)
        scale = max(abs(analytic), abs(numeric))
        if scale < min_grad:
            continue
        errors.append(abs(analytic - numeric) / scale)
    return errors


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """16^3 phantom cohort with half the subjects paired in every split."""
    out = tmp_path_factory.mktemp("phantom16")
    counts = {
        "train": {"CN": 12, "MCI": 12, "AD": 8},
        "val": {"CN": 4, "MCI": 4, "AD": 4},
        "test": {"CN": 4, "MCI": 4, "AD": 4},
    }
    manifest = generate_dataset(PhantomSpec(dims=(16, 16, 16), seed=3), counts, 0.5, out)
    return out / "manifest.json", manifest
