import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import finite_difference_errors
from dwimpute.classifier import (
    BackboneSpec, EarlyStopping, FitConfig, SearchSpace, TrainedClassifier, VolumeData,
    build_bimodal, build_unimodal, fit, hyperparameter_search, pooling_plan, predict_proba,
)

TINY = BackboneSpec(width_scale=8, head_width=16)


def conv(cin, cout, k):
    return cin * cout * k ** 3 + cout


def trunk_tally(widths, head):
    total, cin = 0, 1
    for w in widths:
        total += conv(cin, w, 3) + 2 * w
        cin = w
    return total + conv(cin, head, 1) + 2 * head


def n_params(m):
    return sum(p.numel() for p in m.parameters())


def toy_set(n_per_class=4, dims=(8, 8, 8), modalities=1):
    # class c is the constant volume c - 1; sign and zero survive group normalization
    labels = np.repeat(np.arange(3), n_per_class)
    vols = np.stack([np.full(dims, c - 1.0, dtype=np.float32) for c in labels])
    return VolumeData((vols,) * modalities, labels)


def test_unimodal_shapes_and_softmax():
    m = build_unimodal(BackboneSpec(width_scale=8), (32, 32, 32))
    with torch.no_grad():
        p = m(torch.randn(2, 1, 32, 32, 32))
    assert p.shape == (2, 3)
    assert torch.allclose(p.sum(1), torch.ones(2, dtype=p.dtype), atol=1e-6)


@pytest.mark.parametrize("dims", [(8, 8, 8), (16, 16, 16), (24, 24, 24), (12, 16, 20)])
def test_small_inputs_pool_safely(dims):
    m = build_bimodal(TINY, dims)
    with torch.no_grad():
        p = m(torch.randn(2, 1, *dims), torch.zeros(2, 1, *dims))
    assert p.shape == (2, 3) and torch.all(p >= 0)


def test_pooling_plan():
    assert pooling_plan((32, 32, 32)) == [True] * 5
    assert pooling_plan((16, 16, 16)) == [True, True, True, False, False]
    assert pooling_plan((8, 8, 8)) == [True, True, False, False, False]
    with pytest.raises(ValueError):
        pooling_plan((3, 8, 8))


def test_parameter_counts():
    spec = BackboneSpec(width_scale=8)
    uni = build_unimodal(spec, (32, 32, 32))
    bi = build_bimodal(spec, (32, 32, 32))
    t = trunk_tally((4, 8, 16, 32, 32), 64)
    assert n_params(uni) == t + 64 * 3 + 3 == 48611
    assert n_params(bi) == 2 * t + 128 * 3 + 3


def test_seeded_init():
    a = build_unimodal(TINY, (8, 8, 8), seed=1).state_dict()
    b = build_unimodal(TINY, (8, 8, 8), seed=1).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)


def classifier_gradient_errors(n=10, seed=0):
    torch.manual_seed(seed)
    model = build_bimodal(TINY, (8, 8, 8), seed=seed).double().eval()
    x1 = torch.rand(3, 1, 8, 8, 8, dtype=torch.float64)
    x2 = torch.rand(3, 1, 8, 8, 8, dtype=torch.float64)
    y = torch.tensor([0, 1, 2])
    return finite_difference_errors(lambda: F.cross_entropy(model.logits(x1, x2), y),
                                    model.parameters(), n=n, seed=seed)


def test_classifier_loss_gradient():
    errs = classifier_gradient_errors()
    assert len(errs) >= 10 and max(errs) <= 1e-2


def test_fit_separates_toy_set_and_is_deterministic():
    data = toy_set()
    cfg = FitConfig(max_epochs=20, patience=19, learning_rate=1e-2, batch_size=4, seed=2)
    a = fit(build_unimodal(TINY, data.dims), data, data, cfg)
    b = fit(build_unimodal(TINY, data.dims), data, data, cfg)
    assert a.train_loss_history == b.train_loss_history
    assert a.best_val_accuracy == 1.0
    _, pred = predict_proba(a.model, data)
    np.testing.assert_array_equal(pred, data.labels)


def test_bimodal_trains_with_blank_branch():
    t1 = toy_set().inputs[0]
    data = VolumeData((t1, np.zeros_like(t1)), toy_set().labels)
    cfg = FitConfig(max_epochs=15, patience=14, learning_rate=1e-2, batch_size=4)
    trained = fit(build_bimodal(TINY, data.dims), data, data, cfg)
    assert trained.train_loss_history[-1] < trained.train_loss_history[0]


def test_plateau_stops_at_best_epoch_plus_patience():
    data = toy_set(1)
    scores = [0.3, 0.5] + [0.5] * 30
    cfg = FitConfig(max_epochs=30, patience=10)
    trained = fit(build_unimodal(TINY, data.dims), data, data, cfg,
                  val_scorer=lambda m, epoch: scores[epoch - 1])
    assert trained.best_epoch == 2
    assert trained.epochs_trained == 12


def test_early_stopping_rule():
    es = EarlyStopping(3)
    assert [es.step(s, e) for e, s in enumerate([0.1, 0.2, 0.2, 0.2, 0.2], 1)] == [False] * 4 + [True]
    assert es.best_epoch == 2


@settings(max_examples=15, deadline=None)
@given(st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), min_size=3, max_size=10))
def test_restored_weights_come_from_best_epoch(scores):
    data = toy_set(1)
    probe = torch.from_numpy(data.inputs[0][:, None])
    seen = {}

    def scorer(model, epoch):
        with torch.no_grad():
            seen[epoch] = model.eval().logits(probe).clone()
        return scores[(epoch - 1) % len(scores)]

    cfg = FitConfig(max_epochs=len(scores), patience=len(scores) - 1, learning_rate=1e-2)
    trained = fit(build_unimodal(TINY, data.dims), data, data, cfg, val_scorer=scorer)
    best = max(scores[:trained.epochs_trained])
    assert trained.best_val_accuracy == best
    with torch.no_grad():
        assert torch.equal(trained.model.logits(probe), seen[trained.best_epoch])


def test_search_grid_rows_and_ties():
    data = toy_set(2)
    base = FitConfig(max_epochs=2, patience=1, batch_size=6)
    result = hyperparameter_search(SearchSpace(), lambda: build_unimodal(TINY, data.dims), data, data, base)
    assert len(result.table) == 12
    assert {(r["learning_rate"], r["weight_decay"]) for r in result.table} == {
        (lr, wd) for lr in (1e-4, 1e-5, 5e-5, 1e-6) for wd in (1e-4, 1e-5, 1e-6)}

    single = hyperparameter_search(SearchSpace((3e-4,), (2e-5,)), lambda: build_unimodal(TINY, data.dims),
                                   data, data, base)
    assert (single.best_config.learning_rate, single.best_config.weight_decay) == (3e-4, 2e-5)

    # learning rates this small leave predictions unchanged, so accuracies tie
    tie = hyperparameter_search(SearchSpace((1e-12, 2e-12), (1e-6, 1e-4)),
                                lambda: build_unimodal(TINY, data.dims), data, data, base)
    assert len({r["val_accuracy"] for r in tie.table}) == 1
    assert (tie.best_config.learning_rate, tie.best_config.weight_decay) == (2e-12, 1e-4)


def test_predict_is_deterministic_and_normalized():
    data = toy_set(3)
    m = build_unimodal(TINY, data.dims)
    m.train()  # dropout must be disabled inside predict_proba
    p1, _ = predict_proba(m, data)
    p2, _ = predict_proba(m, data)
    np.testing.assert_array_equal(p1, p2)
    np.testing.assert_allclose(p1.sum(1), 1, atol=1e-6)
    with pytest.raises(ValueError):
        predict_proba(m, toy_set(dims=(16, 16, 16)))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(-5.0, 5.0), st.integers(0, 1000))
def test_argmax_invariant_under_monotone_rescaling(a, b, seed):
    torch.manual_seed(seed)
    z = torch.randn(5, 3, dtype=torch.float64)
    for g in (lambda x: a * x + b, lambda x: x ** 3 + a * x):
        assert torch.equal(torch.softmax(g(z), 1).argmax(1), torch.softmax(z, 1).argmax(1))


def test_trained_classifier_roundtrip(tmp_path):
    data = toy_set(1)
    trained = fit(build_unimodal(TINY, data.dims), data, data, FitConfig(max_epochs=2, patience=1), modality="DWI")
    trained.save(tmp_path / "clf")
    back = TrainedClassifier.load(tmp_path / "clf")
    assert back.modality == "DWI" and back.best_epoch == trained.best_epoch
    np.testing.assert_array_equal(predict_proba(back.model, data)[0], predict_proba(trained.model, data)[0])


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(max_epochs=5, patience=5)
    with pytest.raises(ValueError):
        SearchSpace(strategy="bayes")
