import dataclasses

import numpy as np
import pytest

from fedccl.model import ShapeMismatchError, make_snapshot
from fedccl.solar import Dataset, TrainingExample
from fedccl.trainer import (
    TrainerConfig, TrainingDiverged, TrainingError, fit, fresh_snapshot, loss_and_grad,
    predict, train_model,
)

from oracles import central_difference, mlp_loss, rel_error


def synthetic(rng, n=200, width=7):
    X = rng.uniform(0, 1, (n, width))
    y = np.clip(0.6 * X[:, 0] * (1 - 0.5 * X[:, 4]) + 0.1 * np.sin(6 * X[:, 5]), 0, 1)
    return Dataset(X, y)


def random_net(rng, width, hidden):
    cfg = TrainerConfig(hidden_sizes=hidden, input_width=width)
    return [rng.normal(0, 0.7, s) for s in cfg.layer_shapes()]


def test_config_validation():
    for bad in (dict(learning_rate=0), dict(epochs=0), dict(l2_anchor_lambda=-1),
                dict(batch_size=0), dict(hidden_sizes=(0,))):
        with pytest.raises(ValueError):
            TrainerConfig(**bad)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(100):
        width = int(rng.integers(1, 6))
        hidden = tuple(int(h) for h in rng.integers(1, 5, size=rng.integers(0, 3)))
        layers = random_net(rng, width, hidden)
        anchor = [w + rng.normal(0, 0.1, w.shape) for w in layers]
        lam = float(rng.choice([0.0, 0.3]))
        X = rng.uniform(0, 1, (int(rng.integers(1, 9)), width))
        y = rng.uniform(0, 1, len(X))
        _, grads = loss_and_grad(layers, X, y, anchor, lam)
        numeric = central_difference(lambda: mlp_loss(layers, X, y, anchor, lam), layers)
        err = rel_error(np.concatenate([g.ravel() for g in grads]),
                        np.concatenate([g.ravel() for g in numeric]))
        worst = max(worst, err)
    assert worst < 1e-5


def test_loss_value_matches_oracle():
    rng = np.random.default_rng(1)
    layers = random_net(rng, 7, (16,))
    d = synthetic(rng, 50)
    loss, _ = loss_and_grad(layers, d.X, d.y)
    assert loss == pytest.approx(mlp_loss(layers, d.X, d.y), rel=1e-12)


def test_huge_lambda_pins_weights():
    rng = np.random.default_rng(2)
    cfg = TrainerConfig(l2_anchor_lambda=1e9, epochs=3, learning_rate=0.5)
    w = fresh_snapshot(cfg, seed=3)
    out, _ = train_model(w, synthetic(rng), cfg)
    for a, b in zip(out.weights, w.weights):
        assert np.max(np.abs(a - b)) < 1e-3


def test_single_example_linear_step_is_closed_form():
    # no hidden layer: out = x.W + b, MSE gradient = 2 (out - y) [x, 1]
    cfg = TrainerConfig(hidden_sizes=(), learning_rate=0.1, batch_size=1, epochs=1,
                        l2_anchor_lambda=0.0, input_width=3)
    W = np.array([[0.2], [-0.1], [0.4]])
    b = np.array([0.05])
    x = np.array([0.5, 0.25, 1.0])
    y = 0.3
    out = x @ W[:, 0] + b[0]
    res, _ = train_model(make_snapshot([W, b]), [TrainingExample(x, y)], cfg)
    np.testing.assert_allclose(res.weights[0][:, 0], W[:, 0] - 0.1 * 2 * (out - y) * x,
                               rtol=0, atol=1e-15)
    np.testing.assert_allclose(res.weights[1], b - 0.1 * 2 * (out - y), rtol=0, atol=1e-15)


def test_loss_non_increasing_with_small_lr():
    rng = np.random.default_rng(4)
    d = synthetic(rng, 300)
    cfg = TrainerConfig(learning_rate=1e-3, batch_size=300, epochs=30, l2_anchor_lambda=0.0)
    res = fit(fresh_snapshot(cfg, seed=5).weights, d.X, d.y, cfg)
    assert all(b <= a + 1e-15 for a, b in zip(res.epoch_losses, res.epoch_losses[1:]))


def test_anchor_monotonicity():
    rng = np.random.default_rng(6)
    d = synthetic(rng)
    w = fresh_snapshot(TrainerConfig(), seed=7)
    dists = []
    for lam in (0.0, 0.01, 0.1, 1.0, 10.0):
        cfg = TrainerConfig(l2_anchor_lambda=lam, epochs=3)
        out, _ = train_model(w, d, cfg, seed=8)
        dists.append(np.linalg.norm(out.weights.flat() - w.weights.flat()))
    assert all(b <= a for a, b in zip(dists, dists[1:]))


def test_delta_and_metadata():
    rng = np.random.default_rng(9)
    cfg = TrainerConfig(epochs=3)
    w = fresh_snapshot(cfg, seed=1).with_meta(samples_learned=100, epochs_learned=4, round=6)
    d = synthetic(rng, 77)
    out, delta = train_model(w, d, cfg)
    assert (delta.samples_learned, delta.epochs_learned, delta.round) == (77, 3, 1)
    assert (out.meta.samples_learned, out.meta.epochs_learned, out.meta.round) == (177, 7, 7)


def test_deterministic():
    rng = np.random.default_rng(10)
    d = synthetic(rng)
    cfg = TrainerConfig(seed=42)
    w = fresh_snapshot(cfg, seed=1)
    assert train_model(w, d, cfg)[0] == train_model(w, d, cfg)[0]


def test_errors():
    cfg = TrainerConfig()
    with pytest.raises(TrainingError):
        train_model(fresh_snapshot(cfg), Dataset(np.zeros((0, 7)), np.zeros(0)), cfg)
    with pytest.raises(ShapeMismatchError):
        train_model(fresh_snapshot(TrainerConfig(hidden_sizes=(4,))),
                    synthetic(np.random.default_rng(0), 10), cfg)
    # linear least squares with a step far beyond 2/curvature blows up geometrically
    lin = TrainerConfig(hidden_sizes=(), learning_rate=10.0, epochs=3)
    with pytest.raises(TrainingDiverged) as err, np.errstate(over="ignore", invalid="ignore"):
        fit(fresh_snapshot(lin, seed=0).weights, np.ones((6400, 7)), np.ones(6400), lin)
    assert err.value.epoch == 1


def test_predict():
    cfg = TrainerConfig()
    zero = fresh_snapshot(cfg, zero=True)
    assert predict(zero, np.full(7, 0.7)) == 0.0
    w = fresh_snapshot(cfg, seed=3)
    X = np.random.default_rng(0).uniform(0, 1, (20, 7))
    out = predict(w, X)
    assert np.array_equal(out, predict(w, X))
    assert ((out >= 0) & (out <= 1)).all()
    with pytest.raises(ShapeMismatchError):
        predict(w, np.zeros(6))


def test_retention_with_anchor():
    """Training on task B with an anchor forgets less of task A."""
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X_a = rng.uniform(0, 1, (400, 7))
        X_a[:, 5] *= 0.5
        X_b = rng.uniform(0, 1, (400, 7))
        X_b[:, 5] = 0.5 + 0.5 * X_b[:, 5]
        y_a = np.clip(0.8 * X_a[:, 0], 0, 1)
        y_b = np.clip(0.2 + 0.3 * X_b[:, 1], 0, 1)
        cfg = TrainerConfig(epochs=20, l2_anchor_lambda=0.0, learning_rate=0.1)
        w_a, _ = train_model(fresh_snapshot(cfg, seed=seed), Dataset(X_a, y_a), cfg, seed=seed)
        errs = []
        for lam in (0.0, 0.05):
            c = dataclasses.replace(cfg, l2_anchor_lambda=lam, epochs=5)
            w_b, _ = train_model(w_a, Dataset(X_b, y_b), c, seed=seed + 100)
            errs.append(float(np.mean((predict(w_b, X_a) - y_a) ** 2)))
        wins += errs[1] <= errs[0]
    assert wins >= 15
