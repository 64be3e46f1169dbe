"""Local training of a small dense regression network.

The objective is MSE plus ``lam * ||w - w_anchor||^2``, where the anchor is
the snapshot the session started from. The anchor term is applied as an
exact proximal step after each gradient step on the MSE, which keeps the
update stable for arbitrarily large ``lam``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import Level, ModelMeta, ModelSnapshot, ModelWeights, ShapeMismatchError, TrainingDelta
from .solar import N_FEATURES, Dataset, TrainingExample


class TrainingError(ValueError):
    pass


class TrainingDiverged(TrainingError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged: non-finite loss in epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainerConfig:
    hidden_sizes: tuple[int, ...] = (16,)
    learning_rate: float = 0.05
    batch_size: int = 32
    epochs: int = 2
    l2_anchor_lambda: float = 1e-3
    seed: int = 0
    input_width: int = N_FEATURES

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.l2_anchor_lambda < 0:
            raise ValueError("l2_anchor_lambda must be non-negative")

    def layer_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        width = self.input_width
        for h in self.hidden_sizes + (1,):
            shapes += [(width, h), (h,)]
            width = h
        return shapes


def init_weights(cfg: TrainerConfig, seed: int | None = None) -> list[np.ndarray]:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    layers = []
    for shape in cfg.layer_shapes():
        if len(shape) == 2:
            layers.append(rng.uniform(-0.5, 0.5, shape) / math.sqrt(shape[0]))
        else:
            layers.append(np.zeros(shape))
    return layers


def fresh_snapshot(cfg: TrainerConfig, seed: int | None = None, *, zero: bool = False,
                   level: Level = Level.GLOBAL, cluster_key: str | None = None) -> ModelSnapshot:
    layers = ([np.zeros(s) for s in cfg.layer_shapes()] if zero
              else init_weights(cfg, seed))
    return ModelSnapshot(ModelMeta(level, cluster_key), ModelWeights(layers))


def forward(layers: Sequence[np.ndarray], X: np.ndarray) -> np.ndarray:
    h = X
    n_hidden = len(layers) // 2 - 1
    for k in range(n_hidden):
        h = np.tanh(h @ layers[2 * k] + layers[2 * k + 1])
    return (h @ layers[-2] + layers[-1])[:, 0]


def loss_and_grad(layers: Sequence[np.ndarray], X: np.ndarray, y: np.ndarray,
                  anchor: Sequence[np.ndarray] | None = None,
                  lam: float = 0.0) -> tuple[float, list[np.ndarray]]:
    """Full objective and its analytic gradient with respect to every layer."""
    n_hidden = len(layers) // 2 - 1
    acts = [X]
    h = X
    for k in range(n_hidden):
        h = np.tanh(h @ layers[2 * k] + layers[2 * k + 1])
        acts.append(h)
    out = (h @ layers[-2] + layers[-1])[:, 0]
    err = out - y
    loss = float(np.mean(err ** 2))

    grads: list[np.ndarray] = [None] * len(layers)
    g = (2.0 / len(y)) * err[:, None]
    for k in range(n_hidden, -1, -1):
        grads[2 * k] = acts[k].T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        if k:
            g = (g @ layers[2 * k].T) * (1.0 - acts[k] ** 2)
    if anchor is not None and lam:
        for i, (w, a) in enumerate(zip(layers, anchor)):
            d = w - a
            loss += lam * float(np.sum(d * d))
            grads[i] = grads[i] + 2.0 * lam * d
    return loss, grads


def objective(layers, X, y, anchor=None, lam: float = 0.0) -> float:
    loss = float(np.mean((forward(layers, X) - y) ** 2))
    if anchor is not None and lam:
        loss += lam * sum(float(np.sum((w - a) ** 2)) for w, a in zip(layers, anchor))
    return loss


@dataclass
class FitResult:
    layers: list[np.ndarray]
    epoch_losses: list[float] = field(default_factory=list)


def fit(layers: Sequence[np.ndarray], X: np.ndarray, y: np.ndarray, cfg: TrainerConfig,
        anchor: Sequence[np.ndarray] | None = None, seed: int | None = None) -> FitResult:
    """Mini-batch gradient descent with a proximal L2 pull towards ``anchor``."""
    if len(y) == 0:
        raise TrainingError("cannot train on an empty dataset")
    w = [np.array(x, dtype=float) for x in layers]
    anchor = [np.asarray(a, dtype=float) for a in (anchor if anchor is not None else layers)]
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    lr, lam = cfg.learning_rate, cfg.l2_anchor_lambda
    shrink = 1.0 / (1.0 + 2.0 * lr * lam)
    n, bs = len(y), cfg.batch_size
    result = FitResult(w)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            _, grads = loss_and_grad(w, X[idx], y[idx])
            for i, g in enumerate(grads):
                if lam:
                    w[i] = (w[i] - lr * g + (2.0 * lr * lam) * anchor[i]) * shrink
                else:
                    w[i] -= lr * g
        loss = objective(w, X, y, anchor, lam)
        if not math.isfinite(loss) or not all(np.isfinite(x).all() for x in w):
            raise TrainingDiverged(epoch)
        result.epoch_losses.append(loss)
    return result


def _as_dataset(data) -> Dataset:
    if isinstance(data, Dataset):
        return data
    return Dataset.from_examples(data)


def train_model(w: ModelSnapshot, data: Dataset | Sequence[TrainingExample],
                cfg: TrainerConfig, seed: int | None = None,
                ) -> tuple[ModelSnapshot, TrainingDelta]:
    ds = _as_dataset(data)
    if len(ds) == 0:
        raise TrainingError("cannot train on an empty dataset")
    expected = [tuple(s) for s in cfg.layer_shapes()]
    if list(w.weights.shapes) != expected:
        raise ShapeMismatchError(f"snapshot shapes {w.weights.shapes} do not match {expected}")
    res = fit(list(w.weights), ds.X, ds.y, cfg, anchor=list(w.weights), seed=seed)
    delta = TrainingDelta(samples_learned=len(ds), epochs_learned=cfg.epochs, round=1)
    meta = ModelMeta(w.meta.level, w.meta.cluster_key,
                     w.meta.samples_learned + delta.samples_learned,
                     w.meta.epochs_learned + delta.epochs_learned,
                     w.meta.round + delta.round)
    return ModelSnapshot(meta, ModelWeights(res.layers)), delta


def predict_raw(w: ModelSnapshot | Sequence[np.ndarray], X) -> np.ndarray:
    layers = list(w.weights) if isinstance(w, ModelSnapshot) else list(w)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != layers[0].shape[0]:
        raise ShapeMismatchError(f"feature width {X.shape[1]} != model input {layers[0].shape[0]}")
    return forward(layers, X)


def predict(w: ModelSnapshot, features) -> np.ndarray | float:
    """Forward pass clamped to [0, 1]; a single vector gives a float."""
    arr = np.asarray(features, dtype=float)
    out = np.clip(predict_raw(w, arr), 0.0, 1.0)
    return float(out[0]) if arr.ndim == 1 else out
