"""Asynchronous sample-weighted model aggregation.

An update whose round is exactly one ahead of the stored base means nobody
else wrote the model since the client fetched it, so the submission replaces
the base outright. Otherwise base and submission are averaged layer by layer,
weighted by how many samples each has absorbed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .model import ModelMeta, ModelSnapshot, ModelWeights, TrainingDelta, check_same_shapes


class WeightingMode(str, enum.Enum):
    CUMULATIVE = "cumulative"
    DELTA = "delta"


@dataclass(frozen=True)
class AggregationConfig:
    weighting_mode: WeightingMode = WeightingMode.CUMULATIVE

    def __post_init__(self):
        object.__setattr__(self, "weighting_mode", WeightingMode(self.weighting_mode))


class AggregationError(ValueError):
    pass


def is_sequential(w_base: ModelSnapshot, w_updated: ModelSnapshot) -> bool:
    return w_updated.meta.round == w_base.meta.round + 1


def aggregation_ratios(w_base: ModelSnapshot, w_updated: ModelSnapshot,
                       delta_new: TrainingDelta,
                       cfg: AggregationConfig) -> tuple[float, float]:
    """Return (ratio_base, ratio_new) for the averaging path."""
    n_base = w_base.meta.samples_learned
    if cfg.weighting_mode is WeightingMode.CUMULATIVE:
        n_new = w_updated.meta.samples_learned
    else:
        n_new = delta_new.samples_learned
    total = n_base + n_new
    if total == 0:
        raise AggregationError("cannot aggregate: both models report zero samples learned")
    return n_base / total, n_new / total


def aggregate_models(w_base: ModelSnapshot, w_updated: ModelSnapshot,
                     delta_new: TrainingDelta,
                     cfg: AggregationConfig = AggregationConfig()) -> ModelSnapshot:
    check_same_shapes(w_base.weights, w_updated.weights)
    meta = ModelMeta(
        level=w_base.meta.level,
        cluster_key=w_base.meta.cluster_key,
        samples_learned=w_base.meta.samples_learned + delta_new.samples_learned,
        epochs_learned=w_base.meta.epochs_learned + delta_new.epochs_learned,
        round=w_base.meta.round + delta_new.round,
    )
    if is_sequential(w_base, w_updated):
        return ModelSnapshot(meta, w_updated.weights)

    r_base, r_new = aggregation_ratios(w_base, w_updated, delta_new, cfg)
    layers = [b * r_base + u * r_new for b, u in zip(w_base.weights, w_updated.weights)]
    if not all(np.isfinite(x).all() for x in layers):
        raise AggregationError("aggregation produced non-finite weights")
    return ModelSnapshot(meta, ModelWeights(layers))
