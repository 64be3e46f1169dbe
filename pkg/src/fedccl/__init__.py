"""Asynchronous clustered continual federated learning.

A global / cluster / local model hierarchy served by a concurrent model
store, DBSCAN-based client clustering, anchored local training, and a
synthetic PV forecasting workload to exercise all of it.
"""

__version__ = "0.1.0"

from .aggregation import AggregationConfig, WeightingMode, aggregate_models  # noqa: E402
from .clustering import ClientProfile, ClusteringDimension, IncrementalDBSCAN, dbscan  # noqa: E402
from .metrics import RunReport, energy_error, power_error, summarize  # noqa: E402
from .model import Level, ModelMeta, ModelSnapshot, ModelWeights, TrainingDelta  # noqa: E402
from .server import FederationServer  # noqa: E402
from .trainer import TrainerConfig, train_model  # noqa: E402

__all__ = [
    "AggregationConfig", "WeightingMode", "aggregate_models",
    "ClientProfile", "ClusteringDimension", "IncrementalDBSCAN", "dbscan",
    "RunReport", "energy_error", "power_error", "summarize",
    "Level", "ModelMeta", "ModelSnapshot", "ModelWeights", "TrainingDelta",
    "FederationServer", "TrainerConfig", "train_model",
]
