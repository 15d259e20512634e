"""
Uniform model interface. A pipeline registers training, inference, confidence
and scoring functions once; the optimizers only ever talk to a ModelBundle.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np

from utils import decode_arrays, encode_arrays


class ModelError(ValueError):
    pass


class Task(str, Enum):
    CLASSIFICATION = "Classification"
    REGRESSION = "Regression"


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """
    payload is a dict of numpy arrays owned by the bundle that trained it.
    predict/confidence must be called with exactly feature_columns, in order.
    """
    payload: dict
    feature_columns: Tuple[str, ...]
    model_name: str

    def check_features(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_columns):
            raise ModelError("feature-shape mismatch: model {} expects {} columns, got shape {}".format(
                self.model_name, len(self.feature_columns), X.shape))
        return X

    def to_dict(self):
        return {"model_name": self.model_name,
                "feature_columns": list(self.feature_columns),
                "payload": encode_arrays(self.payload)}

    @classmethod
    def from_dict(cls, doc):
        return cls(payload=decode_arrays(doc["payload"]),
                   feature_columns=tuple(doc["feature_columns"]),
                   model_name=doc["model_name"])


@dataclass(frozen=True)
class ModelBundle:
    name: str
    task: Task
    train: Callable
    predict: Callable
    score: Callable
    rank_score: Callable
    confidence: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.confidence is not None) != (self.task is Task.CLASSIFICATION):
            raise ModelError("confidence must be registered iff the task is classification")

    def fit(self, X, y, feature_columns):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
            raise ModelError("empty feature matrix (shape {})".format(X.shape))
        if X.shape[1] != len(feature_columns):
            raise ModelError("{} feature columns named for a {}-column matrix".format(
                len(feature_columns), X.shape[1]))
        if X.shape[0] != y.size:
            raise ModelError("{} rows but {} labels".format(X.shape[0], y.size))
        return TrainedModel(payload=self.train(X, y),
                            feature_columns=tuple(feature_columns),
                            model_name=self.name)

    def to_dict(self):
        return {"name": self.name, "params": dict(self.params)}


def accuracy(predictions, labels):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(np.mean(predictions == labels))


def negative_mse(predictions, labels):
    diff = np.asarray(predictions, dtype=np.float64) - np.asarray(labels, dtype=np.float64)
    return -float(np.mean(diff * diff))


def binary_confidence(p):
    return np.maximum(p, 1.0 - p)


def check_binary_labels(y):
    values = np.unique(y)
    if not np.all(np.isin(values, (0.0, 1.0))):
        raise ModelError("binary classifier needs labels in {{0, 1}}, got {}".format(values[:10]))


def standardize_params(X):
    """
    Per-column mean and scale; zero-variance columns get unit scale.
    """
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale
