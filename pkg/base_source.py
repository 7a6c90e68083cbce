"""
Base Gradient Source Interface

Everything the training loop can pull per-example gradients from implements
GradientSource: the built-in models (which compute gradients analytically
from a Dataset) and gradient files written by an earlier run.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import ParameterError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Binary classification data with a held-out validation split."""

    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        if self.X_train.shape[0] != self.y_train.shape[0] or self.X_val.shape[0] != self.y_val.shape[0]:
            raise ShapeError("features and labels differ in length")
        if self.X_train.shape[1] != self.X_val.shape[1]:
            raise ShapeError("train and validation features differ in width")

    @property
    def num_features(self) -> int:
        return self.X_train.shape[1]

    @property
    def num_train(self) -> int:
        return self.X_train.shape[0]

    @classmethod
    def synthetic(cls, num_examples: int = 4000, num_features: int = 99, seed: int = 0,
                  margin: float = 0.1, val_fraction: float = 0.2) -> "Dataset":
        """
        Linearly separable two-class data.

        Points closer than `margin` to the separating hyperplane are
        redrawn, so a linear model can reach perfect accuracy.
        """
        rng = np.random.default_rng(seed)
        direction = rng.normal(size=num_features)
        direction /= np.linalg.norm(direction)
        rows = []
        while sum(r.shape[0] for r in rows) < num_examples:
            X = rng.normal(size=(num_examples, num_features))
            rows.append(X[np.abs(X @ direction) >= margin])
        X = np.vstack(rows)[:num_examples]
        y = (X @ direction > 0).astype(np.float64)
        return cls._split(X, y, val_fraction, rng, name=f"synthetic-{num_features}")

    @classmethod
    def from_csv(cls, path, label_column: str = "label", val_fraction: float = 0.2,
                 seed: int = 0) -> "Dataset":
        frame = pd.read_csv(path)
        if label_column not in frame.columns:
            raise ParameterError(f"{path} has no {label_column!r} column")
        y = frame.pop(label_column).to_numpy(dtype=np.float64)
        labels = set(np.unique(y).tolist())
        if not labels <= {0.0, 1.0}:
            raise ParameterError(f"labels must be 0/1, found {sorted(labels)}")
        X = frame.to_numpy(dtype=np.float64)
        return cls._split(X, y, val_fraction, np.random.default_rng(seed), name=Path(path).stem)

    @classmethod
    def _split(cls, X, y, val_fraction, rng, name) -> "Dataset":
        if not 0.0 < val_fraction < 1.0:
            raise ParameterError(f"val_fraction must be in (0, 1), got {val_fraction}")
        order = rng.permutation(X.shape[0])
        cut = int(round(X.shape[0] * (1.0 - val_fraction)))
        train, val = order[:cut], order[cut:]
        return cls(X[train], y[train], X[val], y[val], name=name)


class GradientSource(ABC):
    """Abstract base class for per-example gradient producers."""

    def __init__(self, name: str = "GradientSource"):
        self.name = name
        self.gradient_count = 0

    @property
    @abstractmethod
    def dimension(self) -> int:
        """Flattened parameter count m."""

    @property
    @abstractmethod
    def num_examples(self) -> int:
        """Examples available for training."""

    @abstractmethod
    def example_gradient(self, theta: np.ndarray, index: int) -> np.ndarray:
        """Gradient of the loss on one example at parameters theta."""

    def batch_gradients(self, theta: np.ndarray, indices: Sequence[int]) -> np.ndarray:
        """One row per example; subclasses may vectorize."""
        rows = [self.example_gradient(theta, i) for i in indices]
        self.gradient_count += len(rows)
        if not rows:
            return np.zeros((0, self.dimension))
        return np.vstack(rows)

    def manifest(self) -> List[Tuple[int, ...]]:
        return [(self.dimension,)]

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.dimension)

    def accuracy(self, theta: np.ndarray) -> Optional[float]:
        """Validation accuracy, or None when the source has no data to score."""
        return None


class LocalModel(GradientSource):
    """A model with analytic gradients over an in-memory Dataset."""

    def __init__(self, dataset: Dataset, name: str):
        super().__init__(name)
        self.dataset = dataset

    @property
    def num_examples(self) -> int:
        return self.dataset.num_train

    @abstractmethod
    def predict_proba(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        """P(y = 1 | x) for each row of X."""

    def example_gradient(self, theta: np.ndarray, index: int) -> np.ndarray:
        return self.batch_gradients(theta, [index])[0]

    def accuracy(self, theta: np.ndarray) -> float:
        proba = self.predict_proba(theta, self.dataset.X_val)
        return float(np.mean((proba >= 0.5) == (self.dataset.y_val == 1.0)))


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))
