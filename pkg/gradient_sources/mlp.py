"""
One-Hidden-Layer MLP - Gradient Source

tanh hidden layer, sigmoid output, binary cross-entropy. Backpropagation is
written out by hand and vectorized over the batch.

Parameter layout: W1 (h x d), b1 (h), w2 (h), b2 (1).
"""

from typing import List, Sequence, Tuple

import numpy as np

from base_source import Dataset, LocalModel, sigmoid
from errors import ParameterError


class OneHiddenLayerMLP(LocalModel):

    def __init__(self, dataset: Dataset, hidden: int = 16):
        if hidden < 1:
            raise ParameterError(f"hidden width must be >= 1, got {hidden}")
        super().__init__(dataset, name="OneHiddenLayerMLP")
        self.hidden = hidden

    @property
    def dimension(self) -> int:
        d, h = self.dataset.num_features, self.hidden
        return h * d + h + h + 1

    def manifest(self) -> List[Tuple[int, ...]]:
        d, h = self.dataset.num_features, self.hidden
        return [(h, d), (h,), (h,), (1,)]

    def _unpack(self, theta: np.ndarray):
        d, h = self.dataset.num_features, self.hidden
        W1 = theta[: h * d].reshape(h, d)
        b1 = theta[h * d: h * d + h]
        w2 = theta[h * d + h: h * d + 2 * h]
        b2 = theta[-1]
        return W1, b1, w2, b2

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        # W1 ~ N(0, 1/d), w2 ~ N(0, 1/h), biases zero
        d, h = self.dataset.num_features, self.hidden
        theta = np.zeros(self.dimension)
        theta[: h * d] = rng.normal(0.0, 1.0 / np.sqrt(d), size=h * d)
        theta[h * d + h: h * d + 2 * h] = rng.normal(0.0, 1.0 / np.sqrt(h), size=h)
        return theta

    def predict_proba(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        W1, b1, w2, b2 = self._unpack(theta)
        return sigmoid(np.tanh(X @ W1.T + b1) @ w2 + b2)

    def batch_gradients(self, theta: np.ndarray, indices: Sequence[int]) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        X = self.dataset.X_train[idx]
        y = self.dataset.y_train[idx]
        W1, b1, w2, b2 = self._unpack(theta)

        hidden = np.tanh(X @ W1.T + b1)
        out = sigmoid(hidden @ w2 + b2)
        dz2 = out - y
        dz1 = dz2[:, None] * w2[None, :] * (1.0 - hidden ** 2)

        grad_W1 = (dz1[:, :, None] * X[:, None, :]).reshape(idx.shape[0], -1)
        self.gradient_count += idx.shape[0]
        return np.hstack([grad_W1, dz1, dz2[:, None] * hidden, dz2[:, None]])
