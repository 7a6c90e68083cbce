"""
Logistic Regression - Gradient Source

Binary cross-entropy on sigmoid(w . x + b). Parameters are laid out as
[w (d values), b], so a 99-feature dataset gives m = 100.
"""

from typing import List, Sequence, Tuple

import numpy as np

from base_source import Dataset, LocalModel, sigmoid


class LogisticRegression(LocalModel):

    def __init__(self, dataset: Dataset):
        super().__init__(dataset, name="LogisticRegression")

    @property
    def dimension(self) -> int:
        return self.dataset.num_features + 1

    def manifest(self) -> List[Tuple[int, ...]]:
        return [(self.dataset.num_features,), (1,)]

    def predict_proba(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        return sigmoid(X @ theta[:-1] + theta[-1])

    def batch_gradients(self, theta: np.ndarray, indices: Sequence[int]) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        X = self.dataset.X_train[idx]
        residual = self.predict_proba(theta, X) - self.dataset.y_train[idx]
        self.gradient_count += idx.shape[0]
        return np.hstack([residual[:, None] * X, residual[:, None]])
