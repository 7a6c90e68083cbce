"""
Gradient File - Gradient Source

Replays per-example gradients written by an earlier run. The gradients
were computed at that run's parameters, so theta is ignored here.
"""

from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from base_source import GradientSource
from codec import GradientFileReader


class GradientFileSource(GradientSource):

    def __init__(self, path):
        super().__init__(name=f"GradientFile({Path(path).name})")
        self.reader = GradientFileReader(path)

    @property
    def dimension(self) -> int:
        return self.reader.m

    @property
    def num_examples(self) -> int:
        return self.reader.count

    def manifest(self) -> List[Tuple[int, ...]]:
        return self.reader.manifest or [(self.reader.m,)]

    def example_gradient(self, theta: np.ndarray, index: int) -> np.ndarray:
        return self.reader.read(index)

    def __iter__(self):
        return iter(self.reader)
