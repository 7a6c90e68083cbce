"""
Gradient Sources Package

Per-example gradient producers for the training loop: two built-in models
with analytic gradients, and a reader for gradient files.
"""

from .gradient_file import GradientFileSource
from .logistic import LogisticRegression
from .mlp import OneHiddenLayerMLP

__all__ = [
    'GradientFileSource',
    'LogisticRegression',
    'OneHiddenLayerMLP'
]
