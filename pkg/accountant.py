"""
Privacy Accounting

Renyi DP of the Gaussian mechanism applied to disjoint batch sums:

    continuous:  eps_RDP(alpha) = E * C^2 * alpha / (2 sigma^2)
    discrete:    E * (alpha * Delta^2 / (2 n sigma_pc^2) + tau * d)

where the discrete bound covers the sum of n per-client discrete Gaussians
of scale sigma_pc in the fixed-point domain, and

    tau = 10 * sum_{j=1}^{n-1} exp(-2 pi^2 sigma_pc^2 j / (j + 1))

is evaluated in log space. Curves convert to (eps, delta) by minimizing
over a fixed alpha grid.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, replace
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

import config
from errors import ParameterError

logger = logging.getLogger(__name__)


def _alpha_grid() -> np.ndarray:
    # fine tail above 1: the optimal order approaches 1 as epochs grow
    near_one = 1.0 + np.geomspace(0.01, 0.25, 40)[:-1]
    geometric = np.geomspace(1.25, 512.0, 64)[1:-1]
    integers = np.arange(2, 257, dtype=np.float64)
    return np.unique(np.concatenate([near_one, [1.25, 1.5, 1.75], geometric, integers, [512.0]]))


ALPHA_GRID = _alpha_grid()


@dataclass(frozen=True)
class DpConfig:
    """
    Noise and sensitivity settings of one training run.

    sigma is the aggregate noise scale: every client adds N(0, sigma^2 / b)
    so a batch sum carries N(0, sigma^2).
    """

    sigma: float
    clip_C: float = config.DEFAULT_CLIP_C
    batch_size: int = 1
    epochs: int = 1
    delta: float = config.DEFAULT_DELTA
    dimension: int = 1
    honest_fraction: float = 1.0
    scale: int = config.FIXED_POINT_SCALE

    def __post_init__(self):
        if self.sigma <= 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if self.clip_C <= 0:
            raise ParameterError(f"clip_C must be > 0, got {self.clip_C}")
        if self.batch_size < 1 or self.epochs < 1 or self.dimension < 1:
            raise ParameterError(
                f"batch_size, epochs and dimension must be >= 1, got "
                f"{self.batch_size}, {self.epochs}, {self.dimension}"
            )
        if not 0.0 < self.delta < 1.0:
            raise ParameterError(f"delta must be in (0, 1), got {self.delta}")
        if not 0.0 < self.honest_fraction <= 1.0:
            raise ParameterError(f"honest_fraction must be in (0, 1], got {self.honest_fraction}")


@dataclass(frozen=True)
class RdpCurve:
    alphas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.alphas.shape != self.values.shape:
            raise ParameterError("curve alphas and values differ in length")

    @property
    def points(self) -> Dict[float, float]:
        return dict(zip(self.alphas.tolist(), self.values.tolist()))

    def __len__(self) -> int:
        return self.alphas.shape[0]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"alpha": self.alphas, "eps_rdp": self.values})


def _check_alpha(alpha: float):
    if alpha < 1:
        raise ParameterError(f"Renyi order must be >= 1, got {alpha}")


def rdp_continuous(cfg: DpConfig, alpha: float) -> float:
    _check_alpha(alpha)
    return cfg.epochs * cfg.clip_C ** 2 * alpha / (2.0 * cfg.sigma ** 2)


def tau(sigma: float, n: int) -> float:
    """Correction term for a sum of n discrete Gaussians of scale sigma."""
    if n < 2:
        return 0.0
    j = np.arange(1, n, dtype=np.float64)
    exponents = -2.0 * math.pi ** 2 * sigma ** 2 * j / (j + 1.0)
    log_tau = math.log(10.0) + float(logsumexp(exponents))
    return math.exp(log_tau) if log_tau > -745.0 else 0.0


def discrete_sum_divergence(alpha: float, delta_norm: float, sigma: float, n: int, d: int) -> float:
    """Renyi divergence bound between a sum of n discrete Gaussians and its shift by delta_norm."""
    _check_alpha(alpha)
    if sigma < 0.5:
        raise ParameterError(f"per-client discrete scale must be >= 1/2, got {sigma}")
    return alpha * delta_norm ** 2 / (2.0 * n * sigma ** 2) + tau(sigma, n) * d


def per_client_scaled_sigma(cfg: DpConfig) -> float:
    return cfg.sigma * cfg.scale / math.sqrt(cfg.batch_size)


def rdp_discrete(cfg: DpConfig, alpha: float) -> float:
    """Discrete bound with values scaled into the fixed-point domain before squaring."""
    sigma_pc = per_client_scaled_sigma(cfg)
    if sigma_pc < 0.5:
        raise ParameterError(
            f"per-client noise {sigma_pc:.4f} (fixed-point units) is below 1/2"
        )
    per_epoch = discrete_sum_divergence(
        alpha, cfg.clip_C * cfg.scale, sigma_pc, cfg.batch_size, cfg.dimension
    )
    return cfg.epochs * per_epoch


def curve(cfg: DpConfig, discrete: bool = False, alphas: np.ndarray = ALPHA_GRID) -> RdpCurve:
    fn = rdp_discrete if discrete else rdp_continuous
    return RdpCurve(np.asarray(alphas, dtype=np.float64), np.array([fn(cfg, a) for a in alphas]))


def to_eps_delta(curve: RdpCurve, delta: float) -> Tuple[float, float]:
    """min over alpha of eps_RDP(alpha) + log(1/delta) / (alpha - 1); returns (eps, alpha*)."""
    if len(curve) == 0:
        raise ParameterError("cannot convert an empty RDP curve")
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta must be in (0, 1), got {delta}")
    usable = curve.alphas > 1.0
    if not np.any(usable):
        raise ParameterError("RDP curve has no order above 1")
    alphas = curve.alphas[usable]
    eps = curve.values[usable] + math.log(1.0 / delta) / (alphas - 1.0)
    best = int(np.argmin(eps))
    return float(eps[best]), float(alphas[best])


def degraded_guarantee(cfg: DpConfig) -> RdpCurve:
    """Continuous curve when only honest_fraction of the noise is actually added."""
    if cfg.honest_fraction <= 0:
        raise ParameterError("honest_fraction must be positive")
    effective = replace(cfg, sigma=math.sqrt(cfg.honest_fraction) * cfg.sigma, honest_fraction=1.0)
    return curve(effective)


def epsilon(cfg: DpConfig, discrete: bool = False) -> Tuple[float, float]:
    return to_eps_delta(curve(cfg, discrete), cfg.delta)


def epsilon_grid(epochs: int = 1, delta: float = config.DEFAULT_DELTA,
                clip_C: float = config.DEFAULT_CLIP_C, dimension: int = 1) -> pd.DataFrame:
    """eps for every noisy (sigma, b) pair of the accuracy experiments, both analyses."""
    rows = []
    for sigma in config.EVAL_SIGMAS:
        if sigma == 0:
            continue
        for b in config.EVAL_BATCH_SIZES:
            cfg = DpConfig(sigma=sigma, clip_C=clip_C, batch_size=b, epochs=epochs,
                           delta=delta, dimension=dimension)
            eps_c, alpha_c = epsilon(cfg)
            eps_d, alpha_d = epsilon(cfg, discrete=True)
            rows.append({
                "sigma": sigma, "batch_size": b, "epochs": epochs,
                "eps_continuous": eps_c, "alpha_continuous": alpha_c,
                "eps_discrete": eps_d, "alpha_discrete": alpha_d,
                "relative_difference": abs(eps_d - eps_c) / eps_c,
            })
    return pd.DataFrame(rows)


class PrivacyLedger:
    """
    Tracks how often each example's gradient was released.

    Batches are disjoint within an epoch, so the spent budget is the curve
    with E replaced by the largest release count of any single example.
    Aborted batches are never recorded.
    """

    def __init__(self, cfg: DpConfig):
        self.cfg = cfg
        self.releases: Counter = Counter()
        self.batches = 0

    def record_batch(self, example_ids: Iterable[int]):
        ids = list(example_ids)
        self.releases.update(ids)
        self.batches += 1

    @property
    def spent_epochs(self) -> int:
        return max(self.releases.values(), default=0)

    def epsilon(self, discrete: bool = False) -> Tuple[float, Optional[float]]:
        spent = self.spent_epochs
        if spent == 0:
            return 0.0, None
        return epsilon(replace(self.cfg, epochs=spent), discrete)
