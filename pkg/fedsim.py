"""
Federated DP Training Simulator

The server-side training loop. Every batch is b clients, one training
example each. Each client clips its gradient, adds its share of the DP noise
N(0, sigma^2 / b), encodes to fixed point, and the batch runs one round of
masking aggregation. The server decodes the noisy sum and takes a momentum
SGD step.

A plaintext path computes the same noisy sum without any cryptography from
the same random streams, so the two can be compared run for run.
"""

import logging
import math
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

import config
from accountant import DpConfig, PrivacyLedger
from base_source import Dataset, GradientSource
from codec import CodecConfig, GradientFileWriter, clip, decode_sum, encode
from errors import AggregationAborted, ParameterError, ShapeError
from gradient_sources import GradientFileSource, LogisticRegression, OneHiddenLayerMLP
from lwe import LweParams, PublicMatrix
from protocol import AdversarySpec, AggregationOutcome, Behavior, run_masking_aggregation
from sampler import Prg, sample_gaussian
from shamir import SharingConfig

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["epoch", "batch", "accuracy", "eps_continuous", "eps_discrete", "aborts", "clamp_count"]
SOURCE_KINDS = ("logreg", "mlp", "file")


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 32
    epochs: int = 5
    learning_rate: float = config.DEFAULT_LEARNING_RATE
    momentum: float = config.DEFAULT_MOMENTUM
    clip_C: float = config.DEFAULT_CLIP_C
    sigma: float = 1.0
    seed: str = config.DEFAULT_SEED
    delta: float = config.DEFAULT_DELTA
    lwe_preset: str = "a"
    beta_q: float = config.DEFAULT_BETA_Q
    zero_noise: bool = False
    malicious: bool = False
    topology: str = "server"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ParameterError(
                f"batch_size and epochs must be >= 1, got {self.batch_size}, {self.epochs}"
            )
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.clip_C <= 0:
            raise ParameterError(f"clip_C must be positive, got {self.clip_C}")
        if self.sigma < 0:
            raise ParameterError(f"sigma must be >= 0, got {self.sigma}")
        if self.lwe_preset not in config.LWE_PRESETS:
            raise ParameterError(f"unknown LWE preset {self.lwe_preset!r}")

        if self.sigma not in config.EVAL_SIGMAS:
            logger.warning("sigma=%s is not one of the evaluated settings %s",
                           self.sigma, config.EVAL_SIGMAS)
        if self.batch_size not in config.EVAL_BATCH_SIZES:
            logger.warning("batch_size=%d is not one of the evaluated settings %s",
                           self.batch_size, config.EVAL_BATCH_SIZES)

    @property
    def codec(self) -> CodecConfig:
        return CodecConfig(clip_C=self.clip_C)

    def lwe_params(self, m: int) -> LweParams:
        return LweParams.preset(self.lwe_preset, m=m, beta_q=self.beta_q, zero_noise=self.zero_noise)

    def dp_config(self, dimension: int) -> Optional[DpConfig]:
        if self.sigma == 0:
            return None
        return DpConfig(sigma=self.sigma, clip_C=self.clip_C, batch_size=self.batch_size,
                        epochs=self.epochs, delta=self.delta, dimension=dimension)


@dataclass
class ModelState:
    theta: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        if self.theta.shape != self.velocity.shape:
            raise ShapeError("parameters and momentum buffer differ in shape")

    def step(self, gradient_sum: np.ndarray, batch_size: int, learning_rate: float, momentum: float):
        """v <- momentum * v - lr * G / b ; theta <- theta + v."""
        self.velocity = momentum * self.velocity - learning_rate * gradient_sum / batch_size
        self.theta = self.theta + self.velocity
        if not np.all(np.isfinite(self.theta)):
            raise ParameterError("model parameters diverged to non-finite values")


@dataclass(frozen=True)
class BatchClient:
    """One simulated client holding one training example."""

    source: GradientSource
    index: int


@dataclass
class BatchResult:
    gradient: np.ndarray
    participants: List[int]
    clamped: int = 0
    outcome: Optional[AggregationOutcome] = None


@dataclass
class TrainResult:
    state: ModelState
    ledger: Optional[PrivacyLedger]
    metrics: pd.DataFrame
    aborts: int = 0
    clamp_count: int = 0


def _client_stream(seed, epoch: int, batch: int, position: int) -> np.random.Generator:
    return Prg(seed).generator(f"noise/{epoch}/{batch}/{position}")


def noisy_client_gradients(clients: Sequence[BatchClient], cfg: TrainingConfig, theta: np.ndarray,
                           epoch: int = 0, batch: int = 0,
                           adversary: AdversarySpec = None) -> np.ndarray:
    """
    Each client's clipped gradient plus its N(0, sigma^2 / b) noise share.

    Clients flagged no_noise by the adversary skip the noise.
    """
    adversary = adversary or AdversarySpec()
    b = len(clients)
    per_client_sigma = cfg.sigma / math.sqrt(b)
    rows = []
    for position, client in enumerate(clients):
        g = clip(client.source.example_gradient(theta, client.index), cfg.clip_C)
        if not adversary.acts(position, Behavior.NO_NOISE):
            rng = _client_stream(cfg.seed, epoch, batch, position)
            g = g + sample_gaussian(per_client_sigma, g.shape[0], rng)
        rows.append(g)
    return np.vstack(rows)


def noisy_batch_gradient_plain(clients: Sequence[BatchClient], cfg: TrainingConfig, theta: np.ndarray,
                               epoch: int = 0, batch: int = 0, adversary: AdversarySpec = None,
                               participants: Sequence[int] = None) -> BatchResult:
    """Plain noisy sum over `participants` (default: everyone); no crypto, no quantization."""
    noisy = noisy_client_gradients(clients, cfg, theta, epoch, batch, adversary)
    members = list(range(len(clients))) if participants is None else sorted(participants)
    return BatchResult(gradient=noisy[members].sum(axis=0), participants=members)


def noisy_batch_gradient_secure(clients: Sequence[BatchClient], cfg: TrainingConfig, theta: np.ndarray,
                                lwe: LweParams = None, sharing: SharingConfig = None,
                                adversary: AdversarySpec = None, epoch: int = 0, batch: int = 0,
                                matrix: PublicMatrix = None,
                                dump: GradientFileWriter = None) -> BatchResult:
    """
    Encode every client's noisy clipped gradient and aggregate with masking.

    Raises AggregationAborted when the protocol returns ABORT.
    """
    adversary = adversary or AdversarySpec()
    m = clients[0].source.dimension
    lwe = lwe or cfg.lwe_params(m)
    if lwe.m != m:
        raise ShapeError(f"LWE vector length {lwe.m} does not match model dimension {m}")
    field = lwe.field
    codec = cfg.codec

    noisy = noisy_client_gradients(clients, cfg, theta, epoch, batch, adversary)
    if dump is not None:
        for row in noisy:
            dump.write(row)
    encoded = [encode(row, codec, field) for row in noisy]
    clamped = sum(e.clamped for e in encoded)

    outcome = run_masking_aggregation(
        [e.elements for e in encoded], lwe, sharing, adversary,
        seed=Prg(cfg.seed).derive(f"aggregate/{epoch}/{batch}"),
        malicious=cfg.malicious, topology=cfg.topology,
        round_id=epoch * 100_000 + batch, matrix=matrix,
    )
    if outcome.aborted:
        raise AggregationAborted(outcome)

    k = len(outcome.participants)
    chi_sigma = 0.0 if lwe.zero_noise else lwe.sigma_chi * math.sqrt(k) / codec.scale
    gradient = decode_sum(outcome.result, k, codec, field, noise_sigma=chi_sigma)
    return BatchResult(gradient=gradient, participants=sorted(outcome.participants),
                       clamped=clamped, outcome=outcome)


def _epsilons(ledger: Optional[PrivacyLedger]):
    if ledger is None:
        return math.inf, math.inf
    eps_c, _ = ledger.epsilon()
    try:
        eps_d, _ = ledger.epsilon(discrete=True)
    except ParameterError:
        eps_d = math.nan
    return eps_c, eps_d


def train(cfg: TrainingConfig, source: GradientSource, lwe: LweParams = None,
          sharing: SharingConfig = None, adversary: AdversarySpec = None,
          secure: bool = True, metrics_path=None, dump_gradients=None) -> TrainResult:
    """
    Momentum SGD over disjoint batches of b examples for E epochs.

    Aborted batches are skipped: no update and no privacy spend.
    """
    adversary = adversary or AdversarySpec()
    m = source.dimension
    lwe = lwe or cfg.lwe_params(m)
    if lwe.m != m:
        raise ShapeError(f"LWE vector length {lwe.m} does not match model dimension {m}")
    if source.num_examples < cfg.batch_size:
        raise ParameterError(
            f"{source.num_examples} examples cannot fill a batch of {cfg.batch_size}"
        )
    adversary.validate(cfg.batch_size)

    prg = Prg(cfg.seed)
    theta = source.init_params(prg.generator("train/init"))
    state = ModelState(theta=theta, velocity=np.zeros_like(theta))
    dp = cfg.dp_config(m)
    ledger = PrivacyLedger(dp) if dp is not None else None
    shuffle = prg.generator("train/shuffle")
    matrix_seed = prg.derive("train/A")
    matrix = PublicMatrix(matrix_seed, lwe.m, lwe.n, lwe.field) if secure else None

    dump = GradientFileWriter(dump_gradients, m, source.manifest()) if dump_gradients else None
    rows = []
    aborts = clamp_count = batches_done = 0
    batches_per_epoch = source.num_examples // cfg.batch_size
    logger.info("training %s for %d epochs of %d batches (secure=%s)",
                source.name, cfg.epochs, batches_per_epoch, secure)
    try:
        for epoch in range(cfg.epochs):
            order = shuffle.permutation(source.num_examples)
            for batch in range(batches_per_epoch):
                ids = order[batch * cfg.batch_size:(batch + 1) * cfg.batch_size]
                clients = [BatchClient(source, int(i)) for i in ids]
                if secure:
                    try:
                        result = noisy_batch_gradient_secure(
                            clients, cfg, state.theta, lwe, sharing, adversary,
                            epoch=epoch, batch=batch, matrix=matrix, dump=dump,
                        )
                    except AggregationAborted as e:
                        aborts += 1
                        logger.warning("epoch %d batch %d skipped: %s", epoch, batch, e)
                        continue
                else:
                    result = noisy_batch_gradient_plain(clients, cfg, state.theta, epoch, batch, adversary)
                    if dump is not None:
                        for row in noisy_client_gradients(clients, cfg, state.theta, epoch, batch, adversary):
                            dump.write(row)

                state.step(result.gradient, cfg.batch_size, cfg.learning_rate, cfg.momentum)
                clamp_count += result.clamped
                batches_done += 1
                if ledger is not None:
                    ledger.record_batch(int(ids[p]) for p in result.participants)

            eps_c, eps_d = _epsilons(ledger)
            rows.append({
                "epoch": epoch + 1,
                "batch": batches_done,
                "accuracy": source.accuracy(state.theta),
                "eps_continuous": eps_c,
                "eps_discrete": eps_d,
                "aborts": aborts,
                "clamp_count": clamp_count,
            })
            logger.info("epoch %d: accuracy=%s eps=%.4f aborts=%d",
                        epoch + 1, rows[-1]["accuracy"], eps_c, aborts)
    finally:
        if dump is not None:
            dump.close()

    metrics = pd.DataFrame(rows, columns=METRICS_COLUMNS)
    if metrics_path is not None:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
        metrics.to_csv(metrics_path, index=False)
    return TrainResult(state=state, ledger=ledger, metrics=metrics,
                       aborts=aborts, clamp_count=clamp_count)


def ingest_gradients(path) -> GradientFileSource:
    """Validating streaming reader over a gradient file."""
    return GradientFileSource(path)


def load_dataset(data: str = "synthetic", seed: int = 0, **kwargs) -> Dataset:
    if data == "synthetic":
        return Dataset.synthetic(seed=seed, **kwargs)
    return Dataset.from_csv(data, seed=seed)


def create_source(kind: str, dataset: Dataset = None, path=None, hidden: int = 16) -> GradientSource:
    """Build the gradient source named by `kind` ('logreg', 'mlp' or 'file')."""
    if kind == "file":
        if path is None:
            raise ParameterError("gradient file source needs a path")
        return ingest_gradients(path)
    if dataset is None:
        raise ParameterError(f"{kind!r} source needs a dataset")
    if kind == "logreg":
        return LogisticRegression(dataset)
    if kind == "mlp":
        return OneHiddenLayerMLP(dataset, hidden=hidden)
    raise ParameterError(f"unknown gradient source {kind!r}; choose from {SOURCE_KINDS}")
