"""
Packed Shamir Secret Sharing

Standard packed Shamir: p secrets ride on one polynomial of degree
t + p - 1. Any t shares reveal nothing, any r = t + p shares determine the
secrets. Sharings are additively homomorphic, so clients can sum shares
locally and only the sum is ever reconstructed.

Two point layouts:
    lagrange - shares at 1..k, secrets at q-1, q-2, ..., q-p
    fft      - secrets on the order-p subgroup, shares on the coset
               g * <w_N> (N = next power of two >= k), dealt with one NTT

reconstruct_verified implements the abort-on-inconsistency check: the
lowest r shares define a polynomial and every surplus share must lie on
it. A mismatch returns an Abort value rather than raising; aborting is a
protocol outcome, not an error.
"""

import logging
import struct
from dataclasses import dataclass, field as dataclass_field
from functools import lru_cache
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from errors import (
    AlignmentError,
    CapacityError,
    InsufficientSharesError,
    ParameterError,
    ShapeError,
)
from field import PrimeFieldCtx, next_power_of_two

logger = logging.getLogger(__name__)

LAYOUTS = ("lagrange", "fft")
SHARE_HEADER = struct.Struct("<IH")


@dataclass(frozen=True)
class Abort:
    """ABORT outcome: `reason` says what failed, `stage` where."""

    reason: str
    stage: str = "reconstruct"

    def __bool__(self) -> bool:
        return False


def is_abort(value) -> bool:
    return isinstance(value, Abort)


@dataclass(frozen=True, eq=False)
class SharingConfig:
    """
    Parameters of one packed sharing scheme.

    Attributes:
        k: number of clients (shares)
        t: privacy threshold
        p: packing width
        field: prime field
        layout: "lagrange" or "fft"
        malicious: reserve one surplus share for verified reconstruction
    """

    k: int
    t: int
    p: int
    field: PrimeFieldCtx
    layout: str = "lagrange"
    malicious: bool = False
    eval_points: np.ndarray = dataclass_field(init=False, repr=False)
    secret_points: np.ndarray = dataclass_field(init=False, repr=False)

    def __post_init__(self):
        k, t, p = self.k, self.t, self.p
        if self.layout not in LAYOUTS:
            raise ParameterError(f"unknown share layout {self.layout!r}")
        if t < 1 or p < 1:
            raise ParameterError(f"need t >= 1 and p >= 1, got t={t}, p={p}")
        if t + p > k:
            raise ParameterError(f"reconstruction threshold t+p={t + p} exceeds k={k}")
        if self.malicious and t + p + 1 > k:
            raise ParameterError(
                f"verified reconstruction needs t+p+1 <= k, got t={t}, p={p}, k={k}"
            )

        if self.layout == "lagrange":
            eval_points, secret_points = self._lagrange_points()
        else:
            eval_points, secret_points = self._fft_points()
        eval_points.setflags(write=False)
        secret_points.setflags(write=False)
        object.__setattr__(self, "eval_points", eval_points)
        object.__setattr__(self, "secret_points", secret_points)

    def _lagrange_points(self):
        q = self.field.q
        if self.k + self.p >= q:
            raise CapacityError(f"k+p={self.k + self.p} points do not fit in F_{q}")
        eval_points = np.arange(1, self.k + 1, dtype=np.int64)
        secret_points = q - 1 - np.arange(self.p, dtype=np.int64)
        return eval_points, secret_points

    def _fft_points(self):
        ctx = self.field
        if self.p & (self.p - 1):
            raise ParameterError(f"fft layout needs p to be a power of two, got {self.p}")
        capacity = 1 << ctx.two_adicity
        domain = next_power_of_two(self.k)
        if self.k + self.p > capacity or domain > capacity:
            raise CapacityError(
                f"k+p={self.k + self.p} exceeds NTT capacity 2^{ctx.two_adicity} of F_{ctx.q}"
            )
        w_p = ctx.root_of_unity_of_order(self.p)
        secret_points = np.array(
            [pow(w_p, j, ctx.q) for j in range(self.p)], dtype=np.int64
        )
        w_n = ctx.root_of_unity_of_order(domain)
        g = ctx.generator
        eval_points = np.empty(self.k, dtype=np.int64)
        acc = g
        for i in range(self.k):
            eval_points[i] = acc
            acc = acc * w_n % ctx.q
        if np.intersect1d(eval_points, secret_points).size:
            raise ParameterError(f"coset and secret subgroup overlap in F_{ctx.q}")
        return eval_points, secret_points

    @property
    def r(self) -> int:
        """Reconstruction threshold t + p."""
        return self.t + self.p

    @property
    def domain_size(self) -> int:
        return next_power_of_two(self.k)

    @property
    def key(self) -> tuple:
        return (self.k, self.t, self.p, self.field.q, self.layout, self.malicious)

    def __eq__(self, other) -> bool:
        return isinstance(other, SharingConfig) and other.key == self.key

    def __hash__(self) -> int:
        return hash(self.key)

    @classmethod
    def default(cls, k: int, field: PrimeFieldCtx, n: int = None, expected_dropouts: int = 0,
                malicious: bool = False, layout: str = "lagrange") -> "SharingConfig":
        """
        Honest-majority threshold t = min(k//2 + 1, k - 1) and the widest
        packing that still reconstructs after `expected_dropouts` clients
        vanish (one more share is held back in malicious mode).
        """
        if k < 2:
            raise ParameterError(f"sharing needs k >= 2 clients, got {k}")
        t = min(k // 2 + 1, k - 1)
        budget = k - expected_dropouts - t - (1 if malicious else 0)
        if budget < 1:
            raise ParameterError(
                f"k={k} cannot tolerate {expected_dropouts} dropouts with t={t}"
                + (" in malicious mode" if malicious else "")
            )
        p = budget if n is None else min(budget, n)
        if layout == "fft":
            p = 1 << (p.bit_length() - 1)
        return cls(k=k, t=t, p=p, field=field, layout=layout, malicious=malicious)


@dataclass(frozen=True, eq=False)
class ShareSet:
    """
    Shares of one or more packed sharings held by a set of clients.

    values[i, b] is client indices[i]'s share of sharing b. `length` is the
    number of secrets the sharings carry in total (the last block may be
    zero-padded).
    """

    config: SharingConfig
    indices: Tuple[int, ...]
    values: np.ndarray
    length: int

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != len(self.indices):
            raise ShapeError(
                f"share values {self.values.shape} do not match {len(self.indices)} holders"
            )
        if list(self.indices) != sorted(set(self.indices)):
            raise AlignmentError("share indices must be unique and ascending")
        if self.indices and not 0 <= self.indices[0] <= self.indices[-1] < self.config.k:
            raise AlignmentError(f"share indices outside [0, {self.config.k})")

    @property
    def num_sharings(self) -> int:
        return self.values.shape[1]

    @property
    def shares(self) -> Dict[int, np.ndarray]:
        return {idx: self.values[i] for i, idx in enumerate(self.indices)}

    def for_client(self, index: int) -> np.ndarray:
        return self.values[self.indices.index(index)]

    def subset(self, indices: Iterable[int]) -> "ShareSet":
        wanted = sorted(set(indices))
        missing = set(wanted) - set(self.indices)
        if missing:
            raise AlignmentError(f"no shares held for clients {sorted(missing)}")
        rows = [self.indices.index(i) for i in wanted]
        return ShareSet(self.config, tuple(wanted), self.values[rows], self.length)

    def replace(self, index: int, values: np.ndarray) -> "ShareSet":
        new = self.values.copy()
        new[self.indices.index(index)] = np.asarray(values, dtype=np.int64) % self.config.field.q
        return ShareSet(self.config, self.indices, new, self.length)

    @classmethod
    def from_client_shares(cls, config: SharingConfig, shares: Dict[int, np.ndarray],
                           length: int) -> "ShareSet":
        indices = tuple(sorted(shares))
        if not indices:
            return cls(config, (), np.zeros((0, _blocks(length, config.p)), dtype=np.int64), length)
        values = np.vstack([np.asarray(shares[i], dtype=np.int64) for i in indices])
        return cls(config, indices, values, length)


def _blocks(length: int, p: int) -> int:
    return max(1, -(-length // p))


def _secret_blocks(secrets, config: SharingConfig) -> Tuple[np.ndarray, int]:
    vec = config.field.array(secrets).ravel()
    length = vec.shape[0]
    nblocks = _blocks(length, config.p)
    padded = np.zeros(nblocks * config.p, dtype=np.int64)
    padded[:length] = vec
    return padded.reshape(nblocks, config.p), length


@lru_cache(maxsize=64)
def _lagrange_deal_matrix(config: SharingConfig) -> np.ndarray:
    """
    k x (p + t) matrix mapping [secrets; randoms] to shares.

    Anchors are the secret points followed by the first t eval points, so
    the first t clients' shares are the random values themselves.
    """
    ctx, t, p = config.field, config.t, config.p
    anchors = np.concatenate([config.secret_points, config.eval_points[:t]])
    matrix = np.zeros((config.k, p + t), dtype=np.int64)
    matrix[np.arange(t), p + np.arange(t)] = 1
    if config.k > t:
        matrix[t:] = ctx.lagrange_basis(anchors, config.eval_points[t:])
    matrix.setflags(write=False)
    return matrix


@lru_cache(maxsize=4096)
def _reconstruction_weights(config: SharingConfig, indices: Tuple[int, ...]) -> np.ndarray:
    xs = config.eval_points[list(indices)]
    weights = config.field.lagrange_basis(xs, config.secret_points)
    weights.setflags(write=False)
    return weights


@lru_cache(maxsize=4096)
def _check_weights(config: SharingConfig, anchor: Tuple[int, ...],
                   surplus: Tuple[int, ...]) -> np.ndarray:
    weights = config.field.lagrange_basis(
        config.eval_points[list(anchor)], config.eval_points[list(surplus)]
    )
    weights.setflags(write=False)
    return weights


def clear_caches():
    """Drop cached dealing and interpolation matrices (timing runs start cold)."""
    _lagrange_deal_matrix.cache_clear()
    _reconstruction_weights.cache_clear()
    _check_weights.cache_clear()


def share_packed(secrets, config: SharingConfig, rng: np.random.Generator) -> ShareSet:
    """Share up to p secrets with one polynomial of degree t + p - 1."""
    vec = config.field.array(secrets).ravel()
    if vec.shape[0] > config.p:
        raise CapacityError(f"{vec.shape[0]} secrets exceed packing width p={config.p}")
    if vec.shape[0] == 0:
        raise ShapeError("nothing to share")
    return share_vector(vec, config, rng)


def share_vector(vector, config: SharingConfig, rng: np.random.Generator) -> ShareSet:
    """Split a vector into ceil(len/p) packed sharings and deal them all."""
    blocks, length = _secret_blocks(vector, config)
    if config.layout == "fft":
        values = _deal_fft(blocks, config, rng)
    else:
        randoms = config.field.random((blocks.shape[0], config.t), rng)
        stacked = np.hstack([blocks, randoms])
        values = config.field.matmul(_lagrange_deal_matrix(config), stacked.T)
    return ShareSet(config, tuple(range(config.k)), values, length)


def fft_polynomial(secrets: np.ndarray, randoms: np.ndarray, config: SharingConfig) -> np.ndarray:
    """
    Coefficients of f = I + (x^p - 1) * R, ascending degree.

    I interpolates the p secrets on the order-p subgroup (inverse NTT), R
    has the t random coefficients; f has degree t + p - 1 and f = I on the
    subgroup.
    """
    ctx, p, t = config.field, config.p, config.t
    coeffs = np.zeros(p + t, dtype=np.int64)
    coeffs[:p] = ctx.ntt(secrets, inverse=True)
    randoms = ctx.array(randoms)
    coeffs[p:] = randoms
    coeffs[:t] = np.mod(coeffs[:t] - randoms, ctx.q)
    return coeffs


def _deal_fft(blocks: np.ndarray, config: SharingConfig, rng: np.random.Generator) -> np.ndarray:
    ctx = config.field
    domain = config.domain_size
    # Coset evaluation: scale coefficient j by g^j, then evaluate on <w_N>
    g_powers = np.empty(config.r, dtype=np.int64)
    acc = 1
    for j in range(config.r):
        g_powers[j] = acc
        acc = acc * ctx.generator % ctx.q
    randoms = ctx.random((blocks.shape[0], config.t), rng)
    out = np.empty((config.k, blocks.shape[0]), dtype=np.int64)
    for b in range(blocks.shape[0]):
        coeffs = np.zeros(domain, dtype=np.int64)
        coeffs[: config.r] = np.mod(fft_polynomial(blocks[b], randoms[b], config) * g_powers, ctx.q)
        out[:, b] = ctx.ntt(coeffs)[: config.k]
    return out


def share_packed_fft(secrets, config: SharingConfig, rng: np.random.Generator) -> ShareSet:
    """FFT-path dealing; same distribution contract as share_packed."""
    if config.layout != "fft":
        raise ParameterError("share_packed_fft needs a config with the fft layout")
    return share_packed(secrets, config, rng)


def _aligned(a: ShareSet, b: ShareSet):
    if a.config != b.config:
        raise AlignmentError("share sets come from different sharing configs")
    if a.indices != b.indices:
        raise AlignmentError(f"share index sets differ: {a.indices} vs {b.indices}")
    if a.values.shape != b.values.shape or a.length != b.length:
        raise AlignmentError("share sets carry different numbers of sharings")


def add_shares(a: ShareSet, b: ShareSet) -> ShareSet:
    _aligned(a, b)
    return ShareSet(a.config, a.indices, a.config.field.add(a.values, b.values), a.length)


def add_const(a: ShareSet, constant) -> ShareSet:
    """
    Add a public constant to every secret.

    A scalar is added to each share directly. A vector is lifted to the
    degree < p polynomial taking those values at the secret points.
    """
    ctx = a.config.field
    if np.ndim(constant) == 0:
        return ShareSet(a.config, a.indices, np.mod(a.values + int(constant), ctx.q), a.length)
    blocks, length = _secret_blocks(constant, a.config)
    if length != a.length:
        raise ShapeError(f"constant of length {length} added to {a.length} secrets")
    lift = ctx.lagrange_basis(a.config.secret_points, a.config.eval_points[list(a.indices)])
    return ShareSet(a.config, a.indices, ctx.add(a.values, ctx.matmul(lift, blocks.T)), a.length)


def scale(a: ShareSet, constant: int) -> ShareSet:
    return ShareSet(a.config, a.indices, a.config.field.scale(a.values, constant), a.length)


def sum_shares(sets: Sequence[ShareSet]) -> ShareSet:
    total = sets[0]
    for other in sets[1:]:
        total = add_shares(total, other)
    return total


def reconstruct(shares: ShareSet) -> np.ndarray:
    """Interpolate the secrets from the first r shares by ascending index."""
    config = shares.config
    if len(shares.indices) < config.r:
        raise InsufficientSharesError(
            f"{len(shares.indices)} shares present, {config.r} needed"
        )
    return _interpolate(shares, shares.indices[: config.r])


def _interpolate(shares: ShareSet, anchor: Tuple[int, ...]) -> np.ndarray:
    weights = _reconstruction_weights(shares.config, anchor)
    secrets = shares.config.field.matmul(weights, shares.values[: len(anchor)])
    return secrets.T.ravel()[: shares.length]


def reconstruct_verified(shares: ShareSet, check: str = "all") -> Union[np.ndarray, Abort]:
    """
    Reconstruct from the lowest r shares, or ABORT if the share set is inconsistent.

    check="all" tests every surplus share against the polynomial the lowest
    r shares define; check="next" tests only the next share up.
    """
    config = shares.config
    have = len(shares.indices)
    if have < config.r + 1:
        raise InsufficientSharesError(
            f"verified reconstruction needs {config.r + 1} shares, {have} present"
        )
    if check not in ("all", "next"):
        raise ParameterError(f"unknown verification mode {check!r}")

    anchor = shares.indices[: config.r]
    surplus = shares.indices[config.r:] if check == "all" else shares.indices[config.r: config.r + 1]
    predicted = config.field.matmul(
        _check_weights(config, anchor, surplus), shares.values[: config.r]
    )
    actual = shares.values[config.r: config.r + len(surplus)]
    if not np.array_equal(predicted, actual):
        bad = [surplus[i] for i in np.flatnonzero(np.any(predicted != actual, axis=1))]
        logger.warning("share verification failed at surplus shares %s", bad)
        return Abort(reason=f"share inconsistency detected at shares {bad}", stage="reconstruct_verified")
    return _interpolate(shares, anchor)


def encode_share_message(sharing_id: int, client_index: int, values: np.ndarray,
                         field: PrimeFieldCtx) -> bytes:
    """Wire format: sharing id u32, client index u16, then 4-byte elements."""
    return SHARE_HEADER.pack(sharing_id, client_index) + field.to_bytes(values)


def decode_share_message(data: bytes, field: PrimeFieldCtx) -> Tuple[int, int, np.ndarray]:
    if len(data) < SHARE_HEADER.size:
        raise ShapeError(f"share message of {len(data)} bytes is shorter than its header")
    sharing_id, client_index = SHARE_HEADER.unpack_from(data)
    return sharing_id, client_index, field.from_bytes(data[SHARE_HEADER.size:])
