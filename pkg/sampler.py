"""
Randomness sources

- Prg: counter-mode SHAKE-256 over a 32-byte seed. Drives the public
  matrix A and every derived seed, so a master seed replays a whole run.
- expand_matrix / expand_row_block: uniform field entries by rejection.
- sample_chi: exact discrete Gaussian (discrete Laplace proposal with an
  acceptance correction), mapped into F_q.
- sample_gaussian: continuous DP noise.

Per-client numeric streams are numpy Generators on Philox keyed from Prg
output; create one per simulated client and never share it.
"""

import hashlib
import logging
import math
from dataclasses import dataclass

import numpy as np

import config
from errors import ParameterError
from field import PrimeFieldCtx

logger = logging.getLogger(__name__)

SEED_BYTES = 32


def parse_seed(seed) -> bytes:
    """
    Normalize a master seed to 32 bytes.

    Accepts raw bytes, a hex string or an int. Anything that is not already
    exactly 32 bytes is hashed down to 32 bytes.
    """
    if isinstance(seed, bytes):
        raw = seed
    elif isinstance(seed, int):
        if seed < 0:
            raise ParameterError(f"seed must be nonnegative, got {seed}")
        raw = seed.to_bytes(max(1, (seed.bit_length() + 7) // 8), "little")
    elif isinstance(seed, str):
        text = seed.strip().lower()
        if text.startswith("0x"):
            text = text[2:]
        try:
            raw = bytes.fromhex(text)
        except ValueError as e:
            raise ParameterError(f"seed is not a hex string: {seed!r}") from e
    else:
        raise ParameterError(f"unsupported seed type {type(seed).__name__}")

    if len(raw) == SEED_BYTES:
        return raw
    return hashlib.shake_256(b"fldp-seed" + raw).digest(SEED_BYTES)


class Prg:
    """
    Deterministic byte stream keyed by (seed, counter).

    Output for a given (seed, counter, length) never changes, and longer
    requests extend shorter ones.
    """

    def __init__(self, seed, counter: int = 0):
        self.seed = parse_seed(seed)
        self.counter = counter

    def read(self, length: int, counter: int = None) -> bytes:
        c = self.counter if counter is None else counter
        return hashlib.shake_256(self.seed + c.to_bytes(8, "little")).digest(length)

    def next(self, length: int) -> bytes:
        out = self.read(length)
        self.counter += 1
        return out

    def derive(self, label: str) -> bytes:
        """Child seed for a named purpose, e.g. 'client/3/secret'."""
        return hashlib.shake_256(self.seed + b"/derive/" + label.encode()).digest(SEED_BYTES)

    def child(self, label: str) -> "Prg":
        return Prg(self.derive(label))

    def generator(self, label: str = "numpy") -> np.random.Generator:
        key = int.from_bytes(self.derive(label)[:16], "little")
        return np.random.Generator(np.random.Philox(key=key))


def _uniform_words(stream_seed: bytes, count: int, q: int) -> np.ndarray:
    """`count` uniform residues in [0, q) from one SHAKE stream, by masked rejection."""
    mask = (1 << (q - 1).bit_length()) - 1
    # Acceptance rate is q / (mask + 1) >= 1/2
    words = int(count * (mask + 1) / q * 1.1) + 64
    while True:
        raw = np.frombuffer(
            hashlib.shake_256(stream_seed).digest(4 * words), dtype="<u4"
        ).astype(np.int64)
        candidates = raw & mask
        accepted = candidates[candidates < q]
        if accepted.shape[0] >= count:
            return accepted[:count]
        words *= 2


def expand_row_block(seed: bytes, block: int, n: int, field: PrimeFieldCtx,
                     rows: int = config.MATRIX_ROW_BLOCK) -> np.ndarray:
    """Rows [block*rows, (block+1)*rows) of A; independent of the total row count."""
    stream = parse_seed(seed) + b"/A/" + block.to_bytes(8, "little") + n.to_bytes(4, "little")
    return _uniform_words(stream, rows * n, field.q).reshape(rows, n)


def expand_rows(seed: bytes, start: int, stop: int, n: int, field: PrimeFieldCtx,
                rows_per_block: int = config.MATRIX_ROW_BLOCK) -> np.ndarray:
    """Rows [start, stop) of A assembled from whole blocks."""
    first = start // rows_per_block
    last = (stop - 1) // rows_per_block
    blocks = [expand_row_block(seed, b, n, field, rows_per_block) for b in range(first, last + 1)]
    joined = np.vstack(blocks)
    offset = first * rows_per_block
    return joined[start - offset: stop - offset]


def expand_matrix(seed: bytes, m: int, n: int, field: PrimeFieldCtx) -> np.ndarray:
    """Public m x n matrix A, uniform over F_q and deterministic in the seed."""
    if m < 1 or n < 1:
        raise ParameterError(f"matrix dimensions must be >= 1, got {m}x{n}")
    return expand_rows(seed, 0, m, n, field)


@dataclass(frozen=True)
class ChiParams:
    """LWE error distribution: discrete Gaussian over Z with sd sigma_chi, reduced mod q."""

    sigma_chi: float
    q: int

    def __post_init__(self):
        if self.sigma_chi < 0.5:
            raise ParameterError(
                f"sigma_chi must be >= 1/2 for the discrete sum bound, got {self.sigma_chi}"
            )

    @classmethod
    def from_beta_q(cls, beta_q: float = config.DEFAULT_BETA_Q, q: int = 0,
                    convention: str = config.DEFAULT_CHI_CONVENTION) -> "ChiParams":
        """
        Build from the width beta*q.

        convention "stddev" reads beta*q as a Gaussian width, giving
        sigma = beta*q / sqrt(2*pi) (about 1.2766 for 3.2). "width" takes
        sigma = beta*q directly.
        """
        if convention == "stddev":
            sigma = beta_q / math.sqrt(2 * math.pi)
        elif convention == "width":
            sigma = beta_q
        else:
            raise ParameterError(f"unknown chi convention {convention!r}")
        return cls(sigma_chi=sigma, q=q)


def sample_discrete_gaussian(sigma: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """
    Exact samples from N_Z(0, sigma^2) as signed int64.

    Discrete Laplace proposals with scale t = floor(sigma) + 1, accepted
    with probability exp(-(|y| - sigma^2/t)^2 / (2 sigma^2)). Vectorized:
    each pass draws a batch sized to the expected acceptance rate.
    """
    if sigma <= 0:
        raise ParameterError(f"discrete Gaussian needs sigma > 0, got {sigma}")
    if count <= 0:
        return np.zeros(0, dtype=np.int64)

    t = math.floor(sigma) + 1
    p_geom = -math.expm1(-1.0 / t)
    sigma2 = sigma * sigma
    out = np.empty(count, dtype=np.int64)
    filled = 0
    while filled < count:
        batch = max(64, int((count - filled) * 1.6))
        # Difference of two geometrics is discrete Laplace with scale t
        y = rng.geometric(p_geom, size=batch) - rng.geometric(p_geom, size=batch)
        accept_p = np.exp(-((np.abs(y) - sigma2 / t) ** 2) / (2 * sigma2))
        kept = y[rng.random(batch) < accept_p]
        take = min(kept.shape[0], count - filled)
        out[filled: filled + take] = kept[:take]
        filled += take
    return out


def sample_chi(params: ChiParams, count: int, rng: np.random.Generator) -> np.ndarray:
    """count draws from chi, as canonical residues mod q (negative v maps to q - |v|)."""
    return np.mod(sample_discrete_gaussian(params.sigma_chi, count, rng), params.q)


def sample_gaussian(sigma: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. N(0, sigma^2) reals; sigma == 0 gives zeros."""
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.zeros(count, dtype=np.float64)
    return rng.normal(0.0, sigma, size=count)
