"""
LWE Masking

Each client hides its vector v behind the one-time pad b = A s + e:
    h = v + b
The server only ever learns sum(s) (through secure vector addition), so
    H - A * sum(s) = sum(v) + sum(e)
and the individual errors stay in the aggregate.

All clients of a round share one public matrix A expanded from a seed.
PublicMatrix owns that expansion: it caches A when it is small enough and
streams row blocks otherwise.
"""

import logging
import struct
import threading
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np

import config
from errors import ParameterError, ShapeError
from field import PrimeFieldCtx, get_field
from sampler import ChiParams, Prg, expand_rows, parse_seed, sample_chi

logger = logging.getLogger(__name__)

MASKED_HEADER = struct.Struct("<IHI")
_FLOAT_EXACT = float(1 << 53)


@dataclass(frozen=True)
class LweParams:
    """
    (n, q, beta*q) plus the vector length m.

    zero_noise is a test hook: it forces e = 0 so aggregation becomes exact.
    It is never on by default and every use is logged as a warning.
    """

    n: int
    q: int
    m: int
    beta_q: float = config.DEFAULT_BETA_Q
    chi_convention: str = config.DEFAULT_CHI_CONVENTION
    zero_noise: bool = False

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ParameterError(f"LWE dimensions must be >= 1, got n={self.n}, m={self.m}")
        if self.beta_q <= 0:
            raise ParameterError(f"beta_q must be positive, got {self.beta_q}")
        get_field(self.q)

    @classmethod
    def preset(cls, name: str, m: int, **kwargs) -> "LweParams":
        try:
            n, q = config.LWE_PRESETS[name]
        except KeyError:
            raise ParameterError(
                f"unknown LWE preset {name!r}; choose from {sorted(config.LWE_PRESETS)}"
            ) from None
        return cls(n=n, q=q, m=m, **kwargs)

    @property
    def field(self) -> PrimeFieldCtx:
        return get_field(self.q)

    @property
    def chi(self) -> ChiParams:
        return ChiParams.from_beta_q(self.beta_q, self.q, self.chi_convention)

    @property
    def sigma_chi(self) -> float:
        return self.chi.sigma_chi

    @property
    def max_clients(self) -> int:
        """Clients whose 16-bit encoded sums fit below q with the noise margin."""
        return (self.q - config.NOISE_MARGIN) // (1 << config.FIXED_POINT_BITS)


class PublicMatrix:
    """
    The round's public matrix A (m x n), shared read-only by every client.

    Products use a float64 BLAS path whenever every partial sum stays below
    2^53 (always true for chi-distributed vectors), else an exact chunked
    integer path.
    """

    def __init__(self, a_seed, m: int, n: int, field: PrimeFieldCtx,
                 cache_limit: int = config.MATRIX_CACHE_LIMIT,
                 row_block: int = config.MATRIX_ROW_BLOCK):
        self.a_seed = parse_seed(a_seed)
        self.m = m
        self.n = n
        self.field = field
        self.row_block = row_block
        self.cached = m * n <= cache_limit
        self._rows = None
        self._rows_float = None
        self._lock = threading.Lock()

    def rows(self, start: int = 0, stop: int = None) -> np.ndarray:
        stop = self.m if stop is None else stop
        if self.cached:
            return self._full()[start:stop]
        return expand_rows(self.a_seed, start, stop, self.n, self.field, self.row_block)

    def _full(self) -> np.ndarray:
        with self._lock:
            if self._rows is None:
                self._rows = expand_rows(self.a_seed, 0, self.m, self.n, self.field, self.row_block)
                self._rows.setflags(write=False)
            return self._rows

    def _full_float(self) -> np.ndarray:
        rows = self._full()
        with self._lock:
            if self._rows_float is None:
                self._rows_float = rows.astype(np.float64)
            return self._rows_float

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matmat(np.asarray(x).reshape(-1, 1))[:, 0]

    def matmat(self, x: np.ndarray) -> np.ndarray:
        """A @ x mod q for x of shape (n, c)."""
        x = np.asarray(x, dtype=np.int64)
        if x.shape[0] != self.n:
            raise ShapeError(f"A has {self.n} columns, operand has {x.shape[0]} rows")
        signed = self.field.centered(np.mod(x, self.field.q))
        bound = float(self.field.q) * float(np.abs(signed).max(initial=0)) * self.n
        use_float = bound < _FLOAT_EXACT

        if self.cached:
            return self._product(self._full(), signed, use_float, full=True)
        out = np.empty((self.m, x.shape[1]), dtype=np.int64)
        step = self.row_block * 16
        for start in range(0, self.m, step):
            stop = min(self.m, start + step)
            out[start:stop] = self._product(self.rows(start, stop), signed, use_float)
        return out

    def _product(self, rows, signed, use_float, full=False):
        if use_float:
            lhs = self._full_float() if full else rows.astype(np.float64)
            exact = np.rint(lhs @ signed.astype(np.float64)).astype(np.int64)
            return np.mod(exact, self.field.q)
        return self.field.matmul(rows, np.mod(signed, self.field.q))


@dataclass(frozen=True)
class MaskKey:
    """A client's LWE secret s (length n) and error e (length m)."""

    s: np.ndarray
    e: np.ndarray


@dataclass(frozen=True)
class MaskedVector:
    """h = v + A s + e as sent by one client."""

    h: np.ndarray
    client_id: int
    round_id: int = 0

    def to_bytes(self, field: PrimeFieldCtx) -> bytes:
        """Wire format: round id u32, client id u16, m u32, then m 4-byte elements."""
        return MASKED_HEADER.pack(self.round_id, self.client_id, self.h.shape[0]) + field.to_bytes(self.h)

    @classmethod
    def from_bytes(cls, data: bytes, field: PrimeFieldCtx) -> "MaskedVector":
        if len(data) < MASKED_HEADER.size:
            raise ShapeError(f"masked vector of {len(data)} bytes is shorter than its header")
        round_id, client_id, m = MASKED_HEADER.unpack_from(data)
        h = field.from_bytes(data[MASKED_HEADER.size:])
        if h.shape[0] != m:
            raise ShapeError(f"header says m={m}, payload holds {h.shape[0]} elements")
        return cls(h=h, client_id=client_id, round_id=round_id)


def _client_noise(params: LweParams, client_seed, secret_override=None) -> MaskKey:
    rng = Prg(client_seed).generator("lwe/chi")
    chi = params.chi
    if secret_override is not None:
        s = params.field.array(secret_override)
        if s.shape != (params.n,):
            raise ShapeError(f"secret override must have length n={params.n}")
    else:
        s = sample_chi(chi, params.n, rng)
    if params.zero_noise:
        e = np.zeros(params.m, dtype=np.int64)
    else:
        e = sample_chi(chi, params.m, rng)
    return MaskKey(s=s, e=e)


def _warn_zero_noise(params: LweParams):
    if params.zero_noise:
        logger.warning("ZERO-NOISE TEST HOOK ACTIVE: LWE errors forced to 0, masks are insecure")


def _matrix_for(params: LweParams, a_seed, matrix: Optional[PublicMatrix]) -> PublicMatrix:
    if matrix is None:
        return PublicMatrix(a_seed, params.m, params.n, params.field)
    if (matrix.m, matrix.n, matrix.field.q) != (params.m, params.n, params.q):
        raise ShapeError(
            f"public matrix is {matrix.m}x{matrix.n} over q={matrix.field.q}, "
            f"params need {params.m}x{params.n} over q={params.q}"
        )
    return matrix


def gen_mask(params: LweParams, a_seed, client_seed, matrix: PublicMatrix = None,
             secret_override=None) -> Tuple[MaskKey, np.ndarray]:
    """Draw (s, e) from the client seed and return the pad b = A s + e."""
    _warn_zero_noise(params)
    matrix = _matrix_for(params, a_seed, matrix)
    key = _client_noise(params, client_seed, secret_override)
    b = params.field.add(matrix.matvec(key.s), key.e)
    return key, b


def gen_masks(params: LweParams, a_seed, client_seeds: Dict[int, bytes],
              matrix: PublicMatrix = None) -> Dict[int, Tuple[MaskKey, np.ndarray]]:
    """gen_mask for many clients with a single A @ [s_1 ... s_k] product."""
    _warn_zero_noise(params)
    matrix = _matrix_for(params, a_seed, matrix)
    ids = sorted(client_seeds)
    if not ids:
        return {}
    keys = [_client_noise(params, client_seeds[i]) for i in ids]
    products = matrix.matmat(np.stack([key.s for key in keys], axis=1))
    field = params.field
    return {
        cid: (key, field.add(products[:, col], key.e))
        for col, (cid, key) in enumerate(zip(ids, keys))
    }


def mask(v: np.ndarray, b: np.ndarray, client_id: int = 0, field: PrimeFieldCtx = None,
         round_id: int = 0) -> MaskedVector:
    v = np.asarray(v, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if v.shape != b.shape:
        raise ShapeError(f"vector length {v.shape} does not match mask length {b.shape}")
    if field is None:
        raise ParameterError("mask needs the field context")
    return MaskedVector(h=field.add(v, b), client_id=client_id, round_id=round_id)


def unmask_sum(H: np.ndarray, s_sum: np.ndarray,
               a_seed_or_matrix: Union[bytes, str, PublicMatrix],
               field: PrimeFieldCtx = None) -> np.ndarray:
    """V = H - A * s_sum: the sum of the inputs plus the sum of the errors."""
    H = np.asarray(H, dtype=np.int64)
    s_sum = np.asarray(s_sum, dtype=np.int64)
    if isinstance(a_seed_or_matrix, PublicMatrix):
        matrix = a_seed_or_matrix
        if (matrix.m, matrix.n) != (H.shape[0], s_sum.shape[0]):
            raise ShapeError(
                f"public matrix is {matrix.m}x{matrix.n}, got H of {H.shape[0]} and s of {s_sum.shape[0]}"
            )
    else:
        if field is None:
            raise ParameterError("unmask_sum needs the field when given a bare seed")
        matrix = PublicMatrix(a_seed_or_matrix, H.shape[0], s_sum.shape[0], field)
    return matrix.field.sub(H, matrix.matvec(s_sum))
