"""
Prime Field Arithmetic

Exact arithmetic in F_q for every protocol value. Two views of the same
arithmetic live here:

- FieldElement: a single canonical residue bound to its field, with the
  usual operators. Handy for hand checks and small examples.
- PrimeFieldCtx vector methods: numpy int64 arrays of canonical residues.
  This is what the protocol actually runs on.

Moduli are restricted to primes below 2^31 so that every product of two
residues fits an int64 (all preset moduli are below 2^27). Nothing here is
constant-time; this is a simulator.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, List, Sequence, Union

import numpy as np
import sympy
from numba import njit

from errors import (
    CompositeModulusError,
    ContextMismatchError,
    ParameterError,
    ShapeError,
)

logger = logging.getLogger(__name__)

MAX_MODULUS = 1 << 31
ELEMENT_BYTES = 4
_WIRE_DTYPE = np.dtype("<u4")


@njit(cache=True)
def _powmod(base, exp, q):
    result = 1
    base %= q
    while exp > 0:
        if exp & 1:
            result = (result * base) % q
        base = (base * base) % q
        exp >>= 1
    return result


@njit(cache=True)
def _ntt_kernel(a, q, root):
    """In-place iterative radix-2 Cooley-Tukey transform; `root` has order len(a)."""
    n = a.shape[0]
    j = 0
    for i in range(1, n):
        bit = n >> 1
        while j & bit:
            j ^= bit
            bit >>= 1
        j ^= bit
        if i < j:
            tmp = a[i]
            a[i] = a[j]
            a[j] = tmp
    length = 2
    while length <= n:
        w_len = _powmod(root, n // length, q)
        half = length // 2
        for start in range(0, n, length):
            w = 1
            for k in range(half):
                u = a[start + k]
                v = (a[start + k + half] * w) % q
                a[start + k] = (u + v) % q
                a[start + k + half] = (u - v + q) % q
                w = (w * w_len) % q
        length <<= 1
    return a


@njit(cache=True)
def _batch_inverse(a, q):
    # Montgomery's trick: one exponentiation for the whole batch
    n = a.shape[0]
    prefix = np.empty(n, np.int64)
    acc = 1
    for i in range(n):
        prefix[i] = acc
        acc = (acc * a[i]) % q
    inv = _powmod(acc, q - 2, q)
    out = np.empty(n, np.int64)
    for i in range(n - 1, -1, -1):
        out[i] = (inv * prefix[i]) % q
        inv = (inv * a[i]) % q
    return out


class PrimeFieldCtx:
    """
    The prime field F_q plus the facts the protocol needs about it.

    Attributes:
        q: prime modulus
        two_adicity: largest s with 2^s | q - 1
        root_of_unity: generator of the order-2^s subgroup
        element_bits: bits needed for one canonical residue

    Immutable after construction and safe to share across threads.
    """

    def __init__(self, q: int, seed: int = 0):
        q = int(q)
        if q < 2:
            raise ParameterError(f"modulus must be >= 2, got {q}")
        if q >= MAX_MODULUS:
            raise ParameterError(f"modulus {q} is not below 2^31")
        if not sympy.isprime(q):
            raise CompositeModulusError(f"modulus {q} is composite")

        self.q = q
        self.two_adicity = ((q - 1) & -(q - 1)).bit_length() - 1
        self.element_bits = (q - 1).bit_length()
        self.root_of_unity = self._find_root_of_unity(seed)
        self._generator = None

    def _find_root_of_unity(self, seed: int) -> int:
        """Raise random nonzero elements to (q-1)/2^s until one has full order 2^s."""
        q, s = self.q, self.two_adicity
        if s == 0:
            return 1
        rng = np.random.default_rng(seed)
        cofactor = (q - 1) >> s
        while True:
            candidate = int(rng.integers(1, q))
            root = pow(candidate, cofactor, q)
            if pow(root, 1 << (s - 1), q) == q - 1:
                return root

    @property
    def generator(self) -> int:
        """A generator of the multiplicative group (used as the FFT coset shift)."""
        if self._generator is None:
            self._generator = int(sympy.primitive_root(self.q))
        return self._generator

    def __eq__(self, other) -> bool:
        return isinstance(other, PrimeFieldCtx) and other.q == self.q

    def __hash__(self) -> int:
        return hash(("PrimeFieldCtx", self.q))

    def __repr__(self) -> str:
        return f"PrimeFieldCtx(q={self.q}, two_adicity={self.two_adicity})"

    # ------------------------------------------------------------------
    # Scalars
    # ------------------------------------------------------------------

    def element(self, value: int) -> "FieldElement":
        return FieldElement(int(value), self)

    def root_of_unity_of_order(self, n: int) -> int:
        if n < 1 or n & (n - 1):
            raise ShapeError(f"root of unity order must be a power of two, got {n}")
        if n > (1 << self.two_adicity):
            raise ShapeError(
                f"no root of unity of order {n} in F_{self.q} (two-adicity {self.two_adicity})"
            )
        return pow(self.root_of_unity, (1 << self.two_adicity) // n, self.q)

    # ------------------------------------------------------------------
    # Vectors (numpy int64 arrays of canonical residues)
    # ------------------------------------------------------------------

    def array(self, values) -> np.ndarray:
        """Lift ints, signed ints or FieldElements into canonical residues."""
        if isinstance(values, np.ndarray) and values.dtype.kind in "iu":
            return np.mod(values.astype(np.int64, copy=False), self.q)
        values = list(values)
        if values and isinstance(values[0], FieldElement):
            for v in values:
                self._check(v.ctx)
            return np.array([v.value for v in values], dtype=np.int64)
        return np.mod(np.asarray(values, dtype=np.int64), self.q)

    def elements(self, arr: np.ndarray) -> List["FieldElement"]:
        return [FieldElement(int(v), self) for v in np.asarray(arr).ravel()]

    def zeros(self, shape) -> np.ndarray:
        return np.zeros(shape, dtype=np.int64)

    def random(self, shape, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.q, size=shape, dtype=np.int64)

    def add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self._same_shape(a, b, np.add)

    def sub(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self._same_shape(a, b, np.subtract)

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self._same_shape(a, b, np.multiply)

    def neg(self, a: np.ndarray) -> np.ndarray:
        return np.mod(-np.asarray(a, dtype=np.int64), self.q)

    def scale(self, a: np.ndarray, c: int) -> np.ndarray:
        return np.mod(np.asarray(a, dtype=np.int64) * (int(c) % self.q), self.q)

    def sum(self, arrays, axis: int = 0) -> np.ndarray:
        return np.mod(np.sum(np.asarray(arrays, dtype=np.int64), axis=axis), self.q)

    def inv_vec(self, a: np.ndarray) -> np.ndarray:
        a = np.ascontiguousarray(np.asarray(a, dtype=np.int64).ravel())
        if a.size and not np.all(a % self.q):
            raise ZeroDivisionError("inverse of zero in batch")
        return _batch_inverse(a % self.q, self.q)

    def matmul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Exact (a @ b) mod q, chunking the inner dimension so int64 never overflows."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        if a.shape[-1] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
        chunk = max(1, (np.iinfo(np.int64).max // max(1, (self.q - 1) ** 2)) - 1)
        inner = a.shape[-1]
        out = None
        for start in range(0, inner, chunk):
            stop = min(inner, start + chunk)
            part = np.mod(a[..., start:stop] @ b[start:stop], self.q)
            out = part if out is None else np.mod(out + part, self.q)
        if out is None:
            out = np.zeros(a.shape[:-1] + b.shape[1:], dtype=np.int64)
        return out

    def centered(self, a: np.ndarray) -> np.ndarray:
        """Signed representatives in (-q/2, q/2]."""
        a = np.asarray(a, dtype=np.int64)
        return np.where(a > self.q // 2, a - self.q, a)

    def from_signed(self, x) -> np.ndarray:
        return np.mod(np.asarray(x, dtype=np.int64), self.q)

    def ntt(self, values: np.ndarray, inverse: bool = False) -> np.ndarray:
        a = np.array(values, dtype=np.int64).ravel() % self.q
        n = a.shape[0]
        if n == 0 or n & (n - 1):
            raise ShapeError(f"NTT length must be a power of two, got {n}")
        root = self.root_of_unity_of_order(n)
        if n == 1:
            return a
        if inverse:
            root = pow(root, self.q - 2, self.q)
        out = _ntt_kernel(a, self.q, root)
        if inverse:
            out = np.mod(out * pow(n, self.q - 2, self.q), self.q)
        return out

    def lagrange_basis(self, xs: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """
        Matrix W with f(targets) = W @ f(xs) for every polynomial of degree < len(xs).

        Barycentric form; O(len(xs) * (len(xs) + len(targets))). Targets
        must be disjoint from xs.
        """
        xs = self.array(xs)
        targets = self.array(targets)
        r = xs.shape[0]

        diff = np.mod(xs[:, None] - xs[None, :], self.q)
        np.fill_diagonal(diff, 1)
        denom = np.ones(r, dtype=np.int64)
        for col in range(r):
            denom = np.mod(denom * diff[:, col], self.q)
        bary = self.inv_vec(denom)

        zdiff = np.mod(targets[:, None] - xs[None, :], self.q)
        if not np.all(zdiff):
            raise ParameterError("interpolation targets overlap the sample points")
        ell = np.ones(targets.shape[0], dtype=np.int64)
        for col in range(r):
            ell = np.mod(ell * zdiff[:, col], self.q)
        inv_z = self.inv_vec(zdiff).reshape(zdiff.shape)
        weights = np.mod(inv_z * bary[None, :], self.q)
        return np.mod(weights * ell[:, None], self.q)

    def poly_eval(self, coeffs: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Horner evaluation; coefficients in ascending degree."""
        points = self.array(points)
        acc = np.zeros(points.shape, dtype=np.int64)
        for c in np.asarray(coeffs, dtype=np.int64)[::-1]:
            acc = np.mod(acc * points + c, self.q)
        return acc

    # ------------------------------------------------------------------
    # Wire format: little-endian 4-byte unsigned per element
    # ------------------------------------------------------------------

    def to_bytes(self, a: np.ndarray) -> bytes:
        return np.asarray(a, dtype=np.int64).astype(_WIRE_DTYPE).tobytes()

    def from_bytes(self, data: bytes) -> np.ndarray:
        if len(data) % ELEMENT_BYTES:
            raise ShapeError(f"payload of {len(data)} bytes is not a whole number of elements")
        out = np.frombuffer(data, dtype=_WIRE_DTYPE).astype(np.int64)
        if out.size and out.max() >= self.q:
            raise ParameterError(f"payload element {int(out.max())} is not below q={self.q}")
        return out

    def _check(self, other: "PrimeFieldCtx"):
        if other.q != self.q:
            raise ContextMismatchError(f"field mismatch: q={self.q} vs q={other.q}")

    def _same_shape(self, a, b, op) -> np.ndarray:
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        if a.shape != b.shape and a.ndim and b.ndim:
            raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
        return np.mod(op(a, b), self.q)


@lru_cache(maxsize=None)
def get_field(q: int) -> PrimeFieldCtx:
    """Shared context per modulus (construction runs a primality check)."""
    return PrimeFieldCtx(q)


@dataclass(frozen=True)
class FieldElement:
    """A canonical residue in [0, q), normalized on construction."""

    value: int
    ctx: PrimeFieldCtx

    def __post_init__(self):
        object.__setattr__(self, "value", int(self.value) % self.ctx.q)

    def _lift(self, other) -> "FieldElement":
        if isinstance(other, FieldElement):
            self.ctx._check(other.ctx)
            return other
        if isinstance(other, (int, np.integer)):
            return FieldElement(int(other), self.ctx)
        return NotImplemented

    def __add__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return FieldElement(self.value + other.value, self.ctx)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return FieldElement(self.value - other.value, self.ctx)

    def __rsub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return FieldElement(other.value - self.value, self.ctx)

    def __mul__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return FieldElement(self.value * other.value, self.ctx)

    __rmul__ = __mul__

    def __neg__(self):
        return FieldElement(-self.value, self.ctx)

    def __truediv__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return self * other.inv()

    def __pow__(self, exponent: int):
        if exponent < 0:
            return self.inv() ** (-exponent)
        return FieldElement(pow(self.value, exponent, self.ctx.q), self.ctx)

    def __int__(self) -> int:
        return self.value

    def inv(self) -> "FieldElement":
        if self.value == 0:
            raise ZeroDivisionError(f"0 has no inverse in F_{self.ctx.q}")
        return FieldElement(pow(self.value, -1, self.ctx.q), self.ctx)

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(ELEMENT_BYTES, "little")

    @classmethod
    def from_bytes(cls, data: bytes, ctx: PrimeFieldCtx) -> "FieldElement":
        if len(data) != ELEMENT_BYTES:
            raise ShapeError(f"field element needs {ELEMENT_BYTES} bytes, got {len(data)}")
        value = int.from_bytes(data, "little")
        if value >= ctx.q:
            raise ParameterError(f"encoded value {value} is not below q={ctx.q}")
        return cls(value, ctx)

    def __repr__(self) -> str:
        return f"FieldElement({self.value} mod {self.ctx.q})"


# Module-level operation names


def add(a: FieldElement, b: FieldElement) -> FieldElement:
    return a + b


def sub(a: FieldElement, b: FieldElement) -> FieldElement:
    return a - b


def mul(a: FieldElement, b: FieldElement) -> FieldElement:
    return a * b


def neg(a: FieldElement) -> FieldElement:
    return -a


def inv(a: FieldElement) -> FieldElement:
    return a.inv()


def ntt(
    values: Union[Sequence[FieldElement], np.ndarray],
    inverse: bool = False,
    ctx: PrimeFieldCtx = None,
) -> Union[List[FieldElement], np.ndarray]:
    """
    Forward or inverse number-theoretic transform.

    FieldElement input returns FieldElements; array input needs `ctx` and
    returns an array.
    """
    if ctx is None:
        values = list(values)
        if not values or not isinstance(values[0], FieldElement):
            raise ShapeError("ntt needs FieldElement input or an explicit ctx")
        ctx = values[0].ctx
        return ctx.elements(ctx.ntt(ctx.array(values), inverse=inverse))
    return ctx.ntt(values, inverse=inverse)


def next_power_of_two(n: int) -> int:
    return 1 if n <= 1 else 1 << (int(n) - 1).bit_length()
