"""
Gradient Codec

Real gradients <-> field vectors:
    flatten -> clip to the L2 ball of radius C -> round(x * 10^4) ->
    clamp to signed 16 bits -> add 2^15 offset -> residues in F_q

After aggregation, decode_sum removes k offsets, centers the result into
(-q/2, q/2] and rescales. Also home of the gradient file format used by
the two-phase flow (dump noisy gradients, aggregate them later).
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, Sequence, Tuple

import numpy as np

import config
from errors import GradientFileError, OverflowSuspectError, ParameterError, ShapeError
from field import PrimeFieldCtx

logger = logging.getLogger(__name__)

GRADIENT_HEADER = struct.Struct("<8sBII")
MANIFEST_SUFFIX = ".manifest"

Manifest = List[Tuple[int, ...]]


@dataclass(frozen=True)
class CodecConfig:
    scale: int = config.FIXED_POINT_SCALE
    bits: int = config.FIXED_POINT_BITS
    clip_C: float = config.DEFAULT_CLIP_C

    def __post_init__(self):
        if self.scale <= 0 or self.bits < 2:
            raise ParameterError(f"bad fixed-point format: scale={self.scale}, bits={self.bits}")
        if self.clip_C <= 0:
            raise ParameterError(f"clip_C must be positive, got {self.clip_C}")

    @property
    def offset(self) -> int:
        return 1 << (self.bits - 1)

    @property
    def min_int(self) -> int:
        return -self.offset

    @property
    def max_int(self) -> int:
        return self.offset - 1

    @property
    def max_abs_real(self) -> float:
        return self.offset / self.scale


@dataclass(frozen=True)
class EncodedGradient:
    """Unsigned fixed-point elements (value + offset); `clamped` counts saturated entries."""

    elements: np.ndarray
    m: int
    clamped: int = 0


def clip(g: np.ndarray, C: float) -> np.ndarray:
    """g / max(1, ||g||_2 / C)."""
    if C <= 0:
        raise ParameterError(f"clip bound must be positive, got {C}")
    g = np.asarray(g, dtype=np.float64)
    norm = float(np.linalg.norm(g))
    return g / max(1.0, norm / C)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def encode(g: np.ndarray, cfg: CodecConfig = CodecConfig(), field: PrimeFieldCtx = None) -> EncodedGradient:
    g = np.asarray(g, dtype=np.float64).ravel()
    if not np.all(np.isfinite(g)):
        raise ParameterError("cannot encode non-finite gradient entries")
    if field is not None and field.q <= 1 << cfg.bits:
        raise ParameterError(f"field q={field.q} cannot hold {cfg.bits}-bit values")

    ints = _round_half_away(g * cfg.scale)
    clamped = int(np.count_nonzero((ints < cfg.min_int) | (ints > cfg.max_int)))
    if clamped:
        logger.warning("clamped %d of %d gradient entries to the 16-bit range", clamped, g.shape[0])
    ints = np.clip(ints, cfg.min_int, cfg.max_int).astype(np.int64)
    return EncodedGradient(elements=ints + cfg.offset, m=g.shape[0], clamped=clamped)


def decode_sum(V: np.ndarray, k: int, cfg: CodecConfig = CodecConfig(),
               field: PrimeFieldCtx = None, noise_sigma: float = 0.0) -> np.ndarray:
    """
    Real-valued sum of k encoded contributions.

    noise_sigma is the standard deviation, in real units, of any noise the
    aggregation added on top (e.g. the LWE errors). Magnitudes beyond
    k * 3.2768 + 10 * noise_sigma mean the sum wrapped around q.
    """
    if field is None:
        raise ParameterError("decode_sum needs the field")
    if k < 1:
        raise ParameterError(f"contribution count must be >= 1, got {k}")
    if k * (1 << cfg.bits) >= field.q:
        raise ParameterError(f"{k} contributions of {cfg.bits} bits overflow q={field.q}")

    shifted = np.mod(np.asarray(V, dtype=np.int64) - k * cfg.offset, field.q)
    real = field.centered(shifted).astype(np.float64) / cfg.scale
    bound = k * cfg.max_abs_real + 10.0 * noise_sigma
    worst = float(np.max(np.abs(real), initial=0.0))
    if worst > bound:
        raise OverflowSuspectError(
            f"decoded magnitude {worst:.4f} exceeds {bound:.4f} for k={k}; aggregate likely wrapped"
        )
    return real


def flatten(tensors: Sequence[np.ndarray]) -> Tuple[np.ndarray, Manifest]:
    if not tensors:
        return np.zeros(0, dtype=np.float64), []
    arrays = [np.asarray(t, dtype=np.float64) for t in tensors]
    manifest = [tuple(a.shape) for a in arrays]
    return np.concatenate([a.ravel() for a in arrays]), manifest


def unflatten(vector: np.ndarray, manifest: Manifest) -> List[np.ndarray]:
    vector = np.asarray(vector, dtype=np.float64)
    sizes = [int(np.prod(shape, dtype=np.int64)) for shape in manifest]
    if sum(sizes) != vector.shape[0]:
        raise ShapeError(f"manifest describes {sum(sizes)} values, vector has {vector.shape[0]}")
    out = []
    start = 0
    for shape, size in zip(manifest, sizes):
        out.append(vector[start:start + size].reshape(shape))
        start += size
    return out


# ----------------------------------------------------------------------
# Gradient files: 17-byte header, then `count` records of m float32 (LE)
# ----------------------------------------------------------------------


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + MANIFEST_SUFFIX)


def write_manifest(path, manifest: Manifest):
    lines = [",".join(str(d) for d in shape) for shape in manifest]
    manifest_path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_manifest(path) -> Manifest:
    target = manifest_path(path)
    if not target.exists():
        return []
    shapes = []
    for line in target.read_text().splitlines():
        line = line.strip()
        shapes.append(tuple(int(d) for d in line.split(",")) if line else ())
    return shapes


class GradientFileWriter:
    """Streams records to disk; the record count is patched into the header on close."""

    def __init__(self, path, m: int, manifest: Manifest = None):
        if m < 1:
            raise ParameterError(f"gradient length must be >= 1, got {m}")
        self.path = Path(path)
        self.m = m
        self.count = 0
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "wb")
        self._fh.write(GRADIENT_HEADER.pack(config.GRADIENT_FILE_MAGIC, config.GRADIENT_FILE_VERSION, m, 0))
        if manifest:
            write_manifest(self.path, manifest)

    def write(self, gradient: np.ndarray):
        record = np.asarray(gradient, dtype="<f4").ravel()
        if record.shape[0] != self.m:
            raise ShapeError(f"record has {record.shape[0]} values, file holds m={self.m}")
        self._fh.write(record.tobytes())
        self.count += 1

    def close(self):
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._fh.write(GRADIENT_HEADER.pack(
            config.GRADIENT_FILE_MAGIC, config.GRADIENT_FILE_VERSION, self.m, self.count
        ))
        self._fh.close()
        logger.info("wrote %d gradients of length %d to %s", self.count, self.m, self.path)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_gradient_file(path, gradients: Iterable[np.ndarray], manifest: Manifest = None) -> int:
    gradients = iter(gradients)
    first = np.asarray(next(gradients), dtype=np.float64).ravel()
    with GradientFileWriter(path, first.shape[0], manifest) as writer:
        writer.write(first)
        for g in gradients:
            writer.write(g)
        return writer.count


class GradientFileReader:
    """
    Validating reader over a gradient file; records stream one at a time.

    The header is checked on open. Truncation is reported against the
    offset of the first incomplete record.
    """

    def __init__(self, path):
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            header = fh.read(GRADIENT_HEADER.size)
        if len(header) < GRADIENT_HEADER.size:
            raise GradientFileError("file is shorter than the gradient header", len(header))
        magic, version, m, count = GRADIENT_HEADER.unpack(header)
        if magic != config.GRADIENT_FILE_MAGIC:
            raise GradientFileError(f"bad magic {magic!r}", 0)
        if version != config.GRADIENT_FILE_VERSION:
            raise GradientFileError(f"unsupported version {version}", 8)
        if m < 1:
            raise GradientFileError("gradient length m is zero", 9)
        self.m = m
        self.count = count
        self.record_bytes = 4 * m
        self.manifest = read_manifest(self.path)

        size = self.path.stat().st_size
        expected = GRADIENT_HEADER.size + count * self.record_bytes
        if size < expected:
            complete = (size - GRADIENT_HEADER.size) // self.record_bytes
            raise GradientFileError(
                f"truncated payload: {count} records declared, {complete} complete",
                GRADIENT_HEADER.size + complete * self.record_bytes,
            )
        if size > expected:
            raise GradientFileError(f"{size - expected} trailing bytes after {count} records", expected)

    def __len__(self) -> int:
        return self.count

    def offset_of(self, index: int) -> int:
        return GRADIENT_HEADER.size + index * self.record_bytes

    def read(self, index: int) -> np.ndarray:
        if not 0 <= index < self.count:
            raise IndexError(f"record {index} outside [0, {self.count})")
        with open(self.path, "rb") as fh:
            fh.seek(self.offset_of(index))
            return self._decode(fh.read(self.record_bytes), index)

    def __iter__(self) -> Iterator[np.ndarray]:
        with open(self.path, "rb") as fh:
            fh.seek(GRADIENT_HEADER.size)
            for index in range(self.count):
                yield self._decode(fh.read(self.record_bytes), index)

    def _decode(self, raw: bytes, index: int) -> np.ndarray:
        if len(raw) != self.record_bytes:
            raise GradientFileError(f"record {index} is truncated", self.offset_of(index) + len(raw))
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)
