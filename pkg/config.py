"""
Configuration file for the FLDP secure aggregation simulator

This file stores all configuration settings including file paths,
LWE parameter presets, fixed-point encoding constants and the
differential privacy defaults used by the training loop.

Environment overrides (FLDP_SEED, FLDP_OUTPUTS_DIR, FLDP_LOG_LEVEL,
FLDP_MATRIX_CACHE_LIMIT) are read from the process environment or a
.env file in the project root.
"""

import logging
import os
from pathlib import Path

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

# Project paths
PROJECT_ROOT = Path(__file__).parent
load_dotenv(PROJECT_ROOT / ".env")

OUTPUTS_DIR = Path(os.getenv("FLDP_OUTPUTS_DIR", str(PROJECT_ROOT / "outputs")))

# Master seed (hex string) used when no --seed flag / `seed` key is given
DEFAULT_SEED = os.getenv("FLDP_SEED", "00" * 32)

LOG_LEVEL = os.getenv("FLDP_LOG_LEVEL", "WARNING")

# LWE presets: name -> (n, q). Security (>= 128 bits) is taken from an
# external lattice estimator, not computed here.
LWE_PRESETS = {
    "a": (710, 31352833),
    "b": (730, 41057281),
    "c": (750, 71663617),
}

# Error distribution width beta*q in field units
DEFAULT_BETA_Q = 3.2

# "stddev": sigma_chi = beta_q / sqrt(2*pi) ; "width": sigma_chi = beta_q
DEFAULT_CHI_CONVENTION = "stddev"

# Slack reserved below q when computing the client capacity floor((q - margin) / 2^16)
NOISE_MARGIN = 4096

# Entries of the public matrix A kept in memory; larger matrices are streamed
MATRIX_CACHE_LIMIT = int(os.getenv("FLDP_MATRIX_CACHE_LIMIT", str(32_000_000)))

# Rows of A derived from one SHAKE stream
MATRIX_ROW_BLOCK = 64

# Fixed-point gradient encoding: 16-bit signed values, 4 decimal places
FIXED_POINT_SCALE = 10_000
FIXED_POINT_BITS = 16
FIXED_POINT_OFFSET = 1 << (FIXED_POINT_BITS - 1)
BYTES_PER_ELEMENT = 4

# Differential privacy defaults
DEFAULT_CLIP_C = 5.0
DEFAULT_DELTA = 1e-5
DEFAULT_LEARNING_RATE = 0.01
DEFAULT_MOMENTUM = 0.9

# Configurations evaluated in the accuracy experiments
EVAL_SIGMAS = (0, 1, 2, 4, 8, 16)
EVAL_BATCH_SIZES = (16, 32, 64, 128)

# Benchmark defaults (desk scale) and the opt-in full scale
DESK_MAX_CLIENTS = 256
DESK_MAX_DIM = 32768
FULL_SCALE_CLIENTS = 1000
FULL_SCALE_DIM = 100_000

# Gradient file format
GRADIENT_FILE_MAGIC = b"FLDPGRAD"
GRADIENT_FILE_VERSION = 1

# CLI exit codes
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_PROTOCOL_ABORT = 3
EXIT_IO_ERROR = 4


def ensure_outputs_dir(path: Path = None) -> Path:
    """Create (if needed) and return the output directory."""
    target = Path(path) if path is not None else OUTPUTS_DIR
    target.mkdir(parents=True, exist_ok=True)
    return target


logger.debug("configuration loaded from %s", PROJECT_ROOT)
