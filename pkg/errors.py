"""
Exception hierarchy for the simulator.

Every error subclasses a builtin (ValueError, ArithmeticError) so callers
that only know the builtins keep working. A protocol ABORT is NOT an
exception (see shamir.Abort); AggregationAborted exists only for the
training loop, which turns an ABORT outcome into control flow.
"""


class FldpError(Exception):
    """Root of all simulator errors."""


class ParameterError(FldpError, ValueError):
    """A parameter is outside its documented range."""


class CompositeModulusError(ParameterError):
    """The field modulus is not prime."""


class ContextMismatchError(FldpError, ValueError):
    """Operands belong to different prime fields."""


class ShapeError(FldpError, ValueError):
    """Vector lengths or NTT sizes do not fit the operation."""


class CapacityError(FldpError, ValueError):
    """Too many secrets for a sharing, or an NTT domain that does not exist."""


class AlignmentError(FldpError, ValueError):
    """Share sets with different configs or index sets were combined."""


class InsufficientSharesError(FldpError, ValueError):
    """Fewer shares than the reconstruction threshold."""


class InsufficientParticipationError(InsufficientSharesError):
    """Too few clients took part in secure vector addition."""


class OverflowSuspectError(FldpError, ArithmeticError):
    """A decoded aggregate is larger than any honest sum could be."""


class GradientFileError(FldpError, ValueError):
    """A gradient file is malformed; `offset` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class PlanValidationError(ParameterError):
    """A benchmark plan row is infeasible; `row` names the offending cell."""

    def __init__(self, message: str, row: dict):
        super().__init__(f"{message}: {row}")
        self.row = row


class ConfigError(FldpError, ValueError):
    """Bad run configuration (unknown key, unparsable value)."""


class AggregationAborted(FldpError):
    """Raised by the training loop when secure aggregation returned ABORT."""

    def __init__(self, outcome):
        reason = getattr(outcome.result, "reason", "abort")
        super().__init__(f"secure aggregation aborted: {reason}")
        self.outcome = outcome


class SchemaError(FldpError, ValueError):
    """A CSV does not carry the expected columns."""

    def __init__(self, path, missing, extra):
        parts = []
        if missing:
            parts.append(f"missing {sorted(missing)}")
        if extra:
            parts.append(f"unexpected {sorted(extra)}")
        super().__init__(f"{path}: column mismatch, " + "; ".join(parts))
        self.missing = sorted(missing)
        self.extra = sorted(extra)
