"""Exception hierarchy shared by every module of the toolkit.

The command-line layer maps the families below onto exit codes: numerical
failures exit with 3, transport and protocol failures with 4, argument errors
with 2.
"""

from __future__ import annotations

from typing import Optional

import numpy as np


class GlmdError(RuntimeError):
    """Base class for all toolkit errors."""


# ---------------------------------------------------------------------------
# Argument / input validation
# ---------------------------------------------------------------------------


class ArgumentError(GlmdError, ValueError):
    """Raised for dimension mismatches, empty inputs and invalid parameters."""


class DomainError(ArgumentError):
    """Raised when a family function receives a non-finite linear predictor."""


class DegenerateKnotsError(ArgumentError):
    """Raised when quartile knots cannot be placed (too few distinct values)."""


class ConfigError(ArgumentError):
    """Raised when an experiment configuration violates its invariants."""


# ---------------------------------------------------------------------------
# Numerical failures
# ---------------------------------------------------------------------------


class NumericalError(GlmdError):
    """Base class for failures of the numerical kernels."""


class DivergedInputError(NumericalError):
    """A linear predictor left the representable range (Poisson ``exp`` overflow)."""

    def __init__(self, message: str, *, eta: float | None = None) -> None:
        super().__init__(message)
        self.eta = eta


class NotPositiveDefiniteError(NumericalError):
    """Cholesky met a non-positive pivot."""

    def __init__(self, message: str, *, pivot_index: int, pivot: float) -> None:
        super().__init__(message)
        self.pivot_index = pivot_index
        self.pivot = pivot


class SingularFisherError(NumericalError):
    """A Fisher information matrix (local or aggregate) is not positive definite."""


class ConvergenceError(NumericalError):
    """An iterative kernel exhausted its iteration cap."""

    def __init__(self, message: str, *, last_iterate: Optional[np.ndarray] = None, last_value: float | None = None) -> None:
        super().__init__(message)
        self.last_iterate = last_iterate
        self.last_value = last_value


class DivergenceError(NumericalError):
    """The Fisher-scoring iterate diverged."""

    def __init__(self, message: str, *, iterate: Optional[np.ndarray] = None) -> None:
        super().__init__(message)
        self.iterate = iterate


# ---------------------------------------------------------------------------
# Wire / transport
# ---------------------------------------------------------------------------


class ProtocolError(GlmdError):
    """A frame could not be decoded."""

    def __init__(self, message: str, *, offset: int = 0) -> None:
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class TransportError(GlmdError):
    """Connection loss, timeout or an aborted exchange."""

    def __init__(self, message: str, *, worker_id: int | None = None) -> None:
        if worker_id is not None:
            message = f"worker {worker_id}: {message}"
        super().__init__(message)
        self.worker_id = worker_id


class WorkerAbortedError(TransportError):
    """A peer sent an ABORT frame."""

    def __init__(self, message: str, *, code: int, worker_id: int | None = None) -> None:
        super().__init__(message, worker_id=worker_id)
        self.code = code


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


class IngestError(GlmdError):
    """A case-study input line could not be parsed."""

    def __init__(self, message: str, *, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line
