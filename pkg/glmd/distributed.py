"""Distributed estimators over K shards.

* ``average``       one round: sample-size weighted mean of the local MLEs
* ``aee``           one round: Fisher-weighted mean of the local MLEs
* ``one_step``      two rounds: one Fisher-scoring step from the weighted mean
                    using the aggregated global score and Fisher information
* ``csl_one_step``  two rounds: as ``one_step`` but the global Fisher matrix is
                    replaced by worker 0's, scaled by ``n / n_0``
* ``global``        the pooled-data MLE baseline (no communication)

The combination rules are pure functions over the local summaries.  The
transport-driven entry points (:func:`one_step_distributed` and friends) run
the full coordinator/worker exchange from :mod:`glmd.netproto`.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from glmd.errors import ArgumentError, NotPositiveDefiniteError, SingularFisherError
from glmd.glm_core import Dataset, GlmFamily
from glmd.linalg import cholesky, pairwise_sum, spd_solve
from glmd.netproto.transport import Transport
from glmd.solver import FitOptions, fit_mle


class Method(str, Enum):
    AVERAGE = "average"
    AEE = "aee"
    ONE_STEP = "one_step"
    CSL_ONE_STEP = "csl_one_step"
    GLOBAL = "global"


# Wire identifiers (RESULT.method).
METHOD_CODES = {
    Method.AVERAGE: 0,
    Method.AEE: 1,
    Method.ONE_STEP: 2,
    Method.CSL_ONE_STEP: 3,
    Method.GLOBAL: 4,
}

ROUNDS_OF_COMMUNICATION = {
    Method.AVERAGE: 1,
    Method.AEE: 1,
    Method.ONE_STEP: 2,
    Method.CSL_ONE_STEP: 2,
    Method.GLOBAL: 0,
}


def method_from_code(code: int) -> Method:
    for method, value in METHOD_CODES.items():
        if value == code:
            return method
    raise ArgumentError(f"unknown method code {code}")


@dataclass(frozen=True, eq=False)
class Shard:
    worker_id: int
    data: Dataset


class LocalEstimate(Protocol):
    """What the combination rules need from a local fit."""

    estimate: np.ndarray
    local_n: int
    fisher_at_estimate: np.ndarray
    converged: bool


@dataclass(frozen=True, eq=False)
class DistributedEstimate:
    method: Method
    estimate: np.ndarray
    global_fisher: Optional[np.ndarray]
    rounds_of_communication: int
    local_convergence: Tuple[bool, ...]
    wire_bytes: int = 0

    @property
    def all_converged(self) -> bool:
        return all(self.local_convergence)


def ordered_shards(shards: Sequence[Shard]) -> list[Shard]:
    """Return *shards* in worker_id order after checking the job invariants."""

    if not shards:
        raise ArgumentError("at least one shard is required")
    ordered = sorted(shards, key=lambda s: s.worker_id)
    ids = [s.worker_id for s in ordered]
    if ids != list(range(len(ordered))):
        raise ArgumentError(f"worker ids must be unique and contiguous from 0, got {ids}")
    p = ordered[0].data.p
    if any(s.data.p != p for s in ordered):
        raise ArgumentError("all shards must share the same number of columns")
    return ordered


def _solve_aggregate(fisher: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        factor = cholesky(fisher)
    except NotPositiveDefiniteError as exc:
        raise SingularFisherError(f"{what} is not positive definite: {exc}") from exc
    return spd_solve(factor, rhs)


def _check_fits(fits: Sequence[LocalEstimate]) -> None:
    if not fits:
        raise ArgumentError("at least one local fit is required")
    p = len(fits[0].estimate)
    if any(len(f.estimate) != p for f in fits):
        raise ArgumentError("local estimates differ in length")


def weighted_average(fits: Sequence[LocalEstimate]) -> np.ndarray:
    """``sum_k (n_k / n) beta_k`` in the given (worker_id) order."""

    _check_fits(fits)
    total = sum(int(f.local_n) for f in fits)
    return pairwise_sum([(int(f.local_n) / total) * np.asarray(f.estimate, dtype=float) for f in fits])


def aee_combine(fits: Sequence[LocalEstimate]) -> DistributedEstimate:
    """``[sum_k F_k]^-1 sum_k F_k beta_k`` with each ``F_k`` taken at the local MLE."""

    _check_fits(fits)
    fisher = pairwise_sum([f.fisher_at_estimate for f in fits])
    rhs = pairwise_sum([f.fisher_at_estimate @ f.estimate for f in fits])
    estimate = _solve_aggregate(fisher, rhs, "aggregate Fisher information")
    return DistributedEstimate(
        method=Method.AEE,
        estimate=estimate,
        global_fisher=None,
        rounds_of_communication=ROUNDS_OF_COMMUNICATION[Method.AEE],
        local_convergence=tuple(bool(f.converged) for f in fits),
    )


def one_step_combine(
    beta_bar: np.ndarray, scores: Sequence[np.ndarray], fishers: Sequence[np.ndarray]
) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(beta_bar + F^-1 S, F)`` for ``S = sum_k S_k`` and ``F = sum_k F_k``."""

    global_score = pairwise_sum(scores)
    global_fisher = pairwise_sum(fishers)
    step = _solve_aggregate(global_fisher, global_score, "global Fisher information")
    return beta_bar + step, global_fisher


def csl_combine(
    beta_bar: np.ndarray,
    scores: Sequence[np.ndarray],
    local_fisher: np.ndarray,
    n_total: int,
    n_local: int,
) -> np.ndarray:
    """``beta_bar + (n / n_0) F_0^-1 S`` with only the score aggregated."""

    global_score = pairwise_sum(scores)
    step = _solve_aggregate(local_fisher, global_score, "local Fisher information")
    return beta_bar + (n_total / n_local) * step


# ---------------------------------------------------------------------------
# Transport-driven estimators
# ---------------------------------------------------------------------------


def run_distributed(
    method: Union[str, Method],
    family: GlmFamily,
    shards: Sequence[Shard],
    opts: Optional[FitOptions] = None,
    transport: Optional[Transport] = None,
) -> DistributedEstimate:
    """Run *method* over *shards*; ``global`` bypasses the transport entirely."""

    method = Method(method)
    opts = opts or FitOptions()
    if method is Method.GLOBAL:
        return global_fit(family, shards, opts)

    from glmd.netproto.runtime import run_job  # local import to avoid cycle

    return run_job(family, ordered_shards(shards), opts, method, transport or Transport.in_process())


def one_step_distributed(
    family: GlmFamily,
    shards: Sequence[Shard],
    opts: Optional[FitOptions] = None,
    transport: Optional[Transport] = None,
) -> DistributedEstimate:
    """Local MLEs, weighted mean, one aggregated Fisher-scoring step (two rounds)."""

    return run_distributed(Method.ONE_STEP, family, shards, opts, transport)


def csl_one_step(
    family: GlmFamily,
    shards: Sequence[Shard],
    opts: Optional[FitOptions] = None,
    transport: Optional[Transport] = None,
) -> DistributedEstimate:
    return run_distributed(Method.CSL_ONE_STEP, family, shards, opts, transport)


def global_fit(family: GlmFamily, shards: Sequence[Shard], opts: Optional[FitOptions] = None) -> DistributedEstimate:
    """Pooled MLE over the concatenation of *shards* in worker_id order."""

    pooled = Dataset.concat(s.data for s in ordered_shards(shards))
    fit = fit_mle(family, pooled, None, opts or FitOptions())
    return DistributedEstimate(
        method=Method.GLOBAL,
        estimate=fit.estimate,
        global_fisher=fit.fisher_at_estimate,
        rounds_of_communication=ROUNDS_OF_COMMUNICATION[Method.GLOBAL],
        local_convergence=(fit.converged,),
    )
