"""Fisher-scoring maximum-likelihood fits and the single one-step update."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Tuple

import numpy as np

from glmd.errors import (
    ArgumentError,
    DivergedInputError,
    DivergenceError,
    NotPositiveDefiniteError,
    SingularFisherError,
)
from glmd.glm_core import (
    Dataset,
    GlmFamily,
    as_beta,
    check_response,
    fisher_info,
    log_likelihood,
    observed_hessian,
    score,
)
from glmd.linalg import cholesky, spd_solve
from glmd.logger import get_logger


log = get_logger(__name__)


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 50
    score_tolerance: float = 1e-8
    step_halving_max: int = 10

    def __post_init__(self) -> None:
        if int(self.max_iterations) < 1:
            raise ArgumentError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not float(self.score_tolerance) > 0:
            raise ArgumentError(f"score_tolerance must be > 0, got {self.score_tolerance}")
        if int(self.step_halving_max) < 0:
            raise ArgumentError(f"step_halving_max must be >= 0, got {self.step_halving_max}")

    @classmethod
    def from_mapping(cls, mapping: Optional[Mapping[str, Any]]) -> "FitOptions":
        mapping = dict(mapping or {})
        known = {k: mapping[k] for k in ("max_iterations", "score_tolerance", "step_halving_max") if k in mapping}
        return cls(
            max_iterations=int(known.get("max_iterations", cls.max_iterations)),
            score_tolerance=float(known.get("score_tolerance", cls.score_tolerance)),
            step_halving_max=int(known.get("step_halving_max", cls.step_halving_max)),
        )


@dataclass(frozen=True, eq=False)
class FitResult:
    estimate: np.ndarray
    converged: bool
    iterations: int
    final_score_norm: float
    fisher_at_estimate: np.ndarray
    local_n: int
    log_likelihood_trace: Tuple[float, ...] = field(default=())


def _fisher_step(fisher: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    try:
        factor = cholesky(fisher)
    except NotPositiveDefiniteError as exc:
        raise SingularFisherError(f"Fisher information is singular: {exc}") from exc
    return spd_solve(factor, gradient)


def _score_and_fisher(family: GlmFamily, data: Dataset, beta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    try:
        return score(family, data, beta), fisher_info(family, data, beta)
    except DivergedInputError as exc:
        raise DivergenceError(f"iterate diverged: {exc}", iterate=beta.copy()) from exc


def _halving_search(
    family: GlmFamily,
    data: Dataset,
    beta: np.ndarray,
    step: np.ndarray,
    current: float,
    opts: FitOptions,
) -> Tuple[Optional[np.ndarray], float]:
    """Return the first of ``beta + step/2^m`` that does not decrease the likelihood."""

    scale = 1.0
    for _ in range(opts.step_halving_max + 1):
        candidate = beta + scale * step
        if np.all(np.isfinite(candidate)):
            try:
                value = log_likelihood(family, data, candidate)
            except DivergedInputError:
                value = -np.inf
            if value >= current:
                return candidate, value
        scale *= 0.5
    return None, current


def fit_mle(
    family: GlmFamily,
    data: Dataset,
    init: Optional[np.ndarray] = None,
    opts: Optional[FitOptions] = None,
) -> FitResult:
    """Maximize the log-likelihood by Fisher scoring with step halving.

    Iterates ``beta <- beta + F(beta)^-1 S(beta)`` from *init* (zero by
    default) until ``max|S| <= score_tolerance`` or the iteration cap.  A step
    that lowers the likelihood is halved up to ``step_halving_max`` times; if
    no halving helps the fit stops early and reports ``converged=False``.
    """

    opts = opts or FitOptions()
    check_response(family, data)
    if data.n < data.p:
        log.warning("Fitting %s with n=%d < p=%d; the MLE may not exist", family.name, data.n, data.p)

    beta = np.zeros(data.p) if init is None else as_beta(init, data.p).copy()
    try:
        current = log_likelihood(family, data, beta)
    except DivergedInputError as exc:
        raise DivergenceError(f"initial iterate diverged: {exc}", iterate=beta.copy()) from exc
    gradient, fisher = _score_and_fisher(family, data, beta)

    trace = [current]
    iterations = 0
    converged = False
    while True:
        if float(np.max(np.abs(gradient))) <= opts.score_tolerance:
            converged = True
            break
        if iterations >= opts.max_iterations:
            break
        step = _fisher_step(fisher, gradient)
        if not np.all(np.isfinite(step)):
            raise DivergenceError("Fisher-scoring step is not finite", iterate=beta.copy())
        candidate, value = _halving_search(family, data, beta, step, current, opts)
        if candidate is None:
            log.warning(
                "%s fit stalled after %d iterations (max|S|=%.3g)",
                family.name,
                iterations,
                float(np.max(np.abs(gradient))),
            )
            break
        beta, current = candidate, value
        trace.append(current)
        iterations += 1
        gradient, fisher = _score_and_fisher(family, data, beta)

    norm = float(np.max(np.abs(gradient)))
    if not converged:
        log.warning("%s fit did not converge (iterations=%d, max|S|=%.3g)", family.name, iterations, norm)
    log.debug("%s fit: n=%d p=%d iterations=%d max|S|=%.3g", family.name, data.n, data.p, iterations, norm)
    return FitResult(
        estimate=beta,
        converged=converged,
        iterations=iterations,
        final_score_norm=norm,
        fisher_at_estimate=fisher,
        local_n=data.n,
        log_likelihood_trace=tuple(trace),
    )


def one_step_update(family: GlmFamily, data: Dataset, beta0: np.ndarray) -> np.ndarray:
    """Exactly one Fisher-scoring step from *beta0*: no halving, no convergence test."""

    beta0 = as_beta(beta0, data.p)
    gradient, fisher = _score_and_fisher(family, data, beta0)
    return beta0 + _fisher_step(fisher, gradient)


def newton_update(family: GlmFamily, data: Dataset, beta0: np.ndarray) -> np.ndarray:
    """One Newton-Raphson step ``beta0 - H(beta0)^-1 S(beta0)`` with the observed Hessian."""

    beta0 = as_beta(beta0, data.p)
    try:
        gradient = score(family, data, beta0)
        hessian = observed_hessian(family, data, beta0)
    except DivergedInputError as exc:
        raise DivergenceError(f"iterate diverged: {exc}", iterate=beta0.copy()) from exc
    return beta0 + _fisher_step(-hessian, gradient)
