"""Evaluation formulas for the simulation sweeps and the case study.

All reductions are over the trial axis of a :class:`TrialArchive` and are
invariant to the order of the trials.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from glmd.errors import ArgumentError
from glmd.linalg import cholesky, spd_inverse, spd_matrix


# Printed two-sided 95% normal quantile, used as-is.
Z_95 = 1.96


@dataclass(frozen=True, eq=False)
class TrialArchive:
    """Estimates (``T x p``), optional Wald variances and convergence flags of one cell."""

    method: str
    estimates: np.ndarray
    variances: Optional[np.ndarray]
    converged: np.ndarray

    def __post_init__(self) -> None:
        estimates = np.atleast_2d(np.asarray(self.estimates, dtype=float))
        converged = np.asarray(self.converged, dtype=bool).reshape(-1)
        if estimates.shape[0] < 1 or estimates.size == 0:
            raise ArgumentError("an archive needs at least one trial")
        if converged.shape[0] != estimates.shape[0]:
            raise ArgumentError("converged flags must match the number of trials")
        variances = self.variances
        if variances is not None:
            variances = np.atleast_2d(np.asarray(variances, dtype=float))
            if variances.shape != estimates.shape:
                raise ArgumentError(f"variances shape {variances.shape} != estimates shape {estimates.shape}")
            if np.any(variances <= 0):
                raise ArgumentError("Wald variances must be strictly positive")
        object.__setattr__(self, "estimates", estimates)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "converged", converged)

    @property
    def trials(self) -> int:
        return self.estimates.shape[0]

    @property
    def p(self) -> int:
        return self.estimates.shape[1]

    @property
    def nonconverged_fraction(self) -> float:
        return float(np.mean(~self.converged))

    def converged_only(self) -> Optional["TrialArchive"]:
        """Strict mode: drop non-converged trials (``None`` when nothing is left)."""

        keep = self.converged
        if not np.any(keep):
            return None
        variances = None if self.variances is None else self.variances[keep]
        return TrialArchive(self.method, self.estimates[keep], variances, keep[keep])


def _beta0_for(archive: TrialArchive, beta0: Sequence[float]) -> np.ndarray:
    beta0 = np.asarray(beta0, dtype=float).reshape(-1)
    if beta0.shape[0] != archive.p:
        raise ArgumentError(f"beta0 has length {beta0.shape[0]}, archive has p={archive.p}")
    return beta0


def coordinatewise_rmse(archive: TrialArchive, beta0: Sequence[float]) -> np.ndarray:
    """``sqrt(mean_t (beta_jt - beta0_j)^2)`` per coordinate."""

    errors = archive.estimates - _beta0_for(archive, beta0)
    return np.sqrt(np.mean(errors * errors, axis=0))


def coverage(archive: TrialArchive, beta0: Sequence[float], z: float = Z_95) -> np.ndarray:
    """Fraction of trials whose ``beta_jt +- z * sqrt(var_jt)`` interval covers ``beta0_j``."""

    if archive.variances is None:
        raise ArgumentError(f"archive for {archive.method!r} has no Wald variances")
    half_width = z * np.sqrt(archive.variances)
    hits = np.abs(archive.estimates - _beta0_for(archive, beta0)) <= half_width
    return np.mean(hits, axis=0)


def empirical_se(estimates: np.ndarray) -> np.ndarray:
    """Per-coordinate sample standard deviation with divisor ``T - 1``."""

    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    if estimates.shape[0] < 2:
        raise ArgumentError(f"empirical SE needs at least 2 trials, got {estimates.shape[0]}")
    return np.std(estimates, axis=0, ddof=1)


def auc(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Mann-Whitney AUC; ties between a positive and a negative count one half."""

    scores = np.asarray(scores, dtype=float).reshape(-1)
    labels = np.asarray(labels, dtype=float).reshape(-1)
    if scores.shape != labels.shape:
        raise ArgumentError("scores and labels differ in length")
    if np.any((labels != 0.0) & (labels != 1.0)):
        raise ArgumentError("labels must be 0 or 1")
    positive = labels == 1.0
    n_pos = int(np.count_nonzero(positive))
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ArgumentError("AUC needs both classes present")
    ranks = rankdata(scores, method="average")
    u_stat = float(np.sum(ranks[positive])) - n_pos * (n_pos + 1) / 2.0
    return u_stat / (n_pos * n_neg)


def wald_variances(fisher: np.ndarray) -> np.ndarray:
    """Diagonal of ``F^-1``: the per-coordinate Wald variances at an estimate."""

    return np.diag(spd_inverse(cholesky(spd_matrix(fisher)))).copy()


@dataclass(frozen=True)
class CoordinateReport:
    coord: int
    rmse: float
    re: Optional[float]
    cpci: Optional[float]
    rc: Optional[float]
    baseline_rmse_zero: bool = False


def relative_report(
    archive: TrialArchive, baseline: TrialArchive, beta0: Sequence[float]
) -> List[CoordinateReport]:
    """RMSE and coverage of *archive*, each also as a ratio to the global-fit *baseline*.

    A ratio is ``None`` when its baseline value is zero; coverage fields are
    ``None`` when the archive carries no variances.
    """

    if archive.p != baseline.p:
        raise ArgumentError(f"archive p={archive.p} differs from baseline p={baseline.p}")
    rmse = coordinatewise_rmse(archive, beta0)
    base_rmse = coordinatewise_rmse(baseline, beta0)
    cpci = coverage(archive, beta0) if archive.variances is not None else None
    base_cpci = coverage(baseline, beta0) if baseline.variances is not None else None

    rows = []
    for j in range(archive.p):
        re = float(rmse[j] / base_rmse[j]) if base_rmse[j] > 0 else None
        cj = None if cpci is None else float(cpci[j])
        rc = None
        if cj is not None and base_cpci is not None and base_cpci[j] > 0:
            rc = cj / float(base_cpci[j])
        rows.append(CoordinateReport(j, float(rmse[j]), re, cj, rc, baseline_rmse_zero=not base_rmse[j] > 0))
    return rows


def min_median_max(values: Sequence[Optional[float]]) -> Tuple[Optional[float], Optional[float], Optional[float]]:
    """Summary triple over the defined values (all ``None`` when there are none)."""

    defined = np.array([v for v in values if v is not None], dtype=float)
    if defined.size == 0:
        return None, None, None
    return float(defined.min()), float(np.median(defined)), float(defined.max())
