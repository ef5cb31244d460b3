"""GLM family functions, log-likelihood, score, Fisher information and Hessian.

Three exponential families are supported, all with unit dispersion:

* ``probit``   Bernoulli response, ``h = Phi`` (non-canonical link)
* ``logistic`` Bernoulli response, ``h = expit`` (canonical)
* ``poisson``  count response, ``h = exp`` (canonical)

Notation follows the usual exponential-family parameterisation: ``h`` is the
inverse link (mean as a function of the linear predictor ``eta``), ``u`` maps
``eta`` to the canonical parameter ``theta``, ``b`` is the cumulant function,
``v`` the variance function and ``w = h'^2 / v`` the Fisher weight.  The
additive ``log c(y, phi)`` likelihood term is constant in ``beta`` and
omitted throughout.

Every function here is pure; datasets are immutable once constructed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Union

import numpy as np
from scipy.special import expit, log_ndtr, ndtr

from glmd.errors import ArgumentError, DivergedInputError, DomainError
from glmd.linalg import pairwise_gram, pairwise_rows


# Lower clamp for Phi-based variances and for every Fisher weight.
EPS = 1e-300

# Poisson linear predictors beyond this raise instead of overflowing.
POISSON_ETA_MAX = 700.0

# Beyond this |eta| the probit weight is evaluated in log space.
_PROBIT_DIRECT_LIMIT = 8.0

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class FamilyKind(str, Enum):
    PROBIT = "probit"
    LOGISTIC = "logistic"
    POISSON = "poisson"


# Wire identifiers (HELLO.family).
FAMILY_CODES = {FamilyKind.PROBIT: 0, FamilyKind.LOGISTIC: 1, FamilyKind.POISSON: 2}


class FnKind(str, Enum):
    H = "h"
    H_PRIME = "h_prime"
    U_PRIME = "u_prime"
    U_DOUBLE_PRIME = "u_double_prime"
    U_TRIPLE_PRIME = "u_triple_prime"
    V = "v"
    W = "w"


ArrayLike = Union[float, np.ndarray]


# ---------------------------------------------------------------------------
# Probit helpers
# ---------------------------------------------------------------------------


def _log_phi(eta: np.ndarray) -> np.ndarray:
    return -0.5 * eta * eta - _LOG_SQRT_2PI


def _mills_pair(eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(phi/Phi(eta), phi/Phi(-eta))`` computed in log space."""

    log_phi = _log_phi(eta)
    lower = np.exp(log_phi - log_ndtr(eta))
    upper = np.exp(log_phi - log_ndtr(-eta))
    return lower, upper


# ---------------------------------------------------------------------------
# Family
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GlmFamily:
    """Link/variance bundle for one response distribution.

    ``dispersion`` documents phi; it is fixed at 1 and never estimated.
    """

    kind: FamilyKind
    dispersion: float = 1.0

    @property
    def canonical(self) -> bool:
        return self.kind is not FamilyKind.PROBIT

    @property
    def code(self) -> int:
        return FAMILY_CODES[self.kind]

    @property
    def name(self) -> str:
        return self.kind.value

    # -- guards -------------------------------------------------------------

    def _guard(self, eta: ArrayLike) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        if self.kind is FamilyKind.POISSON:
            peak = float(np.max(eta)) if eta.size else 0.0
            if peak > POISSON_ETA_MAX:
                raise DivergedInputError(
                    f"Poisson linear predictor {peak:.6g} exceeds {POISSON_ETA_MAX:g}", eta=peak
                )
        return eta

    # -- mean / link ---------------------------------------------------------

    def h(self, eta: ArrayLike) -> np.ndarray:
        eta = self._guard(eta)
        if self.kind is FamilyKind.PROBIT:
            return ndtr(eta)
        if self.kind is FamilyKind.LOGISTIC:
            return expit(eta)
        return np.exp(eta)

    def h_prime(self, eta: ArrayLike) -> np.ndarray:
        eta = self._guard(eta)
        if self.kind is FamilyKind.PROBIT:
            return np.exp(-0.5 * eta * eta) * _INV_SQRT_2PI
        if self.kind is FamilyKind.LOGISTIC:
            return expit(eta) * expit(-eta)
        return np.exp(eta)

    def u(self, eta: ArrayLike) -> np.ndarray:
        """Canonical parameter ``theta = u(eta)``."""

        eta = self._guard(eta)
        if self.kind is FamilyKind.PROBIT:
            return log_ndtr(eta) - log_ndtr(-eta)
        return eta.copy()

    def u_prime(self, eta: ArrayLike) -> np.ndarray:
        eta = self._guard(eta)
        if self.kind is FamilyKind.PROBIT:
            lower, upper = _mills_pair(eta)
            return lower + upper
        return np.ones_like(eta)

    def u_double_prime(self, eta: ArrayLike) -> np.ndarray:
        eta = self._guard(eta)
        if self.kind is FamilyKind.PROBIT:
            a, c = _mills_pair(eta)
            return -eta * (a + c) - a * a + c * c
        return np.zeros_like(eta)

    def u_triple_prime(self, eta: ArrayLike) -> np.ndarray:
        eta = self._guard(eta)
        if self.kind is FamilyKind.PROBIT:
            a, c = _mills_pair(eta)
            da = -eta * a - a * a
            dc = -eta * c + c * c
            dda = -a - eta * da - 2.0 * a * da
            ddc = -c - eta * dc + 2.0 * c * dc
            return dda + ddc
        return np.zeros_like(eta)

    def v(self, eta: ArrayLike) -> np.ndarray:
        eta = self._guard(eta)
        if self.kind is FamilyKind.PROBIT:
            return np.maximum(ndtr(eta) * ndtr(-eta), EPS)
        if self.kind is FamilyKind.LOGISTIC:
            return np.maximum(expit(eta) * expit(-eta), EPS)
        return np.maximum(np.exp(eta), EPS)

    def w(self, eta: ArrayLike) -> np.ndarray:
        """Fisher weight ``h'(eta)^2 / v(eta)``."""

        eta = self._guard(eta)
        if self.kind is FamilyKind.PROBIT:
            hp = self.h_prime(eta)
            direct = hp * hp / self.v(eta)
            wide = np.abs(eta) > _PROBIT_DIRECT_LIMIT
            if np.any(wide):
                tail = np.exp(2.0 * _log_phi(eta) - log_ndtr(eta) - log_ndtr(-eta))
                direct = np.where(wide, tail, direct)
            return np.maximum(direct, EPS)
        if self.kind is FamilyKind.LOGISTIC:
            return np.maximum(expit(eta) * expit(-eta), EPS)
        return np.maximum(np.exp(eta), EPS)

    # -- likelihood pieces ----------------------------------------------------

    def loglik_terms(self, y: np.ndarray, eta: np.ndarray) -> np.ndarray:
        """Per-observation ``y*theta - b(theta)`` with ``theta = u(eta)``."""

        eta = self._guard(eta)
        if self.kind is FamilyKind.PROBIT:
            return y * log_ndtr(eta) + (1.0 - y) * log_ndtr(-eta)
        if self.kind is FamilyKind.LOGISTIC:
            return y * eta - np.logaddexp(0.0, eta)
        return y * eta - np.exp(eta)

    def score_weights(self, y: np.ndarray, eta: np.ndarray) -> np.ndarray:
        """Per-observation ``u'(eta) * (y - h(eta))``."""

        eta = self._guard(eta)
        if self.kind is FamilyKind.PROBIT:
            # u'(y - Phi) == y*phi/Phi - (1-y)*phi/(1-Phi) since Phi + (1-Phi) = 1.
            lower, upper = _mills_pair(eta)
            return y * lower - (1.0 - y) * upper
        if self.kind is FamilyKind.LOGISTIC:
            return y - expit(eta)
        return y - np.exp(eta)

    def residual_curvature(self, y: np.ndarray, eta: np.ndarray) -> np.ndarray:
        """Per-observation ``u''(eta) * (y - h(eta))`` (zero for canonical links)."""

        eta = self._guard(eta)
        if self.canonical:
            return np.zeros_like(eta)
        centered = y * ndtr(-eta) - (1.0 - y) * ndtr(eta)
        return self.u_double_prime(eta) * centered

    def validate_response(self, y: np.ndarray) -> None:
        if self.kind is FamilyKind.POISSON:
            if np.any(y < 0) or np.any(y != np.floor(y)):
                raise ArgumentError("Poisson responses must be non-negative integers")
        elif np.any((y != 0.0) & (y != 1.0)):
            raise ArgumentError(f"{self.name} responses must be 0 or 1")


PROBIT = GlmFamily(FamilyKind.PROBIT)
LOGISTIC = GlmFamily(FamilyKind.LOGISTIC)
POISSON = GlmFamily(FamilyKind.POISSON)

FAMILIES = {f.name: f for f in (PROBIT, LOGISTIC, POISSON)}


def resolve_family(name: Union[str, FamilyKind, GlmFamily]) -> GlmFamily:
    """Return the family for *name* (``probit``/``logistic``/``poisson``)."""

    if isinstance(name, GlmFamily):
        return name
    key = name.value if isinstance(name, FamilyKind) else str(name).lower()
    try:
        return FAMILIES[key]
    except KeyError:
        raise ArgumentError(f"unknown family {name!r}; expected one of {sorted(FAMILIES)}") from None


def family_from_code(code: int) -> GlmFamily:
    for family in FAMILIES.values():
        if family.code == code:
            return family
    raise ArgumentError(f"unknown family code {code}")


def family_eval(family: GlmFamily, fn_kind: Union[str, FnKind], eta: float) -> float:
    """Evaluate one named family function at a scalar linear predictor."""

    if not math.isfinite(eta):
        raise DomainError(f"linear predictor must be finite, got {eta!r}")
    kind = FnKind(fn_kind)
    return float(getattr(family, kind.value)(np.float64(eta)))


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ``n x p`` design matrix with its length-``n`` response."""

    design: np.ndarray
    response: np.ndarray

    def __post_init__(self) -> None:
        design = np.array(self.design, dtype=float, copy=True)
        response = np.array(self.response, dtype=float, copy=True).reshape(-1)
        if design.ndim == 1:
            design = design.reshape(-1, 1)
        if design.ndim != 2:
            raise ArgumentError(f"design must be a matrix, got {design.ndim} dimensions")
        n, p = design.shape
        if n < 1 or p < 1:
            raise ArgumentError(f"design must have n >= 1 and p >= 1, got {design.shape}")
        if response.shape[0] != n:
            raise ArgumentError(f"response length {response.shape[0]} does not match n={n}")
        if not (np.all(np.isfinite(design)) and np.all(np.isfinite(response))):
            raise ArgumentError("dataset contains non-finite entries")
        object.__setattr__(self, "design", _frozen(np.ascontiguousarray(design)))
        object.__setattr__(self, "response", _frozen(response))

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    def rows(self, start: int, stop: int) -> "Dataset":
        return Dataset(self.design[start:stop], self.response[start:stop])

    @staticmethod
    def concat(parts: Iterable["Dataset"]) -> "Dataset":
        parts = list(parts)
        if not parts:
            raise ArgumentError("cannot concatenate zero datasets")
        return Dataset(
            np.vstack([d.design for d in parts]),
            np.concatenate([d.response for d in parts]),
        )


def check_response(family: GlmFamily, data: Dataset) -> None:
    family.validate_response(data.response)


def as_beta(beta: Union[Iterable[float], np.ndarray], p: int) -> np.ndarray:
    """Validate a coefficient vector of length *p* and return it as float64."""

    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != p:
        raise ArgumentError(f"beta has length {beta.shape[0]}, expected p={p}")
    if not np.all(np.isfinite(beta)):
        raise DomainError("beta contains non-finite entries")
    return beta


def linear_predictor(data: Dataset, beta: np.ndarray) -> np.ndarray:
    beta = as_beta(beta, data.p)
    return data.design @ beta


# ---------------------------------------------------------------------------
# Likelihood, score, information
# ---------------------------------------------------------------------------


def log_likelihood(family: GlmFamily, data: Dataset, beta: np.ndarray) -> float:
    """``sum_i [y_i u(z_i'b) - b(u(z_i'b))]`` with unit dispersion."""

    eta = linear_predictor(data, beta)
    return float(pairwise_rows(family.loglik_terms(data.response, eta)))


def score(family: GlmFamily, data: Dataset, beta: np.ndarray) -> np.ndarray:
    """``sum_i z_i u'(z_i'b) [y_i - h(z_i'b)]``."""

    eta = linear_predictor(data, beta)
    return pairwise_rows(data.design * family.score_weights(data.response, eta)[:, None])


def fisher_info(family: GlmFamily, data: Dataset, beta: np.ndarray) -> np.ndarray:
    """``sum_i z_i w(z_i'b) z_i'``, exactly symmetric."""

    eta = linear_predictor(data, beta)
    return pairwise_gram(data.design, family.w(eta))


def observed_hessian(family: GlmFamily, data: Dataset, beta: np.ndarray) -> np.ndarray:
    """``R_n - F_n`` where ``R_n = sum_i z_i u''(eta_i) [y_i - h(eta_i)] z_i'``."""

    fisher = fisher_info(family, data, beta)
    if family.canonical:
        return -fisher
    eta = linear_predictor(data, beta)
    curvature = pairwise_gram(data.design, family.residual_curvature(data.response, eta))
    return curvature - fisher
