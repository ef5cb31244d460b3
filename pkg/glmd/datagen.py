"""Synthetic data for the simulation sweeps, shard partitioning, design diagnostics
and the B-spline expansion used by the case study.

Every generator is a pure function of its seed.  The base generator is
``numpy.random.Philox`` (a counter-based 64-bit generator); seeds for trial
``t`` / shard ``k`` are derived from the sweep's base seed with the
splitmix64 finalizer, so data for one cell never depends on scheduling or on
which estimators run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.special import ndtri

from glmd.distributed import Shard
from glmd.errors import ArgumentError, DegenerateKnotsError
from glmd.glm_core import Dataset, FamilyKind, GlmFamily, as_beta, resolve_family
from glmd.linalg import eigen_extremes, spd_matrix
from glmd.logger import get_logger


log = get_logger(__name__)


_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Directions sampled (on top of the coordinate axes) for the fourth-moment proxy.
QUARTIC_DIRECTIONS = 64

# Case study: 18 raw features, X3/X6/X8 enter linearly, the rest as splines.
CASESTUDY_FEATURES = 18
LINEAR_FEATURES = (3, 6, 8)
SPLINE_ORDER = 4


# ---------------------------------------------------------------------------
# Seeds and variates
# ---------------------------------------------------------------------------


def _splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(base: int, *parts: int) -> int:
    """Mix *parts* into *base*, one splitmix64 round per part."""

    z = _splitmix64(int(base) & _MASK64)
    for part in parts:
        z = _splitmix64(z ^ (int(part) & _MASK64))
    return z


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & _MASK64))


def uniforms(rng: np.random.Generator, size) -> np.ndarray:
    """53-bit uniforms on the open interval (0, 1)."""

    k = rng.integers(0, 1 << 53, size=size, dtype=np.uint64).astype(float)
    return np.clip((k + 0.5) * 2.0**-53, 2.0**-54, 1.0 - 2.0**-53)


def standard_normals(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normals by inverting the normal CDF at 53-bit uniforms."""

    return ndtri(uniforms(rng, size))


# ---------------------------------------------------------------------------
# Simulation designs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimDesign:
    model: FamilyKind
    n: int
    p: int
    rho: float = 0.75
    seed: int = 0
    K: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "model", resolve_family(self.model).kind)
        if self.n < 1 or self.p < 1 or self.K < 1:
            raise ArgumentError(f"n, p and K must be positive, got n={self.n} p={self.p} K={self.K}")
        if not 0.0 <= self.rho < 1.0:
            raise ArgumentError(f"rho must lie in [0, 1), got {self.rho}")
        if self.K > self.n:
            raise ArgumentError(f"K={self.K} exceeds n={self.n}")

    @property
    def family(self) -> GlmFamily:
        return resolve_family(self.model)


def gen_design(design: SimDesign) -> np.ndarray:
    """``n x p`` AR(1) covariates with ``Cov(x_i, x_j) = rho^|i-j|``."""

    eps = standard_normals(make_rng(design.seed), (design.n, design.p))
    rho = design.rho
    scale = np.sqrt(1.0 - rho * rho)
    x = np.empty_like(eps)
    x[:, 0] = eps[:, 0]
    for j in range(1, design.p):
        x[:, j] = rho * x[:, j - 1] + scale * eps[:, j]
    return x


def true_beta(model: Union[str, FamilyKind], p: int) -> np.ndarray:
    """(-0.25, 0.25, ...) for the binary models, (0.5, -0.5, ...) for Poisson."""

    if p < 1:
        raise ArgumentError(f"p must be >= 1, got {p}")
    kind = resolve_family(model).kind
    first = 0.5 if kind is FamilyKind.POISSON else -0.25
    signs = np.where(np.arange(p) % 2 == 0, 1.0, -1.0)
    return first * signs


def gen_response(family: GlmFamily, design_matrix: np.ndarray, beta0: np.ndarray, seed: int) -> np.ndarray:
    design_matrix = np.asarray(design_matrix, dtype=float)
    if design_matrix.ndim != 2:
        raise ArgumentError("design matrix must be two-dimensional")
    eta = design_matrix @ as_beta(beta0, design_matrix.shape[1])
    rng = make_rng(seed)
    if family.kind is FamilyKind.POISSON:
        return rng.poisson(family.h(eta)).astype(float)
    return (uniforms(rng, eta.shape) < family.h(eta)).astype(float)


def shard_sizes(n: int, k: int) -> List[int]:
    """``n mod k`` shards of ``ceil(n/k)`` rows followed by shards of ``floor(n/k)``."""

    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    if k > n:
        raise ArgumentError(f"cannot split n={n} rows into k={k} non-empty shards")
    base, extra = divmod(n, k)
    return [base + 1 if i < extra else base for i in range(k)]


def partition_shards(data: Dataset, k: int) -> List[Shard]:
    """Contiguous row blocks in order; concatenating them reproduces *data*."""

    shards = []
    start = 0
    for worker_id, size in enumerate(shard_sizes(data.n, k)):
        shards.append(Shard(worker_id, data.rows(start, start + size)))
        start += size
    return shards


def gen_trial_shards(design: SimDesign, trial: int) -> List[Shard]:
    """Shards of one simulated trial; shard ``k`` is seeded from ``(seed, trial, k)``.

    The pooled dataset is the concatenation of the shards, so
    ``partition_shards(pooled, K)`` gives the same blocks back.
    """

    family = design.family
    beta0 = true_beta(design.model, design.p)
    shards = []
    for worker_id, size in enumerate(shard_sizes(design.n, design.K)):
        block_seed = derive_seed(design.seed, trial, worker_id)
        block = SimDesign(design.model, size, design.p, design.rho, block_seed, 1)
        x = gen_design(block)
        y = gen_response(family, x, beta0, derive_seed(block_seed, 1))
        shards.append(Shard(worker_id, Dataset(x, y)))
    return shards


def gen_trial_dataset(design: SimDesign, trial: int) -> Dataset:
    return Dataset.concat(s.data for s in gen_trial_shards(design, trial))


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignDiagnostics:
    lambda_min_over_n: float
    lambda_max_over_n: float
    max_row_norm_sq: float
    quartic_proxy: float


def design_diagnostics(design_matrix: np.ndarray, *, seed: int = 0) -> DesignDiagnostics:
    """Eigen-extremes of ``Z'Z/n``, the largest squared row norm and a
    direction-sampled lower bound on ``sup_a (1/n) sum |a'z_i|^4``."""

    z = np.asarray(design_matrix, dtype=float)
    if z.ndim != 2:
        raise ArgumentError("design matrix must be two-dimensional")
    n, p = z.shape
    if n < p:
        raise ArgumentError(f"diagnostics need n >= p, got n={n} p={p}")
    lam_min, lam_max = eigen_extremes(spd_matrix(z.T @ z / n))

    random_dirs = standard_normals(make_rng(seed), (QUARTIC_DIRECTIONS, p))
    random_dirs /= np.linalg.norm(random_dirs, axis=1, keepdims=True)
    directions = np.vstack([np.eye(p), random_dirs])
    quartic = np.mean((z @ directions.T) ** 4, axis=0)

    return DesignDiagnostics(
        lambda_min_over_n=lam_min,
        lambda_max_over_n=lam_max,
        max_row_norm_sq=float(np.max(np.einsum("ij,ij->i", z, z))),
        quartic_proxy=float(np.max(quartic)),
    )


# ---------------------------------------------------------------------------
# B-splines
# ---------------------------------------------------------------------------


def _midpoint_quartiles(values: np.ndarray) -> Tuple[float, float, float]:
    q1, q2, q3 = np.quantile(values, [0.25, 0.5, 0.75], method="midpoint")
    return float(q1), float(q2), float(q3)


def quantile_knots(values: Sequence[float]) -> Tuple[float, float, float]:
    """First, second and third quartiles (midpoint convention between order statistics).

    When ties push a quartile onto the minimum or maximum (or onto another
    quartile) the knots are shifted to the quartiles of the distinct values,
    which always lie strictly inside the range once there are 4 of them.
    """

    values = np.asarray(values, dtype=float).reshape(-1)
    distinct = np.unique(values)
    if distinct.size < 4:
        raise DegenerateKnotsError(f"need at least 4 distinct values for quartile knots, got {distinct.size}")
    knots = _midpoint_quartiles(values)
    if not distinct[0] < knots[0] < knots[1] < knots[2] < distinct[-1]:
        shifted = _midpoint_quartiles(distinct)
        log.debug("Tied quartiles %s shifted to %s", knots, shifted)
        knots = shifted
    return knots


@dataclass(frozen=True)
class SplineSpec:
    interior_knots: Tuple[float, ...]
    boundary: Tuple[float, float]
    order: int = SPLINE_ORDER
    drop_first: bool = False
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        interior = tuple(float(k) for k in self.interior_knots)
        low, high = (float(b) for b in self.boundary)
        if self.order < 1:
            raise ArgumentError(f"spline order must be >= 1, got {self.order}")
        if not low < high:
            raise ArgumentError(f"boundary must satisfy low < high, got ({low}, {high})")
        if any(not low < k < high for k in interior):
            raise ArgumentError("interior knots must lie strictly inside the boundary")
        if any(b <= a for a, b in zip(interior, interior[1:])):
            raise ArgumentError("interior knots must be strictly increasing")
        object.__setattr__(self, "interior_knots", interior)
        object.__setattr__(self, "boundary", (low, high))
        knots = np.array([low] * self.order + list(interior) + [high] * self.order)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def basis_count(self) -> int:
        return len(self.interior_knots) + self.order - (1 if self.drop_first else 0)


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num, den = np.broadcast_arrays(num, den)
    return np.divide(num, den, out=np.zeros(num.shape), where=den > 0)


def bspline_design(values: Sequence[float], spec: SplineSpec) -> np.ndarray:
    """Basis matrix (one row per value) by the Cox-de Boor recursion.

    Values are clamped to the boundary; the right boundary belongs to the
    last non-empty knot span so the basis sums to one on the closed interval.
    """

    t = spec.knots
    low, high = spec.boundary
    x = np.clip(np.asarray(values, dtype=float).reshape(-1), low, high)[:, None]

    basis = ((t[:-1] <= x) & (x < t[1:])).astype(float)
    last_span = int(np.flatnonzero(t[:-1] < t[1:])[-1])
    at_end = x[:, 0] >= high
    basis[at_end] = 0.0
    basis[at_end, last_span] = 1.0

    for d in range(1, spec.order):
        left = _ratio(x - t[: -d - 1], t[d:-1] - t[: -d - 1]) * basis[:, :-1]
        right = _ratio(t[d + 1 :] - x, t[d + 1 :] - t[1:-d]) * basis[:, 1:]
        basis = left + right

    return basis[:, 1:] if spec.drop_first else basis


def bspline_basis(x: float, spec: SplineSpec) -> np.ndarray:
    return bspline_design([x], spec)[0]


# ---------------------------------------------------------------------------
# Case-study expansion
# ---------------------------------------------------------------------------


def spline_features() -> List[int]:
    """1-based indices of the features that get a spline expansion."""

    return [j for j in range(1, CASESTUDY_FEATURES + 1) if j not in LINEAR_FEATURES]


def fit_spline_specs(features: np.ndarray) -> List[SplineSpec]:
    """Quartile-knot cubic specs (first basis dropped) for each expanded feature."""

    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[1] != CASESTUDY_FEATURES:
        raise ArgumentError(f"expected an (n, {CASESTUDY_FEATURES}) feature matrix, got {features.shape}")
    specs = []
    for j in spline_features():
        column = features[:, j - 1]
        try:
            knots = quantile_knots(column)
        except DegenerateKnotsError as exc:
            raise DegenerateKnotsError(f"feature X{j}: {exc}") from None
        specs.append(SplineSpec(knots, (float(column.min()), float(column.max())), SPLINE_ORDER, drop_first=True))
    return specs


def expand_features(features: np.ndarray, specs: Sequence[SplineSpec]) -> np.ndarray:
    """Intercept, X3, X6, X8, then the spline blocks in feature order (94 columns)."""

    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features.reshape(1, -1)
    if features.shape[1] != CASESTUDY_FEATURES:
        raise ArgumentError(f"expected {CASESTUDY_FEATURES} features per record, got {features.shape[1]}")
    expanded = spline_features()
    if len(specs) != len(expanded):
        raise ArgumentError(f"expected {len(expanded)} spline specs, got {len(specs)}")
    blocks = [np.ones((features.shape[0], 1)), features[:, [j - 1 for j in LINEAR_FEATURES]]]
    blocks += [bspline_design(features[:, j - 1], spec) for j, spec in zip(expanded, specs)]
    return np.hstack(blocks)


def expanded_dimension(specs: Sequence[SplineSpec]) -> int:
    return 1 + len(LINEAR_FEATURES) + sum(s.basis_count for s in specs)
