"""Monte-Carlo sweeps over (model, p, K, method, trial).

A sweep is described by an :class:`ExperimentConfig`, normally loaded from a
JSON file (the packaged ``sim_config.json`` when no path is given) with
command-line overrides on top.  For every cell the trial data are generated
once and every requested estimator runs on the same shards through the
in-process transport.  Trials run on a process pool of ``jobs`` workers and
are collected in trial order, so the written files do not depend on
scheduling.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from glmd.datagen import SimDesign, derive_seed, gen_trial_shards, true_beta
from glmd.distributed import Method, run_distributed, weighted_average
from glmd.errors import ArgumentError, ConfigError, GlmdError
from glmd.glm_core import FAMILIES, fisher_info, resolve_family
from glmd.linalg import pairwise_sum
from glmd.logger import get_logger
from glmd.metrics import wald_variances
from glmd.report import TrialRecord, write_model_reports
from glmd.solver import FitOptions, fit_mle


log = get_logger(__name__)

DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(__file__), "sim_config.json")

_KEYS = {"models", "n", "p_list", "k_list", "trials", "rho", "seed", "methods", "output_dir", "jobs", "fit", "strict"}


@dataclass(frozen=True)
class ExperimentConfig:
    models: Tuple[str, ...]
    n: int
    p_list: Tuple[int, ...]
    k_list: Tuple[int, ...]
    trials: int
    rho: float = 0.75
    base_seed: int = 0
    methods: Tuple[str, ...] = tuple(m.value for m in Method)
    output_dir: str = "results"
    jobs: int = 1
    fit: FitOptions = field(default_factory=FitOptions)
    strict: bool = False

    def __post_init__(self) -> None:
        for name in self.models:
            if name not in FAMILIES:
                raise ConfigError(f"unknown model {name!r}; expected one of {sorted(FAMILIES)}")
        known = {m.value for m in Method}
        for name in self.methods:
            if name not in known:
                raise ConfigError(f"unknown method {name!r}; expected one of {sorted(known)}")
        if not self.models or not self.p_list or not self.k_list or not self.methods:
            raise ConfigError("models, p_list, k_list and methods must be non-empty")
        if self.n < 1 or self.trials < 1 or self.jobs < 1:
            raise ConfigError(f"n, trials and jobs must be >= 1 (n={self.n}, trials={self.trials}, jobs={self.jobs})")
        if any(p < 1 for p in self.p_list) or any(k < 1 for k in self.k_list):
            raise ConfigError("every p and K must be >= 1")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        limit = self.n // max(self.p_list)
        too_many = [k for k in self.k_list if k > limit]
        if too_many:
            raise ConfigError(
                f"K={too_many} exceeds n / max(p) = {self.n} / {max(self.p_list)}; every shard needs n_k >= p"
            )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["seed"] = data.pop("base_seed")
        return data


def _as_tuple(value: Any, cast) -> tuple:
    if isinstance(value, (str, int, float)):
        value = [value]
    return tuple(cast(v) for v in value)


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Read a sweep description and apply *overrides* (``None`` values are ignored)."""

    cfg_path = path or DEFAULT_CONFIG_PATH
    try:
        with open(cfg_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {cfg_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {cfg_path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {cfg_path} must hold a JSON object")

    if "model" in raw and "models" not in raw:
        raw["models"] = raw.pop("model")
    unknown = set(raw) - _KEYS
    if unknown:
        log.warning("Ignoring unknown config keys in %s: %s", cfg_path, sorted(unknown))

    merged: Dict[str, Any] = {k: v for k, v in raw.items() if k in _KEYS}
    fit_section = dict(merged.pop("fit", None) or {})
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("max_iterations", "score_tolerance", "step_halving_max"):
            fit_section[key] = value
        else:
            merged[key] = value

    try:
        return ExperimentConfig(
            models=_as_tuple(merged["models"], lambda m: resolve_family(m).name),
            n=int(merged["n"]),
            p_list=_as_tuple(merged["p_list"], int),
            k_list=_as_tuple(merged["k_list"], int),
            trials=int(merged["trials"]),
            rho=float(merged.get("rho", 0.75)),
            base_seed=int(merged.get("seed", 0)),
            methods=_as_tuple(merged.get("methods", [m.value for m in Method]), lambda m: Method(m).value),
            output_dir=str(merged.get("output_dir", "results")),
            jobs=int(merged.get("jobs", 1)),
            fit=FitOptions.from_mapping(fit_section),
            strict=bool(merged.get("strict", False)),
        )
    except KeyError as exc:
        raise ConfigError(f"config {cfg_path} is missing {exc.args[0]!r}") from None
    except ConfigError:
        raise
    except (ArgumentError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config {cfg_path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------


def cell_seed(base_seed: int, model: str, p: int, k: int) -> int:
    return derive_seed(base_seed, resolve_family(model).code, p, k)


def run_trial(
    model: str,
    n: int,
    p: int,
    k: int,
    rho: float,
    seed: int,
    trial: int,
    methods: Sequence[str],
    opts: FitOptions,
) -> List[TrialRecord]:
    """Run every method on trial *trial* of one cell; failures become ``failed`` rows."""

    family = resolve_family(model)
    shards = gen_trial_shards(SimDesign(family.kind, n, p, rho, seed, k), trial)
    records = []
    for name in methods:
        try:
            result = run_distributed(name, family, shards, opts)
            fisher = pairwise_sum([fisher_info(family, s.data, result.estimate) for s in shards])
            variance = wald_variances(fisher)
        except GlmdError as exc:
            log.warning("Trial failed (model=%s p=%d K=%d trial=%d method=%s): %s", model, p, k, trial, name, exc)
            records.append(TrialRecord(model, p, k, name, trial, converged=False, failed=True))
            continue
        records.append(
            TrialRecord(model, p, k, name, trial, result.all_converged, False, result.estimate, variance)
        )
    return records


def _trial_tasks(config: ExperimentConfig, model: str) -> Iterable[tuple]:
    for p in config.p_list:
        for k in config.k_list:
            seed = cell_seed(config.base_seed, model, p, k)
            for t in range(config.trials):
                yield (model, config.n, p, k, config.rho, seed, t, config.methods, config.fit)


def _run_tasks(tasks: List[tuple], jobs: int) -> List[List[TrialRecord]]:
    if jobs == 1:
        return [run_trial(*task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map() yields in submission order regardless of completion order.
        return list(pool.map(run_trial, *zip(*tasks)))


def run_experiment(config: ExperimentConfig) -> Dict[str, Dict[str, str]]:
    """Run the sweep and write ``trials_/metrics_/summary_<model>.csv``; return the paths per model."""

    written: Dict[str, Dict[str, str]] = {}
    for model in config.models:
        tasks = list(_trial_tasks(config, model))
        log.info(
            "Sweep %s: n=%d p=%s K=%s trials=%d methods=%s (%d tasks, jobs=%d)",
            model, config.n, list(config.p_list), list(config.k_list), config.trials,
            list(config.methods), len(tasks), config.jobs,
        )
        # Method order inside each cell follows config.methods.
        records = [r for batch in _run_tasks(tasks, config.jobs) for r in batch]
        records.sort(key=lambda r: (config.p_list.index(r.p), config.k_list.index(r.K),
                                    config.methods.index(r.method), r.trial))
        failed = sum(1 for r in records if r.failed)
        if failed:
            log.warning("%s sweep: %d of %d trial runs failed", model, failed, len(records))
        written[model] = write_model_reports(config.output_dir, model, records, strict=config.strict)
    return written


# ---------------------------------------------------------------------------
# Consistency of the weighted average
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConsistencyPoint:
    n: int
    mean_error: float
    scaled_error: float


def consistency_curve(
    model: str,
    n_list: Sequence[int],
    k: int,
    p: int,
    *,
    trials: int = 20,
    rho: float = 0.75,
    seed: int = 0,
    opts: Optional[FitOptions] = None,
) -> List[ConsistencyPoint]:
    """Mean ``||beta_bar - beta0||`` of the weighted local average for each n.

    ``scaled_error`` multiplies by ``sqrt(n / p)``; it stays bounded when the
    average converges at the ``sqrt(p/n)`` rate.
    """

    family = resolve_family(model)
    beta0 = true_beta(model, p)
    opts = opts or FitOptions()
    points = []
    for n in n_list:
        design = SimDesign(family.kind, n, p, rho, cell_seed(seed, model, p, k) ^ n, k)
        errors = []
        for t in range(trials):
            fits = [fit_mle(family, s.data, None, opts) for s in gen_trial_shards(design, t)]
            errors.append(float(np.linalg.norm(weighted_average(fits) - beta0)))
        mean_error = float(np.mean(errors))
        points.append(ConsistencyPoint(n, mean_error, mean_error * math.sqrt(n / p)))
        log.info("consistency %s n=%d K=%d: mean error %.4g", model, n, k, mean_error)
    return points
