"""Case study: spline-expanded distributed fits on a labelled CSV, scored by holdout AUC.

Input format: one record per line, comma-separated, the binary label first
(``1.0`` = signal) followed by 18 real features.  For each trial the rows are
split into training and holdout sets, quartile knots are placed on the
training rows and every requested method is fitted over K equal shards of
the training rows.

Records are read in chunks on every pass and never pooled into one expanded
design: each shard expands its own block while the rows are routed to it,
and the holdout is expanded chunk by chunk when it is scored.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from glmd.datagen import (
    CASESTUDY_FEATURES,
    LINEAR_FEATURES,
    SplineSpec,
    derive_seed,
    expand_features,
    expanded_dimension,
    fit_spline_specs,
    make_rng,
    shard_sizes,
    spline_features,
    standard_normals,
    uniforms,
)
from glmd.distributed import Method, Shard, run_distributed
from glmd.errors import ArgumentError, GlmdError, IngestError
from glmd.glm_core import LOGISTIC, Dataset, GlmFamily
from glmd.logger import get_logger
from glmd.metrics import auc, empirical_se, min_median_max
from glmd.report import atomic_write_csv, format_vector
from glmd.solver import FitOptions


log = get_logger(__name__)

_CHUNK_ROWS = 65_536


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def iter_records(path: str) -> Iterator[Tuple[float, np.ndarray]]:
    """Yield ``(label, features)`` per non-blank line; parse errors carry the line number."""

    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            fields = text.split(",")
            if len(fields) != CASESTUDY_FEATURES + 1:
                raise IngestError(f"expected {CASESTUDY_FEATURES + 1} fields, got {len(fields)}", line=line_no)
            try:
                values = np.array([float(f) for f in fields])
            except ValueError as exc:
                raise IngestError(f"non-numeric field: {exc}", line=line_no) from None
            if not np.all(np.isfinite(values)):
                raise IngestError("non-finite field", line=line_no)
            if values[0] not in (0.0, 1.0):
                raise IngestError(f"label must be 0 or 1, got {fields[0]!r}", line=line_no)
            yield values[0], values[1:]


def iter_record_chunks(path: str, chunk_rows: int = _CHUNK_ROWS) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Group :func:`iter_records` into ``(labels, features)`` blocks of at most *chunk_rows* rows."""

    buf = np.empty((chunk_rows, CASESTUDY_FEATURES + 1))
    used = 0
    for label, features in iter_records(path):
        buf[used, 0] = label
        buf[used, 1:] = features
        used += 1
        if used == chunk_rows:
            yield buf[:, 0].copy(), buf[:, 1:].copy()
            used = 0
    if used:
        yield buf[:used, 0].copy(), buf[:used, 1:].copy()


def load_records(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Read the whole file into ``(labels, features)``."""

    labels: List[np.ndarray] = []
    chunks: List[np.ndarray] = []
    for y, x in iter_record_chunks(path):
        labels.append(y)
        chunks.append(x)
    if not chunks:
        raise IngestError("no records found", line=0)
    features = np.vstack(chunks)
    log.info("Loaded %d records from %s", features.shape[0], path)
    return np.concatenate(labels), features


def write_records(path: str, labels: np.ndarray, features: np.ndarray) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = path + ".tmp"
    with open(tmp_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for y, row in zip(labels, features):
            writer.writerow([repr(float(y))] + [repr(float(v)) for v in row])
    os.replace(tmp_path, path)
    return path


# ---------------------------------------------------------------------------
# Synthetic additive data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AdditiveModel:
    """Logistic additive truth: linear terms for X3/X6/X8, smooth terms elsewhere."""

    intercept: float
    linear: np.ndarray
    tanh_coef: np.ndarray
    quad_coef: np.ndarray

    def linear_predictor(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=float))
        eta = self.intercept + features[:, [j - 1 for j in LINEAR_FEATURES]] @ self.linear
        smooth = features[:, [j - 1 for j in spline_features()]]
        eta = eta + np.tanh(smooth) @ self.tanh_coef + (0.5 * (smooth * smooth - 1.0)) @ self.quad_coef
        return eta


def default_additive_model() -> AdditiveModel:
    k = len(spline_features())
    signs = np.where(np.arange(k) % 2 == 0, 1.0, -1.0)
    return AdditiveModel(
        intercept=-0.2,
        linear=np.array([0.6, -0.4, 0.3]),
        tanh_coef=0.5 * signs,
        quad_coef=0.15 * signs[::-1],
    )


def gen_additive_records(
    n: int, seed: int, model: Optional[AdditiveModel] = None
) -> Tuple[np.ndarray, np.ndarray, AdditiveModel]:
    """Draw ``n`` labelled records from the additive model; return ``(labels, features, model)``.

    ``model.linear_predictor`` is the oracle scorer: its holdout AUC is the
    best any scorer can reach on the draw.
    """

    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    model = model or default_additive_model()
    features = standard_normals(make_rng(seed), (n, CASESTUDY_FEATURES))
    prob = LOGISTIC.h(model.linear_predictor(features))
    labels = (uniforms(make_rng(derive_seed(seed, 1)), n) < prob).astype(float)
    return labels, features, model


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def split_holdout(n: int, holdout_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded permutation split; returns sorted ``(train_rows, holdout_rows)``."""

    if not 0.0 < holdout_fraction < 1.0:
        raise ArgumentError(f"holdout fraction must lie in (0, 1), got {holdout_fraction}")
    order = make_rng(seed).permutation(n)
    n_hold = int(round(n * holdout_fraction))
    if n_hold < 1 or n_hold >= n:
        raise ArgumentError(f"holdout fraction {holdout_fraction} leaves an empty split for n={n}")
    return np.sort(order[n_hold:]), np.sort(order[:n_hold])


@dataclass(frozen=True, eq=False)
class CaseStudyRow:
    K: int
    method: str
    mean_auc: Optional[float]
    rmse_min: Optional[float]
    rmse_median: Optional[float]
    rmse_max: Optional[float]
    se: Optional[np.ndarray]
    failed_trials: int = 0


@dataclass(frozen=True, eq=False)
class CaseStudyReport:
    dimension: int
    trials: int
    global_auc: float
    global_se: Optional[np.ndarray]
    rows: List[CaseStudyRow] = field(default_factory=list)

    def row(self, K: int, method: str) -> CaseStudyRow:
        for r in self.rows:
            if r.K == K and r.method == method:
                return r
        raise KeyError((K, method))


RecordChunks = Callable[[], Iterator[Tuple[np.ndarray, np.ndarray]]]


def _array_chunks(labels: np.ndarray, features: np.ndarray) -> RecordChunks:
    def chunks() -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        for start in range(0, labels.shape[0], _CHUNK_ROWS):
            yield labels[start : start + _CHUNK_ROWS], features[start : start + _CHUNK_ROWS]

    return chunks


def _masked_chunks(chunks: RecordChunks, mask: np.ndarray) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Re-read the records keeping the rows where *mask* (indexed by record position) is set."""

    offset = 0
    for y, x in chunks():
        keep = mask[offset : offset + y.shape[0]]
        offset += y.shape[0]
        if np.any(keep):
            yield y[keep], x[keep]
    if offset != mask.shape[0]:
        raise IngestError(f"record count changed between passes ({mask.shape[0]} then {offset})", line=0)


def stream_shards(chunks: RecordChunks, train_mask: np.ndarray, k: int, specs: Sequence[SplineSpec]) -> List[Shard]:
    """Assign training rows to K contiguous shards while reading; expand each shard's block on its own.

    Shard boundaries follow :func:`shard_sizes` over the training rows in
    record order, so the shards equal ``partition_shards`` of the expanded
    training set.
    """

    sizes = shard_sizes(int(np.count_nonzero(train_mask)), k)
    shards: List[Shard] = []
    pending: List[Tuple[np.ndarray, np.ndarray]] = []
    filled = 0
    for y, x in _masked_chunks(chunks, train_mask):
        while y.shape[0]:
            take = min(sizes[len(shards)] - filled, y.shape[0])
            pending.append((y[:take], x[:take]))
            filled += take
            y, x = y[take:], x[take:]
            if filled == sizes[len(shards)]:
                design = expand_features(np.vstack([px for _, px in pending]), specs)
                shards.append(Shard(len(shards), Dataset(design, np.concatenate([py for py, _ in pending]))))
                pending, filled = [], 0
    return shards


def _holdout_scores(
    chunks: RecordChunks, hold_mask: np.ndarray, specs: Sequence[SplineSpec], estimates: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """``(labels, scores)`` of the holdout rows, one score column per column of *estimates*."""

    labels, scores = [], []
    for y, x in _masked_chunks(chunks, hold_mask):
        labels.append(y)
        scores.append(expand_features(x, specs) @ estimates)
    return np.concatenate(labels), np.vstack(scores)


def _run_casestudy(
    chunks: RecordChunks,
    n: int,
    k_list: Sequence[int],
    *,
    methods: Sequence[str],
    trials: int,
    seed: int,
    holdout_fraction: float,
    family: GlmFamily,
    opts: Optional[FitOptions],
) -> CaseStudyReport:
    if trials < 1:
        raise ArgumentError(f"trials must be >= 1, got {trials}")
    methods = [Method(m).value for m in methods if Method(m) is not Method.GLOBAL]
    opts = opts or FitOptions()

    global_aucs: List[float] = []
    global_estimates: List[np.ndarray] = []
    aucs: Dict[Tuple[int, str], List[float]] = {(k, m): [] for k in k_list for m in methods}
    estimates: Dict[Tuple[int, str], List[Tuple[int, np.ndarray]]] = {key: [] for key in aucs}
    failed: Dict[Tuple[int, str], int] = {key: 0 for key in aucs}
    dimension = 0

    for t in range(trials):
        _, hold_rows = split_holdout(n, holdout_fraction, derive_seed(seed, t))
        hold_mask = np.zeros(n, dtype=bool)
        hold_mask[hold_rows] = True
        train_mask = ~hold_mask

        specs = fit_spline_specs(np.vstack([x for _, x in _masked_chunks(chunks, train_mask)]))
        dimension = expanded_dimension(specs)

        pooled = run_distributed(Method.GLOBAL, family, stream_shards(chunks, train_mask, 1, specs), opts)
        fitted: List[Tuple[Tuple[int, str], np.ndarray]] = []
        for k in k_list:
            shards = stream_shards(chunks, train_mask, k, specs)
            for method in methods:
                try:
                    result = run_distributed(method, family, shards, opts)
                except GlmdError as exc:
                    log.warning("Case study trial %d K=%d method=%s failed: %s", t, k, method, exc)
                    failed[(k, method)] += 1
                    continue
                fitted.append(((k, method), result.estimate))

        columns = np.column_stack([pooled.estimate] + [est for _, est in fitted])
        y_hold, scores = _holdout_scores(chunks, hold_mask, specs, columns)
        global_aucs.append(auc(scores[:, 0], y_hold))
        global_estimates.append(pooled.estimate)
        log.info(
            "Case study trial %d: n_train=%d p=%d global AUC=%.4f",
            t, int(np.count_nonzero(train_mask)), dimension, global_aucs[-1],
        )
        for column, (key, est) in enumerate(fitted, start=1):
            aucs[key].append(auc(scores[:, column], y_hold))
            estimates[key].append((t, est))

    rows = []
    for (k, method), values in aucs.items():
        fits = estimates[(k, method)]
        rmse_stats: Tuple[Optional[float], ...] = (None, None, None)
        se = None
        if fits:
            diffs = np.vstack([est - global_estimates[t] for t, est in fits])
            rmse_stats = min_median_max(list(np.sqrt(np.mean(diffs * diffs, axis=0))))
            if len(fits) >= 2:
                se = empirical_se(np.vstack([est for _, est in fits]))
        rows.append(
            CaseStudyRow(
                K=k,
                method=method,
                mean_auc=float(np.mean(values)) if values else None,
                rmse_min=rmse_stats[0],
                rmse_median=rmse_stats[1],
                rmse_max=rmse_stats[2],
                se=se,
                failed_trials=failed[(k, method)],
            )
        )

    return CaseStudyReport(
        dimension=dimension,
        trials=trials,
        global_auc=float(np.mean(global_aucs)),
        global_se=empirical_se(np.vstack(global_estimates)) if trials >= 2 else None,
        rows=rows,
    )


def casestudy_fit(
    labels: np.ndarray,
    features: np.ndarray,
    k_list: Sequence[int],
    *,
    methods: Sequence[str] = (Method.ONE_STEP.value,),
    trials: int = 1,
    seed: int = 0,
    holdout_fraction: float = 0.2,
    family: GlmFamily = LOGISTIC,
    opts: Optional[FitOptions] = None,
) -> CaseStudyReport:
    """Fit every ``(K, method)`` on each trial's training split and score the holdout.

    Coefficient RMSE is taken against the pooled (global) fit of the same
    trial; SE is the across-trial standard deviation per coefficient.
    """

    labels = np.asarray(labels, dtype=float).reshape(-1)
    features = np.asarray(features, dtype=float)
    if features.shape != (labels.shape[0], CASESTUDY_FEATURES):
        raise ArgumentError(f"expected ({labels.shape[0]}, {CASESTUDY_FEATURES}) features, got {features.shape}")
    return _run_casestudy(
        _array_chunks(labels, features),
        labels.shape[0],
        k_list,
        methods=methods,
        trials=trials,
        seed=seed,
        holdout_fraction=holdout_fraction,
        family=family,
        opts=opts,
    )


def write_casestudy_report(output_dir: str, report: CaseStudyReport) -> str:
    def cell(value: Optional[float]) -> str:
        return "" if value is None else repr(float(value))

    rows = [["global", 1, cell(report.global_auc), "", "", "", format_vector(report.global_se), 0]]
    for r in report.rows:
        rows.append(
            [r.method, r.K, cell(r.mean_auc), cell(r.rmse_min), cell(r.rmse_median), cell(r.rmse_max),
             format_vector(r.se), r.failed_trials]
        )
    path = os.path.join(output_dir, "casestudy.csv")
    header = ["method", "K", "mean_auc", "rmse_min", "rmse_median", "rmse_max", "se", "failed_trials"]
    return atomic_write_csv(path, header, rows)


def casestudy_run(
    input_path: str,
    k_list: Sequence[int],
    seed: int = 0,
    holdout_fraction: float = 0.2,
    *,
    methods: Sequence[str] = (Method.ONE_STEP.value,),
    trials: int = 1,
    family: GlmFamily = LOGISTIC,
    opts: Optional[FitOptions] = None,
) -> CaseStudyReport:
    """Run the case study straight from *input_path*, re-reading it once per pass.

    Gives the same report as :func:`casestudy_fit` on :func:`load_records`
    output without holding the file in memory.
    """

    def chunks() -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        return iter_record_chunks(input_path)

    n = sum(y.shape[0] for y, _ in chunks())
    if n == 0:
        raise IngestError("no records found", line=0)
    log.info("Streaming %d records from %s", n, input_path)
    return _run_casestudy(
        chunks,
        n,
        k_list,
        methods=methods,
        trials=trials,
        seed=seed,
        holdout_fraction=holdout_fraction,
        family=family,
        opts=opts,
    )
