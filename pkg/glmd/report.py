"""Result files of a sweep: the per-trial archive, per-coordinate metrics and the summary.

Every file is written under a temporary name and moved into place with
``os.replace`` so a crashed run never leaves a half-written CSV behind.
Vectors are stored as ``;``-joined ``repr`` floats, which round-trip exactly.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from glmd.datagen import true_beta
from glmd.errors import ArgumentError
from glmd.logger import get_logger
from glmd.metrics import TrialArchive, min_median_max, relative_report


log = get_logger(__name__)

TRIAL_FIELDS = ["model", "p", "K", "method", "trial", "converged", "failed", "estimate", "variance"]
METRIC_FIELDS = ["model", "p", "K", "method", "coord", "rmse", "re", "cpci", "rc", "nonconverged_frac"]
SUMMARY_FIELDS = [
    "model", "p", "K", "method",
    "re_min", "re_median", "re_max", "rc_min", "rc_median", "rc_max",
    "failed_trials",
]

BASELINE_METHOD = "global"


@dataclass(frozen=True, eq=False)
class TrialRecord:
    model: str
    p: int
    K: int
    method: str
    trial: int
    converged: bool
    failed: bool
    estimate: Optional[np.ndarray] = None
    variance: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# Formatting helpers
# ---------------------------------------------------------------------------


def format_vector(values: Optional[np.ndarray]) -> str:
    if values is None:
        return ""
    return ";".join(repr(float(v)) for v in values)


def parse_vector(text: str) -> Optional[np.ndarray]:
    text = text.strip()
    if not text:
        return None
    return np.array([float(v) for v in text.split(";")])


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def atomic_write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = path + ".tmp"
    with open(tmp_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    os.replace(tmp_path, path)
    return path


# ---------------------------------------------------------------------------
# Per-trial archive
# ---------------------------------------------------------------------------


def write_trials(path: str, records: Sequence[TrialRecord]) -> str:
    rows = (
        [
            r.model, r.p, r.K, r.method, r.trial,
            int(r.converged), int(r.failed),
            format_vector(r.estimate), format_vector(r.variance),
        ]
        for r in records
    )
    return atomic_write_csv(path, TRIAL_FIELDS, rows)


def read_trials(path: str) -> List[TrialRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRIAL_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ArgumentError(f"{path} is not a trial archive (missing columns {sorted(missing)})")
        for row in reader:
            records.append(
                TrialRecord(
                    model=row["model"],
                    p=int(row["p"]),
                    K=int(row["K"]),
                    method=row["method"],
                    trial=int(row["trial"]),
                    converged=row["converged"] == "1",
                    failed=row["failed"] == "1",
                    estimate=parse_vector(row["estimate"]),
                    variance=parse_vector(row["variance"]),
                )
            )
    return records


# ---------------------------------------------------------------------------
# Metrics and summary
# ---------------------------------------------------------------------------


def _archive(method: str, records: Sequence[TrialRecord]) -> Optional[TrialArchive]:
    done = [r for r in records if not r.failed and r.estimate is not None]
    if not done:
        return None
    variances = None
    if all(r.variance is not None for r in done):
        variances = np.vstack([r.variance for r in done])
    return TrialArchive(method, np.vstack([r.estimate for r in done]), variances, [r.converged for r in done])


def cell_reports(
    model: str, p: int, K: int, records: Sequence[TrialRecord], *, strict: bool = False
) -> Tuple[List[list], List[list]]:
    """Metric rows and summary rows for one ``(model, p, K)`` cell."""

    beta0 = true_beta(model, p)
    by_method: Dict[str, List[TrialRecord]] = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)

    archives = {m: _archive(m, rs) for m, rs in by_method.items()}
    if strict:
        archives = {m: a.converged_only() if a is not None else None for m, a in archives.items()}
    baseline = archives.get(BASELINE_METHOD)
    if baseline is None:
        log.warning("No %s baseline for cell model=%s p=%d K=%d; ratios left empty", BASELINE_METHOD, model, p, K)

    metric_rows: List[list] = []
    summary_rows: List[list] = []
    for method, method_records in by_method.items():
        failed = sum(1 for r in method_records if r.failed)
        archive = archives[method]
        if archive is None:
            log.warning("Cell model=%s p=%d K=%d method=%s has no usable trials", model, p, K, method)
            summary_rows.append([model, p, K, method, "", "", "", "", "", "", failed])
            continue
        reference = baseline if baseline is not None else archive
        reports = relative_report(archive, reference, beta0)
        if baseline is None:
            reports = [replace(r, re=None, rc=None) for r in reports]
        frac = archive.nonconverged_fraction
        for r in reports:
            metric_rows.append(
                [model, p, K, method, r.coord, _cell(r.rmse), _cell(r.re), _cell(r.cpci), _cell(r.rc), _cell(frac)]
            )
        re_stats = min_median_max([r.re for r in reports])
        rc_stats = min_median_max([r.rc for r in reports])
        summary_rows.append([model, p, K, method, *map(_cell, re_stats), *map(_cell, rc_stats), failed])
    return metric_rows, summary_rows


def derive_reports(records: Sequence[TrialRecord], *, strict: bool = False) -> Tuple[List[list], List[list]]:
    """Group *records* by cell (first-seen order) and build all metric and summary rows."""

    cells: Dict[Tuple[str, int, int], List[TrialRecord]] = {}
    for r in records:
        cells.setdefault((r.model, r.p, r.K), []).append(r)
    metric_rows: List[list] = []
    summary_rows: List[list] = []
    for (model, p, K), cell in cells.items():
        m_rows, s_rows = cell_reports(model, p, K, cell, strict=strict)
        metric_rows.extend(m_rows)
        summary_rows.extend(s_rows)
    return metric_rows, summary_rows


def output_paths(output_dir: str, model: str) -> Dict[str, str]:
    return {
        "trials": os.path.join(output_dir, f"trials_{model}.csv"),
        "metrics": os.path.join(output_dir, f"metrics_{model}.csv"),
        "summary": os.path.join(output_dir, f"summary_{model}.csv"),
    }


def write_model_reports(
    output_dir: str, model: str, records: Sequence[TrialRecord], *, strict: bool = False, write_archive: bool = True
) -> Dict[str, str]:
    paths = output_paths(output_dir, model)
    if write_archive:
        write_trials(paths["trials"], records)
    metric_rows, summary_rows = derive_reports(records, strict=strict)
    atomic_write_csv(paths["metrics"], METRIC_FIELDS, metric_rows)
    atomic_write_csv(paths["summary"], SUMMARY_FIELDS, summary_rows)
    log.info("Wrote %s results to %s", model, output_dir)
    return paths


def regenerate(trials_path: str, output_dir: Optional[str] = None, *, strict: bool = False) -> Dict[str, Dict[str, str]]:
    """Rebuild metric and summary files from an existing per-trial archive."""

    records = read_trials(trials_path)
    if not records:
        raise ArgumentError(f"{trials_path} contains no trials")
    output_dir = output_dir or os.path.dirname(os.path.abspath(trials_path))
    by_model: Dict[str, List[TrialRecord]] = {}
    for r in records:
        by_model.setdefault(r.model, []).append(r)
    return {
        model: write_model_reports(output_dir, model, rs, strict=strict, write_archive=False)
        for model, rs in by_model.items()
    }
