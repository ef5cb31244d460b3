"""Simplified entrypoints for external agents.

Small blocking helpers around :mod:`glmd.experiment` and
:mod:`glmd.casestudy` so a sweep or a case study can be triggered
programmatically without going through the CLI.
"""

from typing import Any, Dict, Optional, Sequence

from glmd.casestudy import CaseStudyReport, casestudy_run, write_casestudy_report
from glmd.experiment import load_config, run_experiment
from glmd.solver import FitOptions


def run_simulation(config_path: Optional[str] = None, **overrides: Any) -> Dict[str, Dict[str, str]]:
    """Run a Monte-Carlo sweep synchronously and return the written file paths per model.

    Parameters
    ----------
    config_path:
        JSON sweep description; the packaged ``sim_config.json`` when omitted.
    overrides:
        Any config key (``models``, ``n``, ``p_list``, ``k_list``, ``trials``,
        ``rho``, ``seed``, ``methods``, ``output_dir``, ``jobs``, ``strict``)
        or fit option (``max_iterations``, ``score_tolerance``).
    """

    return run_experiment(load_config(config_path, overrides))


def run_casestudy(
    input_path: str,
    k_list: Sequence[int],
    *,
    output_dir: Optional[str] = None,
    methods: Sequence[str] = ("one_step",),
    trials: int = 1,
    seed: int = 0,
    holdout_fraction: float = 0.2,
    opts: Optional[FitOptions] = None,
) -> CaseStudyReport:
    """Run the case study on *input_path*; also write ``casestudy.csv`` when *output_dir* is given."""

    report = casestudy_run(
        input_path, k_list, seed=seed, holdout_fraction=holdout_fraction,
        methods=methods, trials=trials, opts=opts,
    )
    if output_dir:
        write_casestudy_report(output_dir, report)
    return report
