"""Command-line entry point for the distributed GLM estimation toolkit.

Example usages:
    glmd simulate                                 # full sweep from the packaged sim_config.json
    glmd simulate --model probit --n 16384 --p 16 --k 4 --k 64 --trials 200 --jobs 8
    glmd fit --model logistic --n 4096 --p 8 --k 8 --method one_step
    glmd serve --k 2 --method one_step --endpoint 127.0.0.1:5555
    glmd work --endpoint 127.0.0.1:5555 --k 2 --worker-id 0 --n 2048 --p 4
    glmd casestudy --synthetic 200000 --k 10 --k 50 --trials 5
    glmd report --trials-file results/trials_probit.csv --strict

Exit codes: 0 success, 1 other failure (including unreadable files), 2 usage,
3 numerical failure, 4 transport failure.
"""

from __future__ import annotations

# ---------------------------------------------------------------------------
# Allow ``python glmd/main.py`` as well as ``python -m glmd.main``: put the
# directory holding the *glmd* package on sys.path before the package imports.
# ---------------------------------------------------------------------------

import os
import sys

_PARENT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if _PARENT_DIR not in sys.path:
    sys.path.insert(0, _PARENT_DIR)

import argparse
import json
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from glmd.casestudy import casestudy_fit, casestudy_run, gen_additive_records, write_casestudy_report
from glmd.datagen import SimDesign, gen_trial_shards, partition_shards
from glmd.distributed import DistributedEstimate, Method, Shard, run_distributed
from glmd.errors import ArgumentError, GlmdError, NumericalError, ProtocolError, TransportError
from glmd.experiment import DEFAULT_CONFIG_PATH, cell_seed, load_config, run_experiment
from glmd.glm_core import FAMILIES, Dataset, resolve_family
from glmd.logger import configure_logging, get_logger
from glmd.netproto.coordinator import coordinator_run
from glmd.netproto.transport import Transport
from glmd.netproto.worker import worker_run
from glmd.report import regenerate
from glmd.solver import FitOptions


log = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_TRANSPORT = 4


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an unsigned 64-bit seed, got {text!r}") from None
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError(f"seed out of range: {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {value}")
    return value


def _fit_options(args: argparse.Namespace) -> FitOptions:
    overrides = {
        "max_iterations": getattr(args, "max_iterations", None),
        "score_tolerance": getattr(args, "score_tolerance", None),
    }
    return FitOptions.from_mapping({k: v for k, v in overrides.items() if v is not None})


def _transport(args: argparse.Namespace) -> Transport:
    kwargs: Dict[str, float] = {}
    if args.handshake_timeout is not None:
        kwargs["handshake_timeout"] = args.handshake_timeout
    if args.round_timeout is not None:
        kwargs["round_timeout"] = args.round_timeout
    return Transport.tcp(args.endpoint, **kwargs)


def _emit(payload: Dict[str, Any], output: Optional[str]) -> None:
    text = json.dumps(payload, indent=2)
    print(text)
    if output:
        os.makedirs(os.path.dirname(os.path.abspath(output)), exist_ok=True)
        tmp_path = output + ".tmp"
        with open(tmp_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        os.replace(tmp_path, output)


def _estimate_payload(result: DistributedEstimate) -> Dict[str, Any]:
    return {
        "method": result.method.value,
        "estimate": [float(v) for v in result.estimate],
        "rounds_of_communication": result.rounds_of_communication,
        "local_convergence": list(result.local_convergence),
        "wire_bytes": result.wire_bytes,
    }


# ---------------------------------------------------------------------------
# Shard sources shared by fit / serve / work
# ---------------------------------------------------------------------------


def _load_dataset(path: str) -> Dataset:
    """Comma-separated rows ``y,z_1,...,z_p`` without a header."""

    try:
        table = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ArgumentError(f"cannot read dataset {path}: {exc}") from exc
    if table.shape[1] < 2:
        raise ArgumentError(f"{path} needs a response column and at least one covariate")
    return Dataset(table[:, 1:], table[:, 0])


def _job_shards(args: argparse.Namespace) -> List[Shard]:
    if args.input:
        return partition_shards(_load_dataset(args.input), args.k)
    family = resolve_family(args.model)
    seed = cell_seed(args.seed, family.name, args.p, args.k)
    return gen_trial_shards(SimDesign(family.kind, args.n, args.p, args.rho, seed, args.k), args.trial)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    overrides = {
        "models": args.model,
        "n": args.n,
        "p_list": args.p,
        "k_list": args.k,
        "trials": args.trials,
        "rho": args.rho,
        "seed": args.seed,
        "methods": args.method,
        "output_dir": args.output,
        "jobs": args.jobs,
        "strict": True if args.strict else None,
        "max_iterations": args.max_iterations,
        "score_tolerance": args.score_tolerance,
    }
    config = load_config(args.config, overrides)
    written = run_experiment(config)
    for model, paths in written.items():
        log.info("%s: %s", model, ", ".join(paths.values()))
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    family = resolve_family(args.model)
    result = run_distributed(args.method, family, _job_shards(args), _fit_options(args))
    _emit({"model": family.name, "K": args.k, **_estimate_payload(result)}, args.output)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    family = resolve_family(args.model)
    result = coordinator_run(family, args.k, _fit_options(args), args.method, _transport(args))
    _emit({"model": family.name, "K": args.k, **_estimate_payload(result)}, args.output)
    return EXIT_OK


def cmd_work(args: argparse.Namespace) -> int:
    if args.worker_id >= args.k:
        raise ArgumentError(f"--worker-id {args.worker_id} must be below --k {args.k}")
    family = resolve_family(args.model)
    shard = _job_shards(args)[args.worker_id]
    return worker_run(family, shard, _fit_options(args), _transport(args))


def cmd_casestudy(args: argparse.Namespace) -> int:
    settings = dict(
        methods=args.method or [Method.ONE_STEP.value],
        trials=args.trials,
        seed=args.seed,
        holdout_fraction=args.holdout_fraction,
        family=resolve_family(args.model),
        opts=_fit_options(args),
    )
    k_list = args.k or [10]
    if args.input:
        report = casestudy_run(args.input, k_list, **settings)
    elif args.synthetic:
        labels, features, _ = gen_additive_records(args.synthetic, args.seed)
        report = casestudy_fit(labels, features, k_list, **settings)
    else:
        raise ArgumentError("casestudy needs --input PATH or --synthetic N")
    path = write_casestudy_report(args.output, report)
    log.info("Case study (p=%d, trials=%d, global AUC %.4f) written to %s",
             report.dimension, report.trials, report.global_auc, path)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    written = regenerate(args.trials_file, args.output, strict=args.strict)
    for model, paths in written.items():
        log.info("%s: %s, %s", model, paths["metrics"], paths["summary"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    sweep = argparse.ArgumentParser(add_help=False)
    sweep.add_argument("--config", metavar="PATH", help=f"JSON sweep description (default: {DEFAULT_CONFIG_PATH})")
    sweep.add_argument("--jobs", type=_positive_int, default=None, help="Concurrent trials")

    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=_seed, default=None, help="Base seed (unsigned 64-bit)")

    output = argparse.ArgumentParser(add_help=False)
    output.add_argument("--output", metavar="DIR", default=None, help="Output directory or file")

    fitting = argparse.ArgumentParser(add_help=False)
    fitting.add_argument("--max-iterations", type=_positive_int, default=None)
    fitting.add_argument("--score-tolerance", type=_positive_float, default=None)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--model", choices=sorted(FAMILIES), default="probit")
    data.add_argument("--input", metavar="PATH", help="CSV rows y,z_1,...,z_p (otherwise data are simulated)")
    data.add_argument("--n", type=_positive_int, default=2048)
    data.add_argument("--p", type=_positive_int, default=4)
    data.add_argument("--rho", type=float, default=0.75)
    data.add_argument("--trial", type=int, default=0, help="Trial index of the simulated data")
    data.add_argument("--k", type=_positive_int, required=True, help="Number of shards / workers")

    wire = argparse.ArgumentParser(add_help=False)
    wire.add_argument("--endpoint", default="127.0.0.1:5555", help="Coordinator host:port")
    wire.add_argument("--handshake-timeout", type=_positive_float, default=None,
                      help="Seconds (default: GLMD_HANDSHAKE_TIMEOUT_S or 30)")
    wire.add_argument("--round-timeout", type=_positive_float, default=None,
                      help="Seconds (default: GLMD_ROUND_TIMEOUT_S or 300)")

    methods = [m.value for m in Method]
    parser = argparse.ArgumentParser(prog="glmd", description="Distributed GLM estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[sweep, seeded, output, fitting], help="Run a Monte-Carlo sweep")
    sim.add_argument("--model", action="append", choices=sorted(FAMILIES))
    sim.add_argument("--n", type=_positive_int)
    sim.add_argument("--p", type=_positive_int, action="append")
    sim.add_argument("--k", type=_positive_int, action="append")
    sim.add_argument("--trials", type=_positive_int)
    sim.add_argument("--rho", type=float)
    sim.add_argument("--method", action="append", choices=methods)
    sim.add_argument("--strict", action="store_true", help="Exclude non-converged trials from the metrics")
    sim.set_defaults(handler=cmd_simulate)

    fit = sub.add_parser("fit", parents=[seeded, output, fitting, data], help="Run one estimator in-process")
    fit.add_argument("--method", choices=methods, default=Method.ONE_STEP.value)
    fit.set_defaults(handler=cmd_fit)

    serve = sub.add_parser("serve", parents=[output, fitting, wire], help="Run the coordinator")
    serve.add_argument("--model", choices=sorted(FAMILIES), default="probit")
    serve.add_argument("--k", type=_positive_int, required=True)
    serve.add_argument("--method", choices=[m for m in methods if m != Method.GLOBAL.value],
                       default=Method.ONE_STEP.value)
    serve.set_defaults(handler=cmd_serve)

    work = sub.add_parser("work", parents=[seeded, fitting, data, wire], help="Run one worker")
    work.add_argument("--worker-id", type=_non_negative_int, required=True)
    work.set_defaults(handler=cmd_work)

    case = sub.add_parser("casestudy", parents=[seeded, output, fitting], help="Spline-expanded case study")
    case.add_argument("--input", metavar="PATH", help="CSV: label, then 18 features per line")
    case.add_argument("--synthetic", type=_positive_int, metavar="N", help="Use N synthetic additive records")
    case.add_argument("--model", choices=sorted(FAMILIES), default="logistic")
    case.add_argument("--k", type=_positive_int, action="append")
    case.add_argument("--method", action="append", choices=[m for m in methods if m != Method.GLOBAL.value])
    case.add_argument("--trials", type=_positive_int, default=1)
    case.add_argument("--holdout-fraction", type=float, default=0.2)
    case.set_defaults(handler=cmd_casestudy)

    rep = sub.add_parser("report", parents=[output], help="Rebuild metrics from a per-trial archive")
    rep.add_argument("--trials-file", required=True, metavar="PATH")
    rep.add_argument("--strict", action="store_true", help="Exclude non-converged trials")
    rep.set_defaults(handler=cmd_report)

    return parser


def _apply_defaults(args: argparse.Namespace) -> None:
    if args.command in ("fit", "work") and args.seed is None:
        args.seed = 0
    if args.command == "casestudy":
        args.seed = 0 if args.seed is None else args.seed
        args.output = args.output or "results"


def _log_name(args: argparse.Namespace) -> str:
    if args.command == "work":
        return f"work-{args.worker_id}"
    return args.command


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    _apply_defaults(args)
    configure_logging(_log_name(args))

    try:
        return args.handler(args)
    except ArgumentError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except NumericalError as exc:
        log.exception("Numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (TransportError, ProtocolError) as exc:
        log.error("Transport failure: %s", exc)
        return EXIT_TRANSPORT
    except GlmdError as exc:
        log.exception("Unexpected failure: %s", exc)
        return EXIT_FAILURE
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
