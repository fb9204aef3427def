"""Command-line entry point: ``ttcomplete {run,trace,gen-samples,truncate}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from ttcomplete.experiments import (
    GENERATORS,
    ExperimentSpec,
    build_problem,
    emit_convergence_trace,
    parse_spec_text,
    run_experiment,
    to_json,
)
from ttcomplete.sampling import write_sample_set
from ttcomplete.solvers import solve
from ttcomplete.tt_core import save_tt, tt_svd_truncate


def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--generator", choices=sorted(GENERATORS))
    p.add_argument("--dims", nargs=2, type=int, metavar=("D", "N"), help="order d and mode size n")
    p.add_argument("--rank", type=int, dest="r_final")
    p.add_argument("--csd", type=int)
    p.add_argument("--algorithm", choices=["als", "adf", "adf-sor"])
    p.add_argument("--eps-stop", type=float, dest="eps_stop")
    p.add_argument("--iter-max", type=int, dest="iter_max")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, dest="base_seed")
    p.add_argument("--noise", type=float)
    p.add_argument("--success-threshold", type=float, dest="success_threshold")
    p.add_argument("-o", "--output")


def _spec_from_args(args, base: dict | None = None) -> ExperimentSpec:
    fields = dict(base or {})
    for f in dataclasses.fields(ExperimentSpec):
        value = getattr(args, f.name, None)
        if value is not None:
            fields[f.name] = value
    if getattr(args, "dims", None):
        fields["d"], fields["n"] = args.dims
    return ExperimentSpec(**fields)


def cmd_run(args) -> int:
    base = parse_spec_text(Path(args.spec).read_text()) if args.spec else {}
    spec = _spec_from_args(args, base)
    result = run_experiment(spec, workers=args.workers)
    print(to_json(dataclasses.asdict(result.summary)))
    if not spec.output:
        sys.stdout.write(result.trials_csv())
    return 0


def cmd_trace(args) -> int:
    spec = _spec_from_args(args)
    problem = build_problem(spec, args.trial)
    _, report = solve(problem.samples, problem.control, spec.solver_config())
    if spec.output:
        with open(spec.output, "w") as fp:
            emit_convergence_trace(report, fp)
    else:
        emit_convergence_trace(report, sys.stdout)
    return 0


def cmd_gen_samples(args) -> int:
    spec = _spec_from_args(args)
    problem = build_problem(spec, args.trial)
    out = Path(spec.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_sample_set(problem.samples, out / "P.txt")
    write_sample_set(problem.control, out / "C.txt")
    print(f"wrote {len(problem.samples)} samples to {out / 'P.txt'} and {len(problem.control)} to {out / 'C.txt'}")
    return 0


def cmd_truncate(args) -> int:
    full = np.load(args.input)
    ranks = args.ranks if len(args.ranks) > 1 else args.ranks * (full.ndim - 1)
    result = tt_svd_truncate(full, ranks)
    save_tt(result.tt, args.output)
    err = np.sqrt(result.error_bound_sq)
    print(f"ranks {result.tt.ranks}, discarded {err:.6e} ({err / np.linalg.norm(full):.6e} relative)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttcomplete", description="Tensor train completion experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a batch of trials and aggregate")
    p.add_argument("spec", nargs="?", help="spec file with key = value lines")
    p.add_argument("--workers", type=int, default=1)
    _add_spec_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("trace", help="single trial, per-sweep convergence CSV")
    p.add_argument("--trial", type=int, default=0)
    _add_spec_flags(p)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("gen-samples", help="write the sample and control sets of one trial")
    p.add_argument("--trial", type=int, default=0)
    _add_spec_flags(p)
    p.set_defaults(func=cmd_gen_samples)

    p = sub.add_parser("truncate", help="TT-SVD of a dense tensor stored as .npy")
    p.add_argument("input")
    p.add_argument("--rank", type=int, nargs="+", dest="ranks", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_truncate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
