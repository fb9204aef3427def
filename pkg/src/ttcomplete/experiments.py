"""Seeded trial batches: problem setup, solver runs and aggregate statistics."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ttcomplete import generators as gen
from ttcomplete.sampling import SampleSet, draw_sample_set, overlap_fraction
from ttcomplete.solvers import Algorithm, SolverConfig, SolverReport, solve
from ttcomplete.tt_core import uniform_rank_one

log = logging.getLogger(__name__)

CSV_VERSION = 1
TRIAL_COLUMNS = ["trial", "status", "res_p", "res_c", "sweeps", "final_rank", "termination", "time"]
TRACE_COLUMNS = ["sweep", "rank", "res_P", "res_C", "alpha", "elapsed_seconds", "rank_increase"]
TIMING_COLUMNS = {"time", "elapsed_seconds"}


def _random_target(profile: str | None) -> Callable:
    def build(d, n, r, seed):
        g = gen.random_tt(d, n, r, seed)
        if profile is not None:
            g = gen.rescale_singular_values(g, profile)
        return gen.tt_oracle(g)
    return build


GENERATORS: dict[str, Callable] = {
    "inverse_norm": lambda d, n, r, seed: gen.inverse_norm_oracle(),
    "ratio": lambda d, n, r, seed: gen.ratio_oracle(),
    "rank1": lambda d, n, r, seed: gen.tt_oracle(uniform_rank_one([n] * d), "rank1"),
    "random": _random_target(None),
    "random_decay": _random_target("decay"),
    "random_gap": _random_target("gap"),
}


def default_eps_stop(generator: str, algorithm: Algorithm | str) -> float:
    """Stopping thresholds used for the reported experiments; ADF uses a third of ALS."""
    base = 15e-5 if generator == "inverse_norm" else 15e-4
    return base if Algorithm(algorithm) is Algorithm.ALS else base / 3


@dataclass
class ExperimentSpec:
    """One parameter combination, run ``trials`` times with seeds derived from ``base_seed``.

    Attributes:
        generator: Key of ``GENERATORS``.
        d, n:      Order and (uniform) mode size.
        r_final:   Target rank; also the ``r`` in ``C_SD * r**2`` and the rank of random targets.
        csd:       Slice density factor ``C_SD``.
        eps_stop:  ``None`` selects ``default_eps_stop``.
        noise:     Magnitude of the uniform perturbation of the sampled values.
        success_threshold: A trial succeeds if ``res_C`` is below this.
    """

    generator: str = "inverse_norm"
    d: int = 5
    n: int = 8
    r_final: int = 3
    csd: int = 10
    algorithm: Algorithm = Algorithm.ALS
    eps_stop: float | None = None
    iter_max: int = 1000
    trials: int = 1
    base_seed: int = 0
    noise: float = 0.0
    success_threshold: float = 1e-6
    output: str | None = None

    def __post_init__(self):
        self.algorithm = Algorithm(self.algorithm)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}; choose from {sorted(GENERATORS)}")
        if self.d < 2 or self.n < 1:
            raise ValueError("need d >= 2 and n >= 1")

    @property
    def mode_sizes(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    def solver_config(self) -> SolverConfig:
        eps = self.eps_stop if self.eps_stop is not None else default_eps_stop(self.generator, self.algorithm)
        return SolverConfig(r_final=self.r_final, iter_max=self.iter_max, eps_stop=eps,
                            seed=self.base_seed, algorithm=self.algorithm)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["algorithm"] = self.algorithm.value
        return out


def _coerce(value: str, kind):
    if value.lower() in ("none", ""):
        return None
    if kind in (int, "int", "int | None"):
        return int(value)
    if kind in (float, "float", "float | None"):
        return float(value)
    return value


def parse_spec_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Returns typed overrides."""
    types = {f.name: f.type for f in dataclasses.fields(ExperimentSpec)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(value, types[key])
    return out


def read_spec(path) -> ExperimentSpec:
    return ExperimentSpec(**parse_spec_text(Path(path).read_text()))


# --------------------------------------------------------------------------
# Trials
# --------------------------------------------------------------------------


@dataclass
class TrialProblem:
    samples: SampleSet
    control: SampleSet


@dataclass
class TrialResult:
    trial: int
    status: str  # "ok" or "failed"
    res_p: float = float("nan")
    res_c: float = float("nan")
    sweeps: int = 0
    final_rank: int = 0
    termination: str = ""
    time: float = 0.0
    error: str = ""
    overlap: float = float("nan")  # fraction of C that also lies in P
    flagged_slices: int = 0        # undetermined (ALS) or stagnant (ADF) slice updates


def trial_seeds(base_seed: int, trial: int) -> dict[str, int]:
    """Independent seeds for the parts of one trial, fixed by ``(base_seed, trial)``."""
    state = np.random.SeedSequence(base_seed, spawn_key=(trial,)).generate_state(4)
    return dict(zip(["samples", "control", "target", "noise"], (int(s) for s in state)))


def build_problem(spec: ExperimentSpec, trial: int) -> TrialProblem:
    seeds = trial_seeds(spec.base_seed, trial)
    oracle = GENERATORS[spec.generator](spec.d, spec.n, spec.r_final, seeds["target"])
    samples = draw_sample_set(spec.mode_sizes, spec.r_final, spec.csd, seeds["samples"], oracle)
    control = draw_sample_set(spec.mode_sizes, spec.r_final, spec.csd, seeds["control"], oracle, label="C")
    if spec.noise > 0:
        samples = gen.add_noise(samples, spec.noise, seeds["noise"])
    return TrialProblem(samples, control)


def run_trial(spec: ExperimentSpec, trial: int, keep_report: bool = False):
    """Run one trial; solver errors are caught and recorded as a failed trial."""
    try:
        problem = build_problem(spec, trial)
        _, report = solve(problem.samples, problem.control, spec.solver_config())
    except Exception as exc:  # a failed trial must not end the batch
        log.warning("trial %d failed: %s", trial, exc)
        result = TrialResult(trial, "failed", error=f"{type(exc).__name__}: {exc}")
        return (result, None) if keep_report else result
    last = report.final
    result = TrialResult(trial, "ok", last.res_p, last.res_c, len(report.sweeps), last.rank,
                         report.termination, report.wall_time,
                         overlap=overlap_fraction(problem.samples, problem.control),
                         flagged_slices=report.undetermined_slices + report.stagnant_slices)
    return (result, report) if keep_report else result


def _run_trial_star(args):
    return run_trial(*args)


# --------------------------------------------------------------------------
# Aggregation
# --------------------------------------------------------------------------


def aggregate(values) -> tuple[float, float]:
    """Geometric mean and spread ``exp(std(ln x))`` of the positive entries of ``values``."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x) & (x > 0)]
    if x.size == 0:
        return float("nan"), float("nan")
    logs = np.log(x)
    return float(np.exp(logs.mean())), float(np.exp(logs.std()))


@dataclass
class AggregateRow:
    """Statistics over the trials of one spec.

    Geometric statistics use positive residuals only; exact (zero) residuals
    are counted in ``exact`` and still count as successes.
    """

    trials: int
    failed: int
    successes: int
    exact: int
    res_c_gmean: float
    res_c_spread: float
    res_p_gmean: float
    res_p_spread: float
    time_mean: float
    time_var: float
    excluded: int = 0  # nonpositive or nonfinite residuals left out of the geometric stats

    @classmethod
    def from_trials(cls, results: list[TrialResult], success_threshold: float) -> "AggregateRow":
        ok = [t for t in results if t.status == "ok"]
        res_c = np.array([t.res_c for t in ok])
        res_p = np.array([t.res_p for t in ok])
        times = np.array([t.time for t in ok])
        exact = int(np.sum(res_c == 0))
        excluded = int(np.sum(~(np.isfinite(res_c) & (res_c > 0)))) - exact
        cg, cs = aggregate(res_c)
        pg, ps = aggregate(res_p)
        return cls(
            trials=len(results),
            failed=len(results) - len(ok),
            successes=int(np.sum(res_c < success_threshold)),
            exact=exact,
            res_c_gmean=cg, res_c_spread=cs,
            res_p_gmean=pg, res_p_spread=ps,
            time_mean=float(times.mean()) if len(ok) else float("nan"),
            time_var=float(times.var()) if len(ok) else float("nan"),
            excluded=excluded,
        )


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    trials: list[TrialResult]
    summary: AggregateRow
    meta: dict = field(default_factory=dict)

    def trials_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# ttcomplete trials v{CSV_VERSION}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRIAL_COLUMNS)
        for t in self.trials:
            writer.writerow([t.trial, t.status, _fmt(t.res_p), _fmt(t.res_c), t.sweeps,
                             t.final_rank, t.termination or t.error, _fmt(t.time)])
        return buf.getvalue()

    def to_json(self) -> str:
        return to_json({
            "version": CSV_VERSION,
            "spec": self.spec.to_dict(),
            "summary": dataclasses.asdict(self.summary),
            "meta": self.meta,
            "trials": [dataclasses.asdict(t) for t in self.trials],
        })

    def write(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
        csv_path.write_text(self.trials_csv())
        json_path.write_text(self.to_json())
        return csv_path, json_path


def _fmt(x: float) -> str:
    return "nan" if not math.isfinite(x) else f"{x:.6e}"


def _finite_or_none(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_none(v) for v in obj]
    return obj


def to_json(obj) -> str:
    """Strict JSON: non-finite floats become ``null``."""
    return json.dumps(_finite_or_none(obj), indent=2, allow_nan=False)


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> ExperimentResult:
    """Run all trials of ``spec`` and aggregate. Results do not depend on ``workers``."""
    jobs = [(spec, t) for t in range(spec.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial_star, jobs))
    else:
        results = [run_trial(*job) for job in jobs]
    results.sort(key=lambda t: t.trial)
    summary = AggregateRow.from_trials(results, spec.success_threshold)
    overlaps = [t.overlap for t in results if t.status == "ok"]
    meta = {"overlap_mean": float(np.mean(overlaps)) if overlaps else float("nan")}
    out = ExperimentResult(spec, results, summary, meta)
    if spec.output:
        out.write(spec.output)
    return out


# --------------------------------------------------------------------------
# Convergence traces
# --------------------------------------------------------------------------


def trace_rows(report: SolverReport) -> list[dict]:
    """One row per sweep; ``rank_increase`` is 1 on the last sweep before a rank step."""
    if not report.sweeps:
        raise ValueError("empty report")
    return [
        {"sweep": s.sweep, "rank": s.rank, "res_P": s.res_p, "res_C": s.res_c,
         "alpha": s.alpha, "elapsed_seconds": s.elapsed, "rank_increase": int(s.rank_increase)}
        for s in report.sweeps
    ]


def emit_convergence_trace(report: SolverReport, fp=None) -> str:
    """Write the trace CSV (header plus one row per sweep) to ``fp`` and return it."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, TRACE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in trace_rows(report):
        writer.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in row.items()})
    text = buf.getvalue()
    if fp is not None:
        fp.write(text)
    return text


def strip_timing(csv_text: str) -> str:
    """Drop the timing columns so two runs can be compared byte for byte."""
    lines = [ln for ln in csv_text.splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    keep = [i for i, name in enumerate(rows[0]) if name not in TIMING_COLUMNS]
    return "\n".join(",".join(r[i] for i in keep) for r in rows) + "\n"


def success_grid(base: ExperimentSpec, ranks, csds, workers: int = 1) -> np.ndarray:
    """Success counts for every ``(rank, C_SD)`` pair; rows follow ``ranks``."""
    grid = np.zeros((len(ranks), len(csds)), dtype=int)
    for a, r in enumerate(ranks):
        for b, c in enumerate(csds):
            spec = dataclasses.replace(base, r_final=r, csd=c, output=None)
            grid[a, b] = run_experiment(spec, workers).summary.successes
    return grid
