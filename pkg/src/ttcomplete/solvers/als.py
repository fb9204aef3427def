"""Rank-increasing alternating least squares completion."""

from __future__ import annotations

import logging

import numpy as np
import scipy.linalg as sla

from ttcomplete.sampling import SampleSet
from ttcomplete.solvers.common import (
    SampleFrame,
    SolverConfig,
    SolverReport,
    Timer,
    check_problem,
    initial_guess,
    mean_reduction_converged,
    rank_increase,
    record_sweep,
    sweep_positions,
)
from ttcomplete.tt_core import TTRep

log = logging.getLogger(__name__)


def als_microstep(frame: SampleFrame, values: np.ndarray) -> tuple[np.ndarray, int]:
    """Replace the core block by the slice-wise least-squares fit of ``values``.

    Every slice ``j`` of the core is an independent problem with one row per
    sample having ``i_s == j``; it is solved by ``lstsq`` (complete orthogonal
    factorization, minimum norm when rank deficient or underdetermined). Slices without samples are
    left untouched.

    Returns the per-sample predictions after the update and the number of
    undetermined (empty) slices.
    """
    s = frame.core
    core = frame.g.cores[s]
    _, k1, k2 = core.shape
    pred = np.empty(frame.m)
    empty = 0
    for j, members in enumerate(frame.slices[s]):
        if len(members) == 0:
            empty += 1
            continue
        a = frame.slice_design(j)
        sol = sla.lstsq(a, values[members], lapack_driver="gelsy", check_finite=False)[0]
        core[j] = sol.reshape(k1, k2)
        pred[members] = a @ sol
    return pred, empty


def als_sweep(frame: SampleFrame, values: np.ndarray, positions: list[int],
              trace: list[float] | None = None) -> tuple[float, int]:
    """One sweep of microsteps at ``positions``.

    Returns ``Res = ||M - A^G||_P`` after the sweep and the number of empty
    slices met. With ``trace`` given, ``Res`` after each microstep is appended.
    """
    res = float("nan")
    empty_total = 0
    for s in positions:
        frame.move_to(s)
        pred, empty = als_microstep(frame, values)
        if empty:
            pred = frame.predict()
            empty_total += empty
        res = float(np.linalg.norm(values - pred))
        if trace is not None:
            trace.append(res)
    return res, empty_total


def als_solve(samples: SampleSet, control: SampleSet | None = None,
              cfg: SolverConfig | None = None, init: TTRep | None = None) -> tuple[TTRep, SolverReport]:
    """Fit a TT tensor of rank ``cfg.r_final`` to ``samples`` by rank-increasing ALS.

    Starts from the uniform rank-one tensor (or ``init``) and, for every rank,
    sweeps until the mean of the last five residual reduction factors is within
    ``cfg.eps_stop`` of one or ``cfg.iter_max`` sweeps have run. Then all ranks
    are increased by one until ``r_final`` is reached.
    """
    cfg = cfg or SolverConfig()
    check_problem(samples)
    g = init.copy() if init is not None else initial_guess(samples.mode_sizes)
    values = samples.values
    norm_p = samples.norm() or 1.0
    positions = sweep_positions(g.d, cfg.sweep_order)
    report = SolverReport()
    clock = Timer()
    sweep = 0
    rank = max(g.ranks)

    while True:
        frame = SampleFrame(g, samples, core=positions[0])
        res0 = float(np.linalg.norm(values - frame.predict()))
        history = [res0]
        trace = [res0] if cfg.record_microsteps else None
        if trace is not None:
            report.microstep_residuals.append(trace)
        if res0 == 0.0:
            report.termination = "exact"
            record_sweep(report, g, sweep, rank, res0 / norm_p, control, clock)
            break
        stop = "iter_max"
        for _ in range(cfg.iter_max):
            res, empty = als_sweep(frame, values, positions, trace)
            report.undetermined_slices += empty
            sweep += 1
            history.append(res)
            record_sweep(report, g, sweep, rank, res / norm_p, control, clock)
            if res == 0.0:
                stop = "exact"
                break
            if mean_reduction_converged(history, cfg.eps_stop):
                stop = "stagnation"
                break
        log.debug("rank %d finished after %d sweeps (%s), res_P=%.3e", rank, len(history) - 1, stop, res / norm_p)
        if stop == "exact" or rank >= cfg.r_final:
            report.termination = stop if stop == "exact" else f"rank {rank} reached ({stop})"
            break
        g = rank_increase(g)
        rank += 1
        report.rank_events.append((sweep, rank))
        if report.sweeps:
            report.sweeps[-1].rank_increase = True
    report.wall_time = clock()
    return g, report

