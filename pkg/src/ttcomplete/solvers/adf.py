"""Alternating directions fitting (ADF) with overrelaxation.

Two variants are provided:

* the default microstep variant: after moving the orthogonality centre to
  ``s`` the block moves along ``N = (G^{<s})^T S_(s) (G^{>s})^T`` with the
  step size that exactly minimizes the sampled residual (one step size per
  slice, or one per block);
* the sweep-level variant, where a whole sweep projects the frozen
  ``Z^alpha = A^{G^-} + alpha S^{G^-}`` onto each block in turn and ``alpha``
  is adapted between sweeps by an up/down/back search.

The residual ``S = (M - A^G)|_P`` is only ever stored on the sample set.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

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
from ttcomplete.tt_core import TTRep, evaluate

log = logging.getLogger(__name__)

#: Gate for the mean-of-5 test of the sweep-level variant.
GAMMA_RATIO_GATE = 1e-7
#: Consecutive "back" decisions after which the sweep-level search gives up.
MAX_BACK = 10


# --------------------------------------------------------------------------
# Microstep variant
# --------------------------------------------------------------------------


def compute_gradient_block(frame: SampleFrame, residual: np.ndarray) -> np.ndarray:
    """Block ``N`` with ``N(j) = sum_{p in P, p_s = j} S_p left_p^T right_p^T``.

    ``N`` is the steepest-descent direction of ``1/2 ||M - A^G||_P^2`` with
    respect to the core block, i.e. minus its gradient.
    """
    return frame.contract_samples(residual)


def direction_on_samples(frame: SampleFrame, n_block: np.ndarray) -> np.ndarray:
    """Values of ``G^{<s} N G^{>s}`` on the sample set (``Z_N`` restricted to P)."""
    return frame.apply_block(n_block)


@dataclass
class AlphaResult:
    alpha: np.ndarray  # one value per slice
    z: np.ndarray      # Z_N on the samples
    stagnant: int      # slices with N != 0 but an invisible update on P


def optimal_alpha(frame: SampleFrame, n_block: np.ndarray, per_slice: bool = True) -> AlphaResult:
    """Exact line-search step ``||N||^2 / ||G^{<s} N G^{>s}||_P^2``.

    With ``per_slice`` each slice ``j`` gets its own step computed from the
    samples with ``p_s = j``. A zero denominator gives ``alpha = 0``.
    """
    s = frame.core
    z = direction_on_samples(frame, n_block)
    num = np.einsum("jab,jab->j", n_block, n_block)
    den = np.asarray(frame.onehot[s] @ (z * z)).ravel()
    if not per_slice:
        num = np.full_like(num, num.sum())
        den = np.full_like(den, den.sum())
    alpha = np.zeros_like(num)
    ok = den > 0
    alpha[ok] = num[ok] / den[ok]
    stagnant = int(np.count_nonzero(~ok & (num > 0)))
    if not per_slice:
        stagnant = min(stagnant, 1)
    return AlphaResult(alpha, z, stagnant)


def adf_microstep(frame: SampleFrame, residual: np.ndarray, per_slice: bool = True,
                  alpha: float | np.ndarray | None = None) -> AlphaResult:
    """Move the core block along ``N`` and update ``residual`` in place.

    ``alpha`` overrides the optimal step (scalar or per slice).
    """
    s = frame.core
    n_block = compute_gradient_block(frame, residual)
    res = optimal_alpha(frame, n_block, per_slice)
    if alpha is not None:
        res.alpha = np.broadcast_to(np.asarray(alpha, dtype=float), res.alpha.shape).copy()
    if not np.any(res.alpha):
        return res
    frame.g.cores[s] += res.alpha[:, None, None] * n_block
    residual -= res.alpha[frame.idx[:, s]] * res.z
    return res


def adf_sweep(frame: SampleFrame, residual: np.ndarray, positions: list[int],
              per_slice: bool = True, trace: list[float] | None = None) -> tuple[float, float, int]:
    """One sweep of optimal microsteps; returns ``(Res, mean alpha, stagnant slices)``."""
    alphas = []
    stagnant = 0
    for s in positions:
        frame.move_to(s)
        step = adf_microstep(frame, residual, per_slice)
        alphas.append(float(step.alpha.mean()))
        stagnant += step.stagnant
        if trace is not None:
            trace.append(float(np.linalg.norm(residual)))
    return float(np.linalg.norm(residual)), float(np.mean(alphas)), stagnant


# --------------------------------------------------------------------------
# Sweep-level overrelaxation
# --------------------------------------------------------------------------


def adf_core_step(frame: SampleFrame, residual_ref: np.ndarray, alpha: float) -> None:
    """Replace the core block by the projection of ``Z^alpha`` built from ``frame.ref``.

    ``G_s(j) = LS1 G^-_s(j) LS2 + alpha * sum_{p in P, p_s = j} S^-_p left_p^T right_p^T``
    with ``LS1 = (G^{<s})^T (G^-)^{<s}`` and ``LS2 = (G^-)^{>s} (G^{>s})^T``
    carried by the frame. The current representation must be ``s``-orthogonal.
    """
    s = frame.core
    first = np.einsum("ab,jbc,cd->jad", frame.ls_left[s], frame.ref.cores[s], frame.ls_right[s])
    if alpha:
        first += alpha * compute_gradient_block(frame, residual_ref)
    frame.g.cores[s] = first


def sor_sweep(g: TTRep, samples: SampleSet, alpha: float, positions: list[int],
              residual: np.ndarray | None = None) -> tuple[TTRep, float]:
    """One sweep of the overrelaxed block Gauss-Seidel iteration starting at ``g``.

    ``g`` itself is not modified; returns the new representation and its
    residual norm on the samples.
    """
    ref = g.copy()
    if residual is None:
        residual = samples.values - evaluate(ref, samples.indices)
    work = g.copy()
    frame = SampleFrame(work, samples, core=positions[0], reference=ref)
    for s in positions:
        frame.move_to(s)
        adf_core_step(frame, residual, alpha)
    res = float(np.linalg.norm(samples.values - evaluate(work, samples.indices)))
    return work, res


class Direction(str, enum.Enum):
    UP = "up"
    DOWN = "down"
    BACK = "back"


@dataclass
class SorState:
    alpha: float
    delta: float
    dir: Direction | None = None
    consecutive_back: int = 0

    @classmethod
    def initial(cls, grid_size: int, num_samples: int) -> "SorState":
        alpha = grid_size / num_samples
        return cls(alpha=alpha, delta=alpha / 4)

    @property
    def alpha_up(self) -> float:
        return self.alpha + self.delta

    @property
    def alpha_down(self) -> float:
        return max(1.0, self.alpha - self.delta / 5)


def _grow(state: SorState) -> float:
    # the undefined alpha^back of the update rule is read as the current alpha
    return min(state.alpha / 10, 1.2 * state.delta)


def choose_direction(state: SorState, res: float, res_up: float, res_down: float) -> SorState:
    """One decision of the up/down/back search; returns the new state.

    The returned ``dir`` tells the caller which candidate to accept
    (``back`` means neither and both candidates have to be recomputed).
    """
    if res_up > res and res_down > res:
        return replace(state, alpha=0.5 * (1 + state.alpha), delta=0.5 * state.delta,
                       dir=Direction.BACK, consecutive_back=state.consecutive_back + 1)
    if res_up < res_down:
        delta = _grow(state) if state.dir is Direction.UP else 0.5 * state.delta
        return SorState(state.alpha_up, delta, Direction.UP, 0)
    delta = _grow(state) if state.dir is Direction.DOWN else 0.5 * state.delta
    return SorState(state.alpha_down, delta, Direction.DOWN, 0)


def adf_sweep_with_sor(g: TTRep, samples: SampleSet, state: SorState, positions: list[int],
                       res: float | None = None) -> tuple[TTRep, SorState, float, bool]:
    """Run the sweep for ``alpha_up`` and ``alpha_down`` and pick one.

    Returns ``(G, state, Res, exhausted)``; ``exhausted`` is set when more than
    ten consecutive back steps occurred, in which case ``G`` is unchanged.
    """
    residual = samples.values - evaluate(g, samples.indices)
    if res is None:
        res = float(np.linalg.norm(residual))
    while True:
        g_up, res_up = sor_sweep(g, samples, state.alpha_up, positions, residual)
        g_down, res_down = sor_sweep(g, samples, state.alpha_down, positions, residual)
        state = choose_direction(state, res, res_up, res_down)
        if state.dir is Direction.UP:
            return g_up, state, res_up, False
        if state.dir is Direction.DOWN:
            return g_down, state, res_down, False
        if state.consecutive_back > MAX_BACK:
            return g, state, res, True


def _sor_gate(history: list[float], state: SorState) -> bool:
    if state.dir is Direction.DOWN:
        return True
    if len(history) < 3 or history[-2] == 0 or history[-3] == 0:
        return False
    g_now = history[-1] / history[-2]
    g_prev = history[-2] / history[-3]
    return g_prev != 0 and abs(1 - g_now / g_prev) < GAMMA_RATIO_GATE


# --------------------------------------------------------------------------
# Driver
# --------------------------------------------------------------------------


def adf_solve(samples: SampleSet, control: SampleSet | None = None,
              cfg: SolverConfig | None = None, init: TTRep | None = None,
              sor: bool = False) -> tuple[TTRep, SolverReport]:
    """Rank-increasing ADF completion.

    The rank schedule, initial guess and mean-of-5 stopping rule are those of
    :func:`ttcomplete.solvers.als.als_solve`. With ``sor=True`` the
    sweep-level overrelaxation search is used instead of optimal microsteps;
    its stopping test only fires when the last decision was ``down`` or the
    reduction factors have settled, and it also stops after more than ten
    consecutive back steps.
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
    state = SorState.initial(math.prod(samples.mode_sizes), len(samples)) if sor else None

    while True:
        frame = SampleFrame(g, samples, core=positions[0])
        residual = values - frame.predict()  # recomputed from scratch for every rank
        res = float(np.linalg.norm(residual))
        history = [res]
        trace = [res] if cfg.record_microsteps else None
        if trace is not None:
            report.microstep_residuals.append(trace)
        if res == 0.0:
            record_sweep(report, g, sweep, rank, 0.0, control, clock)
            report.termination = "exact"
            break
        stop = "iter_max"
        for _ in range(cfg.iter_max):
            if sor:
                g, state, res, exhausted = adf_sweep_with_sor(g, samples, state, positions, res)
                alpha = state.alpha
                if exhausted:
                    stop = "back"
                    break
            else:
                res, alpha, stagnant = adf_sweep(frame, residual, positions,
                                                 cfg.per_slice_alpha, trace)
                report.stagnant_slices += stagnant
            sweep += 1
            history.append(res)
            record_sweep(report, g, sweep, rank, res / norm_p, control, clock, alpha)
            if res == 0.0:
                stop = "exact"
                break
            gate = _sor_gate(history, state) if sor else True
            if gate and mean_reduction_converged(history, cfg.eps_stop):
                stop = "stagnation"
                break
        log.debug("rank %d finished after %d sweeps (%s)", rank, len(history) - 1, stop)
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
