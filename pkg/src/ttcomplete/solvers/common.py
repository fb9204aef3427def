"""Machinery shared by the ALS and ADF completion solvers."""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ttcomplete.sampling import SampleSet
from ttcomplete.tt_core import (
    TTRep,
    evaluate,
    orth_left,
    orth_right,
    orthogonalize,
    uniform_rank_one,
)


class SweepOrder(str, enum.Enum):
    HALF_ALTERNATING = "half_alternating"
    FORWARD = "forward"


class Algorithm(str, enum.Enum):
    ALS = "als"
    ADF = "adf"
    ADF_SOR = "adf-sor"


@dataclass
class SolverConfig:
    """Settings for a rank-increasing completion run.

    Attributes:
        r_final:      Target TT rank (uniform over all interior bonds).
        iter_max:     Maximum number of sweeps per rank.
        eps_stop:     Threshold for ``|1 - mean of last 5 reduction factors|``.
        sweep_order:  ``half_alternating`` (0..h-1 then d-1..h, h = d//2) or ``forward``.
        algorithm:    Solver family, only used by the experiment harness.
        per_slice_alpha: ADF only; one optimal step size per slice (default) or per block.
        record_microsteps: keep ``Res_P`` after every microstep in the report.
    """

    r_final: int = 1
    iter_max: int = 1000
    eps_stop: float = 15e-5
    sweep_order: SweepOrder = SweepOrder.HALF_ALTERNATING
    seed: int = 0
    algorithm: Algorithm = Algorithm.ALS
    per_slice_alpha: bool = True
    record_microsteps: bool = False

    def __post_init__(self):
        self.sweep_order = SweepOrder(self.sweep_order)
        self.algorithm = Algorithm(self.algorithm)
        if self.r_final < 1:
            raise ValueError("r_final must be >= 1")
        if not 0 < self.eps_stop < 1:
            raise ValueError("eps_stop must lie in (0, 1)")
        if self.iter_max < 5:
            raise ValueError("iter_max must be >= 5 (the stopping test uses 5 sweeps)")


@dataclass
class SweepRecord:
    sweep: int
    rank: int
    res_p: float  # relative, ||M - X||_P / ||M||_P
    res_c: float  # relative on the control set, nan without one
    alpha: float  # sweep-level alpha (ADF-SOR) or mean microstep alpha, nan for ALS
    elapsed: float
    rank_increase: bool = False


@dataclass
class SolverReport:
    sweeps: list[SweepRecord] = field(default_factory=list)
    rank_events: list[tuple[int, int]] = field(default_factory=list)  # (sweep, new rank)
    termination: str = ""
    microstep_residuals: list[list[float]] = field(default_factory=list)  # one list per rank
    undetermined_slices: int = 0
    stagnant_slices: int = 0
    wall_time: float = 0.0

    @property
    def final(self) -> SweepRecord:
        return self.sweeps[-1]


def sweep_positions(d: int, order: SweepOrder) -> list[int]:
    """Microstep positions of one sweep (0-based)."""
    if SweepOrder(order) is SweepOrder.FORWARD:
        return list(range(d))
    h = d // 2
    return list(range(h)) + list(range(d - 1, h - 1, -1))


def rank_increase(g: TTRep) -> TTRep:
    """Add the uniform rank-one tensor ``prod_s n_s^{-1/2}`` with all interior ranks +1."""
    d = g.d
    cores = []
    for s, core in enumerate(g.cores):
        n, k1, k2 = core.shape
        c = 1.0 / math.sqrt(n)
        if s == 0:
            new = np.concatenate([core, np.full((n, 1, 1), c)], axis=2)
        elif s == d - 1:
            new = np.concatenate([core, np.full((n, 1, 1), c)], axis=1)
        else:
            new = np.zeros((n, k1 + 1, k2 + 1))
            new[:, :k1, :k2] = core
            new[:, k1, k2] = c
        cores.append(new)
    return TTRep(cores)


def initial_guess(mode_sizes) -> TTRep:
    return uniform_rank_one(mode_sizes)


def mean_reduction_converged(history: list[float], eps: float) -> bool:
    """Mean-of-5 test on residual reduction factors ``gamma_i = Res_i / Res_{i-1}``.

    ``history`` holds ``Res`` at the start of the current rank followed by one
    value per sweep; at least 5 sweeps are needed.
    """
    if len(history) < 6:
        return False
    gammas = [_gamma(history[k], history[k - 1]) for k in range(len(history) - 5, len(history))]
    return abs(1.0 - float(np.mean(gammas))) < eps


def _gamma(new: float, old: float) -> float:
    return 1.0 if old == 0 else new / old


class SampleFrame:
    """Per-sample interface vectors of a TT representation over a sample set.

    For core position ``s`` the frame keeps ``left[s][p] = G_0(i_0)...G_{s-1}(i_{s-1})``
    (a row of length ``r_s``) and ``right[s][p] = G_{s+1}(i_{s+1})...G_{d-1}(i_{d-1})``
    (a column of length ``r_{s+1}``). Moving the core one position costs one
    QR or LQ plus an ``O(m r^2)`` update of the affected stack.

    When ``reference`` is given (the frozen representation of a sweep-level
    ADF step), the frame also carries ``<G^T, ., G^->`` products
    ``ls_left[s] = (G^{<s})^T (G^-)^{<s}`` and ``ls_right[s] = (G^-)^{>s} (G^{>s})^T``.
    """

    def __init__(self, g: TTRep, samples: SampleSet, core: int = 0, reference: TTRep | None = None):
        self.g = g
        self.idx = samples.indices
        self.m = len(samples)
        self.d = g.d
        self.ref = reference
        self.onehot = [
            sp.csr_matrix((np.ones(self.m), (self.idx[:, s], np.arange(self.m))),
                          shape=(g.mode_sizes[s], self.m))
            for s in range(self.d)
        ]
        self.counts = [np.asarray(e.sum(axis=1)).ravel().astype(int) for e in self.onehot]
        order = [np.argsort(self.idx[:, s], kind="stable") for s in range(self.d)]
        self.slices = [
            np.split(order[s], np.cumsum(self.counts[s])[:-1]) for s in range(self.d)
        ]
        self._reset(core)

    def _reset(self, core: int) -> None:
        g = self.g
        orthogonalize(g, core)
        self.core = core
        self.left = [None] * self.d
        self.right = [None] * self.d
        self.left[0] = np.ones((self.m, 1))
        for s in range(core):
            self.left[s + 1] = self._push_left(s, g.cores[s])
        self.right[-1] = np.ones((self.m, 1))
        for s in range(self.d - 1, core, -1):
            self.right[s - 1] = self._push_right(s, g.cores[s])
        if self.ref is not None:
            self.ls_left = [None] * self.d
            self.ls_right = [None] * self.d
            self.ls_left[0] = np.ones((1, 1))
            for s in range(core):
                self.ls_left[s + 1] = np.einsum("iab,ac,icd->bd", g.cores[s], self.ls_left[s], self.ref.cores[s])
            self.ls_right[-1] = np.ones((1, 1))
            for s in range(self.d - 1, core, -1):
                self.ls_right[s - 1] = np.einsum("iab,bc,idc->ad", self.ref.cores[s], self.ls_right[s], g.cores[s])

    # Per-sample products are formed slice by slice: all samples of slice j
    # share the matrix G_s(j), so one matrix product per slice replaces a
    # gather of m small matrices.

    def _push_left(self, s: int, block: np.ndarray) -> np.ndarray:
        """``left[s+1][p] = left[s][p] @ block(i_s)``."""
        out = np.empty((self.m, block.shape[2]))
        for j, members in enumerate(self.slices[s]):
            out[members] = self.left[s][members] @ block[j]
        return out

    def _push_right(self, s: int, block: np.ndarray) -> np.ndarray:
        """``right[s-1][p] = block(i_s) @ right[s][p]``."""
        out = np.empty((self.m, block.shape[1]))
        for j, members in enumerate(self.slices[s]):
            out[members] = self.right[s][members] @ block[j].T
        return out

    def move_to(self, target: int) -> None:
        g = self.g
        while self.core < target:
            s = self.core
            q, r = orth_left(g.cores[s])
            g.cores[s] = q
            g.cores[s + 1] = np.einsum("ab,ibc->iac", r, g.cores[s + 1])
            self.left[s + 1] = self._push_left(s, q)
            if self.ref is not None:
                self.ls_left[s + 1] = np.einsum("iab,ac,icd->bd", q, self.ls_left[s], self.ref.cores[s])
            self.core = s + 1
        while self.core > target:
            s = self.core
            l, q = orth_right(g.cores[s])
            g.cores[s] = q
            g.cores[s - 1] = g.cores[s - 1] @ l
            self.right[s - 1] = self._push_right(s, q)
            if self.ref is not None:
                self.ls_right[s - 1] = np.einsum("iab,bc,idc->ad", self.ref.cores[s], self.ls_right[s], q)
            self.core = s - 1
        g.core_position = self.core

    def slice_design(self, j: int) -> np.ndarray:
        """Rows ``vec(left_p^T right_p^T)`` for the samples of core slice ``j``."""
        s = self.core
        members = self.slices[s][j]
        left, right = self.left[s][members], self.right[s][members]
        return (left[:, :, None] * right[:, None, :]).reshape(len(members), -1)

    def apply_block(self, block: np.ndarray) -> np.ndarray:
        """``left_p block(i_s) right_p`` for every sample, for any block shaped like the core."""
        s = self.core
        out = np.empty(self.m)
        left, right = self.left[s], self.right[s]
        for j, members in enumerate(self.slices[s]):
            out[members] = np.einsum("pb,pb->p", left[members] @ block[j], right[members])
        return out

    def contract_samples(self, weights: np.ndarray) -> np.ndarray:
        """Block ``B(j) = sum_{p: p_s = j} w_p left_p^T right_p^T``."""
        s = self.core
        k1, k2 = self.left[s].shape[1], self.right[s].shape[1]
        out = np.zeros((len(self.slices[s]), k1, k2))
        left, right = self.left[s], self.right[s]
        for j, members in enumerate(self.slices[s]):
            if len(members):
                out[j] = left[members].T @ (weights[members, None] * right[members])
        return out

    def predict(self) -> np.ndarray:
        return self.apply_block(self.g.cores[self.core])


class Timer:
    def __init__(self):
        self.t0 = time.perf_counter()

    def __call__(self) -> float:
        return time.perf_counter() - self.t0


def relative_residual(g: TTRep, samples: SampleSet | None) -> float:
    if samples is None or len(samples) == 0:
        return float("nan")
    ref = samples.norm()
    err = np.linalg.norm(samples.values - evaluate(g, samples.indices))
    return float(err / ref) if ref > 0 else float(err)


def check_problem(samples: SampleSet) -> None:
    if len(samples) < sum(samples.mode_sizes):
        raise ValueError(
            f"#P = {len(samples)} is below sum(n_mu) = {sum(samples.mode_sizes)}"
        )


def record_sweep(report: SolverReport, g: TTRep, sweep: int, rank: int, res_p: float,
                 control: SampleSet | None, clock: Timer, alpha: float = float("nan")) -> None:
    report.sweeps.append(SweepRecord(sweep, rank, res_p, relative_residual(g, control), alpha, clock()))
