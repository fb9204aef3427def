"""Test tensors: closed-form entry oracles, TT constructions and perturbations.

Entry oracles take 0-based index arrays of shape ``(m, d)``; the formulas are
evaluated at the grid coordinates ``i + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ttcomplete.sampling import SampleSet
from ttcomplete.tt_core import (
    TTRep,
    block_from_left_unfolding,
    evaluate,
    left_unfolding,
    orthogonalize,
)

DATA_DIR = Path(__file__).parent / "data"


@dataclass
class EntryOracle:
    """A named, deterministic entry function on the grid."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def __call__(self, indices) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim == 1:
            return self.fn(indices[None])[0]
        return self.fn(indices)


def _grid(indices) -> np.ndarray:
    arr = np.asarray(indices, dtype=float)
    if arr.ndim == 1:
        arr = arr[None]
    return arr + 1.0


def inverse_norm_entry(indices) -> np.ndarray | float:
    """``(sum_mu i_mu^2)^{-1/2}`` at grid coordinates ``i = index + 1``."""
    single = np.ndim(indices) == 1
    x = _grid(indices)
    out = 1.0 / np.sqrt(np.sum(x * x, axis=1))
    return float(out[0]) if single else out


def ratio_tensor_entry(indices) -> np.ndarray | float:
    """``(1 + sum_{mu<d} i_mu / i_{mu+1})^{-1}`` at grid coordinates ``index + 1``."""
    single = np.ndim(indices) == 1
    x = _grid(indices)
    out = 1.0 / (1.0 + np.sum(x[:, :-1] / x[:, 1:], axis=1))
    return float(out[0]) if single else out


def inverse_norm_oracle() -> EntryOracle:
    return EntryOracle("inverse_norm", inverse_norm_entry)


def ratio_oracle() -> EntryOracle:
    return EntryOracle("ratio", ratio_tensor_entry)


def tt_oracle(g: TTRep, name: str = "tt") -> EntryOracle:
    return EntryOracle(name, lambda idx: evaluate(g, idx), {"ranks": g.ranks})


def zero_oracle() -> EntryOracle:
    return EntryOracle("zero", lambda idx: np.zeros(len(idx)))


# --------------------------------------------------------------------------
# Exponential sums
# --------------------------------------------------------------------------


@dataclass
class ExpSumCoefficients:
    """``1/sqrt(x) ~ sum_l omega_l exp(-alpha_l x)`` on ``[1, R]`` with error ``< epsilon``."""

    omegas: np.ndarray
    alphas: np.ndarray
    epsilon: float
    R: float

    def __post_init__(self):
        self.omegas = np.asarray(self.omegas, dtype=float)
        self.alphas = np.asarray(self.alphas, dtype=float)
        if self.omegas.shape != self.alphas.shape or self.omegas.size < 1:
            raise ValueError("need k >= 1 matching omegas and alphas")

    @property
    def k(self) -> int:
        return self.omegas.size

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.exp(-np.multiply.outer(x, self.alphas)) @ self.omegas

    def max_error(self, num: int = 20000) -> float:
        """Largest deviation from ``1/sqrt(x)`` on a log-spaced grid over ``[1, R]``."""
        x = np.geomspace(1.0, self.R, num)
        return float(np.max(np.abs(self(x) - 1.0 / np.sqrt(x))))


def read_exp_sum(path) -> ExpSumCoefficients:
    """Coefficient file: header ``k epsilon R``, then ``k`` lines ``omega alpha``."""
    rows = [line.split() for line in Path(path).read_text().splitlines()
            if line.strip() and not line.lstrip().startswith("#")]
    k, eps, big_r = int(rows[0][0]), float(rows[0][1]), float(rows[0][2])
    data = np.array(rows[1:1 + k], dtype=float)
    if len(data) != k:
        raise ValueError(f"expected {k} coefficient lines, found {len(data)}")
    return ExpSumCoefficients(data[:, 0], data[:, 1], eps, big_r)


def write_exp_sum(coeffs: ExpSumCoefficients, path, comment: str = "") -> None:
    lines = [f"# {c}" for c in comment.splitlines()]
    lines.append(f"{coeffs.k} {coeffs.epsilon:.6g} {coeffs.R:.17g}")
    lines += [f"{w:.17g} {a:.17g}" for w, a in zip(coeffs.omegas, coeffs.alphas)]
    Path(path).write_text("\n".join(lines) + "\n")


def bundled_exp_sum() -> ExpSumCoefficients:
    """The coefficient set shipped with the package (see its header comment)."""
    return read_exp_sum(DATA_DIR / "expsum_k40_R1e4.txt")


def exp_sum_tt(coeffs: ExpSumCoefficients, d: int, n: int) -> TTRep:
    """Rank-``k`` TT approximation of the inverse-norm tensor from exponential sums.

    The one-dimensional coefficients are rescaled to ``omega / sqrt(d)`` and
    ``alpha / d`` so that the argument range ``[d, d n^2]`` maps onto ``[1, n^2]``.
    """
    if coeffs.R < n * n:
        raise ValueError(f"coefficients valid up to R={coeffs.R}, need R >= n^2 = {n * n}")
    omega = coeffs.omegas / math.sqrt(d)
    alpha = coeffs.alphas / d
    m = np.arange(1, n + 1, dtype=float)
    diag = np.exp(-np.outer(m * m, alpha))  # (n, k)
    k = coeffs.k
    cores = [(diag * omega)[:, None, :]]
    for _ in range(d - 2):
        core = np.zeros((n, k, k))
        core[:, np.arange(k), np.arange(k)] = diag
        cores.append(core)
    cores.append(diag[:, :, None])
    return TTRep(cores)


def grid_relative_error(g: TTRep, oracle: Callable, chunk: int = 1 << 18) -> float:
    """``||A - A^G||_F / ||A||_F`` over the whole grid, evaluated in chunks.

    ``oracle`` maps an ``(m, d)`` array of 0-based indices to entry values.
    """
    sizes = g.mode_sizes
    total = math.prod(sizes)
    num = den = 0.0
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        idx = np.stack(np.unravel_index(flat, sizes), axis=1)
        a = np.asarray(oracle(idx), dtype=float)
        num += float(np.sum((a - evaluate(g, idx)) ** 2))
        den += float(np.sum(a * a))
    return math.sqrt(num / den) if den else math.sqrt(num)


def sinc_exp_sum(k: int, R: float, h: float | None = None, shift: float | None = None) -> ExpSumCoefficients:
    """Exponential-sum coefficients for ``1/sqrt(x)`` from a sinc quadrature.

    Discretizes ``x^{-1/2} = 2/sqrt(pi) int exp(-x e^{2t} + t) dt`` with
    ``k`` nodes ``t_l = shift + l h``. This is a simple, non-optimal
    construction; ``epsilon`` is measured, not guaranteed.
    """
    if h is None:
        h = math.pi / math.sqrt(2 * k)
    if shift is None:
        # nodes cover roughly [-log(R)/2 - 3, 3]: the integrand decays doubly
        # exponentially on the right and like e^t on the left
        shift = min(-0.5 * math.log(R) - 3.0, 3.0 - (k - 1) * h)
    t = shift + h * np.arange(k)
    omegas = 2.0 / math.sqrt(math.pi) * h * np.exp(t)
    alphas = np.exp(2 * t)
    coeffs = ExpSumCoefficients(omegas, alphas, epsilon=0.0, R=R)
    coeffs.epsilon = coeffs.max_error()
    return coeffs


# --------------------------------------------------------------------------
# Random TT tensors and singular-value profiles
# --------------------------------------------------------------------------


def random_tt(d: int, n: int | Sequence[int], r: int, seed: int) -> TTRep:
    """Blocks with i.i.d. entries uniform on ``[-0.5, 0.5]``; uniform interior rank ``r``."""
    sizes = [n] * d if np.isscalar(n) else list(n)
    rng = np.random.default_rng(seed)
    ranks = [1] + [r] * (d - 1) + [1]
    cores = [rng.uniform(-0.5, 0.5, size=(sizes[s], ranks[s], ranks[s + 1])) for s in range(d)]
    return TTRep(cores)


def singular_value_profile(r: int, profile: str) -> np.ndarray:
    """``decay``: ``10^-i``; ``gap``: ``10^-i`` for ``i <= r/2``, else ``10^(-i-2)``."""
    i = np.arange(1, r + 1, dtype=float)
    if profile == "decay":
        return 10.0 ** (-i)
    if profile == "gap":
        return np.where(i <= r / 2, 10.0 ** (-i), 10.0 ** (-i - 2))
    raise ValueError(f"unknown singular value profile {profile!r}")


def matricization_singular_values(g: TTRep) -> list[np.ndarray]:
    """Singular values of every matricization ``(i_0..i_s) x (i_{s+1}..)`` of ``A^G``.

    Computed in the representation: with the core at ``s`` the singular values
    of its left unfolding are those of the matricization.
    """
    work = orthogonalize(g.copy(), 0)
    out = []
    for s in range(g.d - 1):
        core = work.cores[s]
        u, sv, vt = np.linalg.svd(left_unfolding(core), full_matrices=False)
        out.append(sv)
        work.cores[s] = block_from_left_unfolding(u, core.shape[0])
        work.cores[s + 1] = np.einsum("ab,ibc->iac", sv[:, None] * vt, work.cores[s + 1])
    return out


def rescale_singular_values(g: TTRep, profile: str, tol: float = 1e-6,
                            max_passes: int = 50) -> TTRep:
    """Impose a singular-value profile on every matricization of ``A^G``.

    Alternating passes over the bonds: orthogonalize, take the SVD of the
    core's left unfolding, replace its singular values by the profile and
    move on. Stops once all matricizations match within ``tol`` (relative).
    """
    ranks = g.ranks[1:-1]
    if len(set(ranks)) != 1:
        raise ValueError("rescaling needs equal interior ranks")
    r = ranks[0]
    target = singular_value_profile(r, profile)
    work = g.copy()
    for _ in range(max_passes):
        orthogonalize(work, 0)
        for s in range(work.d - 1):
            core = work.cores[s]
            u, sv, vt = np.linalg.svd(left_unfolding(core), full_matrices=False)
            if len(sv) < r or sv[r - 1] <= sv[0] * 1e-13:
                raise ValueError(
                    f"matricization {s} has numerical rank below {r}; cannot impose the profile"
                )
            work.cores[s] = block_from_left_unfolding(u, core.shape[0])
            work.cores[s + 1] = np.einsum("ab,ibc->iac", target[:, None] * vt, work.cores[s + 1])
        work.core_position = work.d - 1
        if _profile_error(work, target) <= tol:
            return work
    raise RuntimeError(f"singular values did not settle within {max_passes} passes")


def _profile_error(g: TTRep, target: np.ndarray) -> float:
    return max(float(np.max(np.abs(sv - target) / target)) for sv in matricization_singular_values(g))


# --------------------------------------------------------------------------
# Noise
# --------------------------------------------------------------------------


def noise_scale(samples: SampleSet) -> float:
    """``nu = ||A||_P / sqrt(#P)``."""
    return samples.norm() / math.sqrt(len(samples)) if len(samples) else 0.0


def add_noise(samples: SampleSet, magnitude: float, seed: int) -> SampleSet:
    """Perturb sampled values by ``magnitude * nu * e`` with ``e`` uniform on ``[-1, 1]``."""
    if magnitude < 0:
        raise ValueError("noise magnitude must be nonnegative")
    if magnitude == 0:
        return samples.with_values(samples.values.copy())
    rng = np.random.default_rng(seed)
    e = rng.uniform(-1.0, 1.0, size=len(samples))
    out = samples.with_values(samples.values + magnitude * noise_scale(samples) * e)
    out.meta.update(noise=magnitude)
    return out
