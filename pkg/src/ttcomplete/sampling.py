"""Known-entry index sets with prescribed slice density.

For every direction ``mu`` and every index ``j`` of that mode, ``C_SD * r**2``
multi-indices with ``i_mu = j`` are drawn uniformly at random; the union is
deduplicated (no refill). Each ``(seed, mu, j)`` triple owns its own PCG64
stream, so the result does not depend on generation order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class SampleSet:
    """Deduplicated sampled entries of a tensor.

    ``indices`` is an ``(m, d)`` array of 0-based multi-indices, sorted
    lexicographically; ``values[k]`` belongs to ``indices[k]``.
    """

    mode_sizes: tuple[int, ...]
    indices: np.ndarray
    values: np.ndarray
    label: str = "P"
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mode_sizes = tuple(int(n) for n in self.mode_sizes)
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1, len(self.mode_sizes))
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(self.values) != len(self.indices):
            raise ValueError("indices and values differ in length")
        if len(self.indices):
            if (self.indices < 0).any() or (self.indices >= np.array(self.mode_sizes)).any():
                raise ValueError("sample index outside the grid")
            if len(np.unique(self.indices, axis=0)) != len(self.indices):
                raise ValueError("duplicate sample indices")

    @property
    def d(self) -> int:
        return len(self.mode_sizes)

    def __len__(self) -> int:
        return len(self.indices)

    def norm(self) -> float:
        """``||M||_P``, the Euclidean norm of the sampled values."""
        return float(np.linalg.norm(self.values))

    def with_values(self, values, label: str | None = None) -> "SampleSet":
        return SampleSet(self.mode_sizes, self.indices, values,
                         self.label if label is None else label, self.seed, dict(self.meta))


def _slice_stream(seed: int, mu: int, j: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, mu, j])))


def generate_index_set(mode_sizes: Sequence[int], r: int, csd: int, seed: int) -> np.ndarray:
    """Draw the slice-density index set; returns a sorted ``(m, d)`` array.

    If ``csd * r**2`` reaches the number of entries in a slice, that slice is
    taken completely instead (a warning is logged).
    """
    if r < 1 or csd < 1:
        raise ValueError("r and C_SD must be positive")
    sizes = [int(n) for n in mode_sizes]
    d = len(sizes)
    per_slice = csd * r * r
    total = math.prod(sizes)
    chunks = []
    saturated = 0
    for mu in range(d):
        slice_size = total // sizes[mu]
        other = [n for nu, n in enumerate(sizes) if nu != mu]
        for j in range(sizes[mu]):
            if per_slice >= slice_size:
                saturated += 1
                grid = np.indices(other).reshape(d - 1, -1).T
            else:
                rng = _slice_stream(seed, mu, j)
                grid = np.column_stack([rng.integers(0, n, size=per_slice) for n in other]) \
                    if other else np.zeros((per_slice, 0), dtype=np.int64)
            chunks.append(np.insert(grid, mu, j, axis=1))
    if saturated:
        log.warning("%d slices requested >= their size; those slices are fully sampled", saturated)
    idx = np.concatenate(chunks).astype(np.int64)
    return np.unique(idx, axis=0)


def slice_density(indices: np.ndarray, mu: int, j: int) -> int:
    """Number of sampled indices with ``i_mu == j``."""
    indices = np.asarray(indices)
    if indices.size == 0:
        return 0
    return int(np.count_nonzero(indices[:, mu] == j))


def slice_densities(indices: np.ndarray, mode_sizes: Sequence[int]) -> list[np.ndarray]:
    """All slice densities at once: one count array per direction."""
    indices = np.asarray(indices)
    return [np.bincount(indices[:, mu], minlength=n) if len(indices) else np.zeros(n, int)
            for mu, n in enumerate(mode_sizes)]


def attach_values(indices: np.ndarray, oracle: Callable[[np.ndarray], np.ndarray],
                  mode_sizes: Sequence[int], label: str = "P", seed: int | None = None) -> SampleSet:
    """Pair each index with ``oracle(indices)`` (a vectorized entry function)."""
    indices = np.asarray(indices, dtype=np.int64)
    values = np.asarray(oracle(indices), dtype=float) if len(indices) else np.zeros(0)
    return SampleSet(tuple(mode_sizes), indices, values, label=label, seed=seed)


def draw_sample_set(mode_sizes: Sequence[int], r: int, csd: int, seed: int,
                    oracle: Callable[[np.ndarray], np.ndarray], label: str = "P") -> SampleSet:
    idx = generate_index_set(mode_sizes, r, csd, seed)
    out = attach_values(idx, oracle, mode_sizes, label=label, seed=seed)
    out.meta.update(r=r, csd=csd)
    return out


def overlap_fraction(a: SampleSet, b: SampleSet) -> float:
    """Fraction of ``b``'s indices that also occur in ``a``."""
    if len(b) == 0:
        return 0.0
    sizes = np.array(a.mode_sizes)
    strides = np.concatenate([np.cumprod(sizes[::-1])[::-1][1:], [1]])
    ka = a.indices @ strides
    kb = b.indices @ strides
    return float(np.isin(kb, ka).mean())


# --------------------------------------------------------------------------
# File format
# --------------------------------------------------------------------------


def write_sample_set(ss: SampleSet, path) -> None:
    """Header ``d n_1 .. n_d count label seed``, then ``i_1 .. i_d value`` (1-based)."""
    seed = -1 if ss.seed is None else ss.seed
    with open(path, "w") as fp:
        fp.write(" ".join(map(str, [ss.d, *ss.mode_sizes, len(ss), ss.label, seed])) + "\n")
        for idx, val in zip(ss.indices + 1, ss.values):
            fp.write(" ".join(map(str, idx)) + f" {val:.17g}\n")


def read_sample_set(path) -> SampleSet:
    with open(path) as fp:
        header = fp.readline().split()
        d = int(header[0])
        sizes = tuple(int(x) for x in header[1:1 + d])
        count = int(header[1 + d])
        label = header[2 + d]
        seed = int(header[3 + d])
        data = np.loadtxt(fp, ndmin=2) if count else np.zeros((0, d + 1))
    if len(data) != count:
        raise ValueError(f"expected {count} entries, found {len(data)}")
    return SampleSet(sizes, data[:, :d].astype(np.int64) - 1, data[:, d], label=label,
                     seed=None if seed < 0 else seed)
