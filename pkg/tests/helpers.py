"""Independent oracles and random instances shared by the tests."""

import numpy as np
from hypothesis import strategies as st

from ttcomplete.tt_core import TTRep


def naive_full(g: TTRep) -> np.ndarray:
    """Dense tensor by an explicit loop over all multi-indices (independent of tt_core)."""
    out = np.empty(g.mode_sizes)
    for idx in np.ndindex(*g.mode_sizes):
        v = np.ones((1, 1))
        for core, i in zip(g.cores, idx):
            v = v @ core[i]
        out[idx] = v[0, 0]
    return out


def random_rep(rng, d, n, r) -> TTRep:
    sizes = [n] * d if np.isscalar(n) else list(n)
    ranks = [1] + [r] * (d - 1) + [1]
    return TTRep([rng.standard_normal((sizes[s], ranks[s], ranks[s + 1])) for s in range(d)])


def rel(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


seeds = st.integers(0, 2**32 - 1)
