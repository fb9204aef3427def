"""Tensor-train calculus on matrix blocks.

A *matrix block* of dimension ``k1 x k2`` and length ``n`` is stored as a
float array of shape ``(n, k1, k2)``; slice ``H[i]`` is the matrix ``H(i+1)``.
A :class:`TTRep` is an ordered list of such blocks with chained ranks and
boundary ranks one, representing ``A[i_1, ..., i_d] = G_1[i_1] @ ... @ G_d[i_d]``.

Mode positions and multi-indices are 0-based throughout the Python API.

Linearization convention: whenever a pair or tuple of indices is flattened
(Kronecker products of blocks, block matricizations, the left and right
interface matrices ``G^{<s}``/``G^{>s}``), later indices vary fastest. This is
numpy's C order, so the block matricization of a dense tensor is a plain
reshape.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

#: Largest number of entries a dense oracle is allowed to materialize.
DENSE_CAP = 2**25


class ContractViolation(ValueError):
    """Raised when an operation's preconditions on shapes or indices fail."""


# --------------------------------------------------------------------------
# Matrix blocks
# --------------------------------------------------------------------------


def as_block(data) -> np.ndarray:
    """Return ``data`` as a float matrix block of shape ``(n, k1, k2)``.

    A 2-D array is treated as a block of length 1.
    """
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ContractViolation(f"not a matrix block: shape {arr.shape}")
    return arr


def transpose_block(h) -> np.ndarray:
    """Slice-wise transpose, ``H^T(i) = H(i)^T``."""
    return np.swapaxes(as_block(h), 1, 2)


def kron_blocks(h1, h2) -> np.ndarray:
    """Kronecker product of matrix blocks, ``(H1 x H2)((i, j)) = H1(i) H2(j)``.

    The pair ``(i, j)`` maps to the linear slice index ``i * len(H2) + j``.
    """
    h1, h2 = as_block(h1), as_block(h2)
    if h1.shape[2] != h2.shape[1]:
        raise ContractViolation(
            f"inner dimensions differ: {h1.shape[1:]} and {h2.shape[1:]}"
        )
    out = np.einsum("iab,jbc->ijac", h1, h2)
    return out.reshape(h1.shape[0] * h2.shape[0], h1.shape[1], h2.shape[2])


def left_unfolding(h) -> np.ndarray:
    """Stack the slices vertically into an ``(n*k1) x k2`` matrix."""
    h = as_block(h)
    n, k1, k2 = h.shape
    return h.reshape(n * k1, k2)


def right_unfolding(h) -> np.ndarray:
    """Concatenate the slices horizontally into a ``k1 x (n*k2)`` matrix."""
    h = as_block(h)
    n, k1, k2 = h.shape
    return h.transpose(1, 0, 2).reshape(k1, n * k2)


def block_from_left_unfolding(mat: np.ndarray, n: int) -> np.ndarray:
    rows, k2 = mat.shape
    return np.ascontiguousarray(mat).reshape(n, rows // n, k2)


def block_from_right_unfolding(mat: np.ndarray, n: int) -> np.ndarray:
    k1, cols = mat.shape
    return np.ascontiguousarray(mat.reshape(k1, n, cols // n).transpose(1, 0, 2))


def block_scalar_product(g, h, middle: np.ndarray | None = None) -> np.ndarray:
    """Matrix-valued product ``<G, H> = sum_i G(i) H(i)``.

    With ``middle`` given this is ``<G, J, H> = sum_i G(i) J H(i)``.
    """
    g, h = as_block(g), as_block(h)
    if g.shape[0] != h.shape[0]:
        raise ContractViolation(f"block lengths differ: {g.shape[0]} != {h.shape[0]}")
    if middle is not None:
        middle = np.asarray(middle, dtype=float)
        if middle.shape != (g.shape[2], h.shape[1]):
            raise ContractViolation(f"middle matrix has shape {middle.shape}")
        return np.einsum("iab,bc,icd->ad", g, middle, h)
    if g.shape[2] != h.shape[1]:
        raise ContractViolation(
            f"inner dimensions differ: {g.shape[1:]} and {h.shape[1:]}"
        )
    return right_unfolding(g) @ left_unfolding(h)


def r_scalar_product(g, h) -> float:
    """Real scalar product ``trace <G^T, H>`` of two equally shaped blocks."""
    g, h = as_block(g), as_block(h)
    if g.shape != h.shape:
        raise ContractViolation(f"shapes differ: {g.shape} != {h.shape}")
    return float(np.vdot(g, h))


def block_norm(h) -> float:
    return float(np.linalg.norm(as_block(h).ravel()))


def is_left_orthogonal(h, tol: float = 1e-10) -> bool:
    h = as_block(h)
    gram = block_scalar_product(transpose_block(h), h)
    return bool(np.allclose(gram, np.eye(h.shape[2]), atol=tol, rtol=0))


def is_right_orthogonal(h, tol: float = 1e-10) -> bool:
    h = as_block(h)
    gram = block_scalar_product(h, transpose_block(h))
    return bool(np.allclose(gram, np.eye(h.shape[1]), atol=tol, rtol=0))


def orth_left(h) -> tuple[np.ndarray, np.ndarray]:
    """QR of the left unfolding: returns ``(Q, R)`` with ``Q`` left orthogonal.

    When ``n*k1 < k2`` the factor ``Q`` is padded with zero columns so the
    block keeps its dimension; ``Q`` is then only partially orthogonal.
    """
    h = as_block(h)
    n, k1, k2 = h.shape
    q, r = np.linalg.qr(left_unfolding(h))
    if q.shape[1] < k2:
        pad = k2 - q.shape[1]
        q = np.hstack([q, np.zeros((q.shape[0], pad))])
        r = np.vstack([r, np.zeros((pad, k2))])
    return block_from_left_unfolding(q, n), r


def orth_right(h) -> tuple[np.ndarray, np.ndarray]:
    """LQ of the right unfolding: returns ``(L, Q)`` with ``Q`` right orthogonal."""
    h = as_block(h)
    n, k1, k2 = h.shape
    q, r = np.linalg.qr(right_unfolding(h).T)
    if q.shape[1] < k1:
        pad = k1 - q.shape[1]
        q = np.hstack([q, np.zeros((q.shape[0], pad))])
        r = np.vstack([r, np.zeros((pad, k1))])
    return r.T, block_from_right_unfolding(q.T, n)


# --------------------------------------------------------------------------
# TT representations
# --------------------------------------------------------------------------


@dataclass
class TTRep:
    """A tensor-train representation ``G_1, ..., G_d``.

    ``core_position`` records the orthogonality centre when known: blocks
    left of it are left orthogonal and blocks right of it right orthogonal.
    ``None`` means unknown.
    """

    cores: list[np.ndarray]
    core_position: int | None = field(default=None)

    def __post_init__(self):
        self.cores = [as_block(c) for c in self.cores]
        if len(self.cores) < 2:
            raise ContractViolation("a TT representation needs d >= 2 blocks")
        if self.cores[0].shape[1] != 1 or self.cores[-1].shape[2] != 1:
            raise ContractViolation("boundary ranks must be 1")
        for s in range(len(self.cores) - 1):
            if self.cores[s].shape[2] != self.cores[s + 1].shape[1]:
                raise ContractViolation(
                    f"rank mismatch between blocks {s} and {s + 1}: "
                    f"{self.cores[s].shape} / {self.cores[s + 1].shape}"
                )

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def mode_sizes(self) -> tuple[int, ...]:
        return tuple(c.shape[0] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        """Full rank vector ``(r_0, ..., r_d)`` including the boundary ones."""
        return (1,) + tuple(c.shape[2] for c in self.cores)

    def copy(self) -> "TTRep":
        return TTRep([c.copy() for c in self.cores], self.core_position)

    def num_params(self) -> int:
        return sum(c.size for c in self.cores)

    def __getitem__(self, s: int) -> np.ndarray:
        return self.cores[s]


def uniform_rank_one(mode_sizes: Sequence[int]) -> TTRep:
    """All block entries ``1/sqrt(n_s)``; every block is orthogonal."""
    cores = [np.full((n, 1, 1), 1.0 / math.sqrt(n)) for n in mode_sizes]
    return TTRep(cores, core_position=0)


def _check_index(g: TTRep, index: Sequence[int]) -> tuple[int, ...]:
    index = tuple(int(i) for i in index)
    if len(index) != g.d:
        raise ContractViolation(f"index has {len(index)} entries, expected {g.d}")
    for s, (i, n) in enumerate(zip(index, g.mode_sizes)):
        if not 0 <= i < n:
            raise ContractViolation(f"index {i} out of range for mode {s} of size {n}")
    return index


def evaluate_entry(g: TTRep, index: Sequence[int]) -> float:
    """Single entry ``G_1(i_1) ... G_d(i_d)``, multiplied left to right."""
    index = _check_index(g, index)
    v = g.cores[0][index[0]]
    for core, i in zip(g.cores[1:], index[1:]):
        v = v @ core[i]
    return float(v[0, 0])


def evaluate(g: TTRep, indices: np.ndarray) -> np.ndarray:
    """Vectorized entry evaluation for an ``(m, d)`` integer index array."""
    indices = np.asarray(indices)
    if indices.ndim != 2 or indices.shape[1] != g.d:
        raise ContractViolation(f"index array must have shape (m, {g.d})")
    v = g.cores[0][indices[:, 0], 0, :]
    for s in range(1, g.d):
        v = np.einsum("pa,pab->pb", v, g.cores[s][indices[:, s]])
    return v[:, 0]


def _check_cap(size: int, cap: int) -> None:
    if size > cap:
        raise ContractViolation(
            f"refusing to materialize {size} entries (cap is {cap}); "
            "dense oracles are meant for desk-scale sizes only"
        )


def full_tensor(g: TTRep, cap: int = DENSE_CAP) -> np.ndarray:
    """Materialize ``A^G`` as a dense array of shape ``mode_sizes``."""
    _check_cap(math.prod(g.mode_sizes), cap)
    acc = g.cores[0][:, 0, :]  # (n_1, r_1)
    for core in g.cores[1:]:
        acc = np.einsum("pa,iab->pib", acc, core).reshape(-1, core.shape[2])
    return acc.reshape(g.mode_sizes)


def left_interface(g: TTRep, s: int, cap: int = DENSE_CAP) -> np.ndarray:
    """Dense ``G^{<s}``: left unfolding of ``G_0 x ... x G_{s-1}``."""
    if s == 0:
        return np.ones((1, 1))
    _check_cap(math.prod(g.mode_sizes[:s]) * g.ranks[s], cap)
    prod = g.cores[0]
    for core in g.cores[1:s]:
        prod = kron_blocks(prod, core)
    return left_unfolding(prod)


def right_interface(g: TTRep, s: int, cap: int = DENSE_CAP) -> np.ndarray:
    """Dense ``G^{>s}``: right unfolding of ``G_{s+1} x ... x G_{d-1}``."""
    if s == g.d - 1:
        return np.ones((1, 1))
    _check_cap(math.prod(g.mode_sizes[s + 1:]) * g.ranks[s + 1], cap)
    prod = g.cores[s + 1]
    for core in g.cores[s + 2:]:
        prod = kron_blocks(prod, core)
    return right_unfolding(prod)


def block_matricization(a: np.ndarray, s: int) -> np.ndarray:
    """Dense tensor as a matrix block of length ``n_s``.

    Slice ``j`` has rows ``(i_0..i_{s-1})`` and columns ``(i_{s+1}..i_{d-1})``.
    """
    a = np.asarray(a)
    shape = a.shape
    left = math.prod(shape[:s])
    right = math.prod(shape[s + 1:])
    return a.reshape(left, shape[s], right).transpose(1, 0, 2)


def orthogonalize(g: TTRep, h: int) -> TTRep:
    """Make ``g`` ``h``-orthogonal in place and return it.

    Blocks ``0..h-1`` are made left orthogonal by successive QR, each ``R``
    being pushed into the next block; blocks ``d-1..h+1`` are made right
    orthogonal by successive LQ, pushing ``L`` into the previous block.
    """
    if not 0 <= h < g.d:
        raise ContractViolation(f"core position {h} out of range for d={g.d}")
    start_left = 0
    start_right = g.d - 1
    if g.core_position is not None:
        # blocks already in canonical form need not be touched
        start_left = min(g.core_position, h)
        start_right = max(g.core_position, h)
    for s in range(start_left, h):
        q, r = orth_left(g.cores[s])
        g.cores[s] = q
        g.cores[s + 1] = np.einsum("ab,ibc->iac", r, g.cores[s + 1])
    for s in range(start_right, h, -1):
        l, q = orth_right(g.cores[s])
        g.cores[s] = q
        g.cores[s - 1] = g.cores[s - 1] @ l
    g.core_position = h
    return g


def check_orthogonality(g: TTRep, h: int, tol: float = 1e-10) -> bool:
    left_ok = all(is_left_orthogonal(g.cores[s], tol) for s in range(h))
    right_ok = all(is_right_orthogonal(g.cores[s], tol) for s in range(h + 1, g.d))
    return left_ok and right_ok


def tt_norm(g: TTRep) -> float:
    """Frobenius norm of ``A^G`` via the orthogonal core (works on a copy)."""
    work = orthogonalize(g.copy(), g.d - 1)
    return block_norm(work.cores[-1])


def tt_dot(g: TTRep, h: TTRep) -> float:
    """Frobenius inner product of two TT tensors of equal mode sizes."""
    if g.mode_sizes != h.mode_sizes:
        raise ContractViolation("mode sizes differ")
    env = np.ones((1, 1))
    for a, b in zip(g.cores, h.cores):
        env = np.einsum("iab,ac,icd->bd", a, env, b)
    return float(env[0, 0])


def tt_add(g: TTRep, h: TTRep, beta: float = 1.0) -> TTRep:
    """Representation of ``A^G + beta * A^H`` with summed ranks."""
    if g.mode_sizes != h.mode_sizes:
        raise ContractViolation("mode sizes differ")
    d = g.d
    cores = []
    for s, (a, b) in enumerate(zip(g.cores, h.cores)):
        b = beta * b if s == 0 else b
        n = a.shape[0]
        if s == 0:
            cores.append(np.concatenate([a, b], axis=2))
        elif s == d - 1:
            cores.append(np.concatenate([a, b], axis=1))
        else:
            c = np.zeros((n, a.shape[1] + b.shape[1], a.shape[2] + b.shape[2]))
            c[:, : a.shape[1], : a.shape[2]] = a
            c[:, a.shape[1]:, a.shape[2]:] = b
            cores.append(c)
    return TTRep(cores)


# --------------------------------------------------------------------------
# SVD-based truncation (reference oracles)
# --------------------------------------------------------------------------


def _target_ranks(target_ranks, d: int) -> list[int]:
    if np.isscalar(target_ranks):
        return [int(target_ranks)] * (d - 1)
    ranks = [int(r) for r in target_ranks]
    if len(ranks) != d - 1:
        raise ContractViolation(f"need {d - 1} target ranks, got {len(ranks)}")
    return ranks


@dataclass
class Truncation:
    tt: TTRep
    discarded: list[np.ndarray]

    @property
    def error_bound_sq(self) -> float:
        """Sum over modes of the discarded squared singular values."""
        return float(sum(np.sum(sv**2) for sv in self.discarded))


def tt_svd_truncate(full, target_ranks, cap: int = DENSE_CAP) -> Truncation:
    """Sequential SVD sweep of a dense tensor into TT format with bounded ranks.

    The squared Frobenius error of the result is at most
    ``Truncation.error_bound_sq``.
    """
    full = np.asarray(full, dtype=float)
    _check_cap(full.size, cap)
    shape = full.shape
    d = len(shape)
    ranks = _target_ranks(target_ranks, d)
    cores, discarded = [], []
    rest = full.reshape(1, -1)
    r_prev = 1
    for s in range(d - 1):
        mat = rest.reshape(r_prev * shape[s], -1)
        u, sv, vt = np.linalg.svd(mat, full_matrices=False)
        k = min(ranks[s], len(sv))
        discarded.append(sv[k:].copy())
        cores.append(u[:, :k].reshape(r_prev, shape[s], k).transpose(1, 0, 2))
        rest = sv[:k, None] * vt[:k]
        r_prev = k
    cores.append(rest.reshape(r_prev, shape[-1], 1).transpose(1, 0, 2))
    return Truncation(TTRep(cores, core_position=d - 1), discarded)


def tt_round(g: TTRep, target_ranks) -> Truncation:
    """TT-SVD applied directly to a TT representation (no materialization).

    Right-orthogonalizes, then truncates left to right; the error obeys the
    same bound as :func:`tt_svd_truncate`.
    """
    ranks = _target_ranks(target_ranks, g.d)
    work = orthogonalize(g.copy(), 0)
    discarded = []
    for s in range(g.d - 1):
        core = work.cores[s]
        n = core.shape[0]
        u, sv, vt = np.linalg.svd(left_unfolding(core), full_matrices=False)
        k = min(ranks[s], len(sv))
        discarded.append(sv[k:].copy())
        work.cores[s] = block_from_left_unfolding(u[:, :k], n)
        work.cores[s + 1] = np.einsum("ab,ibc->iac", sv[:k, None] * vt[:k], work.cores[s + 1])
    work.core_position = g.d - 1
    return Truncation(TTRep(work.cores, core_position=g.d - 1), discarded)


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

_MAGIC = "TTREP 1"


def dump_tt(g: TTRep, fp) -> None:
    """Write ``g`` in the text container format documented in the README."""
    fp.write(f"{_MAGIC}\n")
    fp.write(f"{g.d}\n")
    fp.write(" ".join(map(str, g.mode_sizes)) + "\n")
    fp.write(" ".join(map(str, g.ranks)) + "\n")
    for core in g.cores:
        for mat in core:
            fp.write(" ".join(f"{x:.17g}" for x in mat.ravel()) + "\n")


def load_tt(fp) -> TTRep:
    lines = iter(fp.read().splitlines())
    if next(lines).strip() != _MAGIC:
        raise ValueError("not a TT representation file")
    d = int(next(lines))
    sizes = [int(x) for x in next(lines).split()]
    ranks = [int(x) for x in next(lines).split()]
    if len(sizes) != d or len(ranks) != d + 1:
        raise ValueError("inconsistent header")
    cores = []
    for s in range(d):
        shape = (ranks[s], ranks[s + 1])
        slices = [np.array(next(lines).split(), dtype=float).reshape(shape) for _ in range(sizes[s])]
        cores.append(np.stack(slices))
    return TTRep(cores)


def save_tt(g: TTRep, path) -> None:
    with open(path, "w") as fp:
        dump_tt(g, fp)


def read_tt(path) -> TTRep:
    with open(path) as fp:
        return load_tt(fp)


def tt_to_string(g: TTRep) -> str:
    buf = io.StringIO()
    dump_tt(g, buf)
    return buf.getvalue()
