"""Block-selector calculus and small dense linear-algebra predicates.

Matrices are plain float64 ``numpy`` arrays.  Empty matrices (zero rows or
zero columns) are first-class throughout, so block formulas need no special
cases at the first/last block index.  Selector indices ``j`` run 1..p+1 to
match the block formulas they implement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Partition",
    "Selector",
    "selector",
    "sel_r",
    "sel_l",
    "sel_lam",
    "kernel_basis",
    "is_hurwitz",
    "spectral_abscissa",
    "is_block_lower_triangular",
    "tri_blocks",
    "tri_assemble",
]


class Partition:
    """Ordered split of a dimension into positive block sizes."""

    __slots__ = ("sizes", "offsets")

    def __init__(self, sizes):
        sizes = tuple(int(s) for s in sizes)
        if not sizes:
            raise ValueError("partition needs at least one block")
        if any(s < 1 for s in sizes):
            raise ValueError(f"block sizes must be positive, got {sizes}")
        self.sizes = sizes
        off = [0]
        for s in sizes:
            off.append(off[-1] + s)
        self.offsets = tuple(off)

    @property
    def p(self) -> int:
        return len(self.sizes)

    @property
    def total(self) -> int:
        return self.offsets[-1]

    def head(self, j: int) -> int:
        """Dimension count strictly before block j (1-based)."""
        self._check(j)
        return self.offsets[j - 1]

    def tail(self, j: int) -> int:
        """Dimension count from block j (1-based) to the end."""
        self._check(j)
        return self.total - self.offsets[j - 1]

    def block(self, j: int) -> slice:
        """Index slice of block j, valid for j = 1..p."""
        if not 1 <= j <= self.p:
            raise IndexError(f"block index {j} out of range 1..{self.p}")
        return slice(self.offsets[j - 1], self.offsets[j])

    def _check(self, j: int) -> None:
        if not 1 <= j <= self.p + 1:
            raise IndexError(f"selector index {j} out of range 1..{self.p + 1}")

    def __eq__(self, other) -> bool:
        return isinstance(other, Partition) and self.sizes == other.sizes

    def __hash__(self) -> int:
        return hash(self.sizes)

    def __repr__(self) -> str:
        return f"Partition{self.sizes}"


def sel_r(part: Partition, j: int) -> np.ndarray:
    """Block column j of the identity; empty (total x 0) for j = p+1."""
    part._check(j)
    eye = np.eye(part.total)
    if j == part.p + 1:
        return eye[:, part.total:]
    return eye[:, part.block(j)]


def sel_l(part: Partition, j: int) -> np.ndarray:
    """Block columns j..p of the identity; identity at j=1, empty at j=p+1."""
    part._check(j)
    return np.eye(part.total)[:, part.head(j):]


def sel_lam(part: Partition, j: int) -> np.ndarray:
    """Block columns 1..j-1 of the identity; empty at j=1, identity at j=p+1."""
    part._check(j)
    return np.eye(part.total)[:, : part.head(j)]


_KINDS = {"R": sel_r, "L": sel_l, "Lam": sel_lam}


@dataclass(frozen=True)
class Selector:
    kind: str
    j: int
    partition: Partition
    matrix: np.ndarray


def selector(kind: str, j: int, part: Partition) -> Selector:
    """Build the selector of the given kind ("R", "L" or "Lam") at index j.

    The three kinds slice the block identity of the partition: "R" picks
    block column j, "L" picks block columns j..p and "Lam" the complementary
    block columns 1..j-1, so that hstack(Lam_j, L_j) is the identity.
    """
    if kind not in _KINDS:
        raise ValueError(f"unknown selector kind {kind!r}, expected R, L or Lam")
    return Selector(kind, j, part, _KINDS[kind](part, j))


def kernel_basis(mat: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Orthonormal basis of the (right) kernel of ``mat``.

    Columns of the result B satisfy ``mat @ B ~ 0`` and ``B.T @ B = I``.
    ``tol`` separates zero from nonzero singular values; ``tol=0`` selects
    ``max(shape) * eps * smax``.  The sign of each basis vector is fixed by
    making its first significant entry positive, so the result is
    deterministic for a fixed input.
    """
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    r, c = mat.shape
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    if c == 0:
        return np.zeros((0, 0))
    if r == 0:
        return np.eye(c)
    _, s, vh = np.linalg.svd(mat)
    if tol == 0.0:
        tol = max(r, c) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    basis = vh[rank:].T.copy()
    for col in range(basis.shape[1]):
        v = basis[:, col]
        nz = np.nonzero(np.abs(v) > 1e-8)[0]
        if nz.size and v[nz[0]] < 0:
            basis[:, col] = -v
    return basis


def spectral_abscissa(a: np.ndarray) -> float:
    """Largest real part of the eigenvalues; -inf for an empty matrix."""
    a = np.asarray(a, dtype=float)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    if a.shape[0] == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvals(a).real))


def is_hurwitz(a: np.ndarray, margin: float = 0.0) -> bool:
    """True iff every eigenvalue of the square matrix has real part < -margin."""
    return spectral_abscissa(a) < -margin


def is_block_lower_triangular(
    mat: np.ndarray,
    rowpart: Partition,
    colpart: Partition,
    tol: float = 0.0,
) -> bool:
    """True iff all blocks strictly above the block diagonal are below tol."""
    return upper_block_magnitude(mat, rowpart, colpart) <= tol


def upper_block_magnitude(
    mat: np.ndarray, rowpart: Partition, colpart: Partition
) -> float:
    """Largest |entry| above the block diagonal (0.0 when none exist)."""
    mat = np.asarray(mat, dtype=float)
    if rowpart.p != colpart.p:
        raise ValueError(
            f"partitions disagree on block count: {rowpart.p} vs {colpart.p}"
        )
    if mat.shape != (rowpart.total, colpart.total):
        raise ValueError(
            f"matrix shape {mat.shape} incompatible with partitions "
            f"({rowpart.total}, {colpart.total})"
        )
    worst = 0.0
    for j in range(1, rowpart.p + 1):
        block = mat[: rowpart.head(j), colpart.block(j)]
        if block.size:
            worst = max(worst, float(np.max(np.abs(block))))
    return worst


def tri_blocks(mat: np.ndarray, rowpart: Partition, colpart: Partition):
    """Lower block columns M_j (rows j..p of block column j), j = 1..p."""
    mat = np.asarray(mat, dtype=float)
    return [
        mat[rowpart.head(j):, colpart.block(j)] for j in range(1, colpart.p + 1)
    ]


def tri_assemble(blocks, rowpart: Partition, colpart: Partition) -> np.ndarray:
    """Rebuild sum_j L_j M_j R_j^T from lower block columns."""
    out = np.zeros((rowpart.total, colpart.total))
    for j, blk in enumerate(blocks, start=1):
        out[rowpart.head(j):, colpart.block(j)] = blk
    return out
