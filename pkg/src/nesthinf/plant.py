"""Generalized plants, structured controllers and closed-loop analysis.

A generalized plant is the continuous-time LTI system

    xdot = A x + B0 d + B u
    e    = C0 x + D0 d + E u
    y    = C x  + F d

with block partitions (nparts, mparts, kparts) of the state, control input
and measured output.  A, B and C are block lower-triangular with respect to
those partitions, and the u -> y feedthrough is structurally zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import lmi
from .matcore import (
    Partition,
    is_hurwitz,
    sel_l,
    sel_r,
    spectral_abscissa,
    upper_block_magnitude,
)

__all__ = [
    "GeneralizedPlant",
    "StructuredController",
    "ClosedLoop",
    "close_loop",
    "hinf_norm",
    "analysis_lmi",
    "controller_from_generators",
]


def _frozen(arr, rows, cols, name) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    if arr.size == 0:
        arr = arr.reshape(rows, cols)
    if arr.shape != (rows, cols):
        raise ValueError(f"{name} has shape {arr.shape}, expected ({rows}, {cols})")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GeneralizedPlant:
    """State-space data of the generalized plant plus its block partitions."""

    A: np.ndarray
    B0: np.ndarray
    B: np.ndarray
    C0: np.ndarray
    D0: np.ndarray
    E: np.ndarray
    C: np.ndarray
    F: np.ndarray
    nparts: Partition
    mparts: Partition
    kparts: Partition

    def __post_init__(self):
        n = self.nparts.total
        m = self.mparts.total
        k = self.kparts.total
        object.__setattr__(self, "A", _frozen(self.A, n, n, "A"))
        q = np.asarray(self.B0).shape[1] if np.asarray(self.B0).ndim == 2 else 0
        object.__setattr__(self, "B0", _frozen(self.B0, n, q, "B0"))
        object.__setattr__(self, "B", _frozen(self.B, n, m, "B"))
        r = np.asarray(self.C0).shape[0] if np.asarray(self.C0).ndim == 2 else 0
        object.__setattr__(self, "C0", _frozen(self.C0, r, n, "C0"))
        object.__setattr__(self, "D0", _frozen(self.D0, r, q, "D0"))
        object.__setattr__(self, "E", _frozen(self.E, r, m, "E"))
        object.__setattr__(self, "C", _frozen(self.C, k, n, "C"))
        object.__setattr__(self, "F", _frozen(self.F, k, q, "F"))

    @property
    def n(self) -> int:
        return self.nparts.total

    @property
    def q(self) -> int:
        return self.B0.shape[1]

    @property
    def m(self) -> int:
        return self.mparts.total

    @property
    def r(self) -> int:
        return self.C0.shape[0]

    @property
    def k(self) -> int:
        return self.kparts.total

    @property
    def p(self) -> int:
        return self.nparts.p

    def validate(self) -> list[str]:
        """Structure violations (empty when the plant is well formed)."""
        out = []
        if not (self.nparts.p == self.mparts.p == self.kparts.p):
            out.append(
                f"partitions disagree on block count: n={self.nparts.p}, "
                f"m={self.mparts.p}, k={self.kparts.p}"
            )
            return out
        for name, mat, rp, cp in (
            ("A", self.A, self.nparts, self.nparts),
            ("B", self.B, self.nparts, self.mparts),
            ("C", self.C, self.kparts, self.nparts),
        ):
            for j in range(1, rp.p + 1):
                blk = mat[: rp.head(j), cp.block(j)]
                if blk.size and np.max(np.abs(blk)) > 0:
                    out.append(
                        f"{name} upper block (:{j - 1},{j}) nonzero "
                        f"(max {np.max(np.abs(blk)):g})"
                    )
        return out


@dataclass(frozen=True)
class StructuredController:
    """Controller realization u = (AK, BK; CK, DK) y with block partitions."""

    AK: np.ndarray
    BK: np.ndarray
    CK: np.ndarray
    DK: np.ndarray
    nKparts: Partition
    mparts: Partition
    kparts: Partition
    generators: tuple | None = None

    def __post_init__(self):
        nk = self.nKparts.total
        m = self.mparts.total
        k = self.kparts.total
        object.__setattr__(self, "AK", _frozen(self.AK, nk, nk, "AK"))
        object.__setattr__(self, "BK", _frozen(self.BK, nk, k, "BK"))
        object.__setattr__(self, "CK", _frozen(self.CK, m, nk, "CK"))
        object.__setattr__(self, "DK", _frozen(self.DK, m, k, "DK"))

    @property
    def order(self) -> int:
        return self.nKparts.total

    def structure_residual(self) -> float:
        """Largest upper-block magnitude across AK, BK, CK, DK."""
        return max(
            upper_block_magnitude(self.AK, self.nKparts, self.nKparts),
            upper_block_magnitude(self.BK, self.nKparts, self.kparts),
            upper_block_magnitude(self.CK, self.mparts, self.nKparts),
            upper_block_magnitude(self.DK, self.mparts, self.kparts),
        )


def controller_from_generators(
    generators, nKparts: Partition, mparts: Partition, kparts: Partition
) -> StructuredController:
    """Assemble (DK CK; BK AK) = sum_j (Lj (+) Lj) Sj (Rj (+) Rj)' from the
    unstructured generator blocks, which enforces the triangular structure
    exactly."""
    p = nKparts.p
    if len(generators) != p:
        raise ValueError(f"expected {p} generators, got {len(generators)}")
    m, k, nk = mparts.total, kparts.total, nKparts.total
    big = np.zeros((m + nk, k + nk))
    for j, s in enumerate(generators, start=1):
        lm = sel_l(mparts, j)
        ln = sel_l(nKparts, j)
        rk = sel_r(kparts, j)
        rn = sel_r(nKparts, j)
        left = np.block([
            [lm, np.zeros((m, ln.shape[1]))],
            [np.zeros((nk, lm.shape[1])), ln],
        ])
        right = np.block([
            [rk, np.zeros((k, rn.shape[1]))],
            [np.zeros((nk, rk.shape[1])), rn],
        ])
        s = np.asarray(s, dtype=float)
        if s.shape != (left.shape[1], right.shape[1]):
            raise ValueError(
                f"generator {j} has shape {s.shape}, "
                f"expected {(left.shape[1], right.shape[1])}"
            )
        big += left @ s @ right.T
    dk, ck = big[:m, :k], big[:m, k:]
    bk, ak = big[m:, :k], big[m:, k:]
    return StructuredController(ak, bk, ck, dk, nKparts, mparts, kparts,
                                generators=tuple(np.asarray(s, float) for s in generators))


@dataclass(frozen=True)
class ClosedLoop:
    calA: np.ndarray
    calB: np.ndarray
    calC: np.ndarray
    calD: np.ndarray

    @property
    def abscissa(self) -> float:
        return spectral_abscissa(self.calA)


def close_loop(plant: GeneralizedPlant, ctrl: StructuredController) -> ClosedLoop:
    """Interconnect plant and controller (u = K y, d -> e channel kept)."""
    if ctrl.DK.shape != (plant.m, plant.k):
        raise ValueError(
            f"controller i/o {ctrl.DK.shape} does not match plant "
            f"(m={plant.m}, k={plant.k})"
        )
    a, b0, b = plant.A, plant.B0, plant.B
    c0, d0, e = plant.C0, plant.D0, plant.E
    c, f = plant.C, plant.F
    ak, bk, ck, dk = ctrl.AK, ctrl.BK, ctrl.CK, ctrl.DK
    cal_a = np.block([[a + b @ dk @ c, b @ ck], [bk @ c, ak]])
    cal_b = np.vstack([b0 + b @ dk @ f, bk @ f])
    cal_c = np.hstack([c0 + e @ dk @ c, e @ ck])
    cal_d = d0 + e @ dk @ f
    return ClosedLoop(cal_a, cal_b, cal_c, cal_d)


def _sigma_max(a, b, c, d, omega: float) -> float:
    n = a.shape[0]
    g = c @ np.linalg.solve(1j * omega * np.eye(n) - a, b) + d
    if min(g.shape) == 0:
        return 0.0
    return float(np.linalg.svd(g, compute_uv=False)[0])


def hinf_norm(a, b, c, d, tol: float = 1e-6) -> float:
    """H-infinity norm of C (sI - A)^-1 B + D via Hamiltonian bisection.

    Returns +inf when A is not Hurwitz.  The imaginary-axis eigenvalue test
    refines the lower bound with the frequencies of the located crossings
    (Bruinsma-Steinbuch), so convergence is fast and the result is within
    relative tolerance `tol`.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float).reshape(a.shape[0], -1)
    c = np.asarray(c, dtype=float).reshape(-1, a.shape[0])
    d = np.asarray(d, dtype=float).reshape(c.shape[0], b.shape[1])
    n = a.shape[0]
    if n == 0 or min(d.shape) == 0:
        return float(np.linalg.svd(d, compute_uv=False)[0]) if d.size else 0.0
    if not is_hurwitz(a):
        return math.inf

    sig_d = float(np.linalg.svd(d, compute_uv=False)[0]) if d.size else 0.0
    eigs = np.linalg.eigvals(a)
    omegas = [0.0] + [abs(l.imag) for l in eigs] + [abs(l) for l in eigs]
    omegas += list(np.logspace(-3, 3, 13))
    glb = max([_sigma_max(a, b, c, d, w) for w in omegas] + [sig_d])
    if glb == 0.0:
        return 0.0

    scale = max(1.0, np.linalg.norm(a, 2))
    for _ in range(200):
        gamma = glb * (1.0 + 2.0 * tol)
        r = d.T @ d - gamma**2 * np.eye(d.shape[1])
        rin_dt_c = np.linalg.solve(r, d.T @ c)
        rin_bt = np.linalg.solve(r, b.T)
        h11 = a - b @ rin_dt_c
        ham = np.block([
            [h11, -gamma * b @ rin_bt],
            [gamma * c.T @ np.linalg.solve(
                d @ d.T - gamma**2 * np.eye(d.shape[0]), c), -h11.T],
        ])
        lam = np.linalg.eigvals(ham)
        crossings = sorted(
            l.imag for l in lam
            if abs(l.real) <= 1e-9 * max(scale, abs(l)) and l.imag > 0
        )
        if not crossings:
            return glb * (1.0 + tol)
        mids = [math.sqrt(w1 * w2) if w1 > 0 else 0.5 * w2
                for w1, w2 in zip(crossings, crossings[1:])]
        if not mids:
            mids = [crossings[0]]
        new_glb = max(_sigma_max(a, b, c, d, w) for w in mids)
        if new_glb <= glb * (1.0 + tol / 2.0):
            # No progress from the crossing frequencies; gamma is an upper
            # bound and glb a lower bound within tolerance.
            return glb * (1.0 + tol)
        glb = max(glb, new_glb)
    return glb


def analysis_lmi(a, b, c, d, gamma: float,
                 eps_scale: float = 1e-7) -> lmi.LmiProblem:
    """Bounded-real-lemma feasibility problem in the Lyapunov variable.

    Feasible iff A is Hurwitz and the d -> e gain is below gamma.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[0]
    b = np.asarray(b, dtype=float).reshape(n, -1)
    c = np.asarray(c, dtype=float).reshape(-1, n)
    d = np.asarray(d, dtype=float).reshape(c.shape[0], b.shape[1])
    q, r = b.shape[1], c.shape[0]
    x = lmi.symm("calX", n)
    xe = x.expr()
    prob = lmi.LmiProblem(eps_scale=eps_scale)
    prob.add_posdef(xe)
    big = lmi.bmat([
        [lmi.he(lmi.const(a.T) @ xe), xe @ b, c.T],
        [(xe @ b).T, -gamma * np.eye(q), d.T],
        [lmi.const(c), lmi.const(d), -gamma * np.eye(r)],
    ])
    prob.add_negdef(big)
    return prob
