"""Dense semidefinite-program backends.

A backend solves the block linear matrix inequality program

    minimize    g' x
    subject to  F[b](x) := F0[b] + sum_i x_i Fi[b][i]  is PSD,  b = 1..nblocks

with dense symmetric data per block.  The reference backend is an
infeasible-start primal-dual predictor-corrector interior-point method with
the HKM search direction; it is adequate for problems with up to a few
hundred scalar variables and block sizes up to roughly 100.
`CvxoptBackend` adapts the same interface to cvxopt when that package is
available.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

__all__ = ["SdpResult", "ReferenceIpm", "CvxoptBackend", "default_backend"]

log = logging.getLogger(__name__)


@dataclass
class SdpResult:
    """Outcome of one SDP solve.

    status is "optimal", "max_iter" or "numerical".  `x` is the variable
    vector, `zblocks` the dual blocks (one PSD matrix per constraint block),
    gap the final relative duality gap and pres/dres the primal/dual
    residuals.
    """

    status: str
    x: np.ndarray
    zblocks: list
    obj: float
    dual_obj: float
    gap: float
    pres: float
    dres: float
    iterations: int
    log_lines: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "optimal"


def _check_problem(f0s, fis, g):
    nvar = len(g)
    if len(f0s) != len(fis):
        raise ValueError("f0s and fis must have one entry per block")
    if not f0s:
        raise ValueError("at least one constraint block is required")
    for f0, fi in zip(f0s, fis):
        d = f0.shape[0]
        if f0.shape != (d, d):
            raise ValueError("constant blocks must be square")
        if fi.shape != (nvar, d, d):
            raise ValueError(
                f"coefficient tensor shape {fi.shape} != ({nvar}, {d}, {d})"
            )


class ReferenceIpm:
    """Reference dense primal-dual interior-point method (HKM direction)."""

    def __init__(
        self,
        max_iter: int = 120,
        tol: float = 1e-9,
        tol_accept: float = 1e-6,
        step_frac: float = 0.98,
        stall_limit: int = 6,
        verbose: bool = False,
    ):
        self.max_iter = max_iter
        self.tol = tol
        self.tol_accept = tol_accept
        self.step_frac = step_frac
        self.stall_limit = stall_limit
        self.verbose = verbose

    def solve_sdp(self, f0s, fis, g) -> SdpResult:
        g = np.asarray(g, dtype=float)
        f0s = [np.asarray(f, dtype=float) for f in f0s]
        fis = [np.asarray(f, dtype=float) for f in fis]
        _check_problem(f0s, fis, g)

        # Empty blocks constrain nothing; drop them and restore at the end.
        keep = [b for b, f0 in enumerate(f0s) if f0.shape[0] > 0]
        fk = [f0s[b] for b in keep]
        ck = [fis[b] for b in keep]
        nvar = len(g)
        nblk = len(fk)
        if nblk == 0:
            return SdpResult("optimal", np.zeros(nvar), [np.zeros((0, 0))] * len(f0s),
                             0.0, 0.0, 0.0, 0.0, 0.0, 0)

        dims = [f0.shape[0] for f0 in fk]
        total_dim = sum(dims)
        scale = max(
            1.0,
            max(np.linalg.norm(f0, 2) for f0 in fk),
            max((np.abs(fi).max() if fi.size else 0.0) for fi in ck),
        )

        x = np.zeros(nvar)
        s = [10.0 * scale * np.eye(d) for d in dims]
        z = [10.0 * max(1.0, np.linalg.norm(g) / scale) * np.eye(d) for d in dims]

        gnorm = 1.0 + np.linalg.norm(g)
        f0norms = [1.0 + np.linalg.norm(f0, "fro") for f0 in fk]

        lines = []
        status = "max_iter"
        it = 0
        best = None  # (merit, x, s, z, stats)
        stall = 0
        for it in range(1, self.max_iter + 1):
            fx = [f0 + np.tensordot(x, fi, axes=(0, 0)) for f0, fi in zip(fk, ck)]
            rp = [fxb - sb for fxb, sb in zip(fx, s)]
            rd = g - sum(np.einsum("iab,ab->i", fi, zb) for fi, zb in zip(ck, z))
            gap = sum(np.tensordot(sb, zb) for sb, zb in zip(s, z))
            mu = gap / total_dim
            obj = float(g @ x)
            dual_obj = -sum(np.tensordot(f0, zb) for f0, zb in zip(fk, z))
            relgap = gap / (1.0 + abs(obj) + abs(dual_obj))
            pres = max(np.linalg.norm(r, "fro") / nb for r, nb in zip(rp, f0norms))
            dres = np.linalg.norm(rd) / gnorm
            merit = max(relgap, pres, dres)

            if self.verbose:
                msg = (f"it {it:3d}  obj {obj: .6e}  dual {dual_obj: .6e}  "
                       f"gap {relgap:.2e}  pres {pres:.2e}  dres {dres:.2e}")
                lines.append(msg)
                log.info(msg)

            if best is None or merit < best[0]:
                best = (merit, x.copy(), [b.copy() for b in s],
                        [b.copy() for b in z],
                        (obj, dual_obj, relgap, pres, dres))
                stall = 0
            else:
                stall += 1

            if merit <= self.tol:
                status = "optimal"
                break
            if stall >= self.stall_limit:
                # No further numerical progress; fall back to the best point.
                status = "optimal" if best[0] <= self.tol_accept else "max_iter"
                break

            try:
                chol_s = [sla.cho_factor(sb, lower=True) for sb in s]
            except np.linalg.LinAlgError:
                status = "numerical"
                break

            # HKM Schur complement M_ij = sum_b tr(S^-1 Fi Z Fj); symmetric PD.
            m = np.zeros((nvar, nvar))
            sinv = []
            sinv_rp_z = []
            for cb, fi, zb, rpb, d in zip(chol_s, ck, z, rp, dims):
                stacked = fi.transpose(1, 0, 2).reshape(d, nvar * d)
                sf = sla.cho_solve(cb, stacked).reshape(d, nvar, d).transpose(1, 0, 2)
                w = np.einsum("iab,bc->iac", sf, zb)
                m += np.einsum("iab,jba->ij", w, fi)
                sinv.append(sla.cho_solve(cb, np.eye(d)))
                sinv_rp_z.append(sla.cho_solve(cb, rpb) @ zb)
            m = 0.5 * (m + m.T)

            try:
                chol_m = self._factor_schur(m)
            except np.linalg.LinAlgError:
                status = "numerical"
                break

            def solve_direction(sigma_mu, corr):
                vs = []
                rhs = -rd.copy()
                for b in range(nblk):
                    v = sigma_mu * sinv[b] - z[b] - sinv_rp_z[b]
                    if corr is not None:
                        v = v - corr[b]
                    vs.append(v)
                    rhs += np.einsum("iab,ab->i", ck[b], v)
                dx = sla.cho_solve(chol_m, rhs)
                dx += sla.cho_solve(chol_m, rhs - m @ dx)  # one refinement pass
                ds = [rp[b] + np.tensordot(dx, ck[b], axes=(0, 0)) for b in range(nblk)]
                dz = []
                for b in range(nblk):
                    v = vs[b] - sla.cho_solve(chol_s[b], ds[b]) @ z[b]
                    dz.append(0.5 * (v + v.T))
                return dx, ds, dz

            # Predictor step (sigma = 0).
            dx_a, ds_a, dz_a = solve_direction(0.0, None)
            ap = min(1.0, min(self._max_step(sb, d_) for sb, d_ in zip(s, ds_a)))
            ad = min(1.0, min(self._max_step(zb, d_) for zb, d_ in zip(z, dz_a)))
            gap_aff = sum(
                np.tensordot(sb + ap * dsb, zb + ad * dzb)
                for sb, dsb, zb, dzb in zip(s, ds_a, z, dz_a)
            )
            sigma = min(1.0, max(0.0, gap_aff / gap) ** 3) if gap > 0 else 0.1

            # Corrector with Mehrotra second-order term.
            corr = [
                sla.cho_solve(cb, dsb) @ dzb
                for cb, dsb, dzb in zip(chol_s, ds_a, dz_a)
            ]
            dx, ds, dz = solve_direction(sigma * mu, corr)
            ap = min(1.0, self.step_frac * min(self._max_step(sb, d_) for sb, d_ in zip(s, ds)))
            ad = min(1.0, self.step_frac * min(self._max_step(zb, d_) for zb, d_ in zip(z, dz)))
            if ap < 1e-10 and ad < 1e-10:
                status = "numerical"
                break

            x = x + ap * dx
            s = [sb + ap * dsb for sb, dsb in zip(s, ds)]
            z = [zb + ad * dzb for zb, dzb in zip(z, dz)]

        if best is not None:
            _, x, s, z, (obj, dual_obj, relgap, pres, dres) = best
            if status in ("max_iter", "numerical") and best[0] <= self.tol_accept:
                status = "optimal"
        else:
            obj = dual_obj = 0.0
            relgap = pres = dres = np.inf

        zout = []
        ki = 0
        for b in range(len(f0s)):
            if b in keep:
                zout.append(z[ki])
                ki += 1
            else:
                zout.append(np.zeros((0, 0)))
        return SdpResult(status, x, zout, obj, dual_obj, relgap, pres, dres, it, lines)

    @staticmethod
    def _factor_schur(m):
        ridge = 0.0
        base = max(np.trace(m) / max(1, m.shape[0]), 1e-300)
        for attempt in range(4):
            try:
                return sla.cho_factor(m + ridge * np.eye(m.shape[0]), lower=True)
            except np.linalg.LinAlgError:
                ridge = 10.0 ** attempt * 1e-13 * base
        raise np.linalg.LinAlgError("Schur complement not positive definite")

    @staticmethod
    def _max_step(xb, dxb) -> float:
        """Largest alpha with xb + alpha*dxb PSD (xb assumed PD)."""
        if xb.shape[0] == 0:
            return np.inf
        try:
            low = np.linalg.cholesky(xb)
        except np.linalg.LinAlgError:
            return 0.0
        t = sla.solve_triangular(low, dxb, lower=True)
        t = sla.solve_triangular(low, t.T, lower=True)
        lam = np.linalg.eigvalsh(0.5 * (t + t.T)).min()
        if lam >= 0:
            return np.inf
        return -1.0 / lam


class CvxoptBackend:
    """Adapter running the same block-SDP interface through cvxopt."""

    def __init__(self, verbose: bool = False):
        self.verbose = verbose

    def solve_sdp(self, f0s, fis, g) -> SdpResult:
        from cvxopt import matrix, solvers

        g = np.asarray(g, dtype=float)
        f0s = [np.asarray(f, dtype=float) for f in f0s]
        fis = [np.asarray(f, dtype=float) for f in fis]
        _check_problem(f0s, fis, g)
        nvar = len(g)
        gs, hs, keep = [], [], []
        for b, (f0, fi) in enumerate(zip(f0s, fis)):
            d = f0.shape[0]
            if d == 0:
                continue
            keep.append(b)
            cols = np.stack([-fi[i].reshape(d * d) for i in range(nvar)], axis=1)
            gs.append(matrix(cols))
            hs.append(matrix(f0))
        sol = solvers.sdp(matrix(g), Gs=gs, hs=hs,
                          options={"show_progress": self.verbose})
        ok = sol["status"] == "optimal"
        x = np.array(sol["x"]).ravel() if sol["x"] is not None else np.zeros(nvar)
        zout = [np.zeros((0, 0))] * len(f0s)
        if sol["zs"] is not None:
            for zi, b in zip(sol["zs"], keep):
                d = f0s[b].shape[0]
                zout[b] = np.array(zi).reshape(d, d)
        obj = float(g @ x)
        gap = float(sol["gap"]) if sol["gap"] is not None else np.inf
        return SdpResult(
            "optimal" if ok else "numerical",
            x, zout, obj, obj - gap, gap, 0.0, 0.0, int(sol["iterations"]),
        )


def default_backend(verbose: bool = False) -> ReferenceIpm:
    return ReferenceIpm(verbose=verbose)
