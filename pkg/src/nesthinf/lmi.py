"""Affine matrix expressions and strict linear matrix inequality problems.

An `AffineMatrixExpr` is a matrix-valued function of named matrix decision
variables, kept in the form  constant + sum_k  L_k V_k R_k  (with optional
transposition of V_k).  Strict inequalities are realized by shifting with a
per-constraint margin eps and handing a block semidefinite program to a
backend from `nesthinf.sdp`.

Feasibility problems are solved in phase-I form (maximize a common slack
margin), which yields well-centered interior points for later controller
construction.  Infeasibility is only reported when the dual iterate provides
a Farkas-type improving ray; borderline cases come back as "marginal".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sdp import SdpResult, default_backend

__all__ = [
    "LmiError",
    "ProjectionError",
    "VarRef",
    "symm",
    "full",
    "AffineMatrixExpr",
    "const",
    "bmat",
    "scale",
    "he",
    "LmiProblem",
    "LmiSolution",
    "verify_assignment",
    "solve_for_single_unknown",
]


class LmiError(RuntimeError):
    pass


class ProjectionError(LmiError):
    """Projection-lemma solvability precondition failed."""


# --------------------------------------------------------------------------
# variables
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class VarRef:
    """A named matrix decision variable ("symmetric" or "full")."""

    name: str
    rows: int
    cols: int
    kind: str = "full"

    def __post_init__(self):
        if self.kind not in ("symmetric", "full"):
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.kind == "symmetric" and self.rows != self.cols:
            raise ValueError("symmetric variables must be square")
        if self.rows < 0 or self.cols < 0:
            raise ValueError("negative dimensions")

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def num_scalars(self) -> int:
        if self.kind == "symmetric":
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols

    def expr(self) -> "AffineMatrixExpr":
        return AffineMatrixExpr(
            self.rows, self.cols,
            terms=[(self, np.eye(self.rows), np.eye(self.cols), False)],
        )


def symm(name: str, n: int) -> VarRef:
    return VarRef(name, n, n, "symmetric")


def full(name: str, rows: int, cols: int) -> VarRef:
    return VarRef(name, rows, cols, "full")


_BASIS_CACHE: dict = {}


def scalar_basis(var: VarRef) -> np.ndarray:
    """Basis tensor (num_scalars, rows, cols) expanding scalar coordinates."""
    key = (var.kind, var.rows, var.cols)
    cached = _BASIS_CACHE.get(key)
    if cached is not None:
        return cached
    r, c = var.rows, var.cols
    if var.kind == "symmetric":
        mats = []
        for i in range(r):
            for j in range(i, r):
                b = np.zeros((r, r))
                b[i, j] = 1.0
                b[j, i] = 1.0
                mats.append(b)
        basis = np.array(mats) if mats else np.zeros((0, r, r))
    else:
        basis = np.zeros((r * c, r, c))
        for i in range(r):
            for j in range(c):
                basis[i * c + j, i, j] = 1.0
    _BASIS_CACHE[key] = basis
    return basis


def unpack_scalars(var: VarRef, x: np.ndarray) -> np.ndarray:
    """Matrix value of `var` from its scalar coordinate slice."""
    basis = scalar_basis(var)
    if basis.shape[0] == 0:
        return np.zeros((var.rows, var.cols))
    return np.tensordot(x, basis, axes=(0, 0))


# --------------------------------------------------------------------------
# expressions
# --------------------------------------------------------------------------


class AffineMatrixExpr:
    """Matrix expression affine in matrix variables.

    Stored as a constant plus terms (var, left, right, transposed), each
    meaning left @ var @ right (or left @ var.T @ right).
    """

    __slots__ = ("rows", "cols", "constant", "terms")

    # Let ndarray @ expr and ndarray + expr defer to our reflected ops.
    __array_ufunc__ = None

    def __init__(self, rows, cols, constant=None, terms=()):
        self.rows = int(rows)
        self.cols = int(cols)
        if constant is None:
            constant = np.zeros((self.rows, self.cols))
        constant = np.asarray(constant, dtype=float)
        if constant.shape != (self.rows, self.cols):
            raise ValueError(
                f"constant shape {constant.shape} != ({self.rows}, {self.cols})"
            )
        self.constant = constant
        self.terms = tuple(terms)
        for var, left, right, tr in self.terms:
            vr, vc = (var.cols, var.rows) if tr else (var.rows, var.cols)
            if left.shape != (self.rows, vr) or right.shape != (vc, self.cols):
                raise ValueError(f"term for {var.name} does not conform")

    # -- construction helpers

    @property
    def shape(self):
        return (self.rows, self.cols)

    def variables(self):
        seen = {}
        for var, *_ in self.terms:
            seen.setdefault(var.name, var)
        return list(seen.values())

    # -- algebra

    def __add__(self, other):
        other = as_expr(other, self.shape)
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        return AffineMatrixExpr(
            self.rows, self.cols,
            self.constant + other.constant,
            self.terms + other.terms,
        )

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-as_expr(other, self.shape))

    def __rsub__(self, other):
        return as_expr(other, self.shape) + (-self)

    def __neg__(self):
        return self * (-1.0)

    def __mul__(self, alpha):
        alpha = float(alpha)
        return AffineMatrixExpr(
            self.rows, self.cols,
            alpha * self.constant,
            [(v, alpha * left, right, tr) for v, left, right, tr in self.terms],
        )

    __rmul__ = __mul__

    def __matmul__(self, right):
        if isinstance(right, VarRef):
            right = right.expr()
        if isinstance(right, AffineMatrixExpr):
            if right.terms and self.terms:
                raise TypeError("product of two variable expressions is not affine")
            if right.terms:
                return right.__rmatmul__(self.constant)
            right = right.constant
        right = np.asarray(right, dtype=float)
        return AffineMatrixExpr(
            self.rows, right.shape[1],
            self.constant @ right,
            [(v, lf, rg @ right, tr) for v, lf, rg, tr in self.terms],
        )

    def __rmatmul__(self, left):
        left = np.asarray(left, dtype=float)
        return AffineMatrixExpr(
            left.shape[0], self.cols,
            left @ self.constant,
            [(v, left @ lf, rg, tr) for v, lf, rg, tr in self.terms],
        )

    @property
    def T(self):
        return AffineMatrixExpr(
            self.cols, self.rows,
            self.constant.T,
            [(v, rg.T, lf.T, not tr) for v, lf, rg, tr in self.terms],
        )

    def he(self):
        """He(M) = M + M^T."""
        if self.rows != self.cols:
            raise ValueError("He() needs a square expression")
        return self + self.T

    def congruence(self, t: np.ndarray):
        """T' M T for a constant matrix T."""
        return t.T @ self @ t

    def __getitem__(self, key):
        rs, cs = key
        rows = np.arange(self.rows)[rs]
        cols = np.arange(self.cols)[cs]
        er = np.zeros((len(rows), self.rows))
        er[np.arange(len(rows)), rows] = 1.0
        ec = np.zeros((self.cols, len(cols)))
        ec[cols, np.arange(len(cols))] = 1.0
        return er @ self @ ec

    # -- evaluation

    def eval(self, assignment: dict) -> np.ndarray:
        out = self.constant.copy()
        for var, left, right, tr in self.terms:
            val = np.asarray(assignment[var.name], dtype=float)
            if val.shape != var.shape:
                raise ValueError(
                    f"value for {var.name} has shape {val.shape}, "
                    f"expected {var.shape}"
                )
            out += left @ (val.T if tr else val) @ right
        return out

    def scalarize(self, var_order, offsets, nscalars) -> np.ndarray:
        """Coefficient tensor (nscalars, rows, cols) w.r.t. scalar coords."""
        out = np.zeros((nscalars, self.rows, self.cols))
        for var, left, right, tr in self.terms:
            basis = scalar_basis(var)
            if tr:
                basis = basis.transpose(0, 2, 1)
            lo = offsets[var.name]
            out[lo:lo + var.num_scalars] += np.einsum(
                "ab,kbc,cd->kad", left, basis, right
            )
        return out


def as_expr(obj, shape=None) -> AffineMatrixExpr:
    if isinstance(obj, AffineMatrixExpr):
        return obj
    if isinstance(obj, VarRef):
        return obj.expr()
    if np.isscalar(obj):
        if shape is None or shape[0] != shape[1]:
            raise ValueError("scalar needs a square target shape")
        return AffineMatrixExpr(shape[0], shape[1], float(obj) * np.eye(shape[0]))
    arr = np.asarray(obj, dtype=float)
    return AffineMatrixExpr(arr.shape[0], arr.shape[1], arr)


def const(mat) -> AffineMatrixExpr:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    return AffineMatrixExpr(mat.shape[0], mat.shape[1], mat)


def scale(var: VarRef, coeff) -> AffineMatrixExpr:
    """coeff * v for a 1x1 variable v and a constant matrix coeff."""
    if var.shape != (1, 1):
        raise ValueError("scale() needs a 1x1 variable")
    coeff = np.atleast_2d(np.asarray(coeff, dtype=float))
    r, c = coeff.shape
    terms = []
    if r <= c:
        for i in range(r):
            ei = np.zeros((r, 1))
            ei[i, 0] = 1.0
            terms.append((var, ei, coeff[i:i + 1, :], False))
    else:
        for j in range(c):
            ej = np.zeros((1, c))
            ej[0, j] = 1.0
            terms.append((var, coeff[:, j:j + 1], ej, False))
    return AffineMatrixExpr(r, c, terms=terms)


def bmat(rows) -> AffineMatrixExpr:
    """Assemble a block expression from a 2-d grid of blocks.

    Blocks may be expressions, arrays or variables; zero-sized blocks are
    allowed and simply occupy no space.
    """
    grid = [[as_expr(b) for b in row] for row in rows]
    nrow = len(grid)
    ncol = len(grid[0])
    rheights = [None] * nrow
    cwidths = [None] * ncol
    for i, row in enumerate(grid):
        if len(row) != ncol:
            raise ValueError("ragged block grid")
        for j, blk in enumerate(row):
            if rheights[i] is None:
                rheights[i] = blk.rows
            elif rheights[i] != blk.rows:
                raise ValueError(f"row {i} height mismatch")
            if cwidths[j] is None:
                cwidths[j] = blk.cols
            elif cwidths[j] != blk.cols:
                raise ValueError(f"column {j} width mismatch")
    roff = np.concatenate([[0], np.cumsum(rheights)]).astype(int)
    coff = np.concatenate([[0], np.cumsum(cwidths)]).astype(int)
    total_r, total_c = int(roff[-1]), int(coff[-1])
    constant = np.zeros((total_r, total_c))
    terms = []
    for i, row in enumerate(grid):
        for j, blk in enumerate(row):
            constant[roff[i]:roff[i + 1], coff[j]:coff[j + 1]] = blk.constant
            for var, left, right, tr in blk.terms:
                nl = np.zeros((total_r, left.shape[1]))
                nl[roff[i]:roff[i + 1]] = left
                nr = np.zeros((right.shape[0], total_c))
                nr[:, coff[j]:coff[j + 1]] = right
                terms.append((var, nl, nr, tr))
    return AffineMatrixExpr(total_r, total_c, constant, terms)


def he(obj):
    """He(M) = M + M^T for an expression or a plain array."""
    if isinstance(obj, (AffineMatrixExpr, VarRef)):
        return as_expr(obj).he()
    arr = np.asarray(obj, dtype=float)
    return arr + arr.T


def zeros(rows: int, cols: int) -> AffineMatrixExpr:
    return AffineMatrixExpr(rows, cols)


def eye(n: int) -> AffineMatrixExpr:
    return AffineMatrixExpr(n, n, np.eye(n))


# --------------------------------------------------------------------------
# problems
# --------------------------------------------------------------------------


@dataclass
class _Constraint:
    expr: AffineMatrixExpr
    sense: str  # "neg" for < 0, "pos" for > 0
    eps: float


@dataclass
class LmiSolution:
    """Solved variable assignment plus re-verified constraint margins."""

    status: str  # feasible | infeasible | marginal | failed
    assignment: dict
    objective: float | None
    margins: list
    eps: list
    max_residual: float
    feas_margin: float | None
    info: SdpResult | None

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


class LmiProblem:
    """A set of strict matrix inequalities with an optional linear objective.

    Strictness is realized as a shift by eps = eps_scale * |constant|
    (eps_scale when the constant vanishes), so "M < 0" is solved as
    "M + eps*I <= 0".  A returned "feasible" status always means the
    assignment passed an independent eigenvalue re-check of every constraint
    at margin eps/2.
    """

    def __init__(self, eps_scale: float = 1e-7):
        self.eps_scale = float(eps_scale)
        self.constraints: list[_Constraint] = []
        self.objective: AffineMatrixExpr | None = None

    # -- assembly

    def _add(self, expr, sense):
        expr = as_expr(expr)
        if expr.rows != expr.cols:
            raise ValueError("constraints must be square")
        if expr.rows == 0:
            return
        rng = np.random.default_rng(20240901)
        for _ in range(2):
            assign = {
                v.name: rng.standard_normal(v.shape) for v in expr.variables()
            }
            for v in expr.variables():
                if v.kind == "symmetric":
                    assign[v.name] = assign[v.name] + assign[v.name].T
            val = expr.eval(assign)
            if not np.allclose(val, val.T, atol=1e-8 * max(1.0, np.abs(val).max())):
                raise ValueError("constraint expression is not symmetric")
        cnorm = np.linalg.norm(expr.constant, 2) if expr.constant.size else 0.0
        eps = self.eps_scale * (cnorm if cnorm > 0 else 1.0)
        self.constraints.append(_Constraint(expr, sense, eps))

    def add_negdef(self, expr):
        """Add the strict constraint expr < 0."""
        self._add(expr, "neg")

    def add_posdef(self, expr):
        """Add the strict constraint expr > 0."""
        self._add(expr, "pos")

    def add_norm_cap(self, var: VarRef, cap: float):
        """Bound the spectral norm of a variable by cap."""
        v = var.expr()
        if var.kind == "symmetric":
            self.add_posdef(const(cap * np.eye(var.rows)) - v)
            self.add_posdef(const(cap * np.eye(var.rows)) + v)
        else:
            self.add_posdef(bmat([
                [cap * np.eye(var.rows), v],
                [v.T, cap * np.eye(var.cols)],
            ]))

    def minimize(self, objective):
        objective = as_expr(objective)
        if objective.shape != (1, 1):
            raise ValueError("objective must be a 1x1 expression")
        self.objective = objective

    def variables(self):
        seen = {}
        for con in self.constraints:
            for v in con.expr.variables():
                if v.name in seen and seen[v.name] != v:
                    raise ValueError(f"conflicting definitions of {v.name}")
                seen.setdefault(v.name, v)
        if self.objective is not None:
            for v in self.objective.variables():
                seen.setdefault(v.name, v)
        return list(seen.values())

    # -- solving

    def solve(self, backend=None, verbose: bool = False,
              margin_cap: float | None = None,
              var_cap: float = 1e7) -> LmiSolution:
        if not self.constraints:
            raise LmiError("problem has no constraints")
        backend = backend or default_backend(verbose=verbose)
        variables = self.variables()
        offsets = {}
        pos = 0
        for v in variables:
            offsets[v.name] = pos
            pos += v.num_scalars
        nvar = pos

        f0s, fis = [], []
        for con in self.constraints:
            sign = 1.0 if con.sense == "pos" else -1.0
            dim = con.expr.rows
            f0 = sign * con.expr.constant - con.eps * np.eye(dim)
            coeff = sign * con.expr.scalarize(variables, offsets, nvar)
            f0s.append(0.5 * (f0 + f0.T))
            fis.append(0.5 * (coeff + coeff.transpose(0, 2, 1)))

        if self.objective is None:
            # Phase-I form: maximize a shared slack margin t.
            if margin_cap is None:
                margin_cap = 1e8 * max(
                    1.0, max(np.linalg.norm(c.expr.constant, 2) for c in self.constraints)
                )
            g = np.zeros(nvar + 1)
            g[nvar] = -1.0
            f0s_t, fis_t = [], []
            for f0, fi in zip(f0s, fis):
                dim = f0.shape[0]
                ext = np.zeros((nvar + 1, dim, dim))
                ext[:nvar] = fi
                ext[nvar] = -np.eye(dim)
                f0s_t.append(f0)
                fis_t.append(ext)
            cap0 = np.array([[margin_cap]])
            capi = np.zeros((nvar + 1, 1, 1))
            capi[nvar, 0, 0] = -1.0
            f0s_t.append(cap0)
            fis_t.append(capi)
            # Norm caps keep the iterates of problems with unbounded (e.g.
            # homogeneous) feasible sets from drifting; they carry no margin.
            for v in variables:
                if v.num_scalars == 0:
                    continue
                ve = v.expr()
                if v.kind == "symmetric":
                    caps = [const(var_cap * np.eye(v.rows)) - ve,
                            const(var_cap * np.eye(v.rows)) + ve]
                else:
                    caps = [bmat([
                        [var_cap * np.eye(v.rows), ve],
                        [ve.T, var_cap * np.eye(v.cols)],
                    ])]
                for ce in caps:
                    dim = ce.rows
                    ext = np.zeros((nvar + 1, dim, dim))
                    coeff = ce.scalarize(variables, offsets, nvar)
                    ext[:nvar] = 0.5 * (coeff + coeff.transpose(0, 2, 1))
                    f0s_t.append(0.5 * (ce.constant + ce.constant.T))
                    fis_t.append(ext)
            res = backend.solve_sdp(f0s_t, fis_t, g)
            tstar = float(res.x[nvar]) if res.x.size else -np.inf
            assignment = self._unpack(variables, offsets, res.x[:nvar])
            margins = verify_assignment(self, assignment)
            status = self._feas_status(res, margins, tstar, f0s, fis, nvar)
            max_res = max(
                (max(0.0, -m) for m in margins), default=0.0
            )
            return LmiSolution(status, assignment, None, margins,
                               [c.eps for c in self.constraints],
                               max_res, tstar, res)

        gofx = self.objective.scalarize(variables, offsets, nvar)[:, 0, 0]
        res = backend.solve_sdp(f0s, fis, gofx)
        assignment = self._unpack(variables, offsets, res.x)
        margins = verify_assignment(self, assignment)
        ok = all(m >= c.eps / 2 for m, c in zip(margins, self.constraints))
        if res.converged and ok:
            status = "feasible"
        elif res.converged:
            status = "marginal"
        else:
            status = "failed"
        objective = float(gofx @ res.x + self.objective.constant[0, 0])
        max_res = max((max(0.0, -m) for m in margins), default=0.0)
        return LmiSolution(status, assignment, objective, margins,
                           [c.eps for c in self.constraints],
                           max_res, None, res)

    def _unpack(self, variables, offsets, x):
        out = {}
        for v in variables:
            lo = offsets[v.name]
            out[v.name] = unpack_scalars(v, x[lo:lo + v.num_scalars])
        return out

    def _feas_status(self, res, margins, tstar, f0s, fis, nvar,
                     cert_tol: float = 1e-8):
        ok = all(m >= c.eps / 2 for m, c in zip(margins, self.constraints))
        if ok:
            return "feasible"
        if not res.converged:
            return "failed"
        # Farkas-type certificate: dual blocks with A*(Z)=0 on the original
        # variables and negative pairing with the constants prove emptiness.
        zs = res.zblocks[: len(f0s)]
        tau = sum(np.trace(z) for z in zs if z.size)
        if tau <= 0:
            return "marginal"
        lin = np.zeros(nvar)
        c0 = 0.0
        coefscale = 1.0
        for fi, f0, z in zip(fis, f0s, zs):
            if not z.size:
                continue
            lin += np.einsum("iab,ab->i", fi, z)
            c0 += np.tensordot(f0, z)
            if fi.size:
                coefscale = max(coefscale, np.abs(fi).max())
        if (np.linalg.norm(lin) / tau <= cert_tol * coefscale
                and c0 / tau < -cert_tol * 1e-4):
            return "infeasible"
        return "marginal"


def verify_assignment(problem: LmiProblem, assignment: dict) -> list:
    """Independent eigenvalue margins of every constraint at the assignment.

    For "< 0" constraints the margin is -lambda_max, for "> 0" it is
    lambda_min; positive margins mean satisfied.
    """
    margins = []
    for con in problem.constraints:
        val = con.expr.eval(assignment)
        val = 0.5 * (val + val.T)
        eigs = np.linalg.eigvalsh(val)
        if con.sense == "neg":
            margins.append(float(-eigs[-1]))
        else:
            margins.append(float(eigs[0]))
    return margins


# --------------------------------------------------------------------------
# projection-lemma solve for a single unstructured unknown
# --------------------------------------------------------------------------


def solve_for_single_unknown(
    q: np.ndarray,
    m: np.ndarray,
    n: np.ndarray,
    margin_frac: float = 0.5,
    norm_cap: float = 1e6,
    backend=None,
) -> np.ndarray:
    """One solution S of the strict inequality He(Q + M' S N) < 0.

    Solvability requires He(Q) negative definite on ker(M) and on ker(N);
    both are checked first and a `ProjectionError` reports the violating
    eigenvalue.  Among all solutions, the returned S has a moderate norm:
    a first solve maximizes the achievable margin, a second minimizes
    trace(S'S) at half that margin.
    """
    from .matcore import kernel_basis

    q = np.asarray(q, dtype=float)
    m = np.atleast_2d(np.asarray(m, dtype=float))
    n = np.atleast_2d(np.asarray(n, dtype=float))
    d = q.shape[0]
    if q.shape != (d, d):
        raise ValueError("Q must be square")
    heq = q + q.T
    for label, mat in (("M", m), ("N", n)):
        basis = kernel_basis(mat)
        if basis.shape[1]:
            lam = np.linalg.eigvalsh(basis.T @ heq @ basis).max()
            if lam >= 0:
                raise ProjectionError(
                    f"He(Q) not negative definite on ker({label}): "
                    f"largest eigenvalue {lam:.3e}"
                )
    srows, scols = m.shape[0], n.shape[0]
    if srows == 0 or scols == 0:
        if np.linalg.eigvalsh(heq).max() >= 0:
            raise ProjectionError("S is empty but He(Q) is not negative definite")
        return np.zeros((srows, scols))

    svar = full("S", srows, scols)
    scale_q = max(1.0, np.linalg.norm(q, 2))
    cap = norm_cap * scale_q
    closed = he(const(q) + m.T @ svar.expr() @ n)

    # Cap the phase-1 margin at the problem scale so that the follow-up
    # norm minimization is not asked to hold an inflated margin.
    prob = LmiProblem()
    prob.add_negdef(closed)
    prob.add_norm_cap(svar, cap)
    sol = prob.solve(backend=backend, margin_cap=scale_q)
    if not sol.feasible or sol.feas_margin is None or sol.feas_margin <= 0:
        raise ProjectionError(
            f"projection step did not find a strict solution "
            f"(status {sol.status}, margin {sol.feas_margin})"
        )
    delta = margin_frac * sol.feas_margin

    tvar = symm("T", scols)
    prob2 = LmiProblem()
    prob2.add_negdef(closed + const(delta * np.eye(d)))
    prob2.add_posdef(bmat([
        [tvar.expr(), svar.expr().T],
        [svar.expr(), np.eye(srows)],
    ]))
    tr = np.zeros((1, 1))
    objective = AffineMatrixExpr(1, 1, tr, [
        (tvar, np.eye(scols)[i:i + 1], np.eye(scols)[:, i:i + 1], False)
        for i in range(scols)
    ])
    prob2.minimize(objective)
    sol2 = prob2.solve(backend=backend)
    if sol2.status in ("feasible", "marginal"):
        s = sol2.assignment["S"]
        check = heq + m.T @ s @ n + (m.T @ s @ n).T
        if np.linalg.eigvalsh(check).max() < 0:
            return s
    return sol.assignment["S"]
