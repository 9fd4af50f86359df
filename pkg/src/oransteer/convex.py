"""Log-barrier interior-point solver for the scheduling subproblems.

Programs have the form

    maximize   c.x + sum_k w_k log(1 + a_k x[i_k])
    subject to lb <= x <= ub
               G x <= h
               sum_{k in row r} w_k log(1 + a_k x[i_k]) + D_r x >= e_r

with w_k >= 0 so every constraint and the objective are concave.

The Newton system is H = B + K^T K where B is block diagonal with 1x1 and
2x2 blocks (the ``pairs`` of the program, used for the power/assignment
coupling) and K stacks the scaled gradients of the remaining rows.  It is
solved with the Woodbury identity, so the dense work is k x k with k the
number of coupling rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERS = "max-iters"
DENSE_LIMIT = 200_000     # k*n below which the coupling block is kept dense


@dataclass(frozen=True)
class Tolerances:
    gap: float = 1e-6
    violation: float = 1e-8
    newton: float = 1e-9
    kkt: float = 1e-6
    mu: float = 10.0
    t0: float = 1.0
    ls_alpha: float = 0.3
    ls_beta: float = 0.8
    max_newton: int = 600
    max_center: int = 80
    max_backtrack: int = 40
    margin: float = 1e-9


@dataclass
class ConvexProgram:
    n: int
    lb: np.ndarray
    ub: np.ndarray
    c: np.ndarray
    obj_idx: np.ndarray = None
    obj_a: np.ndarray = None
    obj_w: np.ndarray = None
    G: sp.csr_matrix = None
    h: np.ndarray = None
    con_row: np.ndarray = None
    con_idx: np.ndarray = None
    con_a: np.ndarray = None
    con_w: np.ndarray = None
    D: sp.csr_matrix = None
    e: np.ndarray = None
    pairs: np.ndarray = None          # (npairs, 2) variable pairs forming 2x2 Newton blocks
    names: list = None

    def __post_init__(self):
        n = self.n
        f = lambda v, d: np.asarray(d if v is None else v, dtype=float)
        i = lambda v: np.zeros(0, dtype=np.int64) if v is None else np.asarray(v, dtype=np.int64)
        self.lb = np.broadcast_to(f(self.lb, -np.inf), (n,)).astype(float)
        self.ub = np.broadcast_to(f(self.ub, np.inf), (n,)).astype(float)
        self.c = np.broadcast_to(f(self.c, 0.0), (n,)).astype(float)
        self.obj_idx, self.obj_a, self.obj_w = i(self.obj_idx), f(self.obj_a, []), f(self.obj_w, [])
        self.G = sp.csr_matrix((0, n)) if self.G is None else sp.csr_matrix(self.G, dtype=float)
        self.h = f(self.h, np.zeros(self.G.shape[0]))
        self.con_row, self.con_idx = i(self.con_row), i(self.con_idx)
        self.con_a, self.con_w = f(self.con_a, []), f(self.con_w, [])
        m2 = 0 if self.e is None else len(np.atleast_1d(self.e))
        self.D = sp.csr_matrix((m2, n)) if self.D is None else sp.csr_matrix(self.D, dtype=float)
        self.e = f(self.e, np.zeros(self.D.shape[0]))
        self.pairs = np.zeros((0, 2), dtype=np.int64) if self.pairs is None else np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if self.G.shape != (len(self.h), n) or self.D.shape != (len(self.e), n):
            raise ValueError("constraint matrix shapes do not match")
        if np.any(self.obj_w < 0) or np.any(self.con_w < 0):
            raise ValueError("log-term weights must be non-negative (concavity)")
        if len(self.con_row) and self.con_row.max() >= len(self.e):
            raise ValueError("log term refers to a missing constraint row")
        for arr in (self.c, self.h, self.e, self.G.data, self.D.data, self.obj_a, self.con_a):
            if not np.all(np.isfinite(arr)):
                raise ValueError("program data must be finite")

    @property
    def num_constraints(self) -> int:
        return len(self.h) + len(self.e)

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.c @ x + np.sum(self.obj_w * np.log1p(self.obj_a * x[self.obj_idx])))

    def row_values(self, x) -> tuple:
        """(h - Gx, g(x) - e): both non-negative at feasible points."""
        x = np.asarray(x, dtype=float)
        lin = self.h - self.G @ x
        con = self.D @ x - self.e
        if len(self.con_row):
            con = con + np.bincount(self.con_row, self.con_w * np.log1p(self.con_a * x[self.con_idx]),
                                    minlength=len(self.e))
        return lin, con

    def violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        lin, con = self.row_values(x)
        v = [0.0, float(np.max(self.lb - x, initial=0.0)), float(np.max(x - self.ub, initial=0.0))]
        v.append(float(np.max(-lin, initial=0.0)))
        v.append(float(np.max(-con, initial=0.0)))
        return max(v)


@dataclass
class SolveReport:
    x: np.ndarray
    objective: float
    status: str
    kkt_residual: float = math.inf
    iterations: int = 0
    gap: float = math.inf
    phase1: bool = False

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Barrier:
    """Barrier value, gradient and structured Newton step for one program."""

    def __init__(self, prog: ConvexProgram):
        self.p = prog
        n = prog.n
        self.has_lb = np.isfinite(prog.lb)
        self.has_ub = np.isfinite(prog.ub)
        # pair bookkeeping
        partner = np.full(n, -1, dtype=np.int64)
        if len(prog.pairs):
            a, b = prog.pairs[:, 0], prog.pairs[:, 1]
            if np.any(partner[a] >= 0) or np.any(partner[b] >= 0) or len(np.unique(prog.pairs)) != 2 * len(prog.pairs):
                raise ValueError("pairs must be disjoint")
            partner[a], partner[b] = b, a
        self.partner = partner
        # split linear rows into local (inside one 1x1/2x2 block) and coupling rows
        G = prog.G.tocsr()
        G.sum_duplicates()
        nnz = np.diff(G.indptr)
        local = np.zeros(G.shape[0], dtype=bool)
        first = G.indices[G.indptr[:-1].clip(max=max(len(G.indices) - 1, 0))] if len(G.indices) else np.zeros(0, dtype=np.int64)
        local[nnz == 1] = True
        two = np.flatnonzero(nnz == 2)
        if len(two):
            i0 = G.indices[G.indptr[two]]
            i1 = G.indices[G.indptr[two] + 1]
            local[two] = partner[i0] == i1
        self.local = local
        self.Gl = G[local]
        self.Gg = G[~local]
        self.hl = prog.h[local]
        self.hg = prog.h[~local]
        Gl = self.Gl.tocoo()
        self.l_row, self.l_col, self.l_val = Gl.row, Gl.col, Gl.data
        # off-diagonal entries of local two-variable rows: (row, var i, var j, a_i*a_j)
        rows2 = np.flatnonzero(np.diff(self.Gl.indptr) == 2)
        st = self.Gl.indptr[rows2]
        self.o_row = rows2
        self.o_i = self.Gl.indices[st]
        self.o_j = self.Gl.indices[st + 1]
        self.o_v = self.Gl.data[st] * self.Gl.data[st + 1]
        # pair index per variable (for assembling 2x2 blocks)
        self.pa = prog.pairs[:, 0] if len(prog.pairs) else np.zeros(0, dtype=np.int64)
        self.pb = prog.pairs[:, 1] if len(prog.pairs) else np.zeros(0, dtype=np.int64)
        self.single = np.flatnonzero(partner < 0)
        pair_of = np.full(n, -1, dtype=np.int64)
        pair_of[self.pa] = np.arange(len(self.pa))
        pair_of[self.pb] = np.arange(len(self.pb))
        self.pair_of = pair_of
        # concave rows: structure of the gradient matrix J (log terms + D)
        Dc = prog.D.tocoo()
        self.j_rows = np.concatenate([prog.con_row, Dc.row]).astype(np.int64)
        self.j_cols = np.concatenate([prog.con_idx, Dc.col]).astype(np.int64)
        self.n_terms = len(prog.con_row)
        self.d_val = Dc.data
        self.j_flat = self.j_rows * n + self.j_cols
        k_all = self.Gg.shape[0] + len(prog.e)
        self.dense = k_all * n <= DENSE_LIMIT
        self.Gg_dense = self.Gg.toarray() if self.dense else None
        small = n <= 1500
        self._Gl = self.Gl.toarray() if small else self.Gl
        self._Gg = self.Gg_dense if small and self.dense else (self.Gg.toarray() if small else self.Gg)
        self._D = prog.D.toarray() if small else prog.D
        self.m_bar = int(self.has_lb.sum() + self.has_ub.sum() + G.shape[0] + len(prog.e))

    # -- evaluation ------------------------------------------------------
    def slacks(self, x):
        p = self.p
        s_lb = x[self.has_lb] - p.lb[self.has_lb]
        s_ub = p.ub[self.has_ub] - x[self.has_ub]
        s_l = self.hl - self._Gl @ x
        s_g = self.hg - self._Gg @ x
        arg_o = 1.0 + p.obj_a * x[p.obj_idx]
        arg_c = 1.0 + p.con_a * x[p.con_idx]
        return s_lb, s_ub, s_l, s_g, arg_o, arg_c

    def value(self, x, t):
        """Barrier value, or +inf outside the domain."""
        p = self.p
        s_lb, s_ub, s_l, s_g, arg_o, arg_c = self.slacks(x)
        if (np.any(s_lb <= 0) or np.any(s_ub <= 0) or np.any(s_l <= 0) or np.any(s_g <= 0)
                or np.any(arg_o <= 0) or np.any(arg_c <= 0)):
            return math.inf
        gr = self._D @ x - p.e
        if self.n_terms:
            gr = gr + np.bincount(p.con_row, p.con_w * np.log(arg_c), minlength=len(p.e))
        if np.any(gr <= 0):
            return math.inf
        f0 = -(p.c @ x + np.sum(p.obj_w * np.log(arg_o)))
        return (t * f0 - np.sum(np.log(s_lb)) - np.sum(np.log(s_ub)) - np.sum(np.log(s_l))
                - np.sum(np.log(s_g)) - np.sum(np.log(gr)))

    def newton(self, x, t):
        """Gradient, Newton step and decrement at a strictly feasible x."""
        p = self.p
        n = p.n
        s_lb, s_ub, s_l, s_g, arg_o, arg_c = self.slacks(x)
        gr = p.D @ x - p.e
        if self.n_terms:
            gr = gr + np.bincount(p.con_row, p.con_w * np.log(arg_c), minlength=len(p.e))
        # gradient
        g = -t * p.c.copy()
        if len(p.obj_idx):
            g -= t * np.bincount(p.obj_idx, p.obj_w * p.obj_a / arg_o, minlength=n)
        g[self.has_lb] -= 1.0 / s_lb
        g[self.has_ub] += 1.0 / s_ub
        g += self.Gl.T @ (1.0 / s_l)
        g += self.Gg.T @ (1.0 / s_g)
        jt = p.con_w * p.con_a / arg_c
        Jv = np.concatenate([jt, self.d_val])
        if len(p.e):
            g -= np.bincount(self.j_cols, Jv / gr[self.j_rows], minlength=n)
        # block-diagonal part
        d = np.zeros(n)
        if len(p.obj_idx):
            d += t * np.bincount(p.obj_idx, p.obj_w * p.obj_a ** 2 / arg_o ** 2, minlength=n)
        d[self.has_lb] += 1.0 / s_lb ** 2
        d[self.has_ub] += 1.0 / s_ub ** 2
        if self.n_terms:
            d += np.bincount(p.con_idx, p.con_w * p.con_a ** 2 / arg_c ** 2 / gr[p.con_row], minlength=n)
        wl = 1.0 / s_l ** 2
        d += np.bincount(self.l_col, wl[self.l_row] * self.l_val ** 2, minlength=n)
        off = np.zeros(len(self.pa))
        if len(self.o_row):
            np.add.at(off, self.pair_of[self.o_i], wl[self.o_row] * self.o_v)
        k_g, k_c = self.Gg.shape[0], len(p.e)
        if not self.dense:
            J = sp.csr_matrix((Jv / gr[self.j_rows], (self.j_rows, self.j_cols)), shape=(k_c, n))
            K = sp.vstack([sp.diags(1.0 / s_g) @ self.Gg, J], format="csr")
            dx = self._solve_sparse(d, off, K, -g)
            return g, dx, float(g @ -dx)
        # small programs: dense coupling block avoids sparse bookkeeping
        K = np.zeros((k_g + k_c) * n)
        if k_g:
            K[:k_g * n] = (self.Gg_dense / s_g[:, None]).ravel()
        if k_c:
            K[k_g * n:] = np.bincount(self.j_flat, Jv / gr[self.j_rows], minlength=k_c * n)
        K = K.reshape(k_g + k_c, n)
        dx = self._solve(d, off, K, -g)
        lam2 = float(-g @ dx)
        return g, dx, lam2

    def _apply_binv(self, d, off, R):
        """B^-1 R for R of shape (n,) or (n, k)."""
        out = np.empty_like(R)
        s = self.single
        out[s] = R[s] / (d[s] if R.ndim == 1 else d[s][:, None])
        if len(self.pa):
            a, b = self.pa, self.pb
            da, db = d[a], d[b]
            det = da * db - off ** 2
            if R.ndim > 1:
                da, db, off, det = da[:, None], db[:, None], off[:, None], det[:, None]
            out[a] = (db * R[a] - off * R[b]) / det
            out[b] = (da * R[b] - off * R[a]) / det
        return out

    def _solve(self, d, off, K, rhs):
        y = self._apply_binv(d, off, rhs)
        k = K.shape[0]
        if k == 0:
            return y
        Y = self._apply_binv(d, off, K.T)
        S = K @ Y
        S[np.diag_indices(k)] += 1.0
        try:
            cf = sla.cho_factor(S, lower=True, check_finite=False)
            z = sla.cho_solve(cf, K @ y, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            z = np.linalg.lstsq(S, K @ y, rcond=None)[0]
        return y - Y @ z

    def _solve_sparse(self, d, off, K, rhs):
        n = self.p.n
        rows, cols, vals = [self.single], [self.single], [1.0 / d[self.single]]
        if len(self.pa):
            a, b = self.pa, self.pb
            da, db = d[a], d[b]
            det = da * db - off ** 2
            rows += [a, b, a, b]
            cols += [a, b, b, a]
            vals += [db / det, da / det, -off / det, -off / det]
        Binv = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        y = Binv @ rhs
        k = K.shape[0]
        if k == 0:
            return y
        Y = (Binv @ K.T).tocsc()
        S = (K @ Y).toarray()
        S[np.diag_indices(k)] += 1.0
        try:
            cf = sla.cho_factor(S, lower=True, check_finite=False)
            z = sla.cho_solve(cf, K @ y, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            z = np.linalg.lstsq(S, K @ y, rcond=None)[0]
        return y - Y @ z

    def kkt(self, x, t, g, dx) -> float:
        """KKT residual with multipliers estimated from the Newton step.

        lambda_i = (1 - ds_i/s_i) / (t s_i) for every slack s_i.  Reports the
        worst of stationarity, dual sign and complementarity.
        """
        p = self.p
        s_lb, s_ub, s_l, s_g, _, arg_c = self.slacks(x)
        gr = p.D @ x - p.e
        if self.n_terms:
            gr = gr + np.bincount(p.con_row, p.con_w * np.log(arg_c), minlength=len(p.e))
        r = g.copy()
        lam = []
        ds = dx[self.has_lb]
        r[self.has_lb] += ds / s_lb ** 2
        lam.append((1 - ds / s_lb) / s_lb)
        ds = -dx[self.has_ub]
        r[self.has_ub] += -ds / s_ub ** 2
        lam.append((1 - ds / s_ub) / s_ub)
        for G, sl in ((self.Gl, s_l), (self.Gg, s_g)):
            ds = -(G @ dx)
            r += G.T @ (-ds / sl ** 2)
            lam.append((1 - ds / sl) / sl)
        if len(p.e):
            Jv = np.concatenate([p.con_w * p.con_a / arg_c, self.d_val])
            ds = np.bincount(self.j_rows, Jv * dx[self.j_cols], minlength=len(p.e))
            r += np.bincount(self.j_cols, Jv * (ds / gr ** 2)[self.j_rows], minlength=p.n)
            lam.append((1 - ds / gr) / gr)
        lam = np.concatenate(lam) / t if lam else np.zeros(0)
        slack = np.concatenate([s_lb, s_ub, s_l, s_g, gr])
        return max(float(np.max(np.abs(r), initial=0.0)) / t, float(np.max(-lam, initial=0.0)),
                   float(np.max(np.abs(lam * slack), initial=0.0)))

    def max_step(self, x, dx):
        """Largest step keeping the linear parts strictly inside."""
        p = self.p
        s = 1.0
        def lim(slack, rate):
            neg = rate < 0
            if np.any(neg):
                return float(np.min(slack[neg] / -rate[neg]))
            return math.inf
        s_lb, s_ub, s_l, s_g, arg_o, arg_c = self.slacks(x)
        s = min(s, lim(s_lb, dx[self.has_lb]))
        s = min(s, lim(s_ub, -dx[self.has_ub]))
        s = min(s, lim(s_l, -(self.Gl @ dx)))
        s = min(s, lim(s_g, -(self.Gg @ dx)))
        s = min(s, lim(arg_o, p.obj_a * dx[p.obj_idx]))
        s = min(s, lim(arg_c, p.con_a * dx[p.con_idx]))
        return s


def _interior_start(prog: ConvexProgram, x0=None):
    lb, ub = prog.lb, prog.ub
    mid = np.zeros(prog.n)
    both = np.isfinite(lb) & np.isfinite(ub)
    mid[both] = 0.5 * (lb[both] + ub[both])
    only_lb = np.isfinite(lb) & ~np.isfinite(ub)
    only_ub = ~np.isfinite(lb) & np.isfinite(ub)
    mid[only_lb] = lb[only_lb] + 1.0
    mid[only_ub] = ub[only_ub] - 1.0
    if x0 is None:
        return mid
    x = np.asarray(x0, dtype=float).copy()
    width = np.where(both, ub - lb, 1.0)
    pad = 1e-6 * width
    lo = np.where(np.isfinite(lb), lb + pad, -np.inf)
    hi = np.where(np.isfinite(ub), ub - pad, np.inf)
    return np.clip(x, lo, hi)


def strictly_feasible(prog: ConvexProgram, x, margin: float = 1e-9) -> bool:
    x = np.asarray(x, dtype=float)
    if x.shape != (prog.n,) or not np.all(np.isfinite(x)):
        return False
    ok = lambda v: bool(np.all(v > margin)) if margin == 0 else bool(np.all(v >= margin))
    if not ok(x - prog.lb) or not ok(prog.ub - x):
        return False
    if np.any(1.0 + prog.obj_a * x[prog.obj_idx] <= 0) or np.any(1.0 + prog.con_a * x[prog.con_idx] <= 0):
        return False
    lin, con = prog.row_values(x)
    return ok(lin) and ok(con)


def _barrier_solve(prog: ConvexProgram, x, tol: Tolerances, t0=None, stop=None):
    """Barrier method from a strictly feasible x.  Returns (x, status, newton steps, t, kkt)."""
    bar = _Barrier(prog)
    t = tol.t0 if t0 is None else t0
    steps = 0
    kkt = math.inf
    while True:
        for _ in range(tol.max_center):
            g, dx, lam2 = bar.newton(x, t)
            kkt = bar.kkt(x, t, g, dx)
            if lam2 / 2.0 <= tol.newton and (bar.m_bar / t > tol.gap or kkt <= tol.kkt):
                break
            if steps >= tol.max_newton:
                return x, MAX_ITERS, steps, t, kkt
            f = bar.value(x, t)
            step = min(1.0, 0.99 * bar.max_step(x, dx))
            slope = float(g @ dx)
            ok = False
            floor = 1e-14 * max(1.0, abs(f))
            for _ in range(tol.max_backtrack):
                xn = x + step * dx
                fn = bar.value(xn, t)
                if fn <= f + tol.ls_alpha * step * slope:
                    ok = True
                    break
                if -step * slope < floor:
                    break
                step *= tol.ls_beta
            steps += 1
            if not ok:
                # rounding noise dominates the decrement at this weight
                break
            x = xn
            if stop is not None and stop(x):
                return x, OPTIMAL, steps, t, kkt
        if bar.m_bar / t <= tol.gap:
            g, dx, _ = bar.newton(x, t)
            kkt = bar.kkt(x, t, g, dx)
            return x, OPTIMAL, steps, t, kkt
        t *= tol.mu


def feasibility_phase(prog: ConvexProgram, x0=None, tol: Tolerances = Tolerances()):
    """Strictly feasible point (margin >= tol.margin) or None when infeasible."""
    if np.any(prog.lb >= prog.ub):
        return None
    x = _interior_start(prog, x0)
    if strictly_feasible(prog, x, tol.margin):
        return x
    lin, con = prog.row_values(x)
    if not np.all(np.isfinite(lin)) or not np.all(np.isfinite(con)):
        x = _interior_start(prog)
        lin, con = prog.row_values(x)
    target = 1e-6
    bad_l = lin < target
    bad_c = con < target
    s0 = max(float(np.max(-lin[bad_l], initial=0.0)), float(np.max(-con[bad_c], initial=0.0))) + 1.0
    n = prog.n
    G = sp.hstack([prog.G, sp.csr_matrix(-bad_l.astype(float)[:, None])], format="csr")
    D = sp.hstack([prog.D, sp.csr_matrix(bad_c.astype(float)[:, None])], format="csr")
    ph = ConvexProgram(
        n + 1, np.append(prog.lb, -1e6), np.append(prog.ub, np.inf), np.append(np.zeros(n), -1.0),
        None, None, None, G, prog.h, prog.con_row, prog.con_idx, prog.con_a, prog.con_w, D, prog.e,
        prog.pairs)
    xs = np.append(x, s0)
    xs, status, steps, t, _ = _barrier_solve(ph, xs, tol, stop=lambda z: z[-1] < -target)
    if xs[-1] < -tol.margin and strictly_feasible(prog, xs[:-1], tol.margin):
        return xs[:-1]
    return None


def solve(prog: ConvexProgram, tol: Tolerances = Tolerances(), warm_start=None, t0=None) -> SolveReport:
    """Maximize the program; runs a feasibility phase unless the warm start is strictly feasible."""
    phase1 = False
    if warm_start is not None and strictly_feasible(prog, warm_start, 0.0):
        x = np.asarray(warm_start, dtype=float).copy()
    else:
        phase1 = True
        x = feasibility_phase(prog, warm_start, tol)
        if x is None:
            x0 = _interior_start(prog, warm_start) if np.all(prog.lb < prog.ub) else np.zeros(prog.n)
            return SolveReport(x0, -math.inf, INFEASIBLE, phase1=True)
        t0 = None
    x, status, steps, t, kkt = _barrier_solve(prog, x, tol, t0=t0)
    gap = _Barrier(prog).m_bar / t
    viol = prog.violation(x)
    if status == OPTIMAL and (kkt > tol.kkt or viol > tol.violation):
        status = MAX_ITERS
    return SolveReport(x, prog.objective(x), status, kkt, steps, gap, phase1)
