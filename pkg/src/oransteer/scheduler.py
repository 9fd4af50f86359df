"""Near-real-time xApp: per-TTI RB assignment and power control.

The binary assignment is relaxed to [0, 1] with a concave penalty
sum(pi^2 - pi) that is zero only at binary points.  Each SCA iteration
linearizes the penalty and the fronthaul rate cap around the current
iterate and hands the resulting concave program to ``convex.solve``.
After convergence pi is rounded and the powers are re-optimized with the
assignment fixed.

One call schedules one eMBB TTI together with the uRLLC TTIs that fit in
it (two with the default numerologies).  eMBB powers hold over the whole
window, so the per-RU power budget is enforced at every uRLLC tick.

Internally rates are in Mbit/s and queue bytes in KB, which keeps the
penalty weight and the solver tolerances on a sensible scale.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import convex
from .heuristics import SteeringPlan
from .model import Numerology
from .rates import N0, SNR_FLOOR, dispersion

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
MBIT = 1e6
KB = 1e3

SCHEMES = ("JIFDR", "FIX-NUM", "EFSD", "EPA", "SCUP", "PKTD")
OBJECTIVES = ("P1", "P2")
OVERFLOW_WEIGHT = 1e3       # objective units per KB of buffer overflow in elastic mode


class InfeasibleProblem(RuntimeError):
    pass


# --------------------------------------------------------------------------
# penalty and surrogate helpers


def _check_unit(pi):
    pi = np.asarray(pi, dtype=float)
    if np.any(pi < -1e-12) or np.any(pi > 1 + 1e-12):
        raise ValueError("assignment entries must lie in [0, 1]")
    return pi


def penalty(pi) -> float:
    """sum(pi^2 - pi): <= 0, and 0 exactly at binary points."""
    pi = _check_unit(pi)
    return float(np.sum(pi * pi - pi))


def penalty_linearized(pi, pi_j) -> float:
    """First-order expansion of ``penalty`` at pi_j (a global under-estimator)."""
    pi = _check_unit(pi)
    pi_j = _check_unit(pi_j)
    return float(np.sum(pi * (2 * pi_j - 1) - pi_j * pi_j))


def penalty_weight(ts: int, base: float = 20.0, decay: float = 10.0) -> float:
    return base + decay / (1.0 + ts)


def linearize_fh_rate(p, p_j, pi, gains, beta, disp=0.0, n0=N0) -> float:
    """Tangent upper bound of sum_f beta[log2(1 + p g/N0) - pi*disp] at p_j (bit/s).

    ``disp`` is the per-Hz dispersion loss (0 for eMBB).
    """
    p, p_j, g = (np.asarray(v, dtype=float) for v in (p, p_j, gains))
    pi = np.broadcast_to(np.asarray(pi, dtype=float), p.shape)
    beta = np.broadcast_to(np.asarray(beta, dtype=float), p.shape)
    base = beta * np.log2(1 + p_j * g / n0)
    slope = beta * g / (LN2 * (n0 + p_j * g))
    return float(np.sum(base + slope * (p - p_j) - beta * pi * disp))


# --------------------------------------------------------------------------
# inputs and outputs


@dataclass
class SliceGrid:
    name: str                   # "embb" or "urllc"
    numerology: Numerology
    users: np.ndarray           # global user indices
    gains: np.ndarray           # (ticks, M, len(users), F)
    dispersion: float = 0.0     # per-Hz loss of the short block-length term

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=int)
        g = np.asarray(self.gains, dtype=float)
        if g.ndim == 3:
            g = g[None]
        self.gains = g

    @property
    def ticks(self) -> int:
        return self.gains.shape[0]

    @property
    def num_rbs(self) -> int:
        return self.gains.shape[3]

    @property
    def beta(self) -> float:
        return self.numerology.rb_bandwidth

    @property
    def delta(self) -> float:
        return self.numerology.tti


def urllc_grid(numerology, users, gains, p_e):
    return SliceGrid("urllc", numerology, users, gains, dispersion(numerology.rb_bandwidth, numerology.tti, p_e))


@dataclass
class SsspInputs:
    plan: SteeringPlan
    embb: SliceGrid
    urllc: SliceGrid
    queues: np.ndarray                     # (M, U) bytes at the start of the window
    p_max: float                           # W per RU
    tti_index: int = 0                     # eMBB TTI index inside the frame
    windows_left: int = 1                  # eMBB TTIs left in the frame, this one included
    urllc_ticks_left: int = 1
    r_th: float = 1e6                      # bit/s, summed over the frame's TTIs
    r_done: np.ndarray = None              # (U_em,) eMBB rate summed so far this frame
    psi_done: np.ndarray = None            # (M, U_ur) uRLLC rate summed so far this frame
    frame_length: float = 10e-3
    z_embb: float = 125 * 1024.0
    z_urllc: float = 1024.0
    q_max: float = 10 * 1024.0
    fh_capacity: float = 1e9
    n0: float = N0
    snr_floor: float = SNR_FLOOR
    omega: float | None = None
    epsilon: float = 1e-4
    j_max: int = 50
    allowed: np.ndarray = None             # (M, U) bool, None = every RU may serve every user
    equal_power: bool = False
    p_budget: np.ndarray = None            # (M, ticks) W, None = p_max
    true_demand: np.ndarray = None
    use_true_demand: bool = False
    queue_constraint: bool = True
    warm_start: object = None              # previous Allocation
    warm_mode: str = "greedy"
    hold_windows: int = 1                  # eMBB TTIs the schedule is reused for (coherence block)

    def __post_init__(self):
        M = self.num_rus
        U = self.queues.shape[1]
        if self.r_done is None:
            self.r_done = np.zeros(len(self.embb.users))
        if self.psi_done is None:
            self.psi_done = np.zeros((M, len(self.urllc.users)))
        if self.allowed is None:
            self.allowed = np.ones((M, U), dtype=bool)
        if self.p_budget is None:
            self.p_budget = np.full((M, self.ticks), float(self.p_max))
        if self.omega is None:
            self.omega = penalty_weight(self.tti_index)
        if self.omega <= 0 or self.epsilon <= 0:
            raise ValueError("penalty weight and tolerance must be positive")

    @property
    def num_rus(self) -> int:
        return self.queues.shape[0]

    @property
    def ticks(self) -> int:
        return max(self.urllc.ticks, 1)

    @property
    def demand(self) -> np.ndarray:
        if self.use_true_demand and self.true_demand is not None:
            return np.asarray(self.true_demand, dtype=float)
        return np.asarray(self.plan.demand, dtype=float)

    # per-window requirements derived from the plan -----------------------
    def rate_requirement(self) -> np.ndarray:
        """eMBB bit/s still owed per user, spread over the remaining TTIs."""
        if self.embb.num_rbs == 0:
            return np.zeros(len(self.embb.users))
        return np.maximum(self.r_th - self.r_done, 0.0) / max(self.windows_left, 1)

    def psi(self) -> np.ndarray:
        """(M, U_ur) frame-level uRLLC rate demand phi*lam*Z*8/Delta."""
        ur = self.urllc.users
        lam = self.demand[ur]
        return self.plan.flow_split[:, ur] * lam[None, :] * self.z_urllc * 8.0 / self.frame_length

    def psi_requirement(self) -> np.ndarray:
        """(M, U_ur) bit/s summed over this window's uRLLC ticks."""
        owed = np.maximum(self.psi() - self.psi_done, 0.0)
        return owed * self.urllc.ticks / max(self.urllc_ticks_left, 1)

    def arrivals(self) -> np.ndarray:
        """(M, U) forecast bytes entering each queue during the window."""
        lam = self.demand
        phi = self.plan.flow_split
        out = np.zeros_like(self.queues, dtype=float)
        for grid, z in ((self.embb, self.z_embb), (self.urllc, self.z_urllc)):
            u = grid.users
            if len(u):
                out[:, u] = phi[:, u] * lam[u][None, :] * z * grid.delta * grid.ticks
        return out * self.hold_windows

    def latency_bits(self) -> np.ndarray:
        """(M, U_ur) bits per second routed over each RU, the numerator of the RU->user latency."""
        ur = self.urllc.users
        return self.plan.flow_split[:, ur] * self.demand[ur][None, :] * self.z_urllc * 8.0


@dataclass
class Allocation:
    pi_embb: np.ndarray          # (M, U_em, F_1)
    p_embb: np.ndarray
    pi_urllc: np.ndarray         # (ticks, M, U_ur, F_2)
    p_urllc: np.ndarray
    trace: list = field(default_factory=list)         # relaxed-stage objective per SCA iteration
    fixed_trace: list = field(default_factory=list)   # trace of the re-solve with pi fixed
    iterations: int = 0
    status: str = "optimal"
    repairs: int = 0
    objective: float = math.nan
    relaxed_penalty: float = 0.0
    phase1: int = 0
    relaxed_pi: np.ndarray = None

    @property
    def binary(self) -> bool:
        return all(np.all((a == 0) | (a == 1)) for a in (self.pi_embb, self.pi_urllc))

    def penalty(self) -> float:
        return penalty(self.pi_embb) + penalty(self.pi_urllc)


# --------------------------------------------------------------------------
# candidate table and program assembly


class _Layout:
    """Flattened list of (slice, tick, RU, user, RB) candidates and their variables."""

    def __init__(self, inp: SsspInputs, objective: str, fixed=None, qos=True):
        self.inp = inp
        self.objective = objective
        self.relaxed = fixed is None
        self.equal = inp.equal_power
        self.qos = qos
        M = inp.num_rus
        cols = {k: [] for k in ("s", "k", "m", "j", "f", "g")}
        for s, grid in enumerate((inp.embb, inp.urllc)):
            if len(grid.users) == 0 or grid.num_rbs == 0:
                continue
            T, _, U, F = grid.gains.shape
            kk, mm, jj, ff = np.meshgrid(np.arange(T), np.arange(M), np.arange(U), np.arange(F), indexing="ij")
            g = grid.gains
            ok = inp.allowed[:, grid.users][None, :, :, None] & np.ones_like(g, dtype=bool)
            if s == 1:
                floor_p = inp.n0 * inp.snr_floor / np.maximum(g, 1e-300)
                cap = self.p_equal if self.equal else inp.p_budget.T[:, :, None, None]
                ok &= floor_p < cap * (1 - 1e-6)
            for key, arr in zip(("k", "m", "j", "f", "g"), (kk, mm, jj, ff, g)):
                cols[key].append(arr[ok])
            cols["s"].append(np.full(int(ok.sum()), s))
        for key in cols:
            cols[key] = np.concatenate(cols[key]) if cols[key] else np.zeros(0)
        self.s = cols["s"].astype(int)
        self.k = cols["k"].astype(int)
        self.m = cols["m"].astype(int)
        self.j = cols["j"].astype(int)
        self.f = cols["f"].astype(int)
        self.g = cols["g"].astype(float)
        if fixed is not None:
            keep = self.lookup(fixed)
            for key in ("s", "k", "m", "j", "f", "g"):
                setattr(self, key, getattr(self, key)[keep])
        nc = len(self.s)
        self.nc = nc
        grids = (inp.embb, inp.urllc)
        self.beta = np.array([grids[s].beta for s in self.s]) if nc else np.zeros(0)
        self.disp = np.where(self.s == 1, inp.urllc.dispersion, 0.0)
        self.delta = np.array([grids[s].delta for s in self.s]) if nc else np.zeros(0)
        self.floor_p = np.where(self.s == 1, inp.n0 * inp.snr_floor / np.maximum(self.g, 1e-300), 0.0)
        self.w = self.beta / (MBIT * LN2)
        self.snr_unit = self.g / inp.n0
        # variables
        nv = 0
        if self.relaxed:
            self.pi_var = np.arange(nc)
            nv = nc
        else:
            self.pi_var = np.full(nc, -1)
        if self.equal:
            self.p_var = np.full(nc, -1)
        else:
            self.p_var = nv + np.arange(nc)
            nv += nc
        # queue slack variables for every (m, u) with something to send
        need = inp.queues + inp.arrivals()
        present = np.zeros(need.shape[1], dtype=bool)
        for grid in (inp.embb, inp.urllc):
            if grid.num_rbs:
                present[grid.users] = True
        need = np.where(present[None, :], need, 0.0)
        self.q_need = need
        self.zpairs = np.argwhere(need > 0) if (qos and inp.queue_constraint) else np.zeros((0, 2), dtype=int)
        self.z_var = nv + np.arange(len(self.zpairs))
        nv += len(self.zpairs)
        # elastic mode: one overflow variable per RU lets the buffer cap bend at a steep price
        self.elastic = qos == "elastic" and len(self.zpairs) > 0
        self.v_var = nv + np.arange(M) if self.elastic else np.zeros(0, dtype=int)
        nv += len(self.v_var)
        self.rho_var = -1
        if objective == "P2":
            self.lat = inp.latency_bits()
            if len(inp.urllc.users) == 0 or not np.any(self.lat > 0):
                raise ValueError("latency objective needs uRLLC traffic")
            self.rho_var = nv
            nv += 1
        self.nv = nv
        self.rb_key = np.unique(np.stack([self.s, self.k, self.m, self.f], axis=1), axis=0, return_inverse=True)[1].ravel() if nc else np.zeros(0, dtype=int)

    @property
    def p_equal(self):
        inp = self.inp
        total = inp.embb.num_rbs + (inp.urllc.num_rbs if len(inp.urllc.users) else 0)
        return inp.p_max / max(total, 1)

    def key(self):
        return np.stack([self.s, self.k, self.m, self.j, self.f], axis=1)

    def lookup(self, table):
        """Boolean mask over this layout's candidates present in ``table`` ((n, 5) keys)."""
        if len(table) == 0:
            return np.zeros(len(self.s), dtype=bool)
        dims = np.array([2, 8, 64, 4096, 4096], dtype=np.int64)
        def enc(a):
            a = np.asarray(a, dtype=np.int64)
            out = np.zeros(len(a), dtype=np.int64)
            for c, d in enumerate(dims):
                out = out * d + a[:, c]
            return out
        return np.isin(enc(self.key()), enc(table))

    # rate expression per candidate -------------------------------------------
    def rate_parts(self, sel):
        """Atoms (var, a, w), linear (col, coef) and constant of sum of rates (Mbit/s) over ``sel``."""
        sel = np.asarray(sel)
        if self.equal:
            a = self.snr_unit[sel] * self.p_equal
            if self.relaxed:
                atoms = (self.pi_var[sel], a, self.w[sel])
                const = 0.0
            else:
                atoms = (np.zeros(0, int), np.zeros(0), np.zeros(0))
                const = float(np.sum(self.w[sel] * np.log1p(a)))
        else:
            atoms = (self.p_var[sel], self.snr_unit[sel], self.w[sel])
            const = 0.0
        dcoef = -self.beta[sel] * self.disp[sel] / MBIT
        if self.relaxed:
            lin = (self.pi_var[sel], dcoef)
        else:
            lin = (np.zeros(0, int), np.zeros(0))
            const += float(np.sum(dcoef))
        return atoms, lin, const

    def candidate_rates(self, x):
        """Per-candidate rate in Mbit/s at x (relaxed form, no flooring)."""
        pi = x[self.pi_var] if self.relaxed else np.ones(self.nc)
        if self.equal:
            snr = self.snr_unit * self.p_equal * pi
        else:
            snr = self.snr_unit * x[self.p_var]
        return self.w * np.log1p(snr) - self.beta * self.disp * pi / MBIT

    def power(self, x):
        if self.equal:
            pi = x[self.pi_var] if self.relaxed else np.ones(self.nc)
            return pi * self.p_equal
        return x[self.p_var]

    def pis(self, x):
        return x[self.pi_var] if self.relaxed else np.ones(self.nc)


class _Builder:
    def __init__(self, nv):
        self.nv = nv
        self.G = ([], [], [])
        self.h = []
        self.D = ([], [], [])
        self.e = []
        self.atoms = ([], [], [], [])

    def le(self, cols, vals, rhs):
        r = len(self.h)
        self.G[0].append(np.full(len(cols), r))
        self.G[1].append(np.asarray(cols))
        self.G[2].append(np.asarray(vals, dtype=float))
        self.h.append(rhs)

    def le_many(self, rows, cols, vals, rhs):
        base = len(self.h)
        self.G[0].append(base + np.asarray(rows))
        self.G[1].append(np.asarray(cols))
        self.G[2].append(np.asarray(vals, dtype=float))
        self.h.extend(list(np.asarray(rhs, dtype=float)))

    def ge(self, atoms, lin, rhs):
        r = len(self.e)
        idx, a, w = atoms
        self.atoms[0].append(np.full(len(idx), r))
        self.atoms[1].append(np.asarray(idx))
        self.atoms[2].append(np.asarray(a, dtype=float))
        self.atoms[3].append(np.asarray(w, dtype=float))
        cols, vals = lin
        self.D[0].append(np.full(len(cols), r))
        self.D[1].append(np.asarray(cols))
        self.D[2].append(np.asarray(vals, dtype=float))
        self.e.append(rhs)

    @staticmethod
    def _cat(parts, dtype=float):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    def program(self, lb, ub, c, obj_atoms, pairs):
        nv = self.nv
        G = sp.csr_matrix((self._cat(self.G[2]), (self._cat(self.G[0], int), self._cat(self.G[1], int))),
                          shape=(len(self.h), nv))
        D = sp.csr_matrix((self._cat(self.D[2]), (self._cat(self.D[0], int), self._cat(self.D[1], int))),
                          shape=(len(self.e), nv))
        return convex.ConvexProgram(
            nv, lb, ub, c, obj_atoms[0], obj_atoms[1], obj_atoms[2], G, np.array(self.h, dtype=float),
            self._cat(self.atoms[0], int), self._cat(self.atoms[1], int), self._cat(self.atoms[2]),
            self._cat(self.atoms[3]), D, np.array(self.e, dtype=float), pairs)


def build_ssp2(inp: SsspInputs, objective: str, x_lin, layout: _Layout = None, fixed=None, qos=True):
    """Concave program of one SCA iteration, linearized at ``x_lin``.

    Returns (program, layout, penalty constant).  The program's optimal value
    plus the constant is the SCA objective of the iteration.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    for grid in (inp.embb, inp.urllc):
        if len(grid.users) and grid.num_rbs == 0:
            raise InfeasibleProblem(f"{grid.name} part has no resource blocks")
    L = layout or _Layout(inp, objective, fixed, qos)
    nv, nc = L.nv, L.nc
    x_lin = np.asarray(x_lin, dtype=float)
    B = _Builder(nv)
    lb = np.zeros(nv)
    ub = np.full(nv, np.inf)
    c = np.zeros(nv)
    pmax = inp.p_max
    if L.relaxed:
        ub[L.pi_var] = 1.0
    if not L.equal:
        cap = inp.p_budget.min(axis=1)[L.m]
        ub[L.p_var] = np.minimum(pmax, cap)
        if not L.relaxed:
            lb[L.p_var] = L.floor_p
    pairs = None
    if L.relaxed and not L.equal:
        # big-M coupling p <= pi*Pmax and the uRLLC SNR floor floor*pi <= p, both local to (pi, p)
        r = np.arange(nc)
        B.le_many(np.concatenate([r, r]), np.concatenate([L.p_var, L.pi_var]),
                  np.concatenate([np.ones(nc), -np.full(nc, pmax)]), np.zeros(nc))
        ur = np.flatnonzero(L.s == 1)
        if len(ur):
            r = np.arange(len(ur))
            B.le_many(np.concatenate([r, r]), np.concatenate([L.pi_var[ur], L.p_var[ur]]),
                      np.concatenate([L.floor_p[ur], -np.ones(len(ur))]), np.zeros(len(ur)))
        pairs = np.stack([L.pi_var, L.p_var], axis=1)
    if L.relaxed and nc:
        # orthogonality per (slice, tick, RU, RB)
        nk = int(L.rb_key.max()) + 1
        B.le_many(L.rb_key, L.pi_var, np.ones(nc), np.ones(nk))
    # per-RU power budget at each uRLLC tick; eMBB power is held over all ticks
    T = inp.ticks
    if nc:
        emb = np.flatnonzero(L.s == 0)
        urc = np.flatnonzero(L.s == 1)
        rows = np.concatenate([np.repeat(L.m[emb] * T, T) + np.tile(np.arange(T), len(emb)),
                               L.m[urc] * T + L.k[urc]])
        cand = np.concatenate([np.repeat(emb, T), urc])
        if L.equal:
            if L.relaxed:
                B.le_many(rows, L.pi_var[cand], np.full(len(cand), L.p_equal), inp.p_budget.ravel())
            else:
                # fixed equal powers: a constant row per (RU, tick), violated only if over budget
                B.le_many(np.zeros(0, int), np.zeros(0, int), np.zeros(0), inp.p_budget.ravel()
                          - np.bincount(rows, np.full(len(cand), L.p_equal), minlength=inp.num_rus * T))
        else:
            B.le_many(rows, L.p_var[cand], np.ones(len(cand)), inp.p_budget.ravel())
        # fronthaul cap with the tangent upper bound of the rate
        if L.equal:
            var, a = (L.pi_var, L.snr_unit * L.p_equal) if L.relaxed else (None, None)
        else:
            var, a = L.p_var, L.snr_unit
        const = np.zeros(inp.num_rus * T)
        if var is not None:
            x0 = x_lin[var]
            base = L.w * np.log1p(a * x0)
            slope = L.w * a / (1 + a * x0)
            coef_c = slope[cand]
            const_c = (base - slope * x0)[cand]
            cols = [var[cand]]
            vals = [coef_c]
        else:
            const_c = (L.w * np.log1p(L.snr_unit * L.p_equal))[cand]
            cols, vals = [], []
        if L.relaxed:
            cols.append(L.pi_var[cand])
            vals.append(-(L.beta * L.disp / MBIT)[cand])
            rr = np.concatenate([rows, rows])
        else:
            const_c = const_c - (L.beta * L.disp / MBIT)[cand]
            rr = rows if var is not None else np.zeros(0, int)
        const = np.bincount(rows, const_c, minlength=inp.num_rus * T)
        B.le_many(rr, np.concatenate(cols) if cols else np.zeros(0, int),
                  np.concatenate(vals) if vals else np.zeros(0),
                  np.full(inp.num_rus * T, inp.fh_capacity / MBIT) - const)
    if qos and nc:
        # eMBB rate share per user
        req = inp.rate_requirement() / MBIT
        for j in np.flatnonzero(req > 0):
            sel = np.flatnonzero((L.s == 0) & (L.j == j))
            atoms, lin, const = L.rate_parts(sel)
            B.ge(atoms, lin, req[j] - const)
        # uRLLC rate share per (RU, user)
        if len(inp.urllc.users):
            psi = inp.psi_requirement() / MBIT
            for m, j in np.argwhere(psi > 0):
                sel = np.flatnonzero((L.s == 1) & (L.m == m) & (L.j == j))
                atoms, lin, const = L.rate_parts(sel)
                B.ge(atoms, lin, psi[m, j] - const)
    elif qos and not nc:
        if np.any(inp.rate_requirement() > 0) or (len(inp.urllc.users) and np.any(inp.psi_requirement() > 0)):
            B.ge(((), (), ()), ((), ()), 1.0)      # unsatisfiable marker row
    # queue-cap forecast: z_mu >= q + a - served, z >= 0, sum_u z_mu <= Q_max
    if len(L.zpairs):
        users_of = {0: inp.embb.users, 1: inp.urllc.users}
        emb_set = set(inp.embb.users.tolist())
        for zi, (m, u) in enumerate(L.zpairs):
            s = 0 if u in emb_set else 1
            j = int(np.flatnonzero(users_of[s] == u)[0])
            sel = np.flatnonzero((L.s == s) & (L.m == m) & (L.j == j))
            atoms, lin, const = L.rate_parts(sel)
            scale = 125.0 * (inp.embb.delta if s == 0 else inp.urllc.delta) * inp.hold_windows  # Mbit/s * s -> KB
            idx, a, w = atoms
            B.ge((idx, a, np.asarray(w) * scale),
                 (np.append(lin[0], L.z_var[zi]), np.append(np.asarray(lin[1]) * scale, 1.0)),
                 L.q_need[m, u] / KB - const * scale)
        rows = L.zpairs[:, 0]
        if L.elastic:
            B.le_many(np.concatenate([rows, np.arange(inp.num_rus)]), np.concatenate([L.z_var, L.v_var]),
                      np.concatenate([np.ones(len(rows)), -np.ones(inp.num_rus)]), np.full(inp.num_rus, inp.q_max / KB))
            c[L.v_var] = -OVERFLOW_WEIGHT
        else:
            B.le_many(rows, L.z_var, np.ones(len(rows)), np.full(inp.num_rus, inp.q_max / KB))
    # latency epigraph for P2: rate_{m,u,k} >= rho * bits_{m,u} (rho in 1/ms)
    if L.rho_var >= 0:
        for m, j in np.argwhere(L.lat > 0):
            for k in range(inp.urllc.ticks):
                sel = np.flatnonzero((L.s == 1) & (L.m == m) & (L.j == j) & (L.k == k))
                atoms, lin, const = L.rate_parts(sel)
                B.ge(atoms, (np.append(lin[0], L.rho_var), np.append(lin[1], -L.lat[m, j] * 1e3 / MBIT)), -const)
    # objective
    obj_atoms = (np.zeros(0, int), np.zeros(0), np.zeros(0))
    obj_const = 0.0
    if objective == "P1":
        emb = np.flatnonzero(L.s == 0)
        atoms, lin, const = L.rate_parts(emb)
        obj_atoms = atoms
        np.add.at(c, lin[0], lin[1])
        obj_const += const
    else:
        c[L.rho_var] = 1.0
    pen_const = 0.0
    if L.relaxed and nc:
        pj = np.clip(x_lin[L.pi_var], 0.0, 1.0)
        c[L.pi_var] += inp.omega * (2 * pj - 1)
        pen_const = -inp.omega * float(np.sum(pj * pj))
    prog = B.program(lb, ub, c, obj_atoms, pairs)
    return prog, L, pen_const + obj_const


# --------------------------------------------------------------------------
# initial points


def _greedy_assignment(inp: SsspInputs, L: _Layout, objective: str) -> np.ndarray:
    """Binary candidate mask: QoS guarantees first, then best channel per RB."""
    assigned = np.zeros(L.nc, dtype=bool)
    taken = np.zeros(int(L.rb_key.max()) + 1 if L.nc else 0, dtype=bool)
    nominal = inp.p_max / max(inp.embb.num_rbs + inp.urllc.num_rbs, 1)
    est = L.w * np.log1p(L.snr_unit * nominal)             # Mbit/s per candidate

    def give(sel):
        sel = sel[~taken[L.rb_key[sel]]]
        if len(sel) == 0:
            return -1
        c = sel[np.argmax(L.g[sel])]
        assigned[c] = True
        taken[L.rb_key[c]] = True
        return c

    prev = inp.warm_start
    if inp.warm_mode == "previous" and prev is not None:
        for c in np.flatnonzero(_previous_mask(prev, L)):
            if not taken[L.rb_key[c]]:
                assigned[c] = True
                taken[L.rb_key[c]] = True
    # eMBB users owed rate: one RB on their strongest RU, weakest users first
    req = inp.rate_requirement()
    emb_users = np.flatnonzero(req > 0)
    order = sorted(emb_users, key=lambda j: float(np.max(L.g[(L.s == 0) & (L.j == j)], initial=0.0)))
    for j in order:
        if np.any(assigned & (L.s == 0) & (L.j == j)):
            continue
        give(np.flatnonzero((L.s == 0) & (L.j == j)))
    # uRLLC users with traffic on an RU: one RB per tick
    if len(inp.urllc.users):
        need = (inp.psi_requirement() > 0) | (inp.latency_bits() > 0)
        for m, j in np.argwhere(need):
            for k in range(inp.urllc.ticks):
                sel = np.flatnonzero((L.s == 1) & (L.m == m) & (L.j == j) & (L.k == k))
                if not np.any(assigned[sel]):
                    give(sel)
    # backlog: keep each RU's forecast within half the buffer
    q_need = L.q_need
    for m in range(inp.num_rus):
        emb_u = inp.embb.users
        backlog = {j: q_need[m, u] for j, u in enumerate(emb_u) if q_need[m, u] > 0}
        for j in backlog:
            sel = np.flatnonzero(assigned & (L.s == 0) & (L.m == m) & (L.j == j))
            backlog[j] -= float(np.sum(est[sel])) * 125.0 * inp.embb.delta * inp.hold_windows * KB
        total = float(np.sum(q_need[m]))
        while total > 0.5 * inp.q_max and backlog:
            j = max(backlog, key=backlog.get)
            if backlog[j] <= 0:
                break
            c = give(np.flatnonzero((L.s == 0) & (L.m == m) & (L.j == j)))
            if c < 0:
                backlog.pop(j)
                continue
            served = est[c] * 125.0 * inp.embb.delta * inp.hold_windows * KB
            backlog[j] -= served
            total -= served
    # remaining eMBB RBs to the strongest candidate
    for key in np.unique(L.rb_key[L.s == 0]):
        if not taken[key]:
            give(np.flatnonzero((L.rb_key == key) & (L.s == 0)))
    # P2: spread the remaining uRLLC RBs to the user with the largest latency
    if objective == "P2" and len(inp.urllc.users):
        lat = inp.latency_bits()
        for m in range(inp.num_rus):
            for k in range(inp.urllc.ticks):
                while True:
                    free = np.flatnonzero((L.s == 1) & (L.m == m) & (L.k == k) & ~taken[L.rb_key])
                    if len(free) == 0:
                        break
                    users = [j for j in np.unique(L.j[free]) if lat[m, j] > 0]
                    if not users:
                        break
                    def latency(j):
                        got = np.sum(est[assigned & (L.s == 1) & (L.m == m) & (L.k == k) & (L.j == j)])
                        return lat[m, j] / max(got, 1e-12)
                    j = max(users, key=latency)
                    give(free[L.j[free] == j])
    return assigned


def _previous_mask(prev: Allocation, L: _Layout) -> np.ndarray:
    mask = np.zeros(L.nc, dtype=bool)
    e = L.s == 0
    if prev.pi_embb.shape == (L.inp.num_rus, len(L.inp.embb.users), L.inp.embb.num_rbs):
        mask[e] = prev.pi_embb[L.m[e], L.j[e], L.f[e]] > 0.5
    u = L.s == 1
    if prev.pi_urllc.shape[1:] == (L.inp.num_rus, len(L.inp.urllc.users), L.inp.urllc.num_rbs):
        kk = np.minimum(L.k[u], prev.pi_urllc.shape[0] - 1)
        mask[u] = prev.pi_urllc[kk, L.m[u], L.j[u], L.f[u]] > 0.5
    return mask


def _initial_point(inp: SsspInputs, L: _Layout, assigned: np.ndarray, objective: str,
                   power_hint=None) -> np.ndarray:
    """Interior point around a binary assignment; QoS rows may still be violated."""
    x = np.zeros(L.nv)
    nc = L.nc
    T = inp.ticks
    per_rb = np.bincount(L.rb_key, minlength=int(L.rb_key.max()) + 1 if nc else 0) if nc else np.zeros(0)
    if L.relaxed and nc:
        small = 1e-3 / per_rb[L.rb_key]
        pi = np.where(assigned, 1.0 - 2e-3, small)
        x[L.pi_var] = pi
    else:
        pi = np.ones(nc)
    if not L.equal and nc:
        p = np.zeros(nc)
        pmax = inp.p_max
        idle = ~assigned
        # idle candidates sit strictly between the floor and the big-M line
        p[idle] = pi[idle] * 0.5 * (L.floor_p[idle] + min(pmax, 1.0) * 1e-3 + pmax) * 1e-2
        p[idle] = np.clip(p[idle], L.floor_p[idle] * pi[idle] * (1 + 1e-3) + 1e-15, pi[idle] * pmax * 0.999)
        for m in range(inp.num_rus):
            budget = float(np.min(inp.p_budget[m]))
            on_m = L.m == m
            idle_use = max(float(np.sum(p[idle & on_m & (L.s == 0)]))
                           + max((float(np.sum(p[idle & on_m & (L.s == 1) & (L.k == k)])) for k in range(T)), default=0.0), 0.0)
            e_act = np.flatnonzero(assigned & on_m & (L.s == 0))
            u_by_k = [np.flatnonzero(assigned & on_m & (L.s == 1) & (L.k == k)) for k in range(T)]
            floors = max((float(np.sum(L.floor_p[u])) for u in u_by_k), default=0.0) * 1.05
            count = len(e_act) + max((len(u) for u in u_by_k), default=0)
            spare = 0.9 * budget - idle_use - floors
            share = spare / count if count else 0.0
            if count and share <= 0:
                share = 0.0
            p[e_act] = share
            for u in u_by_k:
                p[u] = L.floor_p[u] * 1.05 + share
            if power_hint is not None:
                hint = power_hint[on_m & assigned]
                if np.any(np.isfinite(hint)):
                    pass
            # keep away from both the big-M line and zero
            act = np.concatenate([e_act] + u_by_k).astype(int)
            if len(act):
                lo = np.where(L.s[act] == 1, L.floor_p[act] * pi[act] * (1 + 1e-6), 0.0) + 1e-12
                p[act] = np.clip(p[act], lo, pi[act] * pmax * 0.999 if L.relaxed else pmax * 0.999)
        if not L.relaxed:
            p = np.clip(p, L.floor_p * (1 + 1e-6) + 1e-15, None)
        x[L.p_var] = p
    rates = L.candidate_rates(x)
    if len(L.zpairs):
        served = np.zeros(len(L.zpairs))
        pos = {(int(m), int(u)): i for i, (m, u) in enumerate(L.zpairs)}
        gl = np.where(L.s == 0, inp.embb.users[np.minimum(L.j, max(len(inp.embb.users) - 1, 0))] if len(inp.embb.users) else 0,
                      inp.urllc.users[np.minimum(L.j, max(len(inp.urllc.users) - 1, 0))] if len(inp.urllc.users) else 0)
        for c in range(nc):
            i = pos.get((int(L.m[c]), int(gl[c])))
            if i is not None:
                served[i] += rates[c] * 125.0 * L.delta[c] * inp.hold_windows
        need = np.array([L.q_need[m, u] / KB for m, u in L.zpairs])
        zmin = np.maximum(need - served, 0.0)
        z = np.empty_like(zmin)
        for m in range(inp.num_rus):
            sel = L.zpairs[:, 0] == m
            room = inp.q_max / KB - float(np.sum(zmin[sel]))
            z[sel] = zmin[sel] + (max(room, 0.0) / (2 * max(int(sel.sum()), 1)) if room > 0 else 1e-3)
        x[L.z_var] = z
        if L.elastic:
            tot = np.bincount(L.zpairs[:, 0], z, minlength=inp.num_rus)
            x[L.v_var] = np.maximum(tot - inp.q_max / KB, 0.0) + 1.0
    if L.rho_var >= 0:
        lat = L.lat
        best = []
        for m, j in np.argwhere(lat > 0):
            for k in range(inp.urllc.ticks):
                sel = (L.s == 1) & (L.m == m) & (L.j == j) & (L.k == k)
                best.append(float(np.sum(rates[sel])) / (lat[m, j] * 1e3 / MBIT))
        x[L.rho_var] = max(0.5 * min(best), 1e-6) if best else 1.0
    return x


# --------------------------------------------------------------------------
# SCA loop


@dataclass
class _Stage:
    x: np.ndarray
    trace: list
    status: str
    iterations: int
    phase1: int


def _sca(inp, objective, L, x0, qos=True, fixed=None, t_warm=1e3) -> _Stage:
    x = x0
    trace = []
    status = convex.OPTIMAL
    phase1 = 0
    prev = None
    for it in range(inp.j_max):
        prog, _, const = build_ssp2(inp, objective, x, layout=L, fixed=fixed, qos=qos)
        rep = convex.solve(prog, warm_start=x, t0=t_warm if it else None)
        phase1 += int(rep.phase1)
        if rep.status == convex.INFEASIBLE:
            return _Stage(x, trace, convex.INFEASIBLE, it + 1, phase1)
        xi = rep.objective + const
        if prev is not None and xi < prev:
            # the solver could not improve on the tangent point: converged to within its tolerance
            trace.append(prev)
            return _Stage(x, trace, status, it + 1, phase1)
        trace.append(xi)
        x = rep.x
        if rep.status != convex.OPTIMAL:
            status = rep.status
        if prev is not None and abs(xi - prev) <= inp.epsilon:
            return _Stage(x, trace, status, it + 1, phase1)
        prev = xi
        if not L.relaxed and L.equal:
            break
    return _Stage(x, trace, status if len(trace) < inp.j_max else convex.MAX_ITERS, len(trace), phase1)


def _round(L: _Layout, x) -> np.ndarray:
    pi = x[L.pi_var]
    r = np.floor(pi + 0.5) > 0
    # at most one winner per RB even on exact ties
    order = np.lexsort((-pi, L.rb_key))
    seen = np.zeros(int(L.rb_key.max()) + 1 if L.nc else 0, dtype=bool)
    keep = np.zeros(L.nc, dtype=bool)
    for c in order:
        if r[c] and not seen[L.rb_key[c]]:
            keep[c] = True
            seen[L.rb_key[c]] = True
    return keep


def _to_allocation(inp: SsspInputs, L: _Layout, x, pi_values=None) -> Allocation:
    M = inp.num_rus
    e, u = inp.embb, inp.urllc
    pi_e = np.zeros((M, len(e.users), e.num_rbs))
    p_e = np.zeros_like(pi_e)
    pi_u = np.zeros((u.ticks, M, len(u.users), u.num_rbs))
    p_u = np.zeros_like(pi_u)
    if L.nc:
        pi = L.pis(x) if pi_values is None else pi_values
        p = L.power(x)
        es = L.s == 0
        pi_e[L.m[es], L.j[es], L.f[es]] = pi[es]
        p_e[L.m[es], L.j[es], L.f[es]] = p[es]
        us = L.s == 1
        pi_u[L.k[us], L.m[us], L.j[us], L.f[us]] = pi[us]
        p_u[L.k[us], L.m[us], L.j[us], L.f[us]] = p[us]
    return Allocation(pi_e, p_e, pi_u, p_u)


def _solve_fixed(inp, objective, assigned_keys, qos=True):
    L = _Layout(inp, objective, fixed=assigned_keys, qos=qos)
    if L.nc == 0 and objective == "P2":
        return L, None
    x0 = _initial_point(inp, L, np.ones(L.nc, dtype=bool), objective)
    st = _sca(inp, objective, L, x0, qos=qos, fixed=assigned_keys)
    return L, st


def solve_sssp(inp: SsspInputs, objective: str = "P1") -> Allocation:
    """Penalty-relaxed SCA, rounding, and the fixed-assignment re-solve."""
    L = _Layout(inp, objective)
    assigned = _greedy_assignment(inp, L, objective)
    x0 = _initial_point(inp, L, assigned, objective)
    relaxed = _sca(inp, objective, L, x0)
    status = "optimal"
    qos = True
    if relaxed.status == convex.INFEASIBLE and inp.queue_constraint:
        # first let the buffer cap overflow at a price, so the schedule still drains what it can
        status = "infeasible"
        qos = "elastic"
        L = _Layout(inp, objective, qos=qos)
        x0 = _initial_point(inp, L, assigned, objective)
        relaxed = _sca(inp, objective, L, x0, qos=qos)
    if relaxed.status == convex.INFEASIBLE:
        # QoS shares cannot be met this TTI; keep the physical constraints only
        status = "infeasible"
        qos = False
        L = _Layout(inp, objective, qos=False)
        x0 = _initial_point(inp, L, assigned, objective)
        relaxed = _sca(inp, objective, L, x0, qos=False)
    keep = _round(L, relaxed.x) if L.nc else np.zeros(0, dtype=bool)
    keys = L.key()[keep]
    Lf, fixed = _solve_fixed(inp, objective, keys, qos)
    repairs = 0
    if fixed is not None and fixed.status == convex.INFEASIBLE and qos is True:
        # release the uRLLC assignments with the least routed traffic, one at a time
        lam = inp.demand
        ur_rows = np.flatnonzero(Lf.s == 1)
        users = inp.urllc.users[Lf.j[ur_rows]] if len(ur_rows) else np.zeros(0, dtype=int)
        weight = inp.plan.flow_split[Lf.m[ur_rows], users] * lam[users]
        order = ur_rows[np.argsort(weight, kind="stable")]
        release = Lf.key()[order]
        current = keys
        for row in release[: 2 * inp.num_rus]:
            current = current[~np.all(current == row, axis=1)]
            repairs += 1
            Lf, fixed = _solve_fixed(inp, objective, current, qos)
            if fixed is not None and fixed.status != convex.INFEASIBLE:
                status = "repaired"
                break
        if fixed is None or fixed.status == convex.INFEASIBLE:
            status = "infeasible"
            Lf, fixed = _solve_fixed(inp, objective, keys, qos=False)
    elif fixed is not None and fixed.status == convex.INFEASIBLE:
        status = "infeasible"
        Lf, fixed = _solve_fixed(inp, objective, keys, qos=False)
    if status == "infeasible" and qos == "elastic" and fixed is not None and fixed.status != convex.INFEASIBLE:
        # no overflow needed after all: the first attempt failed on numerics only
        if float(np.max(fixed.x[Lf.v_var], initial=0.0)) <= 1e-6:
            status = "optimal"
    if fixed is None:
        alloc = _to_allocation(inp, Lf, np.zeros(Lf.nv))
        fixed_trace, it2 = [], 0
    else:
        alloc = _to_allocation(inp, Lf, fixed.x)
        fixed_trace, it2 = fixed.trace, fixed.iterations
    alloc.trace = relaxed.trace
    alloc.fixed_trace = fixed_trace
    alloc.iterations = relaxed.iterations
    alloc.status = status
    alloc.repairs = repairs
    alloc.objective = fixed_trace[-1] if fixed_trace else math.nan
    alloc.relaxed_penalty = penalty(np.clip(relaxed.x[L.pi_var], 0, 1)) if (L.relaxed and L.nc) else 0.0
    alloc.phase1 = relaxed.phase1 + (fixed.phase1 if fixed is not None else 0)
    return alloc


# --------------------------------------------------------------------------
# achieved rates of an allocation


def allocation_rates(inp: SsspInputs, alloc: Allocation):
    """(eMBB rates (M, U_em), uRLLC rates (ticks, M, U_ur)) in bit/s with the exact rate formulas."""
    e, u = inp.embb, inp.urllc
    r_e = np.zeros((inp.num_rus, len(e.users)))
    if len(e.users) and e.num_rbs:
        g = e.gains[0]
        r_e = e.beta * np.sum(np.log2(1 + alloc.p_embb * g / inp.n0), axis=2)
    r_u = np.zeros((max(u.ticks, 1), inp.num_rus, len(u.users)))
    if len(u.users) and u.num_rbs:
        snr = alloc.p_urllc * u.gains / inp.n0
        per = np.maximum(u.beta * (np.log2(1 + snr) - alloc.pi_urllc * u.dispersion), 0.0)
        r_u = per.sum(axis=3)
    return r_e, r_u


# --------------------------------------------------------------------------
# benchmark schemes


def scheme_flow_split(scheme: str, flow_split, large_scale):
    """Flow split a scheme routes traffic with."""
    M, U = np.shape(flow_split)
    if scheme == "EFSD":
        return np.full((M, U), 1.0 / M)
    if scheme == "SCUP":
        best = np.argmax(large_scale, axis=0)
        phi = np.zeros((M, U))
        phi[best, np.arange(U)] = 1.0
        return phi
    return np.asarray(flow_split, dtype=float)


def _merge(a: Allocation, b: Allocation) -> Allocation:
    out = replace(b)
    out.pi_urllc, out.p_urllc = a.pi_urllc, a.p_urllc
    out.trace = a.trace + b.trace
    out.fixed_trace = a.fixed_trace + b.fixed_trace
    out.iterations = a.iterations + b.iterations
    out.repairs = a.repairs + b.repairs
    out.phase1 = a.phase1 + b.phase1
    bad = [s for s in (a.status, b.status) if s != "optimal"]
    out.status = "infeasible" if "infeasible" in bad else (bad[0] if bad else "optimal")
    return out


def evaluate_schemes(scheme: str, inputs: SsspInputs, objective: str = "P1",
                     large_scale=None) -> Allocation:
    """Allocation of one window under a benchmark scheme's restriction."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    inp = replace(inputs)
    M = inp.num_rus
    if scheme == "FIX-NUM":
        if inp.embb.numerology.rb_bandwidth != inp.urllc.numerology.rb_bandwidth or inp.embb.delta != inp.urllc.delta:
            raise ValueError("fixed numerology needs one RB grid for both slices")
    if scheme == "EFSD":
        inp.plan = replace(inp.plan, flow_split=np.full_like(inp.plan.flow_split, 1.0 / M))
    if scheme == "PKTD":
        inp.use_true_demand = True
    if scheme == "EPA":
        inp.equal_power = True
    if scheme != "SCUP":
        return solve_sssp(inp, objective)
    if large_scale is None:
        raise ValueError("single connectivity needs the large-scale gains")
    phi = scheme_flow_split("SCUP", inp.plan.flow_split, large_scale)
    inp.plan = replace(inp.plan, flow_split=phi)
    inp.allowed = phi > 0
    # uRLLC first, within its bandwidth-proportional power share
    f1, f2 = inp.embb.num_rbs, inp.urllc.num_rbs
    share = f2 / max(f1 + f2, 1)
    empty_e = SliceGrid("embb", inp.embb.numerology, np.zeros(0, int), np.zeros((1, M, 0, f1)))
    empty_u = SliceGrid("urllc", inp.urllc.numerology, np.zeros(0, int), np.zeros((inp.urllc.ticks, M, 0, f2)),
                        inp.urllc.dispersion)
    stage1 = replace(inp, embb=empty_e, r_done=np.zeros(0), p_budget=inp.p_budget * share)
    lat = stage1.latency_bits()
    obj1 = "P2" if (len(inp.urllc.users) and np.any(lat > 0)) else "P1"
    if len(inp.urllc.users):
        a1 = solve_sssp(stage1, obj1)
    else:
        a1 = Allocation(np.zeros((M, 0, f1)), np.zeros((M, 0, f1)), np.zeros((inp.urllc.ticks, M, 0, f2)),
                        np.zeros((inp.urllc.ticks, M, 0, f2)))
    used = a1.p_urllc.sum(axis=(2, 3)).T if a1.p_urllc.size else np.zeros((M, inp.ticks))
    stage2 = replace(inp, urllc=empty_u, psi_done=np.zeros((M, 0)), p_budget=np.maximum(inp.p_budget - used, 0.0))
    a2 = solve_sssp(stage2, "P1")
    full = _merge(a1, a2)
    full.pi_embb, full.p_embb = a2.pi_embb, a2.p_embb
    full.pi_urllc = a1.pi_urllc if a1.pi_urllc.shape[2] else np.zeros((inp.urllc.ticks, M, len(inp.urllc.users), f2))
    full.p_urllc = a1.p_urllc if a1.p_urllc.shape[2] else np.zeros_like(full.pi_urllc)
    return full
