"""Reference computations shared by unit and acceptance tests.

Everything here is written from the problem definitions directly and uses
none of the package's solver or scheduler internals.
"""
import itertools
import math
import warnings

import numpy as np

from oransteer import convex


def random_two_var(rng):
    """Random concave 2-variable program plus the data the grid oracle needs."""
    a = rng.uniform(0.5, 5.0, 2)
    w = rng.uniform(0.2, 2.0, 2)
    c = rng.uniform(-0.4, 0.1, 2)
    k = rng.uniform(0.5, 2.0)
    h = rng.uniform(0.5, 3.0)
    ub = 2.0
    con = None
    if rng.random() < 0.5:
        # log(1 + a3 x) + log(1 + a4 y) >= e, reachable inside the box
        a3, a4 = rng.uniform(0.5, 3.0, 2)
        e = rng.uniform(0.05, 0.5) * (math.log1p(a3 * min(ub, h)) + math.log1p(a4 * min(ub, h / k))) / 2
        con = (a3, a4, e)
    prog = convex.ConvexProgram(
        2, [0, 0], [ub, ub], c, [0, 1], a, w, [[1.0, k]], [h],
        con_row=None if con is None else [0, 0], con_idx=None if con is None else [0, 1],
        con_a=None if con is None else [con[0], con[1]], con_w=None if con is None else [1.0, 1.0],
        e=None if con is None else [con[2]])
    return prog, dict(a=a, w=w, c=c, k=k, h=h, ub=ub, con=con)


def grid_max(d, step=1e-3, edge_step=1e-5):
    """Best objective over a dense 2-D grid plus fine samples of every boundary curve."""
    a, w, c, k, h, ub, con = (d[x] for x in ("a", "w", "c", "k", "h", "ub", "con"))

    def f(x, y):
        return c[0] * x + c[1] * y + w[0] * np.log1p(a[0] * x) + w[1] * np.log1p(a[1] * y)

    def ok(x, y):
        good = (x >= 0) & (y >= 0) & (x <= ub) & (y <= ub) & (x + k * y <= h + 1e-12)
        if con is not None:
            good &= np.log1p(con[0] * x) + np.log1p(con[1] * y) >= con[2] - 1e-12
        return good

    g = np.arange(0.0, ub + step / 2, step)
    X, Y = np.meshgrid(g, g, indexing="ij")
    best = -math.inf
    v = np.where(ok(X, Y), f(X, Y), -np.inf)
    best = max(best, float(v.max()))
    t = np.arange(0.0, ub + edge_step / 2, edge_step)
    curves = [(t, np.zeros_like(t)), (np.zeros_like(t), t), (t, np.full_like(t, ub)), (np.full_like(t, ub), t),
              (t, (h - t) / k)]
    if con is not None:
        curves.append((t, np.expm1(con[2] - np.log1p(con[0] * t)) / con[1]))
    for x, y in curves:
        y = np.where(np.isfinite(y) & (y >= 0), y, 0.0)
        vals = np.where(ok(x, y), f(x, y), -np.inf)
        best = max(best, float(vals.max()))
    return best


# ---------------------------------------------------------------------------
# brute force for the one-RU, one-plus-one-user schedule


def brute_force_p1(inp, levels):
    """Exhaustive search over binary RB assignments and a power grid.

    Constraints are evaluated from their definitions: power budget per
    tick, no power on unassigned RBs, the uRLLC SNR floor, the eMBB and
    uRLLC rate shares, the fronthaul cap and the one-window queue cap.
    Returns (best eMBB sum rate in bit/s or -inf, number of feasible points).
    """
    e, u = inp.embb, inp.urllc
    assert inp.num_rus == 1 and e.ticks == 1 and u.ticks == 1
    ge, gu = e.gains[0, 0, 0], u.gains[0, 0, 0]
    F1, F2 = len(ge), len(gu)
    n0, pmax = inp.n0, inp.p_max
    r_req = float(inp.rate_requirement()[0])
    psi_req = float(inp.psi_requirement()[0, 0])
    need = inp.queues + inp.arrivals()
    best, count = -math.inf, 0
    for pis in itertools.product((0, 1), repeat=F1 + F2):
        pe_opts = [levels if pis[f] else (0.0,) for f in range(F1)]
        pu_opts = [levels if pis[F1 + f] else (0.0,) for f in range(F2)]
        for pw in itertools.product(*pe_opts, *pu_opts):
            pe, pu = np.array(pw[:F1]), np.array(pw[F1:])
            if pe.sum() + pu.sum() > pmax * (1 + 1e-12):
                continue
            snr_u = pu * gu / n0
            on_u = np.array(pis[F1:], dtype=bool)
            if np.any(snr_u[on_u] < inp.snr_floor):
                continue
            r_e = e.beta * np.sum(np.log2(1 + pe * ge / n0))
            per_u = u.beta * (np.log2(1 + snr_u) - on_u * u.dispersion)
            r_u = float(np.sum(np.maximum(per_u, 0.0)))
            if r_e < r_req * (1 - 1e-9) or r_u < psi_req * (1 - 1e-9):
                continue
            if r_e + r_u > inp.fh_capacity:
                continue
            left = np.maximum(need[0] - np.array([r_e * e.delta, r_u * u.delta]) / 8.0, 0.0)
            if left.sum() > inp.q_max:
                continue
            count += 1
            best = max(best, r_e)
    return best, count


def brute_force_p1_exact(inp, starts=2, seed=0):
    """Enumerate every binary assignment; optimize the powers of each with SLSQP.

    The per-assignment power problem is concave, so a few starts of a
    general-purpose local solver give its optimum.  Returns the best eMBB
    sum rate in bit/s (-inf when no assignment is feasible).
    """
    from scipy.optimize import minimize
    e, u = inp.embb, inp.urllc
    ge, gu = e.gains[0, 0, 0], u.gains[0, 0, 0]
    F1, F2 = len(ge), len(gu)
    n0, P = inp.n0, inp.p_max
    r_req = float(inp.rate_requirement()[0]) / 1e6
    psi_req = float(inp.psi_requirement()[0, 0]) / 1e6
    need = inp.queues + inp.arrivals()
    rng = np.random.default_rng(seed)
    best = -math.inf
    for pis in itertools.product((0, 1), repeat=F1 + F2):
        on_e = np.array(pis[:F1], dtype=bool)
        on_u = np.array(pis[F1:], dtype=bool)
        ne, nu = int(on_e.sum()), int(on_u.sum())
        floor = inp.snr_floor * n0 / gu[on_u] / P
        if floor.sum() > 1:
            continue

        def r_e(x):
            return e.beta * np.sum(np.log2(1 + x[:ne] * P * ge[on_e] / n0)) / 1e6

        def r_u(x):
            per = u.beta * (np.log2(1 + x[ne:] * P * gu[on_u] / n0) - u.dispersion) / 1e6
            return float(np.sum(np.maximum(per, 0.0)))

        cons = [
            {"type": "ineq", "fun": lambda x: 1.0 - np.sum(x)},
            {"type": "ineq", "fun": lambda x: r_e(x) - r_req},
            {"type": "ineq", "fun": lambda x: r_u(x) - psi_req},
            {"type": "ineq", "fun": lambda x: inp.fh_capacity / 1e6 - r_e(x) - r_u(x)},
            {"type": "ineq", "fun": lambda x: inp.q_max - np.sum(np.maximum(
                need[0] - np.array([r_e(x) * e.delta, r_u(x) * u.delta]) * 1e6 / 8.0, 0.0))},
        ]
        bounds = [(0.0, 1.0)] * ne + [(f, 1.0) for f in floor]
        if ne + nu == 0:
            continue
        for _ in range(starts):
            x0 = np.r_[rng.random(ne), floor + rng.random(nu) * (1 - floor)]
            x0 = x0 / max(1.0, x0.sum())
            x0[ne:] = np.maximum(x0[ne:], floor)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = minimize(lambda x: -r_e(x), x0, method="SLSQP", bounds=bounds, constraints=cons,
                               options={"ftol": 1e-12, "maxiter": 500})
            x = np.clip(res.x, [b[0] for b in bounds], [b[1] for b in bounds])
            if all(c["fun"](x) >= -1e-7 for c in cons):
                best = max(best, r_e(x) * 1e6)
    return best


# ---------------------------------------------------------------------------
# instance builders


def make_inputs(rng, M=1, n_em=1, n_ur=1, F1=2, F2=2, ticks=1, p_max=1.0, snr_db=(10.0, 30.0),
                lam_em=20.0, lam_ur=2.5, **kw):
    """SsspInputs with full-power SNRs drawn log-uniformly in ``snr_db``."""
    from oransteer.heuristics import SteeringPlan
    from oransteer.model import build_numerology
    from oransteer.rates import N0
    from oransteer.scheduler import SliceGrid, SsspInputs, urllc_grid
    U = n_em + n_ur
    snr = lambda shape: 10 ** (rng.uniform(*snr_db, shape) / 10)
    g_em = N0 * snr((1, M, n_em, F1)) / p_max
    g_ur = N0 * snr((ticks, M, n_ur, F2)) / p_max
    lam = np.r_[np.full(n_em, lam_em), np.full(n_ur, lam_ur)]
    plan = SteeringPlan(0.5, np.full((M, U), 1.0 / M), lam)
    eg = SliceGrid("embb", build_numerology("embb"), np.arange(n_em), g_em)
    ug = urllc_grid(build_numerology("urllc"), np.arange(n_em, U), g_ur, 1e-3)
    args = dict(windows_left=1, urllc_ticks_left=ticks)
    args.update(kw)
    return SsspInputs(plan, eg, ug, np.zeros((M, U)), p_max, **args)
