"""Acceptance criteria, one test per criterion.

Each test appends a PASS/FAIL line to the run summary and asserts the
criterion at its stated tolerance.  Scheme comparisons run on the desk
profile in configs/desk.cfg with shortened episodes (see the README).
"""
import math
import os
import time

import numpy as np
import pytest
from scipy import stats

from oransteer import convex
from oransteer import harness as H
from oransteer import predictor as pred
from oransteer.config import RunConfig, load_config
from oransteer.rates import embb_rate
from oransteer.scheduler import solve_sssp

from conftest import ACCEPTANCE
from oracles import brute_force_p1, brute_force_p1_exact, grid_max, make_inputs, random_two_var

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DESK = os.path.join(ROOT, "configs", "desk.cfg")
SWEEP_FRAMES = 2          # frames per episode in the scheme sweeps
ORDER_SEEDS = 20
OTHER_SEEDS = 5


def report(num, name, ok, detail):
    ACCEPTANCE.append(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {name}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def desk():
    cfg = load_config(DESK).with_overrides(sim__frames=SWEEP_FRAMES)
    return cfg, H.prepare_forecaster(cfg)


@pytest.fixture(scope="module")
def p1_at_30(desk, tmp_path_factory):
    cfg, fc = desk
    out = str(tmp_path_factory.mktemp("p1"))
    return H.run_sweep(cfg, pmax_list=[30.0], seeds=range(ORDER_SEEDS), objective="P1", out_dir=out,
                       forecaster=fc).summaries


def test_c01_predictor_accuracy():
    cfg = RunConfig().validate()
    t0 = time.time()
    fc = H.prepare_forecaster(cfg)
    dt = time.time() - t0
    mse = fc.result.val_mse
    per = fc.result.val_per_user
    report(1, "predictor validation MSE <= 0.01 in <= 10 min",
           mse <= 0.01 and dt <= 600,
           f"MSE {mse:.5f} (per-user {per.min():.4f}..{per.max():.4f}), {dt:.0f} s")


def test_c02_gradient_oracle():
    rng = np.random.default_rng(20)
    p = pred.init_params(4, 4, hidden=10, layers=2, seed=1)
    X, Y = rng.random((6, 10, 4)), rng.random((6, 4))
    _, grads = pred.loss_and_grad(p, X, Y)
    flat = [*grads[0], *grads[1], grads[2], grads[3]]
    arrs = p.arrays()
    worst = 0.0
    for _ in range(40):
        j = int(rng.integers(len(arrs)))
        idx = tuple(int(rng.integers(s)) for s in arrs[j].shape)
        old = arrs[j][idx]
        arrs[j][idx] = old + 1e-5
        lp = pred.loss_and_grad(p, X, Y)[0]
        arrs[j][idx] = old - 1e-5
        lm = pred.loss_and_grad(p, X, Y)[0]
        arrs[j][idx] = old
        fd = (lp - lm) / 2e-5
        worst = max(worst, abs(fd - flat[j][idx]) / max(abs(fd), abs(flat[j][idx]), 1e-7))
    report(2, "BPTT vs central differences (40 coordinates)", worst <= 1e-4, f"worst relative error {worst:.2e}")


@pytest.fixture(scope="module")
def solves_at_30(desk):
    cfg, fc = desk
    draws = H._Draws(cfg, 0, 30.0)
    got = []
    H.run_scheme_episode(cfg, draws, fc, "JIFDR", "P1", 30.0, trace_sink=got.append)
    return cfg, got


def test_c03_sca_monotone_convergence(solves_at_30):
    cfg, allocs = solves_at_30
    bad_mono = bad_conv = 0
    iters = []
    for a in allocs:
        tr = np.asarray(a.trace)
        if np.any(np.diff(tr) < -1e-9):
            bad_mono += 1
        ok = len(tr) <= 30 and (len(tr) < 2 or abs(tr[-1] - tr[-2]) <= 1e-4)
        bad_conv += not ok
        iters.append(len(tr))
    report(3, "SCA trace non-decreasing and converged within 30 iterations",
           bad_mono == 0 and bad_conv == 0 and len(allocs) > 0,
           f"{len(allocs)} solves, {bad_mono} non-monotone, {bad_conv} unconverged, "
           f"iterations mean {np.mean(iters):.1f} max {max(iters)}")


def test_c04_penalty_tightness(solves_at_30):
    cfg, allocs = solves_at_30
    conv = [a for a in allocs if a.iterations < cfg.solver.j_max and a.status in H.FEASIBLE]
    tight = [a for a in conv if a.binary and a.penalty() == 0.0]
    report(4, "converged solves end binary with zero penalty", len(conv) > 0 and len(tight) == len(conv),
           f"{len(tight)}/{len(conv)} converged solves tight")


def test_c05_brute_force_oracle():
    rng = np.random.default_rng(505)
    gaps, low = [], []
    for _ in range(50):
        inp = make_inputs(rng)
        alloc = solve_sssp(inp, "P1")
        got = embb_rate(alloc.p_embb.ravel(), inp.embb.gains[0].ravel(), inp.embb.beta)
        exact = brute_force_p1_exact(inp)
        grid, _ = brute_force_p1(inp, (0.0, 0.5 * inp.p_max, inp.p_max))
        gaps.append(abs(got - exact) / exact)
        low.append(got >= 0.98 * grid)
    worst = max(gaps)
    report(5, "tiny instance within 2% of enumeration (50 draws)", worst <= 0.02 and all(low),
           f"worst gap to enumerated optimum {100 * worst:.3f}%, "
           f"{sum(low)}/50 at or above the 3-level power grid optimum")


def test_c06_scheme_ordering(p1_at_30):
    thr = {}
    for s in p1_at_30:
        thr.setdefault(s.scheme, {})[s.seed] = s.throughput
    parts, ok = [], True
    for other in ("FIX-NUM", "SCUP", "EFSD", "EPA"):
        seeds = sorted(set(thr["JIFDR"]) & set(thr[other]))
        d = np.array([thr["JIFDR"][k] - thr[other][k] for k in seeds])
        lo = d.mean() - stats.t.ppf(0.975, len(d) - 1) * d.std(ddof=1) / math.sqrt(len(d))
        gain = d.mean() / np.mean([thr[other][k] for k in seeds])
        ok &= bool(lo > 0) and len(seeds) >= 20
        parts.append(f"{other} +{100 * gain:.1f}% (95% low {lo / 1e6:+.2f} Mbit/s)")
    report(6, f"P1 @30 dBm JIFDR above each benchmark over {ORDER_SEEDS} paired seeds", ok, "; ".join(parts))


def test_c07_prediction_value(desk, p1_at_30, tmp_path):
    cfg, fc = desk
    res = H.run_sweep(cfg, pmax_list=[10.0, 20.0, 40.0, 46.0], seeds=range(OTHER_SEEDS), schemes=["JIFDR", "PKTD"],
                      objective="P1", out_dir=str(tmp_path), forecaster=fc)
    agg = H.aggregate(list(res.summaries) + [s for s in p1_at_30 if s.scheme in ("JIFDR", "PKTD")], "throughput")
    parts, ok = [], True
    for pm in (10.0, 20.0, 30.0, 40.0, 46.0):
        j, p = agg[("JIFDR", pm)][0], agg[("PKTD", pm)][0]
        gap = abs(j - p) / p
        ok &= gap <= 0.10
        parts.append(f"{pm:g} dBm {100 * gap:.1f}%")
    report(7, "JIFDR vs PKTD throughput gap <= 10% at every P_max", ok, ", ".join(parts))


def test_c08_latency_objective(desk, tmp_path):
    cfg, fc = desk
    res = H.run_sweep(cfg, pmax_list=[30.0, 40.0, 46.0], seeds=range(OTHER_SEEDS), schemes=["JIFDR", "SCUP", "EFSD"],
                      objective="P2", out_dir=str(tmp_path), forecaster=fc)
    lat = {}
    for s in res.summaries:
        lat[(s.scheme, s.p_max_dbm, s.seed)] = s
    frames = [x for s in res.summaries if s.scheme == "JIFDR" for x in s.frame_latency if math.isfinite(x)]
    within = float(np.mean([x <= cfg.qos.d_urllc for x in frames])) if frames else 0.0
    parts, order_ok = [], True
    for pm in (30.0, 40.0, 46.0):
        for other in ("SCUP", "EFSD"):
            pairs = [(lat[("JIFDR", pm, k)].latency, lat[(other, pm, k)].latency) for k in range(OTHER_SEEDS)]
            pairs = [(a, b) for a, b in pairs if math.isfinite(a) and math.isfinite(b)]
            if not pairs:
                order_ok = False
                parts.append(f"{pm:g}/{other}: no paired feasible seeds")
                continue
            a, b = np.mean(pairs, axis=0)
            order_ok &= bool(a <= b)
            parts.append(f"{pm:g}/{other} {a * 1e3:.3f}<={b * 1e3:.3f} ms")
    report(8, "P2 latency <= 0.5 ms in >= 95% of feasible frames and JIFDR <= SCUP, EFSD",
           within >= 0.95 and order_ok,
           f"{100 * within:.0f}% of {len(frames)} feasible JIFDR frames within budget; " + ", ".join(parts))


def test_c09_queue_drainage(desk):
    cfg, fc = desk
    cfg = cfg.with_overrides(sim__frames=8)
    _, summ = H.run_episode(cfg, fc, seed=0, p_max_dbm=46.0, schemes=["JIFDR"], objective="P1")
    trace = summ[0].queue_trace
    limit = 0.05 * cfg.traffic.q_max
    report(9, "running-mean queue below 5% of Q_max at 46 dBm", min(trace) < limit,
           f"running mean per frame {[round(x) for x in trace]} B, limit {limit:.0f} B")


def test_c10_convex_oracle():
    rng = np.random.default_rng(1010)
    worst_gap = worst_kkt = 0.0
    n_opt = 0
    for _ in range(100):
        prog, data = random_two_var(rng)
        rep = convex.solve(prog)
        ref = grid_max(data)
        worst_gap = max(worst_gap, abs(rep.objective - ref))
        if rep.optimal:
            n_opt += 1
            worst_kkt = max(worst_kkt, rep.kkt_residual)
    report(10, "convex core vs grid search (100 instances)", worst_gap <= 1e-3 and worst_kkt <= 1e-6,
           f"worst objective gap {worst_gap:.2e}, worst KKT {worst_kkt:.2e} over {n_opt} optimal reports")


def test_c11_determinism(desk, tmp_path):
    cfg, fc = desk
    cfg = cfg.with_overrides(sim__frames=1)
    data = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        res = H.run_sweep(cfg, seeds=[0], out_dir=str(out), forecaster=fc)
        data.append(open(res.rows_file, "rb").read())
    rows = data[0].count(b"\n") - 1
    report(11, "same seed gives byte-identical sweep CSV", data[0] == data[1] and rows > 0,
           f"{len(data[0])} bytes, {rows} rows, all schemes and P_max points")
