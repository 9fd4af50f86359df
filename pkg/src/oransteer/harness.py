"""Episode driver, sweeps and result files.

An episode follows the control loop frame by frame: forecast demand,
split the band, split flows, schedule every eMBB TTI (with its uRLLC
ticks), then advance the queues.  All schemes of one (seed, P_max) point
share the topology, the arrival draws and the channel draws.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import predictor as pred
from .config import RunConfig
from .heuristics import SteeringPlan, bandwidth_split, flow_split, initial_plan
from .model import build_numerology, build_topology, partition_bandwidth, sample_channels
from .rates import LatencyParams, db_to_lin, dbm_to_w, latency_breakdown
from .scheduler import (Allocation, InfeasibleProblem, SliceGrid, SsspInputs, allocation_rates,
                        evaluate_schemes, scheme_flow_split, urllc_grid)
from .traffic import QueueMatrix, demand_matrix, update_queue

log = logging.getLogger(__name__)

FEASIBLE = ("optimal", "repaired")


@dataclass
class MetricsRow:
    frame: int
    tti: int
    numerology: str              # "embb" or "urllc" clock of this row
    scheme: str
    p_max_dbm: float
    embb_throughput: float       # bit/s summed over eMBB users
    urllc_latency: float         # s, worst uRLLC user
    mean_queue: float            # bytes per RU
    sca_iterations: int
    predictor_mse: float         # normalized, this frame
    seed: int
    status: str = "optimal"

    def __post_init__(self):
        # plain Python scalars so CSV and JSON output never carry numpy reprs
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.type == "int":
                setattr(self, f.name, int(v))
            elif f.type == "float":
                setattr(self, f.name, float(v))


ROW_FIELDS = [f.name for f in dataclasses.fields(MetricsRow)]


@dataclass
class EpisodeSummary:
    scheme: str
    p_max_dbm: float
    seed: int
    objective: str
    throughput: float            # mean eMBB sum rate, bit/s
    latency: float               # mean of the per-frame worst latency over feasible frames, s
    latency_ok: float            # share of feasible frames with worst latency within budget
    feasible_frames: float       # share of frames whose windows all solved feasibly
    final_queue: float           # running mean of the per-RU queue at the end, bytes
    queue_trace: list = field(default_factory=list)    # per-frame mean queue
    frame_latency: list = field(default_factory=list)  # per-frame worst latency (inf if infeasible)
    sca_iterations: float = 0.0
    predictor_mse: float = math.nan
    queues: np.ndarray = None    # (M, U) bytes at the end of the episode

    @property
    def infeasible(self) -> bool:
        return self.feasible_frames == 0.0


# --------------------------------------------------------------------------
# forecasting


@dataclass
class Forecaster:
    """Trained LSTM plus normalizer; a constant series skips training."""
    result: pred.TrainResult | None
    constant: np.ndarray | None = None

    def predict(self, history, cap) -> np.ndarray:
        if self.result is None:
            return np.array(self.constant, dtype=float)
        return pred.predict_demand(self.result.params, self.result.normalizer, history, cap)

    def refit(self, series, cfg: RunConfig, seed: int) -> "Forecaster":
        """One extra epoch over the frames seen so far; returns a new forecaster."""
        if self.result is None or len(series) < 10 * cfg.predictor.window:
            return self
        tc = dataclasses.replace(train_config(cfg), epochs=1)
        return Forecaster(pred.train(series, tc, seed, init=self.result))

    def normalized_error(self, predicted, true) -> float:
        if self.result is None:
            return float(np.mean((np.asarray(predicted) - np.asarray(true)) ** 2)) if len(true) else 0.0
        n = self.result.normalizer
        return float(np.mean((n.transform(predicted) - n.transform(true)) ** 2))


def user_means(cfg: RunConfig) -> np.ndarray:
    t = cfg.topology
    return np.r_[np.full(t.num_embb, cfg.traffic.embb_mean), np.full(t.num_urllc, cfg.traffic.urllc_mean)]


def train_config(cfg: RunConfig) -> pred.TrainConfig:
    p = cfg.predictor
    return pred.TrainConfig(window=p.window, epochs=p.epochs, hidden=p.hidden, layers=p.layers,
                            train_fraction=p.train_fraction, dropout=p.dropout,
                            learning_rate=p.learning_rate, batch_size=p.batch_size)


def prepare_forecaster(cfg: RunConfig) -> Forecaster:
    """Train once on a trace drawn apart from every episode seed, or load saved weights."""
    means = user_means(cfg)
    trace = demand_matrix(means, cfg.predictor.trace_frames, seed=cfg.sim.seed + 1_000_003,
                          cap_factor=cfg.traffic.cap_factor)
    if len(means) == 0 or np.all(trace == trace[:1]):
        return Forecaster(None, trace[0] if len(trace) else np.zeros(len(means)))
    path = cfg.predictor.params_file
    if path and os.path.exists(path):
        params, norm = pred.load_params(path)
        if norm is None or params.n_in != len(means):
            raise ValueError(f"{path}: saved weights do not fit {len(means)} users")
        return Forecaster(pred.TrainResult(params, norm, config=train_config(cfg)))
    res = pred.train(trace, train_config(cfg), seed=cfg.sim.seed)
    if path:
        pred.save_params(path, res.params, res.normalizer)
    return Forecaster(res)


# --------------------------------------------------------------------------
# shared draws of one (seed, P_max) point


class _Draws:
    """Topology, arrivals and channels common to every scheme of a point."""

    def __init__(self, cfg: RunConfig, seed: int, p_max_dbm: float):
        t = cfg.topology
        self.cfg = cfg
        self.seed = seed
        self.p_max = float(dbm_to_w(p_max_dbm))
        self.topology = build_topology(t.num_rus, t.num_embb, t.num_urllc, t.antennas, t.cell_radius,
                                       t.ring_radius, self.p_max, cfg.qos.c_fh, cfg.qos.c_mh,
                                       t.min_distance, seed)
        W = cfg.predictor.window
        self.means = user_means(cfg)
        # W frames of history ahead of the episode feed the first forecast
        self.demand = demand_matrix(self.means, cfg.sim.frames + W, seed, cfg.traffic.cap_factor)
        self.window = W
        self._channels = {}

    def true_demand(self, frame: int) -> np.ndarray:
        return self.demand[frame + self.window]

    def history(self, frame: int) -> np.ndarray:
        return self.demand[frame:frame + self.window]

    def channels(self, numerology, frame: int):
        """Gains over the widest possible grid; callers slice their sub-bands."""
        key = (numerology.index, frame)
        if key not in self._channels:
            f_max = int(math.floor(self.cfg.radio.bandwidth / numerology.rb_bandwidth + 1e-9))
            self._channels = {k: v for k, v in self._channels.items() if k[1] == frame}
            self._channels[key] = sample_channels(self.topology, numerology, frame, self.seed, f_max,
                                                  self.cfg.topology.rician_factor)
        return self._channels[key]


# --------------------------------------------------------------------------
# one scheme over one episode


class _SchemeState:
    def __init__(self, scheme: str, M: int, U: int):
        self.scheme = scheme
        self.queues = QueueMatrix(np.zeros((M, U)))
        self.rate_hist = None          # (windows, M, U) achieved rates of the previous frame
        self.prev_phi = None


def _latency_params(cfg: RunConfig) -> LatencyParams:
    q, tr = cfg.qos, cfg.traffic
    ur = build_numerology("urllc", tr.frame_length)
    return LatencyParams(q.mu_cu, q.mu_du, q.c_mh, q.c_fh, tr.z_urllc, tr.z_embb, ur.symbol_time,
                         q.d_urllc, q.processing, q.mh_packet)


def _worst_latency(lat_params, lam, phi, rates_tick, urllc, embb) -> float:
    if len(urllc) == 0 or not np.any(lam[urllc] > 0):
        return 0.0
    out = latency_breakdown(lam, phi, rates_tick, urllc, lat_params, embb)
    return max(b.total for b in out)


def _idle_allocation(inp: SsspInputs) -> Allocation:
    M = inp.num_rus
    e, u = inp.embb, inp.urllc
    pe = np.zeros((M, len(e.users), e.num_rbs))
    pu = np.zeros((u.ticks, M, len(u.users), u.num_rbs))
    return Allocation(pe, pe.copy(), pu, pu.copy(), status="infeasible")


def run_scheme_episode(cfg: RunConfig, draws: _Draws, forecaster: Forecaster, scheme: str,
                       objective: str, p_max_dbm: float, trace_sink=None):
    """Rows of one scheme over the episode, plus its summary."""
    tr, q = cfg.traffic, cfg.qos
    topo = draws.topology
    M, U = topo.num_rus, topo.num_users
    em_users, ur_users = topo.embb_users, topo.urllc_users
    fixed = scheme == "FIX-NUM"
    num_em = build_numerology("fixed" if fixed else "embb", tr.frame_length)
    num_ur = build_numerology("fixed" if fixed else "urllc", tr.frame_length)
    ticks = int(round(num_em.tti / num_ur.tti))
    lat_params = _latency_params(cfg)
    n0 = float(dbm_to_w(cfg.radio.n0_dbm))
    snr_floor = float(db_to_lin(cfg.radio.snr_floor_db))
    cap = tr.cap_factor * draws.means
    # coherence blocks are counted in default eMBB TTIs so every scheme sees the same time scale
    base_tti = build_numerology("embb", tr.frame_length).tti
    block = max(1, int(round(cfg.solver.coherence_windows * base_tti / num_em.tti)))
    arrival_time = tr.frame_length if tr.arrival_clock == "frame" else None
    st = _SchemeState(scheme, M, U)
    rows, frame_lat, queue_trace, iters, mses = [], [], [], [], []
    feasible_frames = 0
    thr_sum, thr_n = 0.0, 0
    running_q, running_n = 0.0, 0
    for frame in range(cfg.sim.frames):
        lam = draws.true_demand(frame)
        lam_hat = lam.copy() if scheme == "PKTD" else forecaster.predict(draws.history(frame), cap)
        if frame == 0:
            plan = initial_plan(M, U, lam_hat)
        else:
            alpha = bandwidth_split(lam_hat, em_users, ur_users, q.tau_embb, q.d_urllc, q.alpha_min, q.alpha_max) \
                if np.any(lam_hat > 0) else 0.5
            phi = flow_split(st.rate_hist) if st.rate_hist is not None else np.full((M, U), 1.0 / M)
            plan = SteeringPlan(alpha, phi, lam_hat, frame)
        mse = forecaster.normalized_error(plan.demand, lam) if scheme != "PKTD" else 0.0
        mses.append(mse)
        part = partition_bandwidth(cfg.radio.bandwidth, plan.alpha, cfg.radio.guard_band,
                                   (num_em.rb_bandwidth, num_ur.rb_bandwidth))
        F1, F2 = part.rb_counts
        ce = draws.channels(num_em, frame)
        cu = draws.channels(num_ur, frame)
        r_done = np.zeros(len(em_users))
        psi_done = np.zeros((M, len(ur_users)))
        hist = []
        alloc = None
        worst_frame = 0.0
        frame_ok = True
        S = num_em.ttis_per_frame
        for w in range(S):
            b0 = (w // block) * block
            if alloc is None or w == b0:
                g_em = ce.gains[:, em_users][:, :, :F1, b0][None]
                g_ur = np.moveaxis(cu.gains[:, ur_users][:, :, :F2, b0 * ticks:(b0 + 1) * ticks], -1, 0)
                eg = SliceGrid("embb", num_em, em_users, g_em)
                ug = urllc_grid(num_ur, ur_users, g_ur, cfg.radio.p_e)
                inp = SsspInputs(plan, eg, ug, st.queues.q.copy(), draws.p_max, tti_index=w,
                                 windows_left=S - w, urllc_ticks_left=(S - w) * ticks, r_th=q.r_th,
                                 r_done=r_done.copy(), psi_done=psi_done.copy(), frame_length=tr.frame_length,
                                 z_embb=tr.z_embb, z_urllc=tr.z_urllc, q_max=tr.q_max, fh_capacity=q.c_fh,
                                 n0=n0, snr_floor=snr_floor, epsilon=cfg.solver.epsilon, j_max=cfg.solver.j_max,
                                 true_demand=lam, queue_constraint=cfg.solver.queue_constraint,
                                 hold_windows=min(block, S - w))
                obj = objective
                if obj == "P2" and not np.any(inp.latency_bits() > 0):
                    obj = "P1"
                try:
                    alloc = evaluate_schemes(scheme, inp, obj, large_scale=topo.large_scale())
                except InfeasibleProblem as exc:
                    log.debug("frame %d TTI %d %s: %s", frame, w, scheme, exc)
                    alloc = _idle_allocation(inp)
                log.debug("frame %d TTI %d %s: %s after %d SCA iterations, %d repairs", frame, w, scheme,
                          alloc.status, alloc.iterations, alloc.repairs)
                if trace_sink is not None:
                    trace_sink(alloc)
                r_e, r_u = allocation_rates(inp, alloc)
                solved_iters = alloc.iterations
            else:
                solved_iters = 0
            # traffic follows the split the scheme actually routes with
            alloc_phi = scheme_flow_split(scheme, plan.flow_split, topo.large_scale())
            status = alloc.status
            if status not in FEASIBLE:
                frame_ok = False
            iters.append(solved_iters)
            qm = st.queues.q
            qm[:, em_users] = update_queue(qm[:, em_users], alloc_phi[:, em_users], lam[em_users], tr.z_embb,
                                           r_e, num_em.tti, arrival_time)
            thr = float(r_e.sum())
            lat_ticks = []
            tick_rows = []
            for k in range(ticks):
                qm[:, ur_users] = update_queue(qm[:, ur_users], alloc_phi[:, ur_users], lam[ur_users], tr.z_urllc,
                                               r_u[k], num_ur.tti, arrival_time)
                lat = _worst_latency(lat_params, lam, alloc_phi, r_u[k], ur_users, em_users)
                lat_ticks.append(lat)
                if not fixed:
                    tick_rows.append(MetricsRow(frame, w * ticks + k, "urllc", scheme, p_max_dbm, thr, lat,
                                                float(qm.sum(axis=1).mean()), solved_iters if k == 0 else 0,
                                                mse, draws.seed, status))
            mq = float(qm.sum(axis=1).mean())
            lat_w = max(lat_ticks) if lat_ticks else 0.0
            rows.append(MetricsRow(frame, w, "fixed" if fixed else "embb", scheme, p_max_dbm, thr, lat_w, mq,
                                   solved_iters, mse, draws.seed, status))
            rows.extend(tick_rows)
            worst_frame = max(worst_frame, lat_w)
            thr_sum += thr
            thr_n += 1
            running_q += mq
            running_n += 1
            r_done += r_e.sum(axis=0)
            psi_done += r_u.sum(axis=0)
            rate_mu = np.zeros((M, U))
            rate_mu[:, em_users] = r_e
            if len(ur_users):
                rate_mu[:, ur_users] = r_u.mean(axis=0)
            hist.append(rate_mu)
        st.rate_hist = np.array(hist)
        if cfg.predictor.refit:
            forecaster = forecaster.refit(draws.demand[:frame + 1 + draws.window], cfg, draws.seed + frame)
        queue_trace.append(running_q / running_n)
        if frame_ok:
            feasible_frames += 1
            frame_lat.append(worst_frame)
        else:
            frame_lat.append(math.inf)
    ok_lat = [x for x in frame_lat if math.isfinite(x)]
    summ = EpisodeSummary(
        scheme, p_max_dbm, draws.seed, objective,
        throughput=thr_sum / max(thr_n, 1),
        latency=float(np.mean(ok_lat)) if ok_lat else math.inf,
        latency_ok=float(np.mean([x <= q.d_urllc for x in ok_lat])) if ok_lat else 0.0,
        feasible_frames=feasible_frames / cfg.sim.frames,
        final_queue=queue_trace[-1] if queue_trace else 0.0,
        queue_trace=queue_trace, frame_latency=frame_lat,
        sca_iterations=float(np.mean([i for i in iters if i > 0])) if any(iters) else 0.0,
        predictor_mse=float(np.mean(mses)) if mses else math.nan,
        queues=st.queues.q.copy())
    return rows, summ


def run_episode(cfg: RunConfig, forecaster: Forecaster | None = None, seed: int | None = None,
                p_max_dbm: float | None = None, schemes=None, objective: str | None = None):
    """Rows and summaries of every requested scheme on one shared draw."""
    forecaster = prepare_forecaster(cfg) if forecaster is None else forecaster
    seed = cfg.sim.seed if seed is None else seed
    p_max_dbm = cfg.radio.p_max_dbm if p_max_dbm is None else p_max_dbm
    schemes = (cfg.sim.scheme,) if schemes is None else tuple(schemes)
    objective = cfg.sim.objective if objective is None else objective
    draws = _Draws(cfg, seed, p_max_dbm)
    rows, summaries = [], []
    for sch in schemes:
        r, s = run_scheme_episode(cfg, draws, forecaster, sch, objective, p_max_dbm)
        rows.extend(r)
        summaries.append(s)
    return rows, summaries


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    rows_file: str
    summaries: list
    rows_written: int = 0
    interrupted: bool = False

    def point(self, scheme: str, p_max_dbm: float) -> list:
        return [s for s in self.summaries if s.scheme == scheme and s.p_max_dbm == p_max_dbm]

    @property
    def all_infeasible(self) -> bool:
        return bool(self.summaries) and all(s.infeasible for s in self.summaries)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


class RowWriter:
    """Single writer for the consolidated metrics CSV; flushes after every episode."""

    def __init__(self, path: str):
        self.path = path
        try:
            self.fh = open(path, "w", newline="")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from exc
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(ROW_FIELDS)
        self.count = 0

    def write(self, rows):
        for r in rows:
            self.w.writerow([_fmt(getattr(r, k)) for k in ROW_FIELDS])
        self.count += len(rows)
        self.fh.flush()

    def close(self):
        self.fh.close()


def run_sweep(cfg: RunConfig, pmax_list=None, seeds=None, schemes=None, objective=None,
              out_dir: str | None = None, forecaster: Forecaster | None = None,
              rows_name: str = "metrics.csv") -> SweepResult:
    """Every (P_max, seed) point with all schemes on common draws.

    Rows stream to ``out_dir/rows_name``; partial results stay on disk if
    interrupted.
    """
    pmax_list = tuple(cfg.sim.pmax_list if pmax_list is None else pmax_list)
    if seeds is None:
        seeds = [cfg.sim.seed + k for k in range(cfg.sim.seeds)]
    seeds = list(seeds)
    if not seeds:
        raise ValueError("a sweep needs at least one seed")
    schemes = tuple(cfg.sim.schemes if schemes is None else schemes)
    objective = cfg.sim.objective if objective is None else objective
    out_dir = cfg.output_dir() if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    forecaster = prepare_forecaster(cfg) if forecaster is None else forecaster
    writer = RowWriter(os.path.join(out_dir, rows_name))
    res = SweepResult(writer.path, [])
    try:
        for pm in pmax_list:
            for sd in seeds:
                rows, summ = run_episode(cfg, forecaster, sd, pm, schemes, objective)
                writer.write(rows)
                res.summaries.extend(summ)
                log.info("P_max %.1f dBm seed %d done", pm, sd)
    except KeyboardInterrupt:
        res.interrupted = True
        log.warning("sweep interrupted, %d rows kept in %s", writer.count, writer.path)
    finally:
        writer.close()
        res.rows_written = writer.count
    return res


def aggregate(summaries, attr: str):
    """{(scheme, P_max): (mean, std, n)} over seeds, ignoring non-finite values."""
    out = {}
    keys = sorted({(s.scheme, s.p_max_dbm) for s in summaries})
    for k in keys:
        vals = np.array([getattr(s, attr) for s in summaries if (s.scheme, s.p_max_dbm) == k], dtype=float)
        fin = vals[np.isfinite(vals)]
        if len(fin):
            out[k] = (float(fin.mean()), float(fin.std()), len(fin))
        else:
            out[k] = (math.inf, math.nan, 0)
    return out


# --------------------------------------------------------------------------
# export


def export_rows(rows, path: str, fmt: str = "csv") -> str:
    """Write MetricsRow objects; CSV keeps the field order and always has a header."""
    try:
        if fmt == "csv":
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(ROW_FIELDS)
                for r in rows:
                    w.writerow([_fmt(getattr(r, k)) for k in ROW_FIELDS])
        elif fmt == "json":
            with open(path, "w") as fh:
                json.dump([{k: getattr(r, k) for k in ROW_FIELDS} for r in rows], fh, indent=1,
                          allow_nan=True)
        else:
            raise ValueError(f"unknown export format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


_TYPES = {f.name: f.type for f in dataclasses.fields(MetricsRow)}


def _parse(name, v):
    t = _TYPES[name]
    if t == "int":
        return int(v)
    if t == "float":
        return float(v)
    return v


def import_rows(path: str, fmt: str = "csv") -> list:
    if fmt == "json":
        with open(path) as fh:
            return [MetricsRow(**{k: _parse(k, d[k]) for k in ROW_FIELDS}) for d in json.load(fh)]
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != ROW_FIELDS:
            raise ValueError(f"{path}: unexpected columns {header}")
        return [MetricsRow(*[_parse(k, v) for k, v in zip(ROW_FIELDS, line)]) for line in rd]


def _write_table(path: str, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def export_figures(out_dir: str, p1=None, p2=None, convergence=None, forecaster=None, prediction=None) -> list:
    """One CSV per figure-equivalent; missing inputs give header-only files."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    head = ["scheme", "p_max_dbm", "mean", "std", "seeds"]
    agg = aggregate(p1 or [], "throughput")
    files.append(_write_table(os.path.join(out_dir, "fig8_throughput.csv"), head,
                              [(k[0], k[1], *v) for k, v in agg.items()]))
    agg = aggregate(p2 or [], "latency")
    feas = aggregate(p2 or [], "feasible_frames")
    files.append(_write_table(os.path.join(out_dir, "fig9_latency.csv"), head + ["infeasible"],
                              [(k[0], k[1], *v, int(feas[k][0] == 0.0)) for k, v in agg.items()]))
    qrows = []
    by = {}
    for s in (p1 or []):
        by.setdefault((s.scheme, s.p_max_dbm), []).append(s.queue_trace)
    for (sch, pm), traces in sorted(by.items()):
        arr = np.array(traces)
        for fr in range(arr.shape[1]):
            qrows.append((sch, pm, fr, float(arr[:, fr].mean())))
    files.append(_write_table(os.path.join(out_dir, "fig10_queues.csv"),
                              ["scheme", "p_max_dbm", "frame", "running_mean_queue"], qrows))
    crow = []
    for name, trace in (convergence or {}).items():
        crow.extend((name, i + 1, float(v)) for i, v in enumerate(trace))
    files.append(_write_table(os.path.join(out_dir, "fig11_convergence.csv"), ["instance", "iteration", "xi"], crow))
    lrows = []
    if forecaster is not None and forecaster.result is not None:
        r = forecaster.result
        lrows = [(i + 1, a, b) for i, (a, b) in enumerate(zip(r.train_loss, r.val_loss))]
    files.append(_write_table(os.path.join(out_dir, "fig6_loss.csv"), ["epoch", "train_mse", "val_mse"], lrows))
    files.append(_write_table(os.path.join(out_dir, "fig7_prediction.csv"), ["frame", "user", "true", "predicted"],
                              prediction or []))
    return files


def prediction_trace(cfg: RunConfig, forecaster: Forecaster, seed: int | None = None):
    """(frame, user, true, predicted) rows over an episode's arrivals."""
    seed = cfg.sim.seed if seed is None else seed
    draws = _Draws(cfg, seed, cfg.radio.p_max_dbm)
    cap = cfg.traffic.cap_factor * draws.means
    out = []
    for fr in range(cfg.sim.frames):
        lam_hat = forecaster.predict(draws.history(fr), cap)
        lam = draws.true_demand(fr)
        out.extend((fr, u, float(lam[u]), float(lam_hat[u])) for u in range(len(lam)))
    return out


def convergence_traces(cfg: RunConfig, forecaster: Forecaster, rus=(3, 4)) -> dict:
    """Relaxed-stage objective per SCA iteration on the first TTI of a JIFDR run."""
    out = {}
    for m in rus:
        c = cfg.with_overrides(topology__num_rus=m, sim__frames=1)
        got = []
        draws = _Draws(c, c.sim.seed, c.radio.p_max_dbm)
        # only the first window matters; stop after it
        try:
            run_scheme_episode(c, draws, forecaster, "JIFDR", "P1", c.radio.p_max_dbm,
                               trace_sink=lambda a: (got.append(list(a.trace)), _stop()))
        except _StopEpisode:
            pass
        out[f"{m}-RU"] = got[0] if got else []
    return out


class _StopEpisode(Exception):
    pass


def _stop():
    raise _StopEpisode()
