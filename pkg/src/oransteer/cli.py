"""Command line entry point: run, sweep, train, verify.

Exit codes: 0 success, 1 configuration error, 2 every solve infeasible,
3 file I/O error, 4 a self-check failed.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys

import numpy as np

from . import harness as H
from . import predictor as pred
from .config import OBJECTIVES, SCHEMES, ConfigError, load_config

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO, EXIT_VERIFY = 0, 1, 2, 3, 4

log = logging.getLogger("oransteer")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'section.key = value' file")
    common.add_argument("--seed", type=int, help="base seed")
    common.add_argument("--scheme", choices=SCHEMES)
    common.add_argument("--objective", choices=OBJECTIVES)
    common.add_argument("--pmax", help="P_max in dBm, comma separated for sweeps")
    common.add_argument("--frames", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="count", default=0)
    p = argparse.ArgumentParser(prog="oransteer", description="Traffic steering simulator for a multi-RU RAN")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="one episode of one scheme")
    sw = sub.add_parser("sweep", parents=[common], help="all schemes over the P_max list and seeds")
    sw.add_argument("--seeds", type=int, help="number of seeds")
    sub.add_parser("train", parents=[common], help="train the demand predictor and save it")
    sub.add_parser("verify", parents=[common], help="quick numerical self-checks")
    return p


def _config(args):
    cfg = load_config(args.config)
    kv = {}
    if args.seed is not None:
        kv["sim__seed"] = args.seed
    if args.scheme:
        kv["sim__scheme"] = args.scheme
    if args.objective:
        kv["sim__objective"] = args.objective
    if args.frames is not None:
        kv["sim__frames"] = args.frames
    if args.out:
        kv["sim__out_dir"] = args.out
    if args.pmax:
        try:
            vals = tuple(float(x) for x in args.pmax.split(",") if x.strip())
        except ValueError:
            raise ConfigError(f"--pmax: cannot read {args.pmax!r}") from None
        if not vals:
            raise ConfigError("--pmax is empty")
        kv["sim__pmax_list"] = vals
        kv["radio__p_max_dbm"] = vals[0]
    if getattr(args, "seeds", None) is not None:
        kv["sim__seeds"] = args.seeds
    return cfg.with_overrides(**kv)


def _out_dir(cfg, args) -> str:
    # --out wins over the environment, which wins over the config file
    if args.out:
        return args.out
    return cfg.output_dir()


def cmd_run(cfg, args) -> int:
    out = _out_dir(cfg, args)
    os.makedirs(out, exist_ok=True)
    fc = H.prepare_forecaster(cfg)
    rows, summ = H.run_episode(cfg, fc)
    H.export_rows(rows, os.path.join(out, "metrics.csv"), "csv")
    H.export_rows(rows, os.path.join(out, "metrics.json"), "json")
    s = summ[0]
    print(f"{s.scheme} P_max={s.p_max_dbm:g} dBm seed={s.seed}: throughput {s.throughput / 1e6:.3f} Mbit/s, "
          f"latency {s.latency * 1e3:.4f} ms, feasible frames {s.feasible_frames:.2f}, "
          f"final queue {s.final_queue:.1f} B")
    if rows and all(r.status == "infeasible" for r in rows):
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_sweep(cfg, args) -> int:
    out = _out_dir(cfg, args)
    fc = H.prepare_forecaster(cfg)
    res = H.run_sweep(cfg, out_dir=out, forecaster=fc)
    p1 = res.summaries if cfg.sim.objective == "P1" else []
    p2 = res.summaries if cfg.sim.objective == "P2" else []
    H.export_figures(out, p1, p2, H.convergence_traces(cfg, fc), fc, H.prediction_trace(cfg, fc))
    agg = H.aggregate(res.summaries, "throughput" if cfg.sim.objective == "P1" else "latency")
    for (sch, pm), (mean, std, n) in agg.items():
        unit = (1e-6, "Mbit/s") if cfg.sim.objective == "P1" else (1e3, "ms")
        print(f"{sch:8s} {pm:5.1f} dBm  {mean * unit[0]:10.4f} +- {std * unit[0]:.4f} {unit[1]} ({n} seeds)")
    if res.interrupted:
        print(f"interrupted: {res.rows_written} rows kept in {res.rows_file}", file=sys.stderr)
        return EXIT_OK
    if res.all_infeasible:
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_train(cfg, args) -> int:
    out = _out_dir(cfg, args)
    os.makedirs(out, exist_ok=True)
    fc = H.prepare_forecaster(cfg)
    if fc.result is None:
        print("constant demand, nothing to learn")
        return EXIT_OK
    path = os.path.join(out, "lstm_params.txt")
    try:
        pred.save_params(path, fc.result.params, fc.result.normalizer)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    H.export_figures(out, forecaster=fc, prediction=H.prediction_trace(cfg, fc))
    print(f"validation MSE {fc.result.val_mse:.5f} (normalized), weights in {path}")
    return EXIT_OK


def _verify_checks():
    """(name, passed, detail) for a few fast oracles."""
    from . import convex
    from .scheduler import penalty
    out = []
    # BPTT against central differences
    rng = np.random.default_rng(1)
    p = pred.init_params(2, 2, 4, 2, seed=3)
    X, Y = rng.random((3, 4, 2)), rng.random((3, 2))
    _, grads = pred.loss_and_grad(p, X, Y)
    flat = [*grads[0], *grads[1], grads[2], grads[3]]
    arrs = p.arrays()
    worst = 0.0
    for _ in range(20):
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
    out.append(("gradient", worst <= 1e-4, f"worst relative error {worst:.2e}"))
    # a two-variable concave program with a known optimum: max log(1+x)+log(1+y), x+y <= 2
    prog = convex.ConvexProgram(2, [0, 0], [10, 10], [0, 0], [0, 1], [1, 1], [1, 1], [[1, 1]], [2])
    rep = convex.solve(prog)
    ok = rep.optimal and abs(rep.objective - 2 * math.log(2)) < 1e-6
    out.append(("convex", ok, f"objective {rep.objective:.8f}, KKT {rep.kkt_residual:.1e}"))
    out.append(("penalty", penalty(np.array([0.0, 1.0])) == 0 and abs(penalty(np.full(4, 0.5)) + 1) < 1e-15,
                "binary points are penalty free"))
    return out


def cmd_verify(cfg, args) -> int:
    checks = _verify_checks()
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_VERIFY


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return {"run": cmd_run, "sweep": cmd_sweep, "train": cmd_train, "verify": cmd_verify}[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
