import csv
import math

import numpy as np
import pytest

from oransteer import harness as H
from oransteer.config import parse_config


@pytest.fixture(scope="module")
def setup():
    from conftest import FAST_CFG
    cfg = parse_config(FAST_CFG)
    return cfg, H.prepare_forecaster(cfg)


def test_row_counts_per_scheme(setup):
    cfg, fc = setup
    cfg = cfg.with_overrides(sim__frames=2)
    rows, summ = H.run_episode(cfg, fc, seed=0, schemes=["JIFDR", "FIX-NUM"])
    by = {}
    for r in rows:
        by.setdefault((r.scheme, r.frame, r.numerology), 0)
        by[(r.scheme, r.frame, r.numerology)] += 1
    for f in range(2):
        assert by[("JIFDR", f, "embb")] == 40 and by[("JIFDR", f, "urllc")] == 80
        assert by[("FIX-NUM", f, "fixed")] == 20
    assert all(r.status for r in rows)
    assert len(summ) == 2 and len(summ[0].queue_trace) == 2


def test_common_random_numbers(setup):
    cfg, _ = setup
    a = H._Draws(cfg, 5, 30.0)
    b = H._Draws(cfg, 5, 30.0)
    assert np.array_equal(a.demand, b.demand)
    from oransteer.model import build_numerology
    n = build_numerology("embb")
    ga, gb = a.channels(n, 0).gains, b.channels(n, 0).gains
    assert np.array_equal(ga, gb)
    # every partition slices the same widest grid, so shared sub-bands agree
    assert ga.shape[2] == int(cfg.radio.bandwidth // n.rb_bandwidth)


def test_episode_is_deterministic(setup, tmp_path):
    cfg, fc = setup
    outs = []
    for k in range(2):
        rows, _ = H.run_episode(cfg, fc, seed=3, schemes=["JIFDR", "EPA"])
        outs.append(H.export_rows(rows, str(tmp_path / f"m{k}.csv")))
    assert open(outs[0], "rb").read() == open(outs[1], "rb").read()


def test_zero_traffic_keeps_queues_empty(setup):
    cfg, _ = setup
    cfg = cfg.with_overrides(traffic__embb_mean=0.0, traffic__urllc_mean=0.0)
    fc = H.prepare_forecaster(cfg)
    rows, summ = H.run_episode(cfg, fc, seed=0)
    assert all(r.mean_queue == 0.0 for r in rows)
    assert summ[0].final_queue == 0.0


def test_export_header_only_and_round_trip(setup, tmp_path):
    cfg, fc = setup
    p = H.export_rows([], str(tmp_path / "empty.csv"))
    with open(p) as fh:
        assert list(csv.reader(fh)) == [H.ROW_FIELDS]
    rows, _ = H.run_episode(cfg, fc, seed=1)
    for fmt in ("csv", "json"):
        path = H.export_rows(rows, str(tmp_path / f"rows.{fmt}"), fmt)
        assert H.import_rows(path, fmt) == rows


def test_export_reports_the_bad_path(tmp_path):
    bad = tmp_path / "missing" / "rows.csv"
    with pytest.raises(OSError, match="rows.csv"):
        H.export_rows([], str(bad))


def test_figure_files(setup, tmp_path):
    cfg, fc = setup
    res = H.run_sweep(cfg, pmax_list=[30.0], seeds=[0], schemes=["JIFDR", "PKTD"], out_dir=str(tmp_path))
    conv = H.convergence_traces(cfg, fc)
    files = H.export_figures(str(tmp_path), res.summaries, [], conv, fc, H.prediction_trace(cfg, fc))
    names = sorted(p.split("/")[-1] for p in files)
    assert names == sorted(f"{n}.csv" for n in ("fig8_throughput", "fig9_latency", "fig10_queues",
                                                 "fig11_convergence", "fig6_loss", "fig7_prediction"))
    with open(tmp_path / "fig11_convergence.csv") as fh:
        inst = {row[0] for row in list(csv.reader(fh))[1:]}
    assert inst == {"3-RU", "4-RU"}
    assert res.rows_written == 2 * 120


def test_sweep_counts_and_aggregate(setup, tmp_path):
    cfg, fc = setup
    res = H.run_sweep(cfg, pmax_list=[20.0, 46.0], seeds=[0, 1], schemes=["JIFDR", "EFSD"],
                      out_dir=str(tmp_path), forecaster=fc)
    assert len(res.summaries) == 2 * 2 * 2
    agg = H.aggregate(res.summaries, "throughput")
    assert set(agg) == {("JIFDR", 20.0), ("JIFDR", 46.0), ("EFSD", 20.0), ("EFSD", 46.0)}
    assert all(v[2] == 2 for v in agg.values())
    with pytest.raises(ValueError):
        H.run_sweep(cfg, seeds=[], out_dir=str(tmp_path))


def test_sweep_keeps_partial_rows_on_interrupt(setup, tmp_path, monkeypatch):
    cfg, fc = setup
    calls = {"n": 0}
    orig = H.run_episode

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 2:
            raise KeyboardInterrupt
        return orig(*a, **k)

    monkeypatch.setattr(H, "run_episode", flaky)
    res = H.run_sweep(cfg, pmax_list=[30.0], seeds=[0, 1, 2], schemes=["JIFDR"], out_dir=str(tmp_path),
                      forecaster=fc)
    assert res.interrupted and res.rows_written == 120
    assert len(H.import_rows(res.rows_file)) == 120
