import json
import os

from oransteer.cli import main


def test_verify_passes(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 3


def test_run_writes_metrics(fast_cfg_file, tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["run", "--config", str(fast_cfg_file), "--out", str(out), "--scheme", "EFSD", "--pmax", "40"])
    assert code == 0
    rows = json.loads((out / "metrics.json").read_text())
    assert len(rows) == 120 and rows[0]["scheme"] == "EFSD" and rows[0]["p_max_dbm"] == 40.0
    assert (out / "metrics.csv").exists()


def test_env_sets_output_dir(fast_cfg_file, tmp_path, monkeypatch):
    monkeypatch.setenv("ORANSTEER_OUT", str(tmp_path / "env"))
    assert main(["run", "--config", str(fast_cfg_file)]) == 0
    assert (tmp_path / "env" / "metrics.csv").exists()


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("topology.num_rus = -1\n")
    assert main(["run", "--config", str(bad)]) == 1
    assert "config error" in capsys.readouterr().err
    assert main(["run", "--pmax", "hot"]) == 1


def test_io_error_exit_codes(fast_cfg_file, tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--config", str(fast_cfg_file), "--out", str(blocker / "sub")]) == 3


def test_infeasible_everywhere_exit_code(fast_cfg_text, tmp_path):
    cfg = tmp_path / "hard.cfg"
    cfg.write_text(fast_cfg_text + "qos.r_th = 1e12\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_train_and_sweep(fast_cfg_file, tmp_path, capsys):
    out = tmp_path / "t"
    assert main(["train", "--config", str(fast_cfg_file), "--out", str(out)]) == 0
    assert (out / "lstm_params.txt").exists() and (out / "fig6_loss.csv").exists()
    out2 = tmp_path / "s"
    code = main(["sweep", "--config", str(fast_cfg_file), "--out", str(out2), "--pmax", "30",
                 "--seeds", "1", "--objective", "P2"])
    assert code == 0
    assert sorted(os.listdir(out2)) == sorted(["metrics.csv", "fig8_throughput.csv", "fig9_latency.csv",
                                               "fig10_queues.csv", "fig11_convergence.csv", "fig6_loss.csv",
                                               "fig7_prediction.csv"])
