import pytest

from oransteer.config import OUT_ENV, ConfigError, RunConfig, dump_config, load_config, parse_config


def test_defaults_hold_the_reference_setup():
    c = RunConfig().validate()
    assert (c.topology.num_rus, c.topology.num_embb, c.topology.num_urllc) == (4, 12, 8)
    assert c.radio.p_e == 1e-3 and c.radio.n0_dbm == -110.0
    assert c.qos.d_urllc == 0.5e-3 and c.qos.r_th == 1e6 and c.qos.c_fh == 1e9 and c.qos.c_mh == 50e9
    assert c.traffic.q_max == 10240.0 and c.traffic.frame_length == 0.01
    assert c.predictor.window == 10 and c.predictor.hidden == 50 and c.predictor.epochs == 50
    assert c.solver.epsilon == 1e-4 and c.solver.j_max == 50
    assert c.sim.pmax_list == (10.0, 20.0, 30.0, 40.0, 46.0)


def test_parse_with_comments_and_types():
    c = parse_config("""
    # a comment
    topology.num_rus = 3      # trailing comment
    radio.p_max_dbm = 40
    predictor.refit = yes
    sim.schemes = JIFDR, EPA
    sim.pmax_list = 10, 46
    """)
    assert c.topology.num_rus == 3 and c.radio.p_max_dbm == 40.0
    assert c.predictor.refit is True
    assert c.sim.schemes == ("JIFDR", "EPA") and c.sim.pmax_list == (10.0, 46.0)


@pytest.mark.parametrize("text", [
    "topology.rus = 3",
    "nosuch.key = 1",
    "just words",
    "num_rus = 3",
    "topology.num_rus = three",
    "topology.num_rus = 0",
    "radio.p_e = 2",
    "sim.scheme = BEST",
    "sim.objective = P3",
    "predictor.refit = maybe",
    "predictor.trace_frames = 20",
])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_dump_parse_round_trip():
    c = parse_config("topology.num_embb = 5\nsim.frames = 7\n")
    assert parse_config(dump_config(c)) == c


def test_output_dir_env_override(monkeypatch):
    c = parse_config("sim.out_dir = here")
    monkeypatch.delenv(OUT_ENV, raising=False)
    assert c.output_dir() == "here"
    monkeypatch.setenv(OUT_ENV, "/tmp/elsewhere")
    assert c.output_dir() == "/tmp/elsewhere"


def test_overrides_are_validated():
    c = RunConfig()
    assert c.with_overrides(sim__frames=3).sim.frames == 3
    assert c.sim.frames == 200
    with pytest.raises(ConfigError):
        c.with_overrides(sim__frames=0)


def test_missing_file_is_an_os_error(tmp_path):
    with pytest.raises(OSError):
        load_config(tmp_path / "absent.cfg")
