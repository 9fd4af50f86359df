"""Run configuration and the flat ``section.key = value`` file format.

Every key has a default, so an empty file gives the full-size setup.
Unknown keys, bad types and out-of-range values raise ConfigError.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

SCHEMES = ("JIFDR", "FIX-NUM", "EFSD", "EPA", "SCUP", "PKTD")
OBJECTIVES = ("P1", "P2")
OUT_ENV = "ORANSTEER_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class TopologyConfig:
    num_rus: int = 4
    num_embb: int = 12
    num_urllc: int = 8
    antennas: int = 4
    cell_radius: float = 500.0       # m
    ring_radius: float = 250.0       # m
    min_distance: float = 10.0       # m
    rician_factor: float = 0.0       # 0 = Rayleigh


@dataclass
class RadioConfig:
    bandwidth: float = 20e6          # Hz
    guard_band: float = 180e3        # Hz
    p_max_dbm: float = 30.0          # per RU
    n0_dbm: float = -110.0           # per RB
    p_e: float = 1e-3
    snr_floor_db: float = 5.0


@dataclass
class TrafficConfig:
    embb_mean: float = 20.0          # packets/s
    urllc_mean: float = 2.5
    z_embb: float = 125 * 1024.0     # bytes
    z_urllc: float = 1024.0
    cap_factor: float = 10.0
    q_max: float = 10 * 1024.0       # bytes per RU
    frame_length: float = 10e-3      # s
    arrival_clock: str = "tti"       # tti | frame: time base of the per-TTI arrival term


@dataclass
class QosConfig:
    d_urllc: float = 0.5e-3          # s
    tau_embb: float = 4e-3           # s, eMBB latency threshold of the bandwidth split
    r_th: float = 1e6                # bit/s
    c_fh: float = 1e9                # bit/s
    c_mh: float = 50e9
    mu_cu: float = 1e7               # tasks/s
    mu_du: float = 1e7
    processing: str = "literal"      # literal | mm1
    mh_packet: str = "urllc"         # urllc | weighted
    alpha_min: float = 0.05
    alpha_max: float = 0.95


@dataclass
class PredictorConfig:
    window: int = 10
    epochs: int = 50
    hidden: int = 50
    layers: int = 2
    dropout: float = 0.01
    learning_rate: float = 1e-3
    batch_size: int = 32
    train_fraction: float = 0.8
    trace_frames: int = 10000        # pre-generated training trace
    refit: bool = False              # refit every frame (slow)
    params_file: str = ""            # reuse saved weights when the file exists


@dataclass
class SolverConfig:
    epsilon: float = 1e-4
    j_max: int = 50
    coherence_windows: int = 1       # eMBB TTIs sharing one channel draw and schedule
    queue_constraint: bool = True


@dataclass
class SimConfig:
    scheme: str = "JIFDR"
    schemes: tuple = SCHEMES
    objective: str = "P1"
    frames: int = 200
    seed: int = 0
    seeds: int = 20
    pmax_list: tuple = (10.0, 20.0, 30.0, 40.0, 46.0)
    out_dir: str = "results"


@dataclass
class RunConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    radio: RadioConfig = field(default_factory=RadioConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    qos: QosConfig = field(default_factory=QosConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def validate(self) -> "RunConfig":
        t, r, q, s = self.topology, self.radio, self.qos, self.sim
        checks = [
            (t.num_rus >= 1, "topology.num_rus must be >= 1"),
            (t.num_embb >= 0 and t.num_urllc >= 0, "user counts must be >= 0"),
            (t.antennas >= 1, "topology.antennas must be >= 1"),
            (0 < t.min_distance < t.cell_radius, "need 0 < topology.min_distance < topology.cell_radius"),
            (t.rician_factor >= 0, "topology.rician_factor must be >= 0"),
            (r.bandwidth > r.guard_band >= 0, "radio.bandwidth must exceed the guard band"),
            (0 < r.p_e < 1, "radio.p_e must lie in (0, 1)"),
            (self.traffic.embb_mean >= 0 and self.traffic.urllc_mean >= 0, "traffic means must be >= 0"),
            (self.traffic.q_max > 0 and self.traffic.frame_length > 0, "q_max and frame_length must be positive"),
            (self.traffic.cap_factor >= 1, "traffic.cap_factor must be >= 1"),
            (self.traffic.arrival_clock in ("tti", "frame"), "traffic.arrival_clock must be tti or frame"),
            (q.d_urllc > 0 and q.tau_embb > 0, "latency thresholds must be positive"),
            (q.c_fh > 0 and q.c_mh > 0 and q.mu_cu > 0 and q.mu_du > 0, "capacities must be positive"),
            (q.processing in ("literal", "mm1"), "qos.processing must be literal or mm1"),
            (q.mh_packet in ("urllc", "weighted"), "qos.mh_packet must be urllc or weighted"),
            (0 <= q.alpha_min <= q.alpha_max <= 1, "need 0 <= alpha_min <= alpha_max <= 1"),
            (self.predictor.window >= 1 and self.predictor.epochs >= 0, "predictor window/epochs out of range"),
            (0 < self.predictor.train_fraction < 1, "predictor.train_fraction must lie in (0, 1)"),
            (0 <= self.predictor.dropout < 1, "predictor.dropout must lie in [0, 1)"),
            (self.solver.epsilon > 0 and self.solver.j_max >= 1, "solver tolerances out of range"),
            (self.solver.coherence_windows >= 1, "solver.coherence_windows must be >= 1"),
            (s.scheme in SCHEMES, f"sim.scheme must be one of {', '.join(SCHEMES)}"),
            (all(x in SCHEMES for x in s.schemes) and len(s.schemes) > 0, "sim.schemes has an unknown scheme"),
            (s.objective in OBJECTIVES, "sim.objective must be P1 or P2"),
            (s.frames >= 1 and s.seeds >= 1, "sim.frames and sim.seeds must be >= 1"),
            (len(s.pmax_list) > 0, "sim.pmax_list must not be empty"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.predictor.trace_frames < 10 * self.predictor.window + 1:
            raise ConfigError("predictor.trace_frames must cover at least ten windows")
        return self

    def output_dir(self) -> str:
        return os.environ.get(OUT_ENV) or self.sim.out_dir

    def with_overrides(self, **kv) -> "RunConfig":
        """Copy with ``section__key=value`` style overrides (already typed)."""
        out = dataclasses.replace(self, **{f.name: dataclasses.replace(getattr(self, f.name))
                                           for f in dataclasses.fields(self)})
        for k, v in kv.items():
            sec, key = k.split("__", 1)
            setattr(getattr(out, sec), key, v)
        return out.validate()


def _convert(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if default and isinstance(default[0], float):
                return tuple(float(x) for x in items)
            return tuple(items)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {type(default).__name__}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = RunConfig() if base is None else base.with_overrides()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'section.key = value'")
        lhs, rhs = (x.strip() for x in line.split("=", 1))
        if "." not in lhs:
            raise ConfigError(f"line {n}: key {lhs!r} has no section")
        sec, key = lhs.split(".", 1)
        part = getattr(cfg, sec, None)
        if part is None or not dataclasses.is_dataclass(part):
            raise ConfigError(f"line {n}: unknown section {sec!r}")
        if key not in {f.name for f in dataclasses.fields(part)}:
            raise ConfigError(f"line {n}: unknown key {lhs!r}")
        setattr(part, key, _convert(rhs, getattr(part, key), f"line {n} ({lhs})"))
    return cfg.validate()


def load_config(path: str | None) -> RunConfig:
    if not path:
        return RunConfig().validate()
    with open(path) as fh:      # OSError propagates to the caller
        return parse_config(fh.read())


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for sec in dataclasses.fields(cfg):
        part = getattr(cfg, sec.name)
        for f in dataclasses.fields(part):
            v = getattr(part, f.name)
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{sec.name}.{f.name} = {v}")
    return "\n".join(lines) + "\n"
