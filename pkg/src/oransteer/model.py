"""Physical model: numerologies, bandwidth parts, topology and fading channels.

Everything here is a pure value producer.  Random draws are seeded per
(seed, frame, numerology) so that every scheme in a sweep sees the same
channel for the same seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FRAME_LENGTH = 10e-3        # s
GUARD_BAND = 180e3          # Hz, one legacy RB between the two parts
LEGACY_RB = 180e3           # Hz, RB width at 15 kHz subcarrier spacing


class DegeneratePartition(ValueError):
    """A bandwidth part ended up with zero resource blocks."""


@dataclass(frozen=True)
class Numerology:
    index: int
    scs_index: int
    rb_bandwidth: float      # Hz
    tti: float               # s
    ttis_per_frame: int

    @property
    def symbol_time(self) -> float:
        # 7 OFDM symbols per TTI
        return self.tti / 7.0


def _numerology(index: int, gamma: int, frame_length: float = FRAME_LENGTH) -> Numerology:
    tti = 1e-3 / 2 ** (gamma + 1)
    beta = LEGACY_RB * 2 ** gamma
    s = frame_length / tti
    if abs(s - round(s)) > 1e-9:
        raise ValueError(f"frame length {frame_length} is not a multiple of TTI {tti}")
    return Numerology(index, gamma, beta, tti, int(round(s)))


def build_numerology(service: str, frame_length: float = FRAME_LENGTH) -> Numerology:
    """embb -> i=1 (360 kHz, 0.25 ms), urllc -> i=2 (720 kHz, 0.125 ms).

    ``fixed`` gives the single 180 kHz / 0.5 ms grid used by the
    fixed-numerology benchmark.
    """
    if service == "embb":
        return _numerology(1, 1, frame_length)
    if service == "urllc":
        return _numerology(2, 2, frame_length)
    if service == "fixed":
        return _numerology(0, 0, frame_length)
    raise ValueError(f"unknown service class {service!r}")


@dataclass(frozen=True)
class BwpPartition:
    total_bandwidth: float
    alpha: float
    guard_band: float
    slice_bandwidths: tuple      # (B_1, B_2) Hz
    rb_counts: tuple             # (F_1, F_2)

    @property
    def degenerate(self) -> bool:
        return min(self.rb_counts) == 0


def partition_bandwidth(total: float, alpha: float, guard: float = GUARD_BAND,
                        rb_widths=(360e3, 720e3)) -> BwpPartition:
    """Split ``total`` Hz: alpha*B to uRLLC, the rest minus the guard to eMBB.

    ``rb_widths`` are the RB bandwidths of the (eMBB, uRLLC) numerologies.
    The result may be degenerate (an F equal to 0); callers check
    ``.degenerate`` and decide.
    """
    if not (0.0 <= alpha <= 1.0) or not math.isfinite(alpha):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if total <= guard:
        raise ValueError("total bandwidth must exceed the guard band")
    b2 = alpha * total
    b1 = max((1.0 - alpha) * total - guard, 0.0)
    # small epsilon so 10 MHz / 720 kHz style ratios are not floored away by rounding
    f1 = int(math.floor(b1 / rb_widths[0] + 1e-9))
    f2 = int(math.floor(b2 / rb_widths[1] + 1e-9))
    return BwpPartition(total, alpha, guard, (b1, b2), (f1, f2))


def path_loss_db(distance: np.ndarray) -> np.ndarray:
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("RU-user distance must be positive")
    return 128.1 + 37.6 * np.log10(d / 1000.0)


@dataclass
class Topology:
    num_rus: int
    num_embb: int
    num_urllc: int
    antennas: int
    ru_positions: np.ndarray
    user_positions: np.ndarray
    p_max: float = 1.0            # W per RU
    fh_capacity: float = 1e9      # bit/s per RU
    mh_capacity: float = 50e9     # bit/s
    cell_radius: float = 500.0

    def __post_init__(self):
        if self.num_rus < 1:
            raise ValueError("need at least one RU")
        if self.p_max <= 0 or self.fh_capacity <= 0 or self.mh_capacity <= 0:
            raise ValueError("capacities must be positive")
        self.ru_positions = np.asarray(self.ru_positions, dtype=float).reshape(self.num_rus, 2)
        self.user_positions = np.asarray(self.user_positions, dtype=float).reshape(self.num_users, 2)
        for pts in (self.ru_positions, self.user_positions):
            if np.any(np.hypot(pts[:, 0], pts[:, 1]) > self.cell_radius + 1e-9):
                raise ValueError("positions must lie inside the cell radius")

    @property
    def num_users(self) -> int:
        return self.num_embb + self.num_urllc

    @property
    def embb_users(self) -> np.ndarray:
        return np.arange(self.num_embb)

    @property
    def urllc_users(self) -> np.ndarray:
        return np.arange(self.num_embb, self.num_users)

    def distances(self) -> np.ndarray:
        diff = self.ru_positions[:, None, :] - self.user_positions[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    def large_scale(self) -> np.ndarray:
        return 10.0 ** (-path_loss_db(self.distances()) / 10.0)


def build_topology(num_rus=4, num_embb=12, num_urllc=8, antennas=4, cell_radius=500.0,
                   ring_radius=250.0, p_max=1.0, fh_capacity=1e9, mh_capacity=50e9,
                   min_distance=10.0, seed=0) -> Topology:
    """One RU at the centre, the others evenly spread on a ring (one per sector).

    Users are uniform over the disc, redrawn if closer than ``min_distance``
    to any RU.
    """
    ru = [(0.0, 0.0)]
    for k in range(num_rus - 1):
        ang = 2 * math.pi * k / (num_rus - 1) + math.pi / 3
        ru.append((ring_radius * math.cos(ang), ring_radius * math.sin(ang)))
    ru = np.array(ru)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    users = np.zeros((num_embb + num_urllc, 2))
    for u in range(len(users)):
        while True:
            r = cell_radius * math.sqrt(rng.random())
            a = 2 * math.pi * rng.random()
            pt = np.array([r * math.cos(a), r * math.sin(a)])
            if np.min(np.hypot(*(ru - pt).T)) >= min_distance:
                users[u] = pt
                break
    return Topology(num_rus, num_embb, num_urllc, antennas, ru, users,
                    p_max, fh_capacity, mh_capacity, cell_radius)


@dataclass
class ChannelRealization:
    gains: np.ndarray            # (M, U, F, S)
    large_scale: np.ndarray      # (M, U)
    rician_factor: float = 0.0

    def tti(self, ts: int) -> np.ndarray:
        return self.gains[..., ts]


def _los_vector(topology: Topology) -> np.ndarray:
    # unit-modulus ULA steering vector from the RU-user bearing
    diff = topology.user_positions[None, :, :] - topology.ru_positions[:, None, :]
    theta = np.arctan2(diff[..., 1], diff[..., 0])
    k = np.arange(topology.antennas)
    return np.exp(1j * np.pi * np.sin(theta)[..., None] * k)     # (M, U, K)


def sample_channels(topology: Topology, numerology: Numerology, frame: int, seed: int,
                    num_subbands: int, rician_factor: float = 0.0,
                    per_antenna: bool = False) -> ChannelRealization:
    """Effective gains g = ||h||^2 for every (RU, user, sub-band, TTI) of a frame.

    With ``per_antenna`` the squared magnitudes of the K coefficients are
    returned in an extra trailing axis instead of their sum.
    """
    zeta = topology.large_scale()
    M, U, K = topology.num_rus, topology.num_users, topology.antennas
    F, S = int(num_subbands), numerology.ttis_per_frame
    rng = np.random.default_rng(np.random.SeedSequence([seed, frame, numerology.index, 104729]))
    if math.isinf(rician_factor):
        h = np.broadcast_to(_los_vector(topology)[:, :, None, None, :], (M, U, F, S, K))
    else:
        nlos = (rng.standard_normal((M, U, F, S, K)) + 1j * rng.standard_normal((M, U, F, S, K))) / math.sqrt(2)
        h = nlos
        if rician_factor > 0:
            los = _los_vector(topology)[:, :, None, None, :]
            h = math.sqrt(rician_factor / (1 + rician_factor)) * los + math.sqrt(1 / (1 + rician_factor)) * nlos
    mag = np.abs(h) ** 2 * zeta[:, :, None, None, None]
    gains = mag if per_antenna else mag.sum(axis=-1)
    return ChannelRealization(np.ascontiguousarray(gains), zeta, rician_factor)
