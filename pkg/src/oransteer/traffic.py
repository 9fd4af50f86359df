"""Traffic demands and per-(RU, user) transmission queues.

Queues are kept in bytes and rates in bit/s; the factor 8 lives here only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Z_EMBB = 125 * 1024     # bytes
Z_URLLC = 1024          # bytes


def generate_arrivals(mean: float, frames: int, seed: int, cap: float | None = None,
                      stream: int = 0) -> np.ndarray:
    """I.i.d. Poisson demand (packets/s), one draw per frame, clipped at ``cap``.

    ``cap`` defaults to ten times the mean.  ``stream`` separates users that
    share a seed.
    """
    if not mean > 0:
        raise ValueError(f"mean arrival rate must be positive, got {mean}")
    cap = 10.0 * mean if cap is None else cap
    rng = np.random.default_rng(np.random.SeedSequence([seed, stream, 31337]))
    lam = rng.poisson(mean, size=int(frames)).astype(float)
    return np.minimum(lam, cap)


def demand_matrix(means, frames: int, seed: int, cap_factor: float = 10.0) -> np.ndarray:
    """(frames, users) demand array; user u uses stream u so columns are independent."""
    means = np.asarray(means, dtype=float)
    out = np.zeros((int(frames), len(means)))
    for u, m in enumerate(means):
        if m > 0:
            out[:, u] = generate_arrivals(m, frames, seed, cap_factor * m, stream=u)
    return out


def update_queue(q, phi, lam, Z, r, delta, arrival_time=None):
    """One TTI of the fluid queue recursion.

    q' = max(q + phi*lam*Z*T_a - r*delta/8, 0) where the arrival clock T_a is
    the TTI ``delta`` unless ``arrival_time`` (e.g. the frame length) is given.
    Broadcasts over arrays.
    """
    ta = delta if arrival_time is None else arrival_time
    arrivals = np.asarray(phi) * np.asarray(lam) * np.asarray(Z) * ta
    served = np.asarray(r) * delta / 8.0
    return np.maximum(np.asarray(q, dtype=float) + arrivals - served, 0.0)


@dataclass
class QueueMatrix:
    q: np.ndarray            # (M, U) bytes
    capacity: float = 10 * 1024

    def per_ru(self) -> np.ndarray:
        return self.q.sum(axis=1)


def buffer_ok(queues: QueueMatrix):
    """(True, []) when every RU holds at most Q_max bytes, else (False, offending RUs)."""
    tot = queues.per_ru()
    bad = [int(m) for m in np.flatnonzero(tot > queues.capacity)]
    return (not bad), bad


@dataclass
class TrafficState:
    demand: np.ndarray                       # (frames, U) packets/s
    packet_size: np.ndarray                  # (U,) bytes
    demand_cap: np.ndarray                   # (U,) packets/s
    history: np.ndarray = field(default=None)  # frames observed before the episode
