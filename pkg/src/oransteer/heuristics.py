"""Frame-scale rApps: bandwidth split between the two slices and flow split over RUs."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

ALPHA_MIN = 0.05
ALPHA_MAX = 0.95


@dataclass
class SteeringPlan:
    alpha: float
    flow_split: np.ndarray        # (M, U), columns sum to 1
    demand: np.ndarray            # (U,) predicted packets/s
    frame: int = 0

    @property
    def selected(self) -> np.ndarray:
        return self.flow_split > 0


def bandwidth_split(demand, embb, urllc, tau_embb: float, tau_urllc: float,
                    alpha_min: float = ALPHA_MIN, alpha_max: float = ALPHA_MAX) -> float:
    """uRLLC share of the band from the demand ratio times the latency-threshold ratio."""
    if tau_embb <= 0 or tau_urllc <= 0:
        raise ValueError("latency thresholds must be positive")
    lam = np.asarray(demand, dtype=float)
    s_em = float(lam[np.asarray(embb, dtype=int)].sum())
    s_ur = float(lam[np.asarray(urllc, dtype=int)].sum())
    if s_em <= 0:
        log.info("no eMBB demand, giving the band to uRLLC")
        return alpha_max
    raw = (s_ur / s_em) * (tau_embb / tau_urllc)
    return float(min(max(raw, alpha_min), alpha_max))


def flow_split(rate_history) -> np.ndarray:
    """phi[m, u] = mean recent rate on RU m over its sum across RUs.

    rate_history: (W, M, U).  A user with no rate anywhere is split evenly.
    """
    hist = np.asarray(rate_history, dtype=float)
    if hist.ndim == 2:
        hist = hist[None]
    if hist.shape[0] < 1:
        raise ValueError("empty rate history")
    zbar = hist.mean(axis=0)
    tot = zbar.sum(axis=0)
    M = zbar.shape[0]
    phi = np.full_like(zbar, 1.0 / M)
    ok = tot > 0
    if not np.all(ok):
        log.debug("uniform split for %d users without rate history", int((~ok).sum()))
    phi[:, ok] = zbar[:, ok] / tot[ok]
    return phi


def initial_plan(num_rus: int, num_users: int = 0, demand=None) -> SteeringPlan:
    if num_rus < 1:
        raise ValueError("need at least one RU")
    lam = np.zeros(num_users) if demand is None else np.asarray(demand, dtype=float)
    return SteeringPlan(0.5, np.full((num_rus, len(lam)), 1.0 / num_rus), lam, 0)
