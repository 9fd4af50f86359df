"""Achievable rates for both service classes and the uRLLC latency chain."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc

N0_DBM = -110.0


def dbm_to_w(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def db_to_lin(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


N0 = float(dbm_to_w(N0_DBM))          # W per RB
SNR_FLOOR = float(db_to_lin(5.0))      # Gamma_0


class SnrFloorError(ValueError):
    """An assigned uRLLC sub-band sits below the SNR floor."""


def gaussian_q(y):
    return 0.5 * erfc(np.asarray(y, dtype=float) / math.sqrt(2.0))


@lru_cache(maxsize=64)
def q_inverse(x: float) -> float:
    """y with Q(y) = x, found by bracketed root search."""
    if not (0.0 < x < 1.0):
        raise ValueError(f"Q-inverse needs 0 < x < 1, got {x}")
    return brentq(lambda y: float(gaussian_q(y)) - x, -40.0, 40.0, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)


def dispersion(beta: float, delta: float, p_e: float) -> float:
    """Per-RB rate loss (bit/s per Hz of RB) of the short block-length term, V = 1."""
    return q_inverse(p_e) / math.sqrt(delta * beta)


def embb_rate(p, g, beta: float, n0: float = N0) -> float:
    p = np.asarray(p, dtype=float)
    g = np.asarray(g, dtype=float)
    if np.any(p < 0) or np.any(g < 0):
        raise ValueError("power and gain must be non-negative")
    return float(beta * np.sum(np.log2(1.0 + p * g / n0)))


def urllc_rate_terms(p, pi, g, beta, delta, p_e, n0=N0, snr_floor=SNR_FLOOR, check=True):
    p = np.asarray(p, dtype=float)
    pi = np.asarray(pi, dtype=float)
    snr = p * np.asarray(g, dtype=float) / n0
    if check and np.any((pi >= 1.0) & (snr < snr_floor * (1 - 1e-9))):
        raise SnrFloorError("assigned uRLLC RB below the SNR floor")
    return np.maximum(beta * (np.log2(1.0 + snr) - pi * dispersion(beta, delta, p_e)), 0.0)


def urllc_rate(p, pi, g, beta: float, delta: float, p_e: float, n0: float = N0,
               snr_floor: float = SNR_FLOOR, check: bool = True) -> float:
    """Shannon rate minus the dispersion penalty, floored at 0 per sub-band."""
    return float(np.sum(urllc_rate_terms(p, pi, g, beta, delta, p_e, n0, snr_floor, check)))


@dataclass(frozen=True)
class LatencyParams:
    mu_cu: float = 1e7            # tasks/s
    mu_du: float = 1e7
    mh_capacity: float = 50e9     # bit/s
    fh_capacity: float = 1e9      # bit/s per RU
    z_urllc: float = 1024.0       # bytes
    z_embb: float = 125 * 1024.0
    symbol_time: float = 0.125e-3 / 7
    budget: float = 0.5e-3
    processing: str = "literal"   # or "mm1"
    mh_packet: str = "urllc"      # or "weighted"


@dataclass(frozen=True)
class LatencyBreakdown:
    pro_cu: float
    tx_cu_du: float
    pro_du: float
    tx_du_ru: float
    tx_ru_u: float
    pro_ru: float
    budget: float

    @property
    def total(self) -> float:
        return self.pro_cu + self.tx_cu_du + self.pro_du + self.tx_du_ru + self.tx_ru_u + self.pro_ru

    @property
    def within_budget(self) -> bool:
        return self.total <= self.budget


def _processing(load: float, mu: float, form: str) -> float:
    if form == "mm1":
        return math.inf if load >= mu else (1.0 / (mu - load) if load > 0 else 0.0)
    return load / mu


def latency_breakdown(demand, flow_split, rates, urllc, params: LatencyParams = LatencyParams(),
                      embb=None):
    """Latency chain of every uRLLC user for one TTI.

    demand: (U,) packets/s; flow_split: (M, U); rates: (M, len(urllc)) bit/s
    achieved by the uRLLC users; urllc: indices of uRLLC users.  Returns a
    list of LatencyBreakdown in the order of ``urllc``.  A user with traffic
    on an RU that gives it no rate gets an infinite transmission term.
    """
    lam = np.asarray(demand, dtype=float)
    phi = np.asarray(flow_split, dtype=float)
    urllc = np.asarray(urllc, dtype=int)
    rates = np.asarray(rates, dtype=float).reshape(phi.shape[0], len(urllc))
    total = float(lam.sum())
    if params.mh_packet == "weighted" and total > 0:
        z_mh = params.z_urllc
        if embb is not None:
            emb = float(lam[np.asarray(embb, dtype=int)].sum())
            z_mh = (emb * params.z_embb + float(lam[urllc].sum()) * params.z_urllc) / total
    else:
        z_mh = params.z_urllc
    pro_cu = _processing(total, params.mu_cu, params.processing)
    pro_du = _processing(total, params.mu_du, params.processing)
    tx_mh = total * z_mh * 8.0 / params.mh_capacity
    bits = phi[:, urllc] * lam[urllc][None, :] * params.z_urllc * 8.0     # (M, n_ur)
    tx_fh = float(np.max(bits.sum(axis=1) / params.fh_capacity)) if len(urllc) else 0.0
    pro_ru = 3.0 * params.symbol_time
    out = []
    for k in range(len(urllc)):
        worst = 0.0
        for m in range(phi.shape[0]):
            if bits[m, k] <= 0:
                continue
            worst = max(worst, bits[m, k] / rates[m, k] if rates[m, k] > 0 else math.inf)
        out.append(LatencyBreakdown(pro_cu, tx_mh, pro_du, tx_fh, worst, pro_ru, params.budget))
    return out
