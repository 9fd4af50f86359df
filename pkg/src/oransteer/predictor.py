"""Per-user demand forecasting with a small stacked LSTM written in numpy.

One shared model reads the vector of all users' normalized demands over the
last W frames and predicts the next frame's vector.  Training uses truncated
windows, full backpropagation through time and Adam.
"""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
GATES = 4          # input, forget, cell update, output (in that order)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Normalizer:
    lo: np.ndarray
    hi: np.ndarray

    def transform(self, x):
        x = np.asarray(x, dtype=float)
        span = self.hi - self.lo
        flat = span <= 0
        out = (x - self.lo) / np.where(flat, 1.0, span)
        return np.where(flat, 0.5, out)

    def invert(self, y):
        y = np.asarray(y, dtype=float)
        span = self.hi - self.lo
        return np.where(span <= 0, self.lo, self.lo + y * span)


def fit_normalizer(series) -> Normalizer:
    s = np.asarray(series, dtype=float)
    if s.size == 0:
        raise ValueError("cannot fit a normalizer on an empty series")
    if s.ndim == 1:
        s = s[:, None]
    return Normalizer(s.min(axis=0), s.max(axis=0))


@dataclass
class TrainConfig:
    window: int = 10
    epochs: int = 50
    hidden: int = 50
    layers: int = 2
    train_fraction: float = 0.8
    dropout: float = 0.01
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train fraction must lie in (0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.layers < 1 or self.hidden < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("layers, hidden, batch size must be positive")


@dataclass
class LstmParams:
    """Stacked LSTM weights.

    W[l] has shape (in_l + H, 4H) acting on [x, h_prev]; b[l] is (4H,).
    The readout maps the top hidden state to the output dimension.
    """
    W: list
    b: list
    Wy: np.ndarray
    by: np.ndarray
    trained: bool = False

    @property
    def hidden(self) -> int:
        return self.b[0].shape[0] // GATES

    @property
    def n_in(self) -> int:
        return self.W[0].shape[0] - self.hidden

    @property
    def n_out(self) -> int:
        return self.by.shape[0]

    def arrays(self) -> list:
        return [*self.W, *self.b, self.Wy, self.by]

    def copy(self) -> "LstmParams":
        return LstmParams([w.copy() for w in self.W], [v.copy() for v in self.b],
                          self.Wy.copy(), self.by.copy(), self.trained)


def init_params(n_in: int, n_out: int, hidden: int = 50, layers: int = 2, seed: int = 0) -> LstmParams:
    """Uniform +-1/sqrt(fan-in) weights, forget-gate bias 1."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    W, b = [], []
    for layer in range(layers):
        fan = (n_in if layer == 0 else hidden) + hidden
        lim = 1.0 / math.sqrt(fan)
        W.append(rng.uniform(-lim, lim, size=(fan, GATES * hidden)))
        bias = np.zeros(GATES * hidden)
        bias[hidden:2 * hidden] = 1.0
        b.append(bias)
    lim = 1.0 / math.sqrt(hidden)
    return LstmParams(W, b, rng.uniform(-lim, lim, size=(hidden, n_out)), np.zeros(n_out))


def _sigmoid(x):
    # split to avoid overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _forward(params: LstmParams, X, state=None, masks=None):
    """Batched forward pass.  X: (B, W, n_in).  Returns (yhat (B, n_out), cache, state)."""
    X = np.asarray(X, dtype=float)
    B, T, _ = X.shape
    H = params.hidden
    L = len(params.W)
    if state is None or len(state) == 0:
        h = [np.zeros((B, H)) for _ in range(L)]
        c = [np.zeros((B, H)) for _ in range(L)]
    else:
        h = [np.broadcast_to(s, (B, H)).copy() for s in state[0]]
        c = [np.broadcast_to(s, (B, H)).copy() for s in state[1]]
    cache = []
    for t in range(T):
        inp = X[:, t, :]
        step = []
        for l in range(L):
            z = np.concatenate([inp, h[l]], axis=1)
            a = z @ params.W[l] + params.b[l]
            i = _sigmoid(a[:, :H])
            f = _sigmoid(a[:, H:2 * H])
            g = np.tanh(a[:, 2 * H:3 * H])
            o = _sigmoid(a[:, 3 * H:])
            c_prev = c[l]
            c[l] = f * c_prev + i * g
            tc = np.tanh(c[l])
            h[l] = o * tc
            step.append((z, i, f, g, o, c_prev, tc))
            inp = h[l]
            if masks is not None and l < L - 1:
                inp = inp * masks[l]
        cache.append(step)
    top = h[-1] if masks is None else h[-1] * masks[-1]
    yhat = top @ params.Wy + params.by
    return yhat, (cache, top), ([x.copy() for x in h], [x.copy() for x in c])


def lstm_forward(params: LstmParams, window, state=None):
    """Prediction for one window of normalized demands (W, n_in) and the final state."""
    X = np.asarray(window, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    yhat, _, st = _forward(params, X[None], state)
    return yhat[0], ([s[0] for s in st[0]], [s[0] for s in st[1]])


def _backward(params: LstmParams, cache, dy, masks=None):
    """Gradients of 0.5*sum(dy * yhat)-style loss given dL/dyhat (B, n_out)."""
    steps, top = cache
    H = params.hidden
    L = len(params.W)
    gW = [np.zeros_like(w) for w in params.W]
    gb = [np.zeros_like(v) for v in params.b]
    gWy = top.T @ dy
    gby = dy.sum(axis=0)
    dtop = dy @ params.Wy.T
    if masks is not None:
        dtop = dtop * masks[-1]
    B = dy.shape[0]
    dh = [np.zeros((B, H)) for _ in range(L)]
    dc = [np.zeros((B, H)) for _ in range(L)]
    dh[-1] = dh[-1] + dtop
    for t in range(len(steps) - 1, -1, -1):
        d_in = None
        for l in range(L - 1, -1, -1):
            z, i, f, g, o, c_prev, tc = steps[t][l]
            dh_l = dh[l] if d_in is None else dh[l] + d_in
            do = dh_l * tc
            dc_l = dc[l] + dh_l * o * (1.0 - tc ** 2)
            di = dc_l * g
            dg = dc_l * i
            df = dc_l * c_prev
            da = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g ** 2), do * o * (1 - o)], axis=1)
            gW[l] += z.T @ da
            gb[l] += da.sum(axis=0)
            dz = da @ params.W[l].T
            n_in_l = z.shape[1] - H
            d_in = dz[:, :n_in_l]
            if masks is not None and l > 0:
                d_in = d_in * masks[l - 1]
            dh[l] = dz[:, n_in_l:]
            dc[l] = dc_l * f
        # d_in of layer 0 is the input gradient; not needed
    return gW, gb, gWy, gby


def loss_and_grad(params: LstmParams, X, Y, masks=None):
    """Mean squared error over all outputs and its gradient."""
    yhat, cache, _ = _forward(params, X, masks=masks)
    err = yhat - Y
    loss = float(np.mean(err ** 2))
    dy = 2.0 * err / err.size
    return loss, _backward(params, cache, dy, masks)


def make_windows(series, window: int):
    s = np.asarray(series, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    n = s.shape[0] - window
    if n <= 0:
        return np.zeros((0, window, s.shape[1])), np.zeros((0, s.shape[1]))
    idx = np.arange(window)[None, :] + np.arange(n)[:, None]
    return s[idx], s[window:]


@dataclass
class TrainResult:
    params: LstmParams
    normalizer: Normalizer
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_per_user: np.ndarray = None
    config: TrainConfig = None

    @property
    def val_mse(self) -> float:
        return self.val_loss[-1] if self.val_loss else math.nan


def evaluate(params: LstmParams, X, Y, chunk: int = 2048):
    """(overall MSE, per-output MSE) on normalized windows."""
    if len(X) == 0:
        return math.nan, np.full(params.n_out, math.nan)
    sq = np.zeros(params.n_out)
    for s in range(0, len(X), chunk):
        yhat, _, _ = _forward(params, X[s:s + chunk])
        sq += ((yhat - Y[s:s + chunk]) ** 2).sum(axis=0)
    per = sq / len(X)
    return float(per.mean()), per


def train(series, config: TrainConfig = TrainConfig(), seed: int = 0, init: TrainResult | None = None) -> TrainResult:
    """Fit on the first train_fraction of the series, report MSE on the rest.

    series: (T,) or (T, U) raw demands.  The normalizer is fit on the
    training range only.  ``init`` continues from earlier weights and keeps
    their normalizer (used for the per-frame refit).
    """
    s = np.asarray(series, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    W = config.window
    if s.shape[0] < 10 * W:
        raise ValueError(f"series of length {s.shape[0]} is shorter than 10 windows ({10 * W})")
    split = int(round(config.train_fraction * s.shape[0]))
    norm = fit_normalizer(s[:split]) if init is None else init.normalizer
    z = norm.transform(s)
    Xtr, Ytr = make_windows(z[:split], W)
    # validation windows may look back into the training part
    Xall, Yall = make_windows(z, W)
    Xva, Yva = Xall[split - W:], Yall[split - W:]
    U = s.shape[1]
    params = init_params(U, U, config.hidden, config.layers, seed) if init is None else init.params.copy()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 104723]))
    m = [np.zeros_like(a) for a in params.arrays()]
    v = [np.zeros_like(a) for a in params.arrays()]
    k = 0
    res = TrainResult(params, norm, config=config)
    keep = 1.0 - config.dropout
    for epoch in range(config.epochs):
        order = rng.permutation(len(Xtr))
        tot = 0.0
        for st in range(0, len(order), config.batch_size):
            sel = order[st:st + config.batch_size]
            masks = None
            if config.dropout > 0:
                masks = [(rng.random((len(sel), config.hidden)) < keep) / keep for _ in range(config.layers)]
            loss, (gW, gb, gWy, gby) = loss_and_grad(params, Xtr[sel], Ytr[sel], masks)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}, batch starting {st}")
            tot += loss * len(sel)
            k += 1
            arrs = params.arrays()
            for j, gr in enumerate([*gW, *gb, gWy, gby]):
                m[j] = config.beta1 * m[j] + (1 - config.beta1) * gr
                v[j] = config.beta2 * v[j] + (1 - config.beta2) * gr * gr
                mh = m[j] / (1 - config.beta1 ** k)
                vh = v[j] / (1 - config.beta2 ** k)
                arrs[j] -= config.learning_rate * mh / (np.sqrt(vh) + config.eps)
        res.train_loss.append(tot / max(len(order), 1))
        vl, per = evaluate(params, Xva, Yva)
        res.val_loss.append(vl)
        res.val_per_user = per
        log.info("epoch %d train %.5f val %.5f", epoch + 1, res.train_loss[-1], vl)
    params.trained = True
    return res


def predict_demand(params: LstmParams, normalizer: Normalizer, history, cap=None) -> np.ndarray:
    """Next-frame demand per user from the W most recent frames (W, U), clamped to [0, cap]."""
    if not params.trained:
        raise ValueError("parameters are untrained")
    h = np.asarray(history, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    y, _ = lstm_forward(params, normalizer.transform(h))
    lam = normalizer.invert(y)
    hi = np.inf if cap is None else np.asarray(cap, dtype=float)
    return np.clip(lam, 0.0, hi)


# -- persistence -----------------------------------------------------------

def save_params(path, params: LstmParams, normalizer: Normalizer = None) -> None:
    """Plain-text dump: a versioned header then each matrix row-major."""
    buf = io.StringIO()
    H, L = params.hidden, len(params.W)
    buf.write(f"oransteer-lstm {FORMAT_VERSION}\n")
    buf.write(f"n_in {params.n_in} n_out {params.n_out} hidden {H} layers {L} trained {int(params.trained)}\n")
    mats = [(f"W{l}", params.W[l]) for l in range(L)] + [(f"b{l}", params.b[l]) for l in range(L)]
    mats += [("Wy", params.Wy), ("by", params.by)]
    if normalizer is not None:
        mats += [("norm_lo", normalizer.lo), ("norm_hi", normalizer.hi)]
    for name, a in mats:
        a2 = np.atleast_2d(a)
        buf.write(f"{name} {a2.shape[0]} {a2.shape[1]}\n")
        np.savetxt(buf, a2, fmt="%.17g")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_params(path):
    """Inverse of save_params; returns (params, normalizer or None)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != "oransteer-lstm" or int(magic[1]) != FORMAT_VERSION:
        raise ValueError(f"{path}: not a version {FORMAT_VERSION} parameter file")
    meta = lines[1].split()
    info = {meta[i]: int(meta[i + 1]) for i in range(0, len(meta), 2)}
    mats = {}
    pos = 2
    while pos < len(lines):
        name, r, c = lines[pos].split()
        r, c = int(r), int(c)
        rows = [np.array(lines[pos + 1 + i].split(), dtype=float) for i in range(r)]
        mats[name] = np.vstack(rows).reshape(r, c)
        pos += 1 + r
    L = info["layers"]
    params = LstmParams([mats[f"W{l}"] for l in range(L)], [mats[f"b{l}"].ravel() for l in range(L)],
                        mats["Wy"], mats["by"].ravel(), bool(info["trained"]))
    norm = None
    if "norm_lo" in mats:
        norm = Normalizer(mats["norm_lo"].ravel(), mats["norm_hi"].ravel())
    return params, norm
