"""Hand-differentiated network pieces: LSTM layers, multi-view frequency
LSTMs, the projection + time-LSTM backend, softmax cross-entropy and a
finite-difference gradient checker.

Parameters live in flat ``{name: ndarray}`` mappings; every forward returns
a cache that the matching backward consumes, and backwards return
gradients keyed by the same names.  Nothing here updates parameters.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .errors import ConfigError, InvalidInputError


@dataclass
class LstmParams:
    Wx: np.ndarray  # (I, 4H)
    Wh: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)

    @classmethod
    def from_store(cls, params, prefix):
        return cls(params[prefix + ".Wx"], params[prefix + ".Wh"], params[prefix + ".b"])

    @property
    def hidden(self):
        return self.Wh.shape[0]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_step(p, x_t, h_prev, c_prev):
    """One step of the standard LSTM; gate order input, forget, cell, output."""
    hid = p.hidden
    z = x_t @ p.Wx + h_prev @ p.Wh + p.b
    i = _sigmoid(z[..., :hid])
    f = _sigmoid(z[..., hid : 2 * hid])
    g = np.tanh(z[..., 2 * hid : 3 * hid])
    o = _sigmoid(z[..., 3 * hid :])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def lstm_param_count(input_dim, hidden):
    return 4 * hidden * (input_dim + hidden) + 4 * hidden


def init_lstm(rng, params, prefix, input_dim, hidden):
    bound = 1.0 / np.sqrt(input_dim + hidden)
    params[prefix + ".Wx"] = rng.uniform(-bound, bound, (input_dim, 4 * hidden))
    params[prefix + ".Wh"] = rng.uniform(-bound, bound, (hidden, 4 * hidden))
    b = rng.uniform(-bound, bound, 4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    params[prefix + ".b"] = b


def init_linear(rng, params, prefix, n_in, n_out):
    bound = 1.0 / np.sqrt(n_in)
    params[prefix + ".W"] = rng.uniform(-bound, bound, (n_in, n_out))
    params[prefix + ".b"] = rng.uniform(-bound, bound, n_out)


def lstm_layer_forward(p, x_seq, reverse=False):
    """Run over axis 0 of ``x_seq`` (S, B, I) from zero initial state."""
    n_steps, batch, _ = x_seq.shape
    zx = (x_seq.reshape(n_steps * batch, -1) @ p.Wx + p.b).reshape(n_steps, batch, -1)
    zeros = np.zeros((batch, p.hidden))
    hs, cs, acts = _kernels.lstm_forward(zx, p.Wh, zeros, zeros, reverse)
    return hs, (x_seq, hs, cs, acts, reverse)


def lstm_layer_backward(p, cache, dhs):
    x_seq, hs, cs, acts, reverse = cache
    n_steps, batch, _ = x_seq.shape
    zeros = np.zeros((batch, p.hidden))
    dz, _, _ = _kernels.lstm_backward(dhs, p.Wh, acts, cs, zeros, reverse)
    hprev = np.empty_like(hs)
    if reverse:
        hprev[:-1] = hs[1:]
        hprev[-1] = 0.0
    else:
        hprev[1:] = hs[:-1]
        hprev[0] = 0.0
    dz2 = dz.reshape(n_steps * batch, -1)
    grads = {
        "Wx": x_seq.reshape(n_steps * batch, -1).T @ dz2,
        "Wh": hprev.reshape(n_steps * batch, -1).T @ dz2,
        "b": dz2.sum(axis=0),
    }
    dx = (dz2 @ p.Wx.T).reshape(x_seq.shape)
    return dx, grads


def _add_grads(out, prefix, grads):
    for k, v in grads.items():
        out[f"{prefix}.{k}"] = v


# ---------------------------------------------------------------- FLSTM


@dataclass
class MvFlstmConfig:
    view_windows: list = field(default_factory=lambda: [8, 16, 32])
    view_hops: list = field(default_factory=lambda: [4, 8, 16])
    layers: int = 1
    cells: int = 8
    input_len: int = 192

    def __post_init__(self):
        self.view_windows = [int(w) for w in self.view_windows]
        self.view_hops = [int(h) for h in self.view_hops]
        if len(self.view_windows) != len(self.view_hops) or not self.view_windows:
            raise ConfigError("view_windows and view_hops must be non-empty and of equal length")
        if self.layers < 1 or self.cells < 1:
            raise ConfigError("FLSTM layers and cells must be positive")
        for w, h in zip(self.view_windows, self.view_hops):
            if h < 1 or w < 1 or w > self.input_len:
                raise ConfigError(f"view window {w} / hop {h} invalid for input length {self.input_len}")
            if (self.input_len - w) % h:
                raise ConfigError(f"(input_len - window) = {self.input_len - w} is not divisible by hop {h}")

    def steps(self):
        return [(self.input_len - w) // h + 1 for w, h in zip(self.view_windows, self.view_hops)]

    @property
    def output_len(self):
        return sum(self.steps()) * 2 * self.cells

    def scaled(self, factor):
        """Same views with windows, hops and input scaled by ``factor``."""
        return MvFlstmConfig(
            [w * factor for w in self.view_windows],
            [h * factor for h in self.view_hops],
            self.layers,
            self.cells,
            self.input_len * factor,
        )

    def to_dict(self):
        return asdict(self)


def flstm_view_steps(length, window, hop):
    if window > length or (length - window) % hop:
        raise ConfigError(f"window {window}, hop {hop} do not tile input length {length}")
    return (length - window) // hop + 1


def init_flstm_view(rng, params, prefix, window, layers, cells):
    for layer in range(layers):
        n_in = window if layer == 0 else 2 * cells
        for d in ("fwd", "bwd"):
            init_lstm(rng, params, f"{prefix}.l{layer}.{d}", n_in, cells)


def run_flstm_view(view_params, frames, window, hop, layers=None, prefix="view"):
    """Bidirectional multi-layer LSTM sliding over frequency within each frame.

    ``frames`` is (B, len) or (len,); returns (B, n_steps, 2H) (or
    (n_steps, 2H) for a single frame) plus the cache for the backward pass.
    """
    frames = np.asarray(frames, dtype=np.float64)
    single = frames.ndim == 1
    if single:
        frames = frames[None]
    n_steps = flstm_view_steps(frames.shape[1], window, hop)
    if layers is None:
        layers = 0
        while f"{prefix}.l{layers}.fwd.Wx" in view_params:
            layers += 1
    x = sliding_window_view(frames, window, axis=1)[:, ::hop][:, :n_steps].transpose(1, 0, 2)
    x = np.ascontiguousarray(x)
    caches = []
    for layer in range(layers):
        pf = LstmParams.from_store(view_params, f"{prefix}.l{layer}.fwd")
        pb = LstmParams.from_store(view_params, f"{prefix}.l{layer}.bwd")
        hf, cf = lstm_layer_forward(pf, x, reverse=False)
        hb, cb = lstm_layer_forward(pb, x, reverse=True)
        caches.append((cf, cb))
        x = np.concatenate([hf, hb], axis=2)
    out = x.transpose(1, 0, 2)
    cache = (frames.shape, window, hop, layers, prefix, caches)
    return (out[0] if single else out), cache


def flstm_view_backward(view_params, cache, dout):
    shape, window, hop, layers, prefix, caches = cache
    width = 2 * view_params[f"{prefix}.l0.fwd.Wh"].shape[0]
    dx = np.ascontiguousarray(np.asarray(dout).reshape(shape[0], -1, width).transpose(1, 0, 2))
    grads = {}
    for layer in range(layers - 1, -1, -1):
        pf = LstmParams.from_store(view_params, f"{prefix}.l{layer}.fwd")
        pb = LstmParams.from_store(view_params, f"{prefix}.l{layer}.bwd")
        cf, cb = caches[layer]
        hid = pf.hidden
        dxf, gf = lstm_layer_backward(pf, cf, np.ascontiguousarray(dx[..., :hid]))
        dxb, gb = lstm_layer_backward(pb, cb, np.ascontiguousarray(dx[..., hid:]))
        _add_grads(grads, f"{prefix}.l{layer}.fwd", gf)
        _add_grads(grads, f"{prefix}.l{layer}.bwd", gb)
        dx = dxf + dxb
    dframes = np.zeros(shape)
    for s in range(dx.shape[0]):
        dframes[:, s * hop : s * hop + window] += dx[s]
    return dframes, grads


def init_mv_flstm(rng, params, prefix, config):
    for v, w in enumerate(config.view_windows):
        init_flstm_view(rng, params, f"{prefix}.v{v}", w, config.layers, config.cells)


def mv_flstm_param_count(config):
    per_view = []
    for w in config.view_windows:
        n = 2 * lstm_param_count(w, config.cells)
        n += (config.layers - 1) * 2 * lstm_param_count(2 * config.cells, config.cells)
        per_view.append(n)
    return sum(per_view)


def mv_flstm_forward(config, params, frames, prefix="fe"):
    """Concatenate every step output of every view: (B, len) -> (B, output_len)."""
    frames = np.asarray(frames, dtype=np.float64)
    single = frames.ndim == 1
    if single:
        frames = frames[None]
    if frames.shape[1] != config.input_len:
        raise ConfigError(f"MV-FLSTM expects input length {config.input_len}, got {frames.shape[1]}")
    outs, caches = [], []
    for v, (w, h) in enumerate(zip(config.view_windows, config.view_hops)):
        out, cache = run_flstm_view(params, frames, w, h, config.layers, prefix=f"{prefix}.v{v}")
        outs.append(out.reshape(frames.shape[0], -1))
        caches.append(cache)
    feat = np.concatenate(outs, axis=1)
    return (feat[0] if single else feat), caches


def mv_flstm_backward(config, params, caches, dfeat):
    dfeat = np.atleast_2d(dfeat)
    grads = {}
    dframes = None
    start = 0
    for cache, n in zip(caches, config.steps()):
        width = n * 2 * config.cells
        d, g = flstm_view_backward(params, cache, dfeat[:, start : start + width])
        grads.update(g)
        dframes = d if dframes is None else dframes + d
        start += width
    return dframes, grads


# -------------------------------------------------------------- backend


@dataclass
class BackendConfig:
    projection_out: int = 320
    tlstm_layers: int = 2
    tlstm_cells: int = 64
    num_classes: int = 8

    def __post_init__(self):
        if self.projection_out < 1 or self.tlstm_cells < 1 or self.num_classes < 1 or self.tlstm_layers < 0:
            raise ConfigError("backend dimensions must be positive")

    def to_dict(self):
        return asdict(self)


def init_backend(rng, params, prefix, config, input_dim):
    init_linear(rng, params, f"{prefix}.proj", input_dim, config.projection_out)
    n_in = config.projection_out
    for layer in range(config.tlstm_layers):
        init_lstm(rng, params, f"{prefix}.tlstm.l{layer}", n_in, config.tlstm_cells)
        n_in = config.tlstm_cells
    init_linear(rng, params, f"{prefix}.cls", n_in, config.num_classes)


def backend_param_count(config, input_dim):
    n = input_dim * config.projection_out + config.projection_out
    n_in = config.projection_out
    for _ in range(config.tlstm_layers):
        n += lstm_param_count(n_in, config.tlstm_cells)
        n_in = config.tlstm_cells
    return n + n_in * config.num_classes + config.num_classes


def backend_forward(config, params, feats, prefix="backend"):
    """Projection -> unidirectional time LSTM stack -> classifier.

    ``feats`` is (N, T, F); returns logits (N, T, C).  Time runs forward
    only, so logits at t never see frames after t.
    """
    feats = np.asarray(feats, dtype=np.float64)
    n, t, f = feats.shape
    proj = feats.reshape(n * t, f) @ params[f"{prefix}.proj.W"] + params[f"{prefix}.proj.b"]
    x = np.ascontiguousarray(proj.reshape(n, t, -1).transpose(1, 0, 2))
    caches = []
    for layer in range(config.tlstm_layers):
        p = LstmParams.from_store(params, f"{prefix}.tlstm.l{layer}")
        x, c = lstm_layer_forward(p, x)
        caches.append(c)
    top = x.transpose(1, 0, 2).reshape(n * t, -1)
    logits = top @ params[f"{prefix}.cls.W"] + params[f"{prefix}.cls.b"]
    return logits.reshape(n, t, -1), (feats, top, caches, prefix)


def backend_backward(config, params, cache, dlogits):
    feats, top, caches, prefix = cache
    n, t, f = feats.shape
    dl = dlogits.reshape(n * t, -1)
    grads = {f"{prefix}.cls.W": top.T @ dl, f"{prefix}.cls.b": dl.sum(axis=0)}
    dx = (dl @ params[f"{prefix}.cls.W"].T).reshape(n, t, -1).transpose(1, 0, 2)
    dx = np.ascontiguousarray(dx)
    for layer in range(config.tlstm_layers - 1, -1, -1):
        p = LstmParams.from_store(params, f"{prefix}.tlstm.l{layer}")
        dx, g = lstm_layer_backward(p, caches[layer], dx)
        _add_grads(grads, f"{prefix}.tlstm.l{layer}", g)
    dproj = dx.transpose(1, 0, 2).reshape(n * t, -1)
    grads[f"{prefix}.proj.W"] = feats.reshape(n * t, f).T @ dproj
    grads[f"{prefix}.proj.b"] = dproj.sum(axis=0)
    dfeats = (dproj @ params[f"{prefix}.proj.W"].T).reshape(n, t, f)
    return dfeats, grads


def tlstm_forward(config, backend_params, feature_sequence, prefix="backend"):
    """Per-frame logits (T, C) for one (T, F) feature sequence."""
    logits, _ = backend_forward(config, backend_params, np.asarray(feature_sequence)[None], prefix)
    return logits[0]


# ----------------------------------------------------------------- loss


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def weighted_ce(logits, labels, weights):
    """sum(weights * nll) and its gradient w.r.t. ``logits``."""
    labels = np.asarray(labels)
    c = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InvalidInputError(f"labels must lie in [0, {c})")
    logp = _log_softmax(logits)
    nll = -np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    grad = np.exp(logp)
    np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], -1) - 1.0, -1)
    return float(np.sum(weights * nll)), grad * weights[..., None]


def softmax_ce(logits, labels):
    """Mean per-frame cross-entropy of (T, C) logits and its gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:-1]:
        raise InvalidInputError(f"{labels.shape[0]} labels for {logits.shape[0]} frames")
    return weighted_ce(logits, labels, np.full(labels.shape, 1.0 / labels.size))


# ------------------------------------------------------------ gradcheck


def finite_diff_gradcheck(op, params, step=1e-5, num_coords=200, seed=0, names=None, details=False):
    """Largest relative error between analytic and central-difference gradients.

    ``op(params) -> (loss, grads)``.  ``num_coords`` coordinates are sampled
    without replacement across the tensors in ``names`` (default: every
    tensor that has a gradient); all of them are used if there are fewer.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = op(params)
    names = sorted(n for n in (names or grads) if n in grads)
    sizes = np.array([params[n].size for n in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat = np.arange(total) if total <= num_coords else np.sort(rng.choice(total, num_coords, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    per_tensor = {}
    for g in flat:
        t = int(np.searchsorted(offsets, g, side="right") - 1)
        name, idx = names[t], int(g - offsets[t])
        arr = params[name].reshape(-1)
        orig = arr[idx]
        arr[idx] = orig + step
        lp, _ = op(params)
        arr[idx] = orig - step
        lm, _ = op(params)
        arr[idx] = orig
        num = (lp - lm) / (2 * step)
        ana = float(np.asarray(grads[name]).reshape(-1)[idx])
        err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
        worst = max(worst, err)
        per_tensor[name] = max(per_tensor.get(name, 0.0), err)
    return (worst, per_tensor) if details else worst
