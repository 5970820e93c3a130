"""The unified acoustic model: an SC frontend, an MC frontend with a neural
beamforming layer, and one backend shared by both.

Inputs are routed by type.  SC utterances go through ``sc_fe``, MC ones
through ``mc_fe`` (beamforming layer + its own MV-FLSTM); both end in
``backend``.  ``zero_pad`` mode has no SC frontend and pushes SC input
through the MC path with silent auxiliary channels.
"""

from dataclasses import dataclass, field

import numpy as np

from . import beamform as bf
from . import features as fx
from . import neural_core as nc
from .errors import ConfigError, InvalidInputError
from .signal_sim import ArrayGeometry, default_geometry

MODES = ("unified", "sc_only", "mc_only", "zero_pad")
PARTITIONS = ("sc_fe", "mc_fe", "backend")

MODE_PARTITIONS = {
    "unified": ("sc_fe", "mc_fe", "backend"),
    "sc_only": ("sc_fe", "backend"),
    "mc_only": ("mc_fe", "backend"),
    "zero_pad": ("mc_fe", "backend"),
}


@dataclass
class ModelConfig:
    features: fx.FeatureConfig = field(default_factory=fx.FeatureConfig)
    sc_flstm: nc.MvFlstmConfig = field(default_factory=nc.MvFlstmConfig)
    mc_flstm: nc.MvFlstmConfig = None
    backend: nc.BackendConfig = field(default_factory=nc.BackendConfig)
    num_directions: int = 12
    geometry: ArrayGeometry = field(default_factory=default_geometry)
    mode: str = "unified"
    bat_loading: float = 1e-2

    def __post_init__(self):
        if self.mc_flstm is None:
            self.mc_flstm = self.sc_flstm.scaled(self.num_channels)
        self.validate()

    @property
    def num_channels(self):
        """Look directions plus the primary channel."""
        return self.num_directions + 1

    @property
    def grid(self):
        return bf.LookDirectionGrid.uniform(self.num_directions)

    @property
    def partitions(self):
        return MODE_PARTITIONS[self.mode]

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        f = self.features
        sc, mc = self.sc_flstm, self.mc_flstm
        if sc.input_len != f.stack * f.num_bins:
            raise ConfigError(f"SC MV-FLSTM input_len {sc.input_len} != stack*num_bins {f.stack * f.num_bins}")
        c = self.num_channels
        if mc.input_len != c * sc.input_len:
            raise ConfigError(f"MC MV-FLSTM input_len {mc.input_len} != {c} x {sc.input_len}")
        if mc.view_windows != [c * w for w in sc.view_windows] or mc.view_hops != [c * h for h in sc.view_hops]:
            raise ConfigError(f"MC view windows and hops must be {c} x the SC ones")
        if (mc.layers, mc.cells) != (sc.layers, sc.cells):
            raise ConfigError("SC and MC MV-FLSTMs must share layer and cell counts")
        if sc.output_len != mc.output_len:
            raise ConfigError(f"SC/MC MV-FLSTM output lengths differ: {sc.output_len} vs {mc.output_len}")
        if self.geometry.num_mics != 2:
            raise ConfigError("the MC frontend expects exactly two auxiliary microphones")
        if not self.bat_loading > 0:
            raise ConfigError("bat_loading must be positive")

    @classmethod
    def full_scale(cls, mode="unified", num_classes=3000):
        """Full-size architecture, for shape and parameter-count checks (3000 classes is a placeholder)."""
        feats = fx.FeatureConfig(num_bins=256)
        sc = nc.MvFlstmConfig([24, 48, 96, 192], [12, 24, 48, 96], layers=3, cells=32, input_len=768)
        be = nc.BackendConfig(projection_out=768, tlstm_layers=5, tlstm_cells=768, num_classes=num_classes)
        return cls(features=feats, sc_flstm=sc, backend=be, mode=mode)

    def to_dict(self):
        return {
            "features": self.features.to_dict(),
            "sc_flstm": self.sc_flstm.to_dict(),
            "mc_flstm": self.mc_flstm.to_dict(),
            "backend": self.backend.to_dict(),
            "num_directions": self.num_directions,
            "geometry": self.geometry.to_dict(),
            "mode": self.mode,
            "bat_loading": self.bat_loading,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            features=fx.FeatureConfig(**d["features"]),
            sc_flstm=nc.MvFlstmConfig(**d["sc_flstm"]),
            mc_flstm=nc.MvFlstmConfig(**d["mc_flstm"]),
            backend=nc.BackendConfig(**d["backend"]),
            num_directions=d["num_directions"],
            geometry=ArrayGeometry.from_dict(d["geometry"]),
            mode=d["mode"],
            bat_loading=d["bat_loading"],
        )


class ParameterStore:
    """Named float64 tensors, each tagged with exactly one partition."""

    def __init__(self, version=0):
        self.tensors = {}
        self.partition_of = {}
        self.version = version

    def add(self, name, value, partition):
        if partition not in PARTITIONS:
            raise ConfigError(f"unknown partition {partition!r}")
        if name in self.tensors:
            raise ConfigError(f"duplicate tensor name {name!r}")
        self.tensors[name] = np.ascontiguousarray(value, dtype=np.float64)
        self.partition_of[name] = partition

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def names(self, partition=None):
        return [n for n in self.tensors if partition is None or self.partition_of[n] == partition]

    def present_partitions(self):
        return {self.partition_of[n] for n in self.tensors}

    def count(self):
        out = dict.fromkeys(PARTITIONS, 0)
        for n, v in self.tensors.items():
            out[self.partition_of[n]] += v.size
        return out

    def copy(self):
        new = ParameterStore(self.version)
        for n, v in self.tensors.items():
            new.add(n, v.copy(), self.partition_of[n])
        return new


def param_count(config):
    """Closed-form parameter count per partition for ``config``."""
    k, m, d = config.features.num_bins, config.geometry.num_mics, config.num_directions
    counts = dict.fromkeys(PARTITIONS, 0)
    parts = config.partitions
    if "sc_fe" in parts:
        counts["sc_fe"] = nc.mv_flstm_param_count(config.sc_flstm)
    if "mc_fe" in parts:
        counts["mc_fe"] = 2 * d * k * m + 2 * d * k + nc.mv_flstm_param_count(config.mc_flstm)
    counts["backend"] = nc.backend_param_count(config.backend, config.sc_flstm.output_len)
    return counts


def init_params(config, seed=0):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    store = ParameterStore()
    raw = {}
    # fixed draw order so a given seed yields the same tensors in every mode
    nc.init_mv_flstm(rng, raw, "sc_fe.flstm", config.sc_flstm)
    nc.init_mv_flstm(rng, raw, "mc_fe.flstm", config.mc_flstm)
    nc.init_backend(rng, raw, "backend", config.backend, config.sc_flstm.output_len)
    sd = bf.superdirective_weights(config.geometry, config.grid, config.features, config.bat_loading)
    raw["mc_fe.bat.w_re"] = sd.w.real.copy()
    raw["mc_fe.bat.w_im"] = sd.w.imag.copy()
    raw["mc_fe.bat.b_re"] = sd.b.real.copy()
    raw["mc_fe.bat.b_im"] = sd.b.imag.copy()
    for name in sorted(raw):
        part = name.split(".", 1)[0]
        if part in config.partitions:
            store.add(name, raw[name], part)
    return store


@dataclass
class PreparedItem:
    """Cached, parameter-independent features of one utterance on one path."""

    utterance_id: str
    path: str  # "sc" or "mc"
    labels: np.ndarray
    sc_feats: np.ndarray = None  # (L, stack*K) reordered log-power
    aux_spec: np.ndarray = None  # (L, stack, M, K) complex
    primary_lp: np.ndarray = None  # (L, stack, K) log-power

    @property
    def num_frames(self):
        return self.labels.shape[0]


class UnifiedModel:
    def __init__(self, config, params, stats=None):
        self.config = config
        self.params = params
        self.stats = stats if stats is not None else fx.NormalizationStats.identity()
        missing = set(config.partitions) - params.present_partitions()
        if missing:
            from .errors import PartitionMissingError

            raise PartitionMissingError(sorted(missing)[0])

    @classmethod
    def create(cls, config, seed=0, stats=None):
        return cls(config, init_params(config, seed), stats)

    # ------------------------------------------------------------ routing

    def route(self, utt):
        """Frontend path for an utterance: 'sc' or 'mc'."""
        mode = self.config.mode
        if utt.num_channels not in (1, 3):
            raise InvalidInputError(f"{utt.utterance_id}: expected 1 or 3 channels, got {utt.num_channels}")
        if mode == "sc_only":
            return "sc"
        if mode == "mc_only" and not utt.is_multichannel:
            raise InvalidInputError(f"{utt.utterance_id}: an mc_only model cannot take single-channel input")
        if mode == "unified":
            return "mc" if utt.is_multichannel else "sc"
        return "mc"

    def prepare(self, utt, path=None):
        path = path or self.route(utt)
        cfg = self.config.features
        labels = np.asarray(utt.labels, dtype=np.int64)
        prim = fx.stft(utt.primary, cfg, self.stats, role=0).frames
        if path == "sc":
            stacked = fx.stack_frames(prim, cfg.stack)
            lp = fx.log_power(stacked, cfg.log_floor).reshape(stacked.shape[0], -1)
            item = PreparedItem(utt.utterance_id, "sc", labels, sc_feats=fx.reorder_sc(lp, cfg.stack))
        else:
            if utt.is_multichannel:
                aux = np.stack([fx.stft(a, cfg, self.stats, role=i + 1).frames for i, a in enumerate(utt.auxiliary)], axis=1)
            else:
                aux = np.zeros((prim.shape[0], 2, prim.shape[1]), dtype=np.complex128)
            item = PreparedItem(
                utt.utterance_id, "mc", labels,
                aux_spec=fx.stack_frames(aux, cfg.stack),
                primary_lp=fx.log_power(fx.stack_frames(prim, cfg.stack), cfg.log_floor),
            )
        n = item.sc_feats.shape[0] if path == "sc" else item.aux_spec.shape[0]
        if labels.size and labels.shape[0] != n:
            raise InvalidInputError(f"{utt.utterance_id}: {labels.shape[0]} labels for {n} stacked frames")
        if not labels.size:
            item.labels = np.zeros(n, dtype=np.int64)
        return item

    # ------------------------------------------------------------ frontends

    def _bat(self):
        p = self.params.tensors
        w = p["mc_fe.bat.w_re"] + 1j * p["mc_fe.bat.w_im"]
        b = p["mc_fe.bat.b_re"] + 1j * p["mc_fe.bat.b_im"]
        return bf.BeamformerWeights(w, b)

    def _mc_frontend(self, aux, primary_lp):
        cfg = self.config
        y = bf.apply_bat(self._bat(), aux)  # (Nf, stack, D, K)
        power = y.real**2 + y.imag**2 + cfg.features.log_floor
        chans = np.concatenate([np.log(power), primary_lp[:, :, None, :]], axis=2)  # (Nf, stack, C, K)
        feats = chans.transpose(0, 3, 2, 1).reshape(chans.shape[0], -1)  # frequency-major (k, c, r)
        out, fcache = nc.mv_flstm_forward(cfg.mc_flstm, self.params.tensors, feats, prefix="mc_fe.flstm")
        return out, (aux, y, power, fcache)

    def _mc_frontend_backward(self, cache, dout):
        cfg = self.config
        aux, y, power, fcache = cache
        dfeats, grads = nc.mv_flstm_backward(cfg.mc_flstm, self.params.tensors, fcache, dout)
        n, stack, d, k = y.shape
        dchans = dfeats.reshape(n, k, d + 1, stack).transpose(0, 3, 2, 1)
        g = dchans[:, :, :d, :] * 2.0 * y / power  # packed dL/dRe + j dL/dIm
        gw, gb, _ = bf.bat_backward(self._bat(), aux, g)
        grads["mc_fe.bat.w_re"] = gw.real
        grads["mc_fe.bat.w_im"] = gw.imag
        grads["mc_fe.bat.b_re"] = gb.real
        grads["mc_fe.bat.b_im"] = gb.imag
        return grads

    # ------------------------------------------------------------ batch

    def _forward_batch(self, items):
        cfg = self.config
        n = len(items)
        tmax = max(it.num_frames for it in items)
        feats = np.zeros((n, tmax, cfg.sc_flstm.output_len))
        caches = {}
        for path in ("sc", "mc"):
            idx = [i for i, it in enumerate(items) if it.path == path]
            if not idx:
                continue
            if path == "sc":
                x = np.concatenate([items[i].sc_feats for i in idx])
                out, fc = nc.mv_flstm_forward(cfg.sc_flstm, self.params.tensors, x, prefix="sc_fe.flstm")
            else:
                aux = np.concatenate([items[i].aux_spec for i in idx])
                prim = np.concatenate([items[i].primary_lp for i in idx])
                out, fc = self._mc_frontend(aux, prim)
            start = 0
            for i in idx:
                t = items[i].num_frames
                feats[i, :t] = out[start : start + t]
                start += t
            caches[path] = (idx, fc)
        logits, bcache = nc.backend_forward(cfg.backend, self.params.tensors, feats, prefix="backend")
        return logits, (caches, bcache)

    def _check_paths(self, items):
        parts = self.config.partitions
        for it in items:
            need = "sc_fe" if it.path == "sc" else "mc_fe"
            if need not in parts:
                raise InvalidInputError(f"{it.utterance_id}: {self.config.mode} model has no {need}")

    def forward_items(self, items):
        self._check_paths(items)
        logits, _ = self._forward_batch(items)
        return [logits[i, : it.num_frames] for i, it in enumerate(items)]

    def loss_and_grads(self, items):
        """Mean over items of each item's mean per-frame cross-entropy.

        Returns ``(batch_loss, item_losses, grads)``.  ``grads`` only holds
        tensors on the paths the batch actually used, so a partition that no
        item touched has no entry at all.
        """
        self._check_paths(items)
        n = len(items)
        logits, (caches, bcache) = self._forward_batch(items)
        tmax = logits.shape[1]
        labels = np.zeros((n, tmax), dtype=np.int64)
        weights = np.zeros((n, tmax))
        for i, it in enumerate(items):
            labels[i, : it.num_frames] = it.labels
            weights[i, : it.num_frames] = 1.0 / (it.num_frames * n)
        loss, dlogits = nc.weighted_ce(logits, labels, weights)
        item_losses = []
        for i, it in enumerate(items):
            w1 = np.zeros_like(weights)
            w1[i, : it.num_frames] = 1.0 / it.num_frames
            item_losses.append(float(nc.weighted_ce(logits[i : i + 1], labels[i : i + 1], w1[i : i + 1])[0]))
        return loss, item_losses, self._backward(items, (caches, bcache), dlogits)

    def _backward(self, items, cache, dlogits):
        caches, bcache = cache
        dfeats, grads = nc.backend_backward(self.config.backend, self.params.tensors, bcache, dlogits)
        for path, (idx, fc) in caches.items():
            dout = np.concatenate([dfeats[i, : items[i].num_frames] for i in idx])
            if path == "sc":
                _, g = nc.mv_flstm_backward(self.config.sc_flstm, self.params.tensors, fc, dout)
            else:
                g = self._mc_frontend_backward(fc, dout)
            grads.update(g)
        return grads

    def probe_loss_and_grads(self, items, weights):
        """``sum(weights * logits)`` and its gradients; ``weights`` is (N, T, C)."""
        self._check_paths(items)
        logits, cache = self._forward_batch(items)
        return float(np.sum(weights * logits)), self._backward(items, cache, weights)

    # ------------------------------------------------------------ public

    def forward(self, utterance):
        """Per-stacked-frame logits (L, num_classes) for one utterance."""
        return self.forward_items([self.prepare(utterance)])[0]
