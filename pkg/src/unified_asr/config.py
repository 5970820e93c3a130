"""Run configuration: flat, typed ``section.key = value`` text.

Every key has a default and a one-line description (``describe()`` lists
them).  Lines starting with ``#`` are comments.  Lists are comma
separated, booleans are ``true``/``false``.  Unknown keys and values that
do not parse as the default's type are rejected before any work starts.
"""

from pathlib import Path

from . import corpus
from . import features as fx
from . import neural_core as nc
from .errors import ConfigError, DataIOError
from .model import MODES, ModelConfig
from .signal_sim import default_geometry

_SIM = corpus.SimConfig()

# key -> (default, description)
FIELDS = {
    "sim.seed": (0, "dataset seed"),
    "sim.num_train_sc": (_SIM.num_train_sc, "single-channel training utterances"),
    "sim.num_train_mc": (_SIM.num_train_mc, "multi-channel training utterances"),
    "sim.num_test": (_SIM.num_test, "multi-channel test utterances"),
    "sim.frames_per_utt": (_SIM.frames_per_utt, "stacked frames (labels) per utterance"),
    "sim.num_classes": (_SIM.num_classes, "tone classes"),
    "sim.train_snr_min": (_SIM.train_snr_min, "lowest training SNR, dB"),
    "sim.train_snr_max": (_SIM.train_snr_max, "highest training SNR, dB"),
    "sim.test_snr_db": (list(_SIM.test_snr_db), "test SNR sweep, dB (cycled over test utterances)"),
    "sim.mic_spacing": (_SIM.mic_spacing, "distance between the two microphones, m"),
    "sim.target_azimuth_deg": (_SIM.target_azimuth_deg, "target direction"),
    "sim.interferer_offset_deg": (_SIM.interferer_offset_deg, "interferer offset from the target"),
    "sim.interferer_jitter_deg": (_SIM.interferer_jitter_deg, "uniform jitter on the interferer direction"),
    "sim.diffuse_level_db": (_SIM.diffuse_level_db, "diffuse noise level relative to the interferer"),
    "model.mode": ("unified", "unified | sc_only | mc_only | zero_pad"),
    "model.num_bins": (64, "STFT bins kept per frame"),
    "model.view_windows": ([8, 16, 32], "SC MV-FLSTM view windows (MC uses x(directions+1))"),
    "model.view_hops": ([4, 8, 16], "SC MV-FLSTM view hops"),
    "model.flstm_layers": (1, "layers per FLSTM view"),
    "model.flstm_cells": (8, "cells per FLSTM direction"),
    "model.projection_out": (320, "backend projection width"),
    "model.tlstm_layers": (2, "time LSTM layers"),
    "model.tlstm_cells": (64, "time LSTM cells"),
    "model.num_directions": (12, "beamformer look directions"),
    "model.bat_loading": (1e-2, "diagonal loading of the super-directive init (x trace/M)"),
    "training.batch_size": (16, "utterances per batch"),
    "training.mix_policy": ("proportional", "proportional | fixed_ratio"),
    "training.sc_ratio": (0.5, "SC share per batch under fixed_ratio"),
    "training.derive_sc_from_mc": (True, "add primary-only copies of MC utterances to the SC pool"),
    "training.epochs": (5, "training epochs"),
    "training.learning_rate": (1e-3, "Adam learning rate"),
    "training.optimizer": ("adam", "adam | sgd"),
    "training.seed": (0, "initialisation and batching seed"),
    "suite.seeds": ([0, 1, 2], "seeds for every suite run"),
    "suite.experiments": (["E1", "E2", "E3", "E4", "E5", "E6"], "experiments to run"),
    "suite.epochs": (10, "epochs for every suite run (overrides training.epochs)"),
    "suite.learning_rate": (3e-3, "learning rate for every suite run (overrides training.learning_rate)"),
    "run.workers": (1, "parallel worker processes"),
}


def _parse(key, text):
    default = FIELDS[key][0]
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            kind = type(default[0])
            return [kind(v.strip()) for v in text.split(",") if v.strip()]
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from exc


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig:
    def __init__(self, values=None):
        self.values = {k: (list(d) if isinstance(d, list) else d) for k, (d, _) in FIELDS.items()}
        for k, v in (values or {}).items():
            self.set(k, v)
        self.validate()

    def set(self, key, value):
        if key not in FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _parse(key, value) if isinstance(value, str) else value

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_text(cls, text):
        cfg = cls()
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'section.key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg.set(key, value)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, overrides=()):
        cfg = cls()
        if path is not None:
            try:
                cfg = cls.from_text(Path(path).read_text())
            except OSError as exc:
                raise DataIOError(f"cannot read config {path}: {exc}") from exc
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            cfg.set(k.strip(), v)
        cfg.validate()
        return cfg

    def to_text(self):
        lines = ["# resolved run configuration"]
        section = None
        for key in FIELDS:
            sec = key.split(".")[0]
            if sec != section:
                lines.append("")
                section = sec
            lines.append(f"{key} = {_format(self.values[key])}")
        return "\n".join(lines) + "\n"

    def echo(self, out_dir):
        """Write the resolved config into ``out_dir`` (provenance)."""
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "resolved_config.txt").write_text(self.to_text())
        except OSError as exc:
            raise DataIOError(f"cannot write config to {out}: {exc}") from exc

    def validate(self):
        v = self.values
        if v["model.mode"] not in MODES:
            raise ConfigError(f"model.mode must be one of {MODES}")
        if v["run.workers"] < 1:
            raise ConfigError("run.workers must be >= 1")
        # building the typed configs runs their own checks
        self.sim_config()
        self.model_config()
        self.training_config()
        self.suite_config()

    # ------------------------------------------------------ typed views

    def sim_config(self):
        kw = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("sim.")}
        kw["test_snr_db"] = [float(x) for x in kw["test_snr_db"]]
        return corpus.SimConfig(**kw)

    def model_config(self, mode=None):
        v = self.values
        try:
            feats = fx.FeatureConfig(num_bins=v["model.num_bins"])
            sc = nc.MvFlstmConfig(v["model.view_windows"], v["model.view_hops"], v["model.flstm_layers"],
                                  v["model.flstm_cells"], feats.stack * feats.num_bins)
            be = nc.BackendConfig(v["model.projection_out"], v["model.tlstm_layers"], v["model.tlstm_cells"],
                                  v["sim.num_classes"])
            return ModelConfig(features=feats, sc_flstm=sc, backend=be, num_directions=v["model.num_directions"],
                               geometry=default_geometry(v["sim.mic_spacing"]), mode=mode or v["model.mode"],
                               bat_loading=v["model.bat_loading"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def training_config(self):
        from .trainer import TrainingConfig

        kw = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("training.")}
        return TrainingConfig(**kw)

    def suite_config(self):
        from .evaluation import SuiteConfig

        tcfg = self.training_config()
        tcfg.epochs = self.values["suite.epochs"]
        tcfg.learning_rate = self.values["suite.learning_rate"]
        return SuiteConfig(
            experiments=tuple(self.values["suite.experiments"]),
            seeds=tuple(self.values["suite.seeds"]),
            sim=self.sim_config(),
            model=self.model_config(),
            training=tcfg,
            workers=self.values["run.workers"],
        )


def describe():
    return "\n".join(f"{k:<30} {_format(d):<28} {doc}" for k, (d, doc) in FIELDS.items())
