"""Utterance files, manifests and synthetic corpus generation.

Utterance file: ``<id>.f32`` holds little-endian float32 samples with the
channels interleaved (primary first); ``<id>.json`` is the sidecar header.
Manifest: one tab-separated record per utterance
``utterance_id  path  channels  snr_db  num_frames`` after a ``#`` header
line carrying the split and sample rate.
"""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import signal_sim as sim
from .errors import DataIOError, InvalidInputError


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    path: str
    channels: int
    snr_db: float
    num_frames: int


@dataclass
class DatasetManifest:
    entries: list
    split: str = "train"
    sample_rate: int = sim.SAMPLE_RATE
    root: Path = field(default=Path("."))

    def __post_init__(self):
        ids = [e.utterance_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("duplicate utterance ids in manifest")
        if self.split not in ("train", "test"):
            raise InvalidInputError(f"unknown split {self.split!r}")

    def __len__(self):
        return len(self.entries)

    def resolve(self, entry):
        return Path(self.root) / entry.path

    def load(self, entry):
        return read_utterance(self.resolve(entry))

    def __iter__(self):
        for e in self.entries:
            yield self.load(e)


def _fmt_snr(x):
    return "inf" if x == sim.SNR_INF else repr(float(x))


def write_utterance(utt, path_stem):
    """Write ``<stem>.f32`` and ``<stem>.json``; returns the .f32 path."""
    stem = Path(path_stem)
    data = utt.channels().T.astype("<f4")
    header = {
        "channels": utt.num_channels,
        "sample_rate": utt.sample_rate,
        "num_samples": int(utt.primary.shape[0]),
        "labels": [int(x) for x in utt.labels],
        "snr_db": _fmt_snr(utt.snr_db),
        "utterance_id": utt.utterance_id,
    }
    try:
        stem.parent.mkdir(parents=True, exist_ok=True)
        with open(stem.with_suffix(".f32"), "wb") as f:
            f.write(data.tobytes())
        with open(stem.with_suffix(".json"), "w") as f:
            json.dump(header, f, sort_keys=True)
            f.write("\n")
    except OSError as exc:
        raise DataIOError(f"cannot write utterance to {stem}: {exc}") from exc
    return stem.with_suffix(".f32")


def read_utterance(path):
    path = Path(path)
    try:
        with open(path.with_suffix(".json")) as f:
            header = json.load(f)
        raw = np.fromfile(path.with_suffix(".f32"), dtype="<f4")
    except (OSError, ValueError) as exc:
        raise DataIOError(f"cannot read utterance {path}: {exc}") from exc
    ch = int(header["channels"])
    if raw.size != ch * int(header["num_samples"]):
        raise InvalidInputError(f"{path}: sample count does not match header")
    data = raw.reshape(-1, ch).T.astype(np.float64)
    return sim.MultiChannelUtterance(
        primary=data[0],
        auxiliary=list(data[1:]),
        labels=np.asarray(header["labels"], dtype=np.int64),
        snr_db=float(header["snr_db"]),
        utterance_id=header["utterance_id"],
        sample_rate=int(header["sample_rate"]),
    )


def write_manifest(manifest, path):
    path = Path(path)
    lines = [f"# split={manifest.split}\tsample_rate={manifest.sample_rate}"]
    for e in manifest.entries:
        lines.append("\t".join([e.utterance_id, e.path, str(e.channels), _fmt_snr(e.snr_db), str(e.num_frames)]))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write manifest {path}: {exc}") from exc


def read_manifest(path, check_files=True):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read manifest {path}: {exc}") from exc
    split, rate = "train", sim.SAMPLE_RATE
    entries = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                k, _, v = tok.partition("=")
                if k == "split":
                    split = v
                elif k == "sample_rate":
                    rate = int(v)
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise InvalidInputError(f"{path}: malformed manifest line {line!r}")
        uid, rel, ch, snr, nf = parts
        entries.append(ManifestEntry(uid, rel, int(ch), float(snr), int(nf)))
    man = DatasetManifest(entries, split=split, sample_rate=rate, root=path.parent)
    if check_files:
        for e in entries:
            p = man.resolve(e)
            if not (p.exists() and p.with_suffix(".json").exists()):
                raise DataIOError(f"manifest {path} references missing file {p}")
    return man


@dataclass
class SimConfig:
    seed: int = 0
    num_train_sc: int = 200
    num_train_mc: int = 200
    num_test: int = 270
    frames_per_utt: int = 30
    num_classes: int = 8
    train_snr_min: float = -5.0
    train_snr_max: float = 30.0
    test_snr_db: list = field(default_factory=lambda: [-5.0, 0.0, 5.0, 12.0, 15.0, 18.0, 22.0, 25.0, 28.0])
    mic_spacing: float = 0.1
    target_azimuth_deg: float = 90.0
    interferer_offset_deg: float = 90.0
    interferer_jitter_deg: float = 30.0
    diffuse_level_db: float = -10.0


def utterance_seed(seed, split_code, index):
    return int(np.random.SeedSequence([int(seed), split_code, index]).generate_state(1, np.uint64)[0])


_SPLIT_CODES = {"train_sc": 1, "train_mc": 2, "test": 3}


def make_utterance(cfg, split_name, index, snr_db, multichannel, samples_per_label=480):
    """Deterministically synthesise utterance ``index`` of a split."""
    seed = utterance_seed(cfg.seed, _SPLIT_CODES[split_name], index)
    rng = np.random.default_rng(seed)
    geom = sim.default_geometry(cfg.mic_spacing)
    tgt_az = np.deg2rad(cfg.target_azimuth_deg) % (2 * np.pi)
    side = 1.0 if rng.random() < 0.5 else -1.0
    jitter = rng.uniform(-cfg.interferer_jitter_deg, cfg.interferer_jitter_deg)
    int_az = np.deg2rad(cfg.target_azimuth_deg + side * cfg.interferer_offset_deg + jitter) % (2 * np.pi)
    n = cfg.frames_per_utt
    target = sim.SourceSpec(sim.random_class_sequence(rng, n, cfg.num_classes), tgt_az, 0.0, sim.TARGET, cfg.num_classes)
    interferers = [
        sim.SourceSpec(sim.random_class_sequence(rng, n, cfg.num_classes), int_az, 0.0, sim.DIRECTIONAL, cfg.num_classes),
        sim.SourceSpec(np.zeros(0, dtype=np.int64), 0.0, cfg.diffuse_level_db, sim.DIFFUSE, cfg.num_classes),
    ]
    uid = f"{split_name}-{index:05d}"
    return sim.synthesize_utterance(
        target, interferers, geom, snr_db, seed=rng.integers(2**63), utterance_id=uid,
        multichannel=multichannel, samples_per_label=samples_per_label,
    )


def _snr_for(cfg, split_name, index):
    if split_name == "test":
        sweep = list(cfg.test_snr_db)
        return float(sweep[index % len(sweep)])
    rng = np.random.default_rng(utterance_seed(cfg.seed, 100 + _SPLIT_CODES[split_name], index))
    return float(rng.uniform(cfg.train_snr_min, cfg.train_snr_max))


def generate_dataset(cfg, out_dir, samples_per_label=480):
    """Write train_sc / train_mc / test corpora and manifests under ``out_dir``.

    Returns the three manifest paths.  Rerunning with the same config
    rewrites byte-identical files.
    """
    out = Path(out_dir)
    plan = [("train_sc", cfg.num_train_sc, False, "train"), ("train_mc", cfg.num_train_mc, True, "train"),
            ("test", cfg.num_test, True, "test")]
    paths = {}
    for name, count, mc, split in plan:
        entries = []
        for i in range(count):
            utt = make_utterance(cfg, name, i, _snr_for(cfg, name, i), mc, samples_per_label)
            rel = os.path.join(name, utt.utterance_id + ".f32")
            write_utterance(utt, out / name / utt.utterance_id)
            entries.append(ManifestEntry(utt.utterance_id, rel, utt.num_channels, utt.snr_db, len(utt.labels)))
        man = DatasetManifest(entries, split=split, root=out)
        paths[name] = out / f"{name}.tsv"
        write_manifest(man, paths[name])
    return paths
