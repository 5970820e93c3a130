"""Synthetic far-field multi-channel utterances.

Sources are plane waves hitting a small microphone array.  The target is a
piecewise-constant sequence of class "phones", each rendered as three tones,
so every stacked frame has an unambiguous label.  Interferers use the same
tone vocabulary, which makes a single channel genuinely ambiguous at low SNR
while the array still carries direction cues.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, InvalidInputError

SAMPLE_RATE = 16000
SPEED_OF_SOUND = 343.0
SNR_INF = float("inf")

TARGET = "target"
DIRECTIONAL = "directional_interferer"
DIFFUSE = "diffuse_noise"
SOURCE_KINDS = (TARGET, DIRECTIONAL, DIFFUSE)


@dataclass
class ArrayGeometry:
    mic_positions: np.ndarray
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.mic_positions, dtype=np.float64))
        if pos.shape[0] < 1 or pos.shape[1] != 3:
            raise InvalidInputError(f"mic_positions must be (M, 3) with M >= 1, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise InvalidInputError("mic_positions must be finite")
        if not self.speed_of_sound > 0:
            raise InvalidInputError("speed_of_sound must be positive")
        self.mic_positions = pos
        self.speed_of_sound = float(self.speed_of_sound)

    @property
    def num_mics(self):
        return self.mic_positions.shape[0]

    def to_dict(self):
        return {"mic_positions": self.mic_positions.tolist(), "speed_of_sound": self.speed_of_sound}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mic_positions"], dtype=np.float64), d["speed_of_sound"])


def default_geometry(spacing=0.1):
    """Two microphones on the x-axis, ``spacing`` metres apart."""
    half = spacing / 2.0
    return ArrayGeometry(np.array([[-half, 0.0, 0.0], [half, 0.0, 0.0]]))


@dataclass
class SourceSpec:
    class_sequence: np.ndarray
    azimuth: float
    level_db: float = 0.0
    kind: str = TARGET
    num_classes: int = 8

    def __post_init__(self):
        self.class_sequence = np.asarray(self.class_sequence, dtype=np.int64)
        if self.kind not in SOURCE_KINDS:
            raise InvalidInputError(f"unknown source kind {self.kind!r}")
        if self.class_sequence.size and (
            self.class_sequence.min() < 0 or self.class_sequence.max() >= self.num_classes
        ):
            raise InvalidInputError("class IDs must lie in [0, num_classes)")
        if not 0.0 <= self.azimuth < 2 * np.pi:
            raise InvalidInputError(f"azimuth must be in [0, 2pi), got {self.azimuth}")


@dataclass
class MultiChannelUtterance:
    primary: np.ndarray
    auxiliary: list = field(default_factory=list)
    labels: np.ndarray = None
    snr_db: float = SNR_INF
    utterance_id: str = ""
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.primary = np.asarray(self.primary)
        self.auxiliary = [np.asarray(a) for a in self.auxiliary]
        self.labels = np.asarray(self.labels if self.labels is not None else [], dtype=np.int64)
        if len(self.auxiliary) not in (0, 2):
            raise InvalidInputError(f"auxiliary channel count must be 0 or 2, got {len(self.auxiliary)}")
        if any(a.shape != self.primary.shape for a in self.auxiliary):
            raise InvalidInputError("all channels must have equal length")
        if np.isnan(self.snr_db) or self.snr_db == -np.inf:
            raise InvalidInputError("snr_db must be finite or +inf")

    @property
    def is_multichannel(self):
        return len(self.auxiliary) == 2

    @property
    def num_channels(self):
        return 1 + len(self.auxiliary)

    def channels(self):
        return np.stack([self.primary, *self.auxiliary])


def mic_delays(geometry, azimuth):
    """Per-microphone delay in seconds for a far-field source at ``azimuth``."""
    u = np.array([np.cos(azimuth), np.sin(azimuth), 0.0])
    return geometry.mic_positions @ u / geometry.speed_of_sound


def fractional_delay(x, delays, sample_rate=SAMPLE_RATE):
    """Delay ``x`` by each entry of ``delays`` (seconds) as a circular phase shift."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    shift = np.exp(-2j * np.pi * np.outer(np.atleast_1d(delays), freqs))
    return np.fft.irfft(spec * shift, n=n)


def simulate_propagation(source_waveform, azimuth, geometry, sample_rate=SAMPLE_RATE):
    x = np.asarray(source_waveform, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidInputError("source waveform must be a non-empty 1-D array")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("source waveform contains non-finite samples")
    tau = mic_delays(geometry, azimuth)
    if not np.any(tau):
        return np.tile(x, (geometry.num_mics, 1))
    return fractional_delay(x, tau, sample_rate)


def compute_primary_channel(mic_waveforms, geometry, assumed_azimuth, sample_rate=SAMPLE_RATE):
    """Delay-and-sum beam toward ``assumed_azimuth``; the on-device primary channel."""
    mics = np.atleast_2d(np.asarray(mic_waveforms, dtype=np.float64))
    if mics.shape[0] < 1:
        raise InvalidInputError("need at least one channel")
    if mics.shape[0] != geometry.num_mics:
        raise InvalidInputError(f"{mics.shape[0]} channels for a {geometry.num_mics}-mic geometry")
    tau = mic_delays(geometry, assumed_azimuth)
    if not np.any(tau):
        aligned = mics
    else:
        aligned = np.stack([fractional_delay(m, -t, sample_rate)[0] for m, t in zip(mics, tau)])
    return aligned.sum(axis=0) / mics.shape[0]


def energy(x):
    x = np.asarray(x, dtype=np.float64)
    return float(np.dot(x.ravel(), x.ravel()))


def measure_snr(target, noise):
    """SNR in dB of ``target`` against ``noise``; +inf when the noise is silent."""
    en = energy(noise)
    if en == 0.0:
        return SNR_INF
    return 10.0 * np.log10(energy(target) / en)


def mix_at_snr(target_mics, noise_mics, snr_db, reference=0):
    """Scale the noise so the reference channel reaches ``snr_db``, then add."""
    t = np.atleast_2d(np.asarray(target_mics, dtype=np.float64))
    n = np.atleast_2d(np.asarray(noise_mics, dtype=np.float64))
    if t.shape != n.shape:
        raise InvalidInputError(f"target {t.shape} and noise {n.shape} differ in shape")
    if snr_db == SNR_INF:
        return t.copy()
    en = energy(n[reference])
    if en == 0.0:
        raise DegenerateInputError("noise has zero energy on the reference channel")
    scale = np.sqrt(energy(t[reference]) / (en * 10.0 ** (snr_db / 10.0)))
    return t + scale * n


def snr_bin(snr_db):
    if snr_db < 10.0:
        return "low"
    if snr_db <= 20.0:
        return "medium"
    return "high"


SNR_BINS = ("low", "medium", "high")


def tone_table(num_classes=8, tones_per_class=3, fmin=150.0, fmax=900.0):
    """Class -> tone frequencies (Hz).  Neighbouring grid tones belong to different classes."""
    grid = np.linspace(fmin, fmax, num_classes * tones_per_class)
    return np.stack([grid[c::num_classes] for c in range(num_classes)])


def random_class_sequence(rng, num_frames, num_classes, min_run=3, max_run=8):
    seq = np.empty(num_frames, dtype=np.int64)
    pos = 0
    prev = -1
    while pos < num_frames:
        c = int(rng.integers(num_classes - 1)) if prev >= 0 else int(rng.integers(num_classes))
        if prev >= 0 and c >= prev:
            c += 1
        run = int(rng.integers(min_run, max_run + 1))
        seq[pos : pos + run] = c
        pos += run
        prev = c
    return seq


def _runs(seq):
    edges = np.flatnonzero(np.diff(seq)) + 1
    starts = np.concatenate([[0], edges])
    stops = np.concatenate([edges, [len(seq)]])
    return zip(starts, stops)


def render_tones(class_sequence, rng, samples_per_label, num_classes=8, sample_rate=SAMPLE_RATE, fade=64):
    """Render a class sequence as piecewise tone triples, unit RMS."""
    seq = np.asarray(class_sequence, dtype=np.int64)
    table = tone_table(num_classes)
    out = np.zeros(len(seq) * samples_per_label)
    for start, stop in _runs(seq):
        a, b = start * samples_per_label, stop * samples_per_label
        t = np.arange(b - a) / sample_rate
        seg = np.zeros(b - a)
        for f in table[seq[start]]:
            f = f + rng.uniform(-8.0, 8.0)
            seg += rng.uniform(0.6, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        nf = min(fade, (b - a) // 2)
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(nf) / nf)
        seg[:nf] *= ramp
        seg[len(seg) - nf :] *= ramp[::-1]
        out[a:b] = seg
    return out / np.sqrt(np.mean(out**2))


def _render_source(spec, num_samples, rng, geometry, samples_per_label, sample_rate):
    gain = 10.0 ** (spec.level_db / 20.0)
    if spec.kind == DIFFUSE:
        # ring of independent white-noise plane waves
        n_dirs = 8
        mics = np.zeros((geometry.num_mics, num_samples))
        for az in np.arange(n_dirs) * 2 * np.pi / n_dirs:
            mics += simulate_propagation(rng.standard_normal(num_samples), az, geometry, sample_rate)
        return gain * mics / np.sqrt(n_dirs)
    seq = spec.class_sequence
    reps = -(-num_samples // (samples_per_label * max(len(seq), 1)))
    wave = render_tones(np.tile(seq, reps), rng, samples_per_label, spec.num_classes, sample_rate)
    return gain * simulate_propagation(wave[:num_samples], spec.azimuth, geometry, sample_rate)


def synthesize_components(target, interferers, geometry, seed, samples_per_label=480, sample_rate=SAMPLE_RATE):
    """Clean target and summed noise at the microphones, before SNR scaling."""
    if target.class_sequence.size == 0:
        raise InvalidInputError("target class_sequence is empty")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1)))
    n = target.class_sequence.size * samples_per_label
    tgt = _render_source(target, n, rng, geometry, samples_per_label, sample_rate)
    noise = np.zeros_like(tgt)
    for spec in interferers:
        noise += _render_source(spec, n, rng, geometry, samples_per_label, sample_rate)
    return tgt, noise


def synthesize_utterance(
    target,
    interferers,
    geometry,
    snr_db,
    seed,
    utterance_id="",
    multichannel=True,
    samples_per_label=480,
    sample_rate=SAMPLE_RATE,
):
    """One labelled utterance; a pure function of its arguments.

    The primary channel is the delay-and-sum beam toward the target; the
    auxiliary channels (MC only) are the raw microphone signals.  SNR is set
    on the primary channel against the clean target.
    """
    if geometry.num_mics != 2 and multichannel:
        raise InvalidInputError("multi-channel utterances need a two-microphone array")
    tgt, noise = synthesize_components(target, interferers, geometry, seed, samples_per_label, sample_rate)
    chans_t = np.vstack([compute_primary_channel(tgt, geometry, target.azimuth, sample_rate), tgt])
    chans_n = np.vstack([compute_primary_channel(noise, geometry, target.azimuth, sample_rate), noise])
    mixed = mix_at_snr(chans_t, chans_n, snr_db, reference=0)
    aux = [mixed[1], mixed[2]] if multichannel else []
    return MultiChannelUtterance(
        primary=mixed[0],
        auxiliary=aux,
        labels=target.class_sequence.copy(),
        snr_db=float(snr_db),
        utterance_id=utterance_id,
        sample_rate=sample_rate,
    )


def strip_auxiliary(utt, suffix=""):
    return MultiChannelUtterance(
        primary=utt.primary,
        auxiliary=[],
        labels=utt.labels.copy(),
        snr_db=utt.snr_db,
        utterance_id=utt.utterance_id + suffix,
        sample_rate=utt.sample_rate,
    )
