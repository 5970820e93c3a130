"""Feature extraction: GMV normalisation, complex STFT, frame stacking,
log-power and the frequency-major reorderings fed to the frequency LSTMs."""

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError

ROLES = ("primary", "aux1", "aux2")
VARIANCE_FLOOR = 1e-8


@dataclass
class FeatureConfig:
    sample_rate: int = 16000
    fft_size: int = 512
    num_bins: int = 64
    window_ms: float = 25.0
    hop_ms: float = 10.0
    stack: int = 3
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.num_bins < 1 or self.num_bins > self.fft_size // 2 + 1:
            raise InvalidInputError(f"num_bins must be in [1, fft_size/2 + 1], got {self.num_bins}")
        if self.stack < 1:
            raise InvalidInputError("stack must be >= 1")
        if not self.log_floor > 0:
            raise InvalidInputError("log_floor must be positive")
        if self.window_samples > self.fft_size:
            raise InvalidInputError("analysis window longer than the transform")

    @property
    def window_samples(self):
        return int(round(self.window_ms * self.sample_rate / 1000.0))

    @property
    def hop_samples(self):
        return int(round(self.hop_ms * self.sample_rate / 1000.0))

    @property
    def samples_per_label(self):
        return self.hop_samples * self.stack

    def num_frames(self, num_samples):
        return (num_samples - self.window_samples) // self.hop_samples + 1

    def to_dict(self):
        return asdict(self)


@dataclass
class NormalizationStats:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(len(ROLES))
        self.variance = np.asarray(self.variance, dtype=np.float64).reshape(len(ROLES))
        if not np.all(self.variance > 0):
            raise InvalidInputError("GMV variance must be positive")

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.ones(3))


@dataclass
class ComplexSpectrogram:
    frames: np.ndarray
    hop: int
    channel_role: str = "primary"

    @property
    def num_frames(self):
        return self.frames.shape[0]


class _Moments:
    # Chan et al. pairwise combination keeps the pooled variance stable.
    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, x):
        x = np.asarray(x, dtype=np.float64)
        nb = x.size
        if nb == 0:
            return
        mb = float(x.mean())
        m2b = float(np.sum((x - mb) ** 2))
        n = self.n + nb
        delta = mb - self.mean
        self.mean += delta * nb / n
        self.m2 += m2b + delta * delta * self.n * nb / n
        self.n = n


def compute_gmv_stats(corpus):
    """Pooled waveform mean/variance per channel role.

    ``corpus`` is a manifest, or an iterable of manifests or utterances.
    Roles absent from the corpus (an SC-only corpus has no auxiliary
    channels) inherit the primary statistics.  Variances are floored at
    1e-8 so silent corpora stay usable.
    """
    from .corpus import DatasetManifest

    if isinstance(corpus, DatasetManifest):
        corpus = [corpus]
    moments = [_Moments() for _ in ROLES]
    for item in corpus:
        utts = item if isinstance(item, DatasetManifest) else [item]
        for utt in utts:
            for role, ch in enumerate(utt.channels()):
                moments[role].add(ch)
    if moments[0].n == 0:
        raise InvalidInputError("cannot compute GMV statistics of an empty corpus")
    means, variances = [], []
    for m in moments:
        src = m if m.n else moments[0]
        means.append(src.mean)
        variances.append(max(src.m2 / src.n, VARIANCE_FLOOR))
    return NormalizationStats(np.array(means), np.array(variances))


def analysis_window(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft(waveform, config, stats=None, role=0):
    """Normalise, window and transform; keeps bins 0..num_bins-1."""
    x = np.asarray(waveform, dtype=np.float64)
    win = config.window_samples
    if x.shape[-1] < win:
        raise InvalidInputError(f"waveform of {x.shape[-1]} samples is shorter than the {win}-sample window")
    if stats is not None:
        x = (x - stats.mean[role]) / np.sqrt(stats.variance[role])
    frames = sliding_window_view(x, win, axis=-1)[..., :: config.hop_samples, :]
    spec = np.fft.rfft(frames * analysis_window(win), n=config.fft_size, axis=-1)[..., : config.num_bins]
    return ComplexSpectrogram(spec, config.hop_samples, ROLES[role])


def stack_indices(num_frames, stack):
    """Frame index for every (group, slot); the last group repeats the final frame."""
    if num_frames < 1:
        raise InvalidInputError("need at least one frame to stack")
    groups = -(-num_frames // stack)
    idx = np.arange(groups * stack).reshape(groups, stack)
    return np.minimum(idx, num_frames - 1)


def stack_frames(spec, stack=3):
    """Group consecutive frames: (T, ...) -> (ceil(T/stack), stack, ...)."""
    frames = spec.frames if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
    return frames[stack_indices(frames.shape[0], stack)]


def log_power(values, log_floor=1e-10):
    v = np.asarray(values)
    return np.log(v.real**2 + v.imag**2 + log_floor)


def _check_len(n, block, what):
    if n % block or n == 0:
        raise InvalidInputError(f"{what}: length {n} is not a positive multiple of {block}")


def reorder_sc(frame, stack=3, num_bins=None):
    """Frame-major (r, k) -> frequency-major (k, r) along the last axis."""
    x = np.asarray(frame)
    n = x.shape[-1]
    _check_len(n, stack if num_bins is None else stack * num_bins, "reorder_sc")
    if num_bins is not None and n != stack * num_bins:
        raise InvalidInputError(f"reorder_sc: expected {stack * num_bins} values, got {n}")
    k = n // stack
    return x.reshape(*x.shape[:-1], stack, k).swapaxes(-1, -2).reshape(x.shape)


def inverse_reorder_sc(frame, stack=3):
    x = np.asarray(frame)
    k = x.shape[-1] // stack
    return x.reshape(*x.shape[:-1], k, stack).swapaxes(-1, -2).reshape(x.shape)


def reorder_mc(frame, num_channels=13, stack=3, num_bins=None):
    """Channel-major (c, r, k) -> frequency-major (k, c, r) along the last axis."""
    x = np.asarray(frame)
    n = x.shape[-1]
    block = num_channels * stack * (num_bins or 1)
    _check_len(n, block, "reorder_mc")
    if num_bins is not None and n != block:
        raise InvalidInputError(f"reorder_mc: expected {block} values, got {n}")
    k = n // (num_channels * stack)
    return x.reshape(*x.shape[:-1], num_channels, stack, k).transpose(
        *range(x.ndim - 1), x.ndim + 1, x.ndim - 1, x.ndim
    ).reshape(x.shape)


def inverse_reorder_mc(frame, num_channels=13, stack=3):
    x = np.asarray(frame)
    k = x.shape[-1] // (num_channels * stack)
    lead = x.ndim - 1
    return x.reshape(*x.shape[:-1], k, num_channels, stack).transpose(
        *range(lead), lead + 1, lead + 2, lead
    ).reshape(x.shape)


def sc_features(waveform, config, stats, role=0):
    """Stacked, log-power, reordered SC frontend input: (L, stack*K)."""
    spec = stft(waveform, config, stats, role)
    stacked = stack_frames(spec, config.stack)
    flat = log_power(stacked, config.log_floor).reshape(stacked.shape[0], -1)
    return reorder_sc(flat, config.stack)
