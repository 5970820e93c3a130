"""Neural beamforming layer.

A block affine transform maps the microphone spectra at each frequency to
``D`` look-direction spectra, ``Y[d, k] = w[d, k]^H X[k] + b[d, k]``.  It is
initialised from super-directive (diffuse-noise MVDR) beamformers and then
trained like any other layer.

Complex gradients are packed as ``dL/dRe + 1j * dL/dIm``, i.e. the
gradients w.r.t. the independent real and imaginary parameters.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalError
from .features import ComplexSpectrogram, log_power, stack_frames
from .signal_sim import mic_delays


@dataclass
class LookDirectionGrid:
    azimuths: np.ndarray

    def __post_init__(self):
        self.azimuths = np.atleast_1d(np.asarray(self.azimuths, dtype=np.float64))
        if self.azimuths.size < 1:
            raise InvalidInputError("need at least one look direction")
        if np.any(np.diff(self.azimuths) <= 0):
            raise InvalidInputError("look-direction azimuths must be strictly increasing")

    @classmethod
    def uniform(cls, num_directions=12):
        return cls(np.arange(num_directions) * 2 * np.pi / num_directions)

    @property
    def size(self):
        return self.azimuths.size


@dataclass
class BeamformerWeights:
    w: np.ndarray  # (D, K, M) complex
    b: np.ndarray  # (D, K) complex

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.complex128)
        self.b = np.asarray(self.b, dtype=np.complex128)
        if self.w.ndim != 3 or self.b.shape != self.w.shape[:2]:
            raise InvalidInputError(f"inconsistent BAT shapes w={self.w.shape} b={self.b.shape}")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise InvalidInputError("BAT weights must be finite")

    @property
    def shape(self):
        return self.w.shape


def bin_frequencies(config):
    """Angular frequency (rad/s) of each kept STFT bin."""
    return 2 * np.pi * np.arange(config.num_bins) * config.sample_rate / config.fft_size


def steering_vector(geometry, azimuth, omega):
    return np.exp(-1j * omega * mic_delays(geometry, azimuth))


def steering_vectors(geometry, grid, config):
    """(D, K, M) steering vectors for every look direction and bin."""
    tau = np.stack([mic_delays(geometry, az) for az in grid.azimuths])  # (D, M)
    omega = bin_frequencies(config)
    return np.exp(-1j * omega[None, :, None] * tau[:, None, :])


def diffuse_coherence(geometry, omega):
    dist = np.linalg.norm(geometry.mic_positions[:, None, :] - geometry.mic_positions[None, :, :], axis=-1)
    # np.sinc is the normalised sinc, sin(pi x) / (pi x)
    return np.sinc(omega[:, None, None] * dist[None] / (np.pi * geometry.speed_of_sound))


def superdirective_weights(geometry, grid, config, loading=1e-2, coherence=None):
    """MVDR weights against a spherically diffuse noise field.

    ``loading`` is diagonal loading relative to ``trace(Gamma)/M``.
    ``coherence="identity"`` replaces Gamma by I, which reduces to
    delay-and-sum; it exists for testing.
    """
    if not loading > 0:
        raise InvalidInputError("diagonal loading must be positive")
    m = geometry.num_mics
    v = steering_vectors(geometry, grid, config)  # (D, K, M)
    omega = bin_frequencies(config)
    if coherence == "identity":
        gamma = np.broadcast_to(np.eye(m), (omega.size, m, m)).astype(np.complex128)
    else:
        gamma = diffuse_coherence(geometry, omega).astype(np.complex128)
    load = loading * np.trace(gamma, axis1=-2, axis2=-1).real / m
    gamma = gamma + load[:, None, None] * np.eye(m)
    try:
        # solve per (k, d): gamma[k] x = v[d, k]
        num = np.linalg.solve(gamma[None], v[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular coherence matrix after loading {loading}") from exc
    den = np.einsum("dkm,dkm->dk", v.conj(), num)
    if np.any(np.abs(den) < 1e-300):
        raise NumericalError("degenerate super-directive normalisation")
    w = num / den[..., None]
    return BeamformerWeights(w, np.zeros(w.shape[:2], dtype=np.complex128))


def _spectra(X):
    if isinstance(X, (list, tuple)):
        X = np.stack([x.frames if isinstance(x, ComplexSpectrogram) else np.asarray(x) for x in X], axis=-2)
        return X  # (T, M, K)
    return np.asarray(X)


def apply_bat(weights, X, t=None):
    """Look-direction spectra for microphone spectra ``X``.

    ``X`` is a list of M aligned spectrograms, or an array whose last two
    axes are (M, K).  With ``t`` the result is the (D, K) block for frame t,
    otherwise (..., D, K).
    """
    X = _spectra(X)
    d, k, m = weights.shape
    if X.shape[-2:] != (m, k):
        raise InvalidInputError(f"spectra of shape {X.shape} do not match BAT with M={m}, K={k}")
    if t is not None:
        if not 0 <= t < X.shape[0]:
            raise InvalidInputError(f"frame {t} out of range")
        X = X[t]
    return np.einsum("dkm,...mk->...dk", weights.w.conj(), X) + weights.b


def bat_vector(Y):
    """Stack (..., D, K) as in the block layout: all directions of bin 0, then bin 1, ..."""
    return np.swapaxes(Y, -1, -2).reshape(*Y.shape[:-2], -1)


def bat_backward(weights, X, upstream_grad):
    """Gradients of a real loss w.r.t. w, b and X given dL/dY (packed complex)."""
    X = _spectra(X)
    g = np.asarray(upstream_grad, dtype=np.complex128)
    lead = tuple(range(g.ndim - 2))
    xf = X.reshape(-1, *X.shape[-2:])
    gf = g.reshape(-1, *g.shape[-2:])
    grad_w = np.einsum("tmk,tdk->dkm", xf, gf.conj())
    grad_b = g.sum(axis=lead) if lead else g.copy()
    grad_x = np.einsum("dkm,...dk->...mk", weights.w, g)
    return grad_w, grad_b, grad_x


def assemble_mc_features(Y, primary_spec, config):
    """Stack + log-power the D look directions and the primary channel.

    Returns (L, (D+1)*stack*K) in channel-major, frame, frequency order
    (directions first, primary last), ready for ``reorder_mc``.
    """
    Y = np.asarray(Y)
    prim = primary_spec.frames if isinstance(primary_spec, ComplexSpectrogram) else np.asarray(primary_spec)
    if Y.shape[0] != prim.shape[0] or Y.shape[-1] != prim.shape[-1]:
        raise InvalidInputError(f"look directions {Y.shape} and primary {prim.shape} are misaligned")
    chans = np.concatenate([Y, prim[:, None, :]], axis=1)  # (T, C, K)
    stacked = stack_frames(chans, config.stack)  # (L, stack, C, K)
    lp = log_power(stacked, config.log_floor).transpose(0, 2, 1, 3)
    return lp.reshape(lp.shape[0], -1)
