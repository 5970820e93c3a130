import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unified_asr import features as fx
from unified_asr import signal_sim as sim
from unified_asr.errors import InvalidInputError

CFG = fx.FeatureConfig()


def _utt(x):
    return sim.MultiChannelUtterance(np.asarray(x, dtype=float))


def test_frame_count_one_second():
    spec = fx.stft(np.zeros(16000), fx.FeatureConfig(num_bins=256))
    assert spec.num_frames == 98 == (16000 - 400) // 160 + 1
    assert spec.frames.shape == (98, 256)


def test_zero_waveform_gives_zero_spectrum():
    assert not np.any(fx.stft(np.zeros(1000), CFG).frames)


def test_short_waveform_rejected():
    with pytest.raises(InvalidInputError):
        fx.stft(np.zeros(399), CFG)


def test_sinusoid_peaks_at_its_bin():
    k0 = 20
    t = np.arange(4000) / 16000
    x = np.sin(2 * np.pi * k0 * 16000 / 512 * t)
    spec = fx.stft(x, CFG)
    assert int(np.argmax(np.mean(np.abs(spec.frames) ** 2, axis=0))) == k0


def test_stft_matches_direct_dft(rng):
    x = rng.standard_normal(1200)
    spec = fx.stft(x, CFG)
    n = np.arange(400)
    win = 0.5 - 0.5 * np.cos(2 * np.pi * n / 400)
    for t in (0, 3, spec.num_frames - 1):
        seg = x[t * 160 : t * 160 + 400] * win
        direct = [np.sum(seg * np.exp(-2j * np.pi * k * n / 512)) for k in range(CFG.num_bins)]
        np.testing.assert_allclose(spec.frames[t], direct, atol=1e-9)


def test_stft_linear(rng):
    x, y = rng.standard_normal((2, 2000))
    lhs = fx.stft(2.0 * x - 0.5 * y, CFG).frames
    rhs = 2.0 * fx.stft(x, CFG).frames - 0.5 * fx.stft(y, CFG).frames
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_gmv_closed_form():
    corpus = [_utt(np.full(100, 2.0)), _utt(np.full(100, -2.0))]
    stats = fx.compute_gmv_stats(corpus)
    assert stats.mean[0] == pytest.approx(0.0, abs=1e-12)
    assert stats.variance[0] == pytest.approx(4.0)


def test_gmv_standardised_corpus(rng):
    x = rng.standard_normal(200000)
    x = (x - x.mean()) / x.std()
    stats = fx.compute_gmv_stats([_utt(x[:50000]), _utt(x[50000:])])
    assert abs(stats.mean[0]) < 1e-6 and abs(stats.variance[0] - 1) < 1e-6


def test_gmv_degenerate_and_empty():
    x = np.zeros(100)
    x[3] = 0.0
    stats = fx.compute_gmv_stats([_utt(x)])
    assert stats.variance[0] == fx.VARIANCE_FLOOR
    with pytest.raises(InvalidInputError):
        fx.compute_gmv_stats([])


def test_gmv_roles_and_inheritance(mc_utts, sc_utts):
    stats = fx.compute_gmv_stats(mc_utts)
    aux = np.concatenate([u.auxiliary[0] for u in mc_utts])
    assert stats.variance[1] == pytest.approx(aux.var())
    sc_only = fx.compute_gmv_stats(sc_utts)
    assert sc_only.mean[2] == sc_only.mean[0] and sc_only.variance[1] == sc_only.variance[0]


def test_stacking_counts():
    assert fx.stack_indices(98, 3).shape == (33, 3)
    idx = fx.stack_indices(98, 3)
    assert list(idx[-1]) == [96, 97, 97]
    assert fx.stack_indices(3, 3).tolist() == [[0, 1, 2]]
    np.testing.assert_array_equal(fx.stack_indices(5, 1)[:, 0], np.arange(5))


def test_log_power_values():
    assert fx.log_power(0j) == pytest.approx(np.log(1e-10))
    assert fx.log_power(1 + 0j) == pytest.approx(0.0, abs=1e-9)
    assert fx.log_power(np.e * np.exp(0.3j)) == pytest.approx(2.0, abs=1e-9)


def test_reorder_sc_anchors():
    k = 256
    out_pos = fx.reorder_sc(np.arange(3 * k))
    # out_pos[j] = input index landing at output position j
    assert out_pos[0] == 0  # (FR1, freq1) fixed point
    assert out_pos[1] == 256  # (FR2, freq1) -> second entry
    assert out_pos[2] == 512


def _reorder_sc_oracle(x, stack):
    k = len(x) // stack
    out = np.empty_like(x)
    for r in range(stack):
        for kk in range(k):
            out[kk * stack + r] = x[r * k + kk]
    return out


def _reorder_mc_oracle(x, c, stack):
    k = len(x) // (c * stack)
    out = np.empty_like(x)
    for ch in range(c):
        for r in range(stack):
            for kk in range(k):
                out[kk * c * stack + ch * stack + r] = x[ch * stack * k + r * k + kk]
    return out


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 4))
def test_reorder_sc_bijection(k, stack):
    x = np.arange(k * stack)
    y = fx.reorder_sc(x, stack)
    np.testing.assert_array_equal(y, _reorder_sc_oracle(x, stack))
    np.testing.assert_array_equal(np.sort(y), x)
    np.testing.assert_array_equal(fx.inverse_reorder_sc(y, stack), x)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 13), st.integers(1, 3))
def test_reorder_mc_bijection(k, c, stack):
    x = np.arange(k * c * stack)
    y = fx.reorder_mc(x, c, stack)
    np.testing.assert_array_equal(y, _reorder_mc_oracle(x, c, stack))
    np.testing.assert_array_equal(np.sort(y), x)
    np.testing.assert_array_equal(fx.inverse_reorder_mc(y, c, stack), x)


def test_reorder_mc_anchors():
    y = fx.reorder_mc(np.arange(13 * 3 * 4), 13, 3)
    assert y[0] == 0  # (c1, r1, k1)
    assert y[3] == 3 * 4  # (c2, r1, k1) sits at position 3


def test_reorder_mc_agrees_with_sc_within_channel():
    k, c, stack = 5, 4, 3
    x = np.arange(k * c * stack)
    y = fx.reorder_mc(x, c, stack)
    ch = 2
    block = x[ch * stack * k : (ch + 1) * stack * k]
    mine = [v for v in y if v in set(block)]
    np.testing.assert_array_equal(mine, fx.reorder_sc(block, stack))


def test_reorder_wrong_length():
    with pytest.raises(InvalidInputError):
        fx.reorder_sc(np.arange(10), 3)
    with pytest.raises(InvalidInputError):
        fx.reorder_mc(np.arange(40), 13, 3)
    with pytest.raises(InvalidInputError):
        fx.reorder_sc(np.arange(12), 3, num_bins=5)


def test_stacked_frames_match_labels(mc_utts):
    for u in mc_utts:
        feats = fx.sc_features(u.primary, CFG, fx.NormalizationStats.identity())
        assert feats.shape == (len(u.labels), 3 * CFG.num_bins)
