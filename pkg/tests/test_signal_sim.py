import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unified_asr import signal_sim as sim
from unified_asr.errors import DegenerateInputError, InvalidInputError


def test_single_mic_at_origin_is_passthrough(rng):
    geom = sim.ArrayGeometry(np.zeros((1, 3)))
    x = rng.standard_normal(1000)
    for az in (0.0, 1.0, 4.0):
        out = sim.simulate_propagation(x, az, geom)
        np.testing.assert_array_equal(out[0], x)


def test_endfire_delay_matches_cross_correlation(rng):
    geom = sim.default_geometry(0.1)
    x = rng.standard_normal(4096)
    out = sim.simulate_propagation(x, 0.0, geom)
    # oracle: integer-lag cross-correlation of 16x upsampled copies
    up = 16
    a = np.fft.irfft(np.fft.rfft(out[0]), n=out.shape[1] * up)
    b = np.fft.irfft(np.fft.rfft(out[1]), n=out.shape[1] * up)
    xc = np.fft.irfft(np.fft.rfft(a) * np.conj(np.fft.rfft(b)))
    lag = int(np.argmax(xc))
    if lag > xc.size // 2:
        lag -= xc.size
    # xc peaks at minus the delay of channel 1 relative to channel 0
    delay = -lag / (16000 * up)
    assert abs(delay - 0.1 / 343.0) < 1.0 / (16000 * up)


def test_broadside_channels_identical(rng):
    out = sim.simulate_propagation(rng.standard_normal(2000), np.pi / 2, sim.default_geometry())
    np.testing.assert_allclose(out[0], out[1], atol=1e-10)


def test_propagation_preserves_energy(rng):
    x = rng.standard_normal(3000)
    out = sim.simulate_propagation(x, 0.7, sim.default_geometry())
    for ch in out:
        assert abs(sim.energy(ch) / sim.energy(x) - 1) < 1e-3


def test_non_finite_source_rejected():
    with pytest.raises(InvalidInputError):
        sim.simulate_propagation(np.array([0.0, np.nan]), 0.0, sim.default_geometry())


def test_mix_at_snr_zero_db(rng):
    t, n = rng.standard_normal((2, 500)), rng.standard_normal((2, 500))
    mixed = sim.mix_at_snr(t, n, 0.0)
    assert np.isclose(sim.energy(mixed[0] - t[0]), sim.energy(t[0]))


def test_mix_at_snr_inf_returns_target(rng):
    t = rng.standard_normal((2, 100))
    np.testing.assert_array_equal(sim.mix_at_snr(t, rng.standard_normal((2, 100)), sim.SNR_INF), t)


def test_mix_at_snr_six_db(rng):
    t, n = rng.standard_normal((1, 800)), rng.standard_normal((1, 800))
    mixed = sim.mix_at_snr(t, n, 6.02)
    ratio = sim.energy(mixed - t) / (sim.energy(t) / 4)
    assert abs(ratio - 1) < 5e-3


@pytest.mark.parametrize("snr", [-5, 0, 5, 15, 25])
def test_mix_then_measure(rng, snr):
    t, n = rng.standard_normal((2, 700)), rng.standard_normal((2, 700))
    mixed = sim.mix_at_snr(t, n, snr)
    assert abs(sim.measure_snr(t[0], mixed[0] - t[0]) - snr) < 0.01


def test_zero_noise_is_degenerate(rng):
    with pytest.raises(DegenerateInputError):
        sim.mix_at_snr(rng.standard_normal((1, 10)), np.zeros((1, 10)), 5.0)


def test_primary_channel_passthrough_and_identical(rng):
    x = rng.standard_normal(300)
    geom1 = sim.ArrayGeometry(np.zeros((1, 3)))
    np.testing.assert_array_equal(sim.compute_primary_channel(x[None], geom1, 0.3), x)
    geom2 = sim.ArrayGeometry(np.zeros((2, 3)))
    np.testing.assert_allclose(sim.compute_primary_channel(np.stack([x, x]), geom2, 0.3), x)


def test_delay_and_sum_gains_three_db():
    geom = sim.default_geometry()
    rng = np.random.default_rng(7)
    az = 0.4
    gains = []
    for _ in range(100):
        s = sim.simulate_propagation(rng.standard_normal(2048), az, geom)
        noise = rng.standard_normal((2, 2048))
        single = sim.measure_snr(s[0], noise[0])
        out_s = sim.compute_primary_channel(s, geom, az)
        out_n = sim.compute_primary_channel(noise, geom, az)
        gains.append(sim.measure_snr(out_s, out_n) - single)
    assert abs(np.mean(gains) - 10 * np.log10(2)) < 0.5


def test_synthesis_is_deterministic():
    tgt = sim.SourceSpec(np.array([0, 0, 1, 1, 2]), np.pi / 2)
    intf = [sim.SourceSpec(np.array([3, 3, 3]), 0.0, kind=sim.DIRECTIONAL)]
    a = sim.synthesize_utterance(tgt, intf, sim.default_geometry(), 5.0, seed=11)
    b = sim.synthesize_utterance(tgt, intf, sim.default_geometry(), 5.0, seed=11)
    for x, y in zip(a.channels(), b.channels()):
        assert x.tobytes() == y.tobytes()
    assert a.snr_db == 5.0 and sim.snr_bin(a.snr_db) == "low"
    assert a.primary.size == 5 * 480


def test_clean_synthesis_has_infinite_snr():
    tgt = sim.SourceSpec(np.array([1, 1, 1]), np.pi / 2)
    tc, noise = sim.synthesize_components(tgt, [], sim.default_geometry(), seed=3)
    assert sim.measure_snr(tc, noise) == sim.SNR_INF
    utt = sim.synthesize_utterance(tgt, [], sim.default_geometry(), sim.SNR_INF, seed=3)
    assert utt.snr_db == sim.SNR_INF


def test_empty_target_rejected():
    with pytest.raises(InvalidInputError):
        sim.synthesize_utterance(sim.SourceSpec(np.zeros(0, dtype=int), 0.0), [], sim.default_geometry(), 5.0, 0)


@pytest.mark.parametrize("snr,expected", [(9.99, "low"), (10.0, "medium"), (20.0, "medium"), (20.01, "high"),
                                          (25, "high"), (-5, "low")])
def test_snr_bins(snr, expected):
    assert sim.snr_bin(snr) == expected


@given(st.floats(min_value=-100, max_value=100, allow_nan=False))
def test_snr_bins_partition(snr):
    b = sim.snr_bin(snr)
    assert (b == "low") == (snr < 10) and (b == "high") == (snr > 20)


def test_strip_auxiliary_keeps_primary(mc_utts):
    u = mc_utts[0]
    s = sim.strip_auxiliary(u)
    assert not s.is_multichannel and s.primary.tobytes() == u.primary.tobytes()
    np.testing.assert_array_equal(s.labels, u.labels)


def test_auxiliary_count_validated(rng):
    x = rng.standard_normal(10)
    with pytest.raises(InvalidInputError):
        sim.MultiChannelUtterance(x, [x])
    with pytest.raises(InvalidInputError):
        sim.MultiChannelUtterance(x, [x, x[:5]])


def test_geometry_round_trip():
    g = sim.default_geometry(0.08)
    g2 = sim.ArrayGeometry.from_dict(g.to_dict())
    np.testing.assert_array_equal(g.mic_positions, g2.mic_positions)
    with pytest.raises(InvalidInputError):
        sim.ArrayGeometry(np.zeros((2, 3)), speed_of_sound=0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31))
def test_class_sequences_have_runs(n, seed):
    seq = sim.random_class_sequence(np.random.default_rng(seed), n, 8)
    assert seq.shape == (n,) and seq.min() >= 0 and seq.max() < 8
    runs = [b - a for a, b in sim._runs(seq)]
    assert all(r >= 3 for r in runs[:-1])


def test_tone_table_distinct():
    t = sim.tone_table()
    assert t.shape == (8, 3) and np.unique(t).size == 24
