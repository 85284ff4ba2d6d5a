import itertools
import math

import numpy as np
import pytest
from scipy import stats

from anytime_ldpc import channel
from anytime_ldpc.channel import ChannelConfig, ChannelRealization


def test_modulate_mapping():
    assert channel.modulate([0, 1, 0]).tolist() == [1.0, -1.0, 1.0]
    np.testing.assert_allclose(channel.modulate(np.zeros(4, int), 1.0, 2), np.full(4, 1 / math.sqrt(2)))


def test_noiseless_roundtrip():
    rng = np.random.default_rng(0)
    bits = rng.integers(0, 2, 50)
    cfg = ChannelConfig("awgn", 2.0)
    real = channel.draw_realization(cfg, 50, rng, noiseless=True)
    r = channel.transmit(channel.modulate(bits, cfg.symbol_energy)[None], cfg, real)
    np.testing.assert_allclose(r[0], channel.modulate(bits, cfg.symbol_energy))
    llr = channel.demodulate_llr(r, real, cfg)[0]
    assert np.array_equal((llr < 0).astype(int), bits)


def test_superposition_two_sensors():
    cfg = ChannelConfig("rayleigh", 2.0, 2)
    s = np.ones((2, 5)) / math.sqrt(2)
    real = ChannelRealization(h=np.ones((2, 2, 5), complex), z=np.zeros((2, 5), complex))
    np.testing.assert_allclose(channel.transmit(s, cfg, real), np.full((2, 5), math.sqrt(2)))
    with pytest.raises(channel.LengthMismatch):
        channel.transmit(np.ones((2, 4)), cfg, real)
    with pytest.raises(channel.LengthMismatch):
        channel.transmit(np.ones((1, 5)), cfg, real)


def test_config_validation():
    with pytest.raises(channel.ChannelError):
        ChannelConfig("awgn", 1.0, 2)
    with pytest.raises(channel.ChannelError):
        ChannelConfig("awgn", 0.0)
    with pytest.raises(channel.ChannelError):
        ChannelConfig("optical", 1.0)
    assert ChannelConfig.from_db("awgn", 4.5).snr == pytest.approx(2.818, abs=1e-3)


def test_empirical_snr():
    rng = np.random.default_rng(1)
    cfg = ChannelConfig.from_db("awgn", 4.5)
    m = 1_000_000
    bits = rng.integers(0, 2, m)
    real = channel.draw_realization(cfg, m, rng)
    r = channel.transmit(channel.modulate(bits, cfg.symbol_energy)[None], cfg, real)
    assert channel.empirical_snr(r, real, cfg, bits) == pytest.approx(10**0.45, rel=0.02)


def test_llr_moments_match_gaussian_model():
    rng = np.random.default_rng(2)
    cfg = ChannelConfig.from_db("awgn", 4.5)
    m = 1_000_000
    real = channel.draw_realization(cfg, m, rng)
    r = channel.transmit(channel.modulate(np.zeros(m, int), cfg.symbol_energy)[None], cfg, real)
    llr = channel.demodulate_llr(r, real, cfg)[0]
    assert llr.mean() == pytest.approx(2 * cfg.snr, rel=0.02)
    assert llr.var() == pytest.approx(4 * cfg.snr, rel=0.02)


def test_llr_symmetry():
    cfg = ChannelConfig("awgn", 2.0)
    real = ChannelRealization(h=np.ones((1, 1, 2), complex), z=np.zeros((1, 2), complex))
    llr = channel.demodulate_llr(np.array([[0.7, 0.0]]), real, cfg)[0]
    assert llr[0] > 0 and llr[1] == 0.0


def brute_force_llr(r, h, a):
    """Posterior log-ratio from the full table of 2^(N m) joint bit patterns."""
    n, m = h.shape[1], r.shape[1]
    logp = {}
    for pattern in itertools.product((0, 1), repeat=n * m):
        b = np.array(pattern).reshape(n, m)
        s = a * (1 - 2.0 * b)
        mean = np.einsum("jik,ik->jk", h, s)
        logp[pattern] = -(np.abs(r - mean) ** 2).sum()
    out = np.empty((n, m))
    keys = np.array(list(logp))
    vals = np.array(list(logp.values()))
    for i in range(n):
        for k in range(m):
            col = keys[:, i * m + k]
            out[i, k] = np.logaddexp.reduce(vals[col == 0]) - np.logaddexp.reduce(vals[col == 1])
    return out


@pytest.mark.property
@pytest.mark.parametrize("n,m", [(1, 4), (2, 3), (2, 4), (3, 2), (3, 4)])
def test_joint_llr_matches_brute_force(n, m):
    rng = np.random.default_rng(10 * n + m)
    mode = "awgn" if n == 1 else "rayleigh"
    cfg = ChannelConfig(mode, 3.0, n)
    for _ in range(3):
        real = channel.draw_realization(cfg, m, rng)
        bits = rng.integers(0, 2, (n, m))
        sym = np.array([channel.modulate(b, cfg.symbol_energy, n) for b in bits])
        r = channel.transmit(sym, cfg, real)
        got = channel.demodulate_llr(r, real, cfg)
        np.testing.assert_allclose(got, brute_force_llr(r, real.h, cfg.amplitude), atol=1e-12, rtol=1e-12)


def test_joint_factorizes_on_orthogonal_channel():
    rng = np.random.default_rng(3)
    m = 200
    cfg2 = ChannelConfig("rayleigh", 4.0, 2)
    h = np.zeros((2, 2, m), complex)
    h[0, 0] = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    h[1, 1] = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    z = rng.standard_normal((2, m)) + 1j * rng.standard_normal((2, m))
    real = ChannelRealization(h=h, z=z)
    bits = rng.integers(0, 2, (2, m))
    sym = np.array([channel.modulate(b, cfg2.symbol_energy, 2) for b in bits])
    r = channel.transmit(sym, cfg2, real)
    joint = channel.demodulate_llr(r, real, cfg2)
    # single-sensor formula with the same per-sensor amplitude
    a = cfg2.amplitude
    single = 4 * a * np.real(np.conj(np.array([h[0, 0], h[1, 1]])) * r)
    np.testing.assert_allclose(joint, single, atol=1e-9)


def test_rayleigh_power_is_exponential():
    rng = np.random.default_rng(4)
    cfg = ChannelConfig("rayleigh", 10.0)
    real = channel.draw_realization(cfg, 1_000_000, rng)
    inst = np.abs(real.h[0, 0]) ** 2 * cfg.snr
    ks = stats.kstest(inst, "expon", args=(0, cfg.snr)).statistic
    assert ks < 0.002


def test_total_power_invariant():
    for n in (1, 2, 3, 5):
        cfg = ChannelConfig("rayleigh", 3.0, n)
        s = np.array([channel.modulate(np.zeros(8, int), cfg.symbol_energy, n) for _ in range(n)])
        assert (s**2).sum(axis=0) == pytest.approx(np.full(8, cfg.symbol_energy))


def test_block_fading_constant_within_step():
    rng = np.random.default_rng(5)
    real = channel.draw_realization(ChannelConfig("rayleigh", 3.0, 2, "step"), 10, rng)
    assert np.allclose(real.h, real.h[..., :1])


def test_hypothesis_guard():
    cfg = ChannelConfig("rayleigh", 1.0, 7)
    real = channel.draw_realization(cfg, 2, np.random.default_rng(0))
    with pytest.raises(channel.HypothesisOverflow):
        channel.demodulate_llr(np.zeros((7, 2)), real, cfg)
