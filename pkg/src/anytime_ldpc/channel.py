"""BPSK over AWGN or Rayleigh fading with one or several sensors, and exact LLR demodulation.

Noise is complex with unit variance per symbol. A channel SNR ``rho`` means
the in-phase matched-filter statistic has SNR ``rho``, i.e. total symbol
energy ``rho / 2`` split evenly across the sensors. The single-sensor LLR
is then Gaussian with mean ``2 rho`` and variance ``4 rho``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

MAX_JOINT_SENSORS = 6


class ChannelError(ValueError):
    pass


class LengthMismatch(ChannelError):
    pass


class HypothesisOverflow(ChannelError):
    pass


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x)


@dataclass(frozen=True)
class ChannelConfig:
    mode: str = "awgn"
    snr: float = 1.0
    n_sensors: int = 1
    fading: str = "symbol"

    def __post_init__(self):
        mode = self.mode.lower()
        object.__setattr__(self, "mode", mode)
        if mode not in ("awgn", "rayleigh"):
            raise ChannelError(f"unknown channel mode {self.mode!r}")
        if not self.snr > 0:
            raise ChannelError("SNR must be positive")
        if self.n_sensors < 1:
            raise ChannelError("need at least one sensor")
        if self.fading not in ("symbol", "step"):
            raise ChannelError(f"unknown fading granularity {self.fading!r}")
        if mode == "awgn" and self.n_sensors != 1:
            raise ChannelError("AWGN mode is single-sensor")

    @classmethod
    def from_db(cls, mode: str, snr_db: float, n_sensors: int = 1, fading: str = "symbol") -> "ChannelConfig":
        return cls(mode, float(db_to_linear(snr_db)), n_sensors, fading)

    @property
    def snr_db(self) -> float:
        return float(linear_to_db(self.snr))

    @property
    def symbol_energy(self) -> float:
        """Total transmitted energy per symbol position, summed over sensors."""
        return self.snr / 2.0

    @property
    def amplitude(self) -> float:
        """Per-sensor BPSK amplitude."""
        return math.sqrt(self.symbol_energy / self.n_sensors)


@dataclass
class ChannelRealization:
    """``h[j, i, k]``: gain from sensor ``i`` to antenna ``j`` at symbol ``k``; ``z[j, k]``: noise."""

    h: np.ndarray
    z: np.ndarray


def modulate(bits, energy: float = 1.0, n_sensors: int = 1) -> np.ndarray:
    """Antipodal mapping 0 -> +a, 1 -> -a with ``a = sqrt(energy / n_sensors)``."""
    bits = np.asarray(bits)
    a = math.sqrt(energy / n_sensors)
    return a * (1.0 - 2.0 * bits.astype(float))


def draw_realization(cfg: ChannelConfig, m: int, rng: np.random.Generator, noiseless: bool = False) -> ChannelRealization:
    n = cfg.n_sensors
    if cfg.mode == "awgn":
        h = np.ones((1, 1, m), dtype=complex)
    else:
        k = m if cfg.fading == "symbol" else 1
        h = (rng.standard_normal((n, n, k)) + 1j * rng.standard_normal((n, n, k))) / math.sqrt(2.0)
        h = np.broadcast_to(h, (n, n, m)).copy()
    if noiseless:
        z = np.zeros((n, m), dtype=complex)
    else:
        z = (rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))) / math.sqrt(2.0)
    return ChannelRealization(h=h, z=z)


def transmit(symbols, cfg: ChannelConfig, realization: ChannelRealization) -> np.ndarray:
    """Superpose every sensor's symbols at each antenna and add noise; returns ``(n_antennas, m)``."""
    s = np.atleast_2d(np.asarray(symbols))
    if s.shape[0] != cfg.n_sensors:
        raise LengthMismatch(f"expected {cfg.n_sensors} symbol vectors, got {s.shape[0]}")
    h, z = realization.h, realization.z
    if h.shape[2] != s.shape[1] or z.shape[1] != s.shape[1]:
        raise LengthMismatch("symbol vectors and channel realization differ in length")
    return np.einsum("jik,ik->jk", h, s) + z


def _hypotheses(n: int) -> np.ndarray:
    # row b: sign of each sensor, +1 for bit 0
    return 1.0 - 2.0 * np.array(list(itertools.product((0, 1), repeat=n)), dtype=float)


def demodulate_llr(r, realization: ChannelRealization, cfg: ChannelConfig) -> np.ndarray:
    """Per-sensor bit LLRs ``log P(b=0|r) / P(b=1|r)``, shape ``(n_sensors, m)``."""
    r = np.atleast_2d(np.asarray(r))
    n = cfg.n_sensors
    a = cfg.amplitude
    h = realization.h
    if n == 1:
        return 4.0 * a * np.real(np.conj(h[0, 0]) * r[0])[None, :]
    if n > MAX_JOINT_SENSORS:
        raise HypothesisOverflow(f"joint demodulation of {n} sensors needs 2^{n} hypotheses")
    hyp = a * _hypotheses(n)
    # mean[b, j, k] = sum_i h[j, i, k] s_b[i]
    mean = np.einsum("jik,bi->bjk", h, hyp)
    metric = -(np.abs(r[None] - mean) ** 2).sum(axis=1)
    llr = np.empty((n, r.shape[1]))
    for i in range(n):
        pos = hyp[:, i] > 0
        llr[i] = np.logaddexp.reduce(metric[pos], axis=0) - np.logaddexp.reduce(metric[~pos], axis=0)
    return llr


def empirical_snr(r, realization: ChannelRealization, cfg: ChannelConfig, bits) -> float:
    """Matched-filter SNR (mean^2 / variance of the in-phase statistic) for one sensor."""
    x = np.real(np.conj(realization.h[0, 0]) * np.atleast_2d(r)[0]) * (1.0 - 2.0 * np.asarray(bits, float))
    return float(x.mean() ** 2 / x.var())
