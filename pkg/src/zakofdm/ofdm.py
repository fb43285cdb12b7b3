"""Discrete-time CP-OFDM modulator and demodulator at sample rate ``B = K * scs``.

The ideal band-limiting filters on either side of the DFT pair reduce to
identity maps on rate-B samples of band-limited signals, so the chain is just
IDFT + cyclic prefix at the transmitter and prefix removal + DFT at the
receiver. The half-subcarrier band offset is a common phase ramp at both ends
and is dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transforms import DimensionError, FreqSymbols, TimeSamples, dft, idft


@dataclass(frozen=True)
class OfdmConfig:
    k_subcarriers: int
    scs_hz: float
    cp_samples: int = 0

    def __post_init__(self):
        if self.k_subcarriers < 1:
            raise ValueError(f"k_subcarriers must be >= 1, got {self.k_subcarriers}")
        if not self.scs_hz > 0:
            raise ValueError(f"scs_hz must be positive, got {self.scs_hz}")
        if not 0 <= self.cp_samples < self.k_subcarriers:
            raise ValueError(
                f"cp_samples must satisfy 0 <= L_cp < K={self.k_subcarriers}, got {self.cp_samples}"
            )

    @property
    def rate_hz(self) -> float:
        """Sample rate / bandwidth ``B = K * scs``."""
        return self.k_subcarriers * self.scs_hz

    @property
    def symbol_s(self) -> float:
        """Useful symbol duration ``T = 1/scs``."""
        return 1.0 / self.scs_hz

    @property
    def cp_s(self) -> float:
        return self.cp_samples / self.rate_hz

    @property
    def samples_per_symbol(self) -> int:
        return self.k_subcarriers + self.cp_samples

    @classmethod
    def from_cp_duration(cls, k_subcarriers: int, scs_hz: float, cp_s: float) -> "OfdmConfig":
        """Round a CP duration in seconds to the nearest whole sample."""
        cp = int(round(cp_s * k_subcarriers * scs_hz))
        return cls(k_subcarriers, scs_hz, cp)


def ofdm_modulate(s: FreqSymbols, cfg: OfdmConfig) -> TimeSamples:
    """IDFT followed by cyclic-prefix insertion; output starts at ``-L_cp``."""
    if s.k_total != cfg.k_subcarriers:
        raise DimensionError(f"expected {cfg.k_subcarriers} subcarrier symbols, got {s.k_total}")
    body = idft(s).data
    cp = cfg.cp_samples
    samples = np.concatenate([body[len(body) - cp:], body]) if cp else body
    return TimeSamples(samples, offset=-cp, rate_hz=cfg.rate_hz)


def ofdm_demodulate(r: TimeSamples, cfg: OfdmConfig) -> FreqSymbols:
    """Discard everything outside ``[0, K)`` and take the unitary DFT."""
    k = cfg.k_subcarriers
    start = -r.offset
    if start < 0 or start + k > len(r):
        raise DimensionError(
            f"received block covers indices [{r.offset}, {r.offset + len(r)}), need [0, {k})"
        )
    return dft(TimeSamples(r.data[start:start + k], 0, r.rate_hz))
