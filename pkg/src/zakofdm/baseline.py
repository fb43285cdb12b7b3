"""Time-frequency CP-OFDM baseline with comb pilots and one-tap MMSE.

Pilot symbols occupy the even subcarriers of the chosen OFDM symbols with
twice the data energy, so every symbol carries the same average power; odd
subcarriers of those symbols stay empty. Least-squares estimates at the
pilots are linearly interpolated across frequency and then across time
(held constant outside the first and last pilot symbol).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ofdm import OfdmConfig, ofdm_demodulate, ofdm_modulate
from .transforms import DimensionError, FreqSymbols, TimeSamples


@dataclass(frozen=True)
class CombPilotConfig:
    ofdm: OfdmConfig
    num_symbols: int = 14
    pilot_symbols: tuple[int, ...] = (2, 5, 8, 11)
    comb: int = 2

    def __post_init__(self):
        object.__setattr__(self, "pilot_symbols", tuple(int(s) for s in self.pilot_symbols))
        if not self.pilot_symbols:
            raise ValueError("at least one pilot symbol is required")
        if any(not 0 <= s < self.num_symbols for s in self.pilot_symbols):
            raise ValueError(
                f"pilot symbol indices {self.pilot_symbols} must lie in [0, {self.num_symbols})"
            )
        if self.comb < 1 or self.comb > self.ofdm.k_subcarriers:
            raise ValueError(f"comb spacing must lie in [1, K], got {self.comb}")

    @property
    def k(self) -> int:
        return self.ofdm.k_subcarriers

    def data_mask(self) -> np.ndarray:
        """``(K, S)`` mask of data resource elements."""
        mask = np.ones((self.k, self.num_symbols), dtype=bool)
        mask[:, list(self.pilot_symbols)] = False
        return mask

    def pilot_carriers(self) -> np.ndarray:
        return np.arange(0, self.k, self.comb)

    @property
    def pilot_energy(self) -> float:
        """Per-pilot energy that keeps pilot symbols at unit average power."""
        return self.k / self.pilot_carriers().size

    def pilot_values(self) -> np.ndarray:
        """Fixed unit-modulus QPSK-like sequence scaled to the pilot energy."""
        p = self.pilot_carriers()
        phase = np.pi / 4 + np.pi / 2 * ((p * (p + 1) // 2) % 4)
        return np.sqrt(self.pilot_energy) * np.exp(1j * phase)


def comb_tx(data: np.ndarray, cfg: CombPilotConfig) -> TimeSamples:
    """Map data symbols (column-major over :meth:`data_mask`) plus pilots and modulate a subframe."""
    grid = np.zeros((cfg.k, cfg.num_symbols), dtype=complex)
    mask = cfg.data_mask()
    grid.T[mask.T] = data
    pilots = cfg.pilot_values()
    for s in cfg.pilot_symbols:
        grid[cfg.pilot_carriers(), s] = pilots
    blocks = [ofdm_modulate(FreqSymbols(grid[:, s]), cfg.ofdm).data for s in range(cfg.num_symbols)]
    return TimeSamples(np.concatenate(blocks), -cfg.ofdm.cp_samples, cfg.ofdm.rate_hz)


def comb_demodulate(r: TimeSamples, cfg: CombPilotConfig) -> np.ndarray:
    """Received ``(K, S)`` resource grid."""
    step = cfg.ofdm.samples_per_symbol
    cp = cfg.ofdm.cp_samples
    if r.offset > -cp:
        raise DimensionError(f"received subframe starts at {r.offset}, need <= {-cp}")
    out = np.empty((cfg.k, cfg.num_symbols), dtype=complex)
    for s in range(cfg.num_symbols):
        block = TimeSamples(r.window(s * step - cp, step), -cp, r.rate_hz)
        out[:, s] = ofdm_demodulate(block, cfg.ofdm).data
    return out


def comb_estimate(y: np.ndarray, cfg: CombPilotConfig) -> np.ndarray:
    """Linearly interpolated ``(K, S)`` channel estimate from the comb pilots."""
    pc = cfg.pilot_carriers()
    pilots = cfg.pilot_values()
    # interpolate along physical frequency, not along the FFT bin index
    freq = np.fft.fftfreq(cfg.k, 1.0 / cfg.k)
    order = np.argsort(freq[pc])
    fp = freq[pc][order]
    cols = []
    for s in cfg.pilot_symbols:
        ls = (y[pc, s] / pilots)[order]
        # np.interp holds the end values outside the pilot span
        cols.append(np.interp(freq, fp, ls.real) + 1j * np.interp(freq, fp, ls.imag))
    per_pilot = np.stack(cols, axis=1)
    ts = np.asarray(cfg.pilot_symbols, dtype=float)
    order = np.argsort(ts)
    ts, per_pilot = ts[order], per_pilot[:, order]
    sym = np.arange(cfg.num_symbols)
    est = np.empty((cfg.k, cfg.num_symbols), dtype=complex)
    for k in range(cfg.k):
        est[k] = np.interp(sym, ts, per_pilot[k].real) + 1j * np.interp(sym, ts, per_pilot[k].imag)
    return est


def one_tap_mmse(y: np.ndarray, h: np.ndarray, noise_var: float, symbol_energy: float = 1.0):
    """Per-resource-element MMSE; returns soft symbols and the predicted SINR."""
    denom = np.abs(h) ** 2 + noise_var / symbol_energy
    soft = np.conj(h) * y / np.where(denom > 0, denom, 1.0)
    with np.errstate(divide="ignore"):
        sinr = np.abs(h) ** 2 * symbol_energy / noise_var if noise_var > 0 else np.full(h.shape, np.inf)
    return soft, sinr


def true_tf_response(ps, cfg: CombPilotConfig) -> np.ndarray:
    """Per-resource-element channel averaged over each symbol's useful part (ICI ignored)."""
    ofdm = cfg.ofdm
    b = ofdm.rate_hz
    k = cfg.k
    freqs = np.fft.fftfreq(k, 1.0 / k) * ofdm.scs_hz
    step = ofdm.samples_per_symbol
    n = np.arange(k)
    out = np.zeros((k, cfg.num_symbols), dtype=complex)
    for p in ps.paths:
        for s in range(cfg.num_symbols):
            t = (s * step + n) / b
            avg = np.mean(np.exp(2j * np.pi * p.doppler_hz * (t - p.delay_s)))
            out[:, s] += p.gain * avg * np.exp(-2j * np.pi * freqs * p.delay_s)
    return out
