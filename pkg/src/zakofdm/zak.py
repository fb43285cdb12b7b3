"""Zak-OTFS transmit and receive chains.

Two families live here:

* ``zak_ofdm_tx`` / ``zak_ofdm_rx``: Zak-OTFS as an IDFZT precoder in front of
  a CP-OFDM modulator and a DFZT post-processor behind the CP-OFDM
  demodulator. With ``M = 1`` both collapse to plain CP-OFDM.
* ``unconstrained_zak_tx`` / ``unconstrained_zak_rx``: a single long packet
  built directly from the IDZT/DZT with free choice of delay filter and time
  window, a leading guard interval and no cyclic prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.fft import fft, ifft
from scipy.special import erf

from .ofdm import OfdmConfig, ofdm_demodulate, ofdm_modulate
from .transforms import DDFrame, DimensionError, TimeSamples, dfzt, dzt, idfzt, idzt


@dataclass(frozen=True)
class ZakConfig:
    m: int
    n: int
    ofdm: OfdmConfig
    num_symbols: int = 1

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"M and N must be positive, got ({self.m}, {self.n})")
        if self.m * self.n != self.ofdm.k_subcarriers:
            raise ValueError(
                f"M*N = {self.m * self.n} must equal the subcarrier count K = {self.ofdm.k_subcarriers}"
            )
        if self.num_symbols < 1:
            raise ValueError(f"num_symbols must be >= 1, got {self.num_symbols}")

    @property
    def rate_hz(self) -> float:
        return self.ofdm.rate_hz

    @property
    def delay_period_s(self) -> float:
        return self.m / self.rate_hz

    @property
    def doppler_period_hz(self) -> float:
        return self.n * self.ofdm.scs_hz


def _check_frame(frame: DDFrame, m: int, n: int) -> None:
    if (frame.m, frame.n) != (m, n):
        raise DimensionError(f"frame is {frame.m}x{frame.n}, configuration expects {m}x{n}")


def zak_ofdm_tx(frame: DDFrame, cfg: ZakConfig) -> TimeSamples:
    """IDFZT precoding followed by CP-OFDM modulation of one packet."""
    _check_frame(frame, cfg.m, cfg.n)
    return ofdm_modulate(idfzt(frame), cfg.ofdm)


def zak_ofdm_rx(r: TimeSamples, cfg: ZakConfig) -> DDFrame:
    """CP-OFDM demodulation followed by DFZT post-processing of one packet."""
    return dfzt(ofdm_demodulate(r, cfg.ofdm), cfg.m, cfg.n)


def assemble_subframe(frames: Sequence[DDFrame], cfg: ZakConfig) -> TimeSamples:
    """Concatenate ``num_symbols`` precoded CP-OFDM packets back to back."""
    if len(frames) != cfg.num_symbols:
        raise DimensionError(f"expected {cfg.num_symbols} frames, got {len(frames)}")
    blocks = [zak_ofdm_tx(f, cfg).data for f in frames]
    return TimeSamples(np.concatenate(blocks), offset=-cfg.ofdm.cp_samples, rate_hz=cfg.rate_hz)


def split_subframe(r: TimeSamples, cfg: ZakConfig) -> list[TimeSamples]:
    """Cut a received subframe into per-packet blocks, each re-based to its own body start."""
    step = cfg.ofdm.samples_per_symbol
    cp = cfg.ofdm.cp_samples
    need = cfg.num_symbols * step - cp
    if r.offset > -cp or r.offset + len(r) < need:
        raise DimensionError(
            f"received subframe covers [{r.offset}, {r.offset + len(r)}), need [{-cp}, {need})"
        )
    return [TimeSamples(r.window(s * step - cp, step), -cp, r.rate_hz) for s in range(cfg.num_symbols)]


@dataclass(frozen=True)
class ZakOfdmChain:
    """Single-packet Zak-OTFS-over-CP-OFDM transceiver (used by the channel probe)."""

    cfg: ZakConfig

    @property
    def m(self) -> int:
        return self.cfg.m

    @property
    def n(self) -> int:
        return self.cfg.n

    def transmit(self, frame: DDFrame) -> TimeSamples:
        return zak_ofdm_tx(frame, self.cfg)

    def receive(self, r: TimeSamples) -> DDFrame:
        return zak_ofdm_rx(r, self.cfg)


# ---------------------------------------------------------------------------
# unconstrained Zak-OTFS

DELAY_PROTOS = ("sinc", "rrc", "gaussian_sinc")
DOPPLER_PROTOS = ("rect_window_sinc", "rrc", "gaussian_sinc")


class FilterError(ValueError):
    """Unsupported pulse-shaping filter parameters."""


@dataclass(frozen=True)
class FilterSpec:
    """Factorisable delay-Doppler pulse ``w(tau, nu) = w1(tau) w2(nu) exp(j2pi nu tau)``.

    The delay prototype is realised as an FIR kernel at the simulation rate.
    The Doppler prototype is realised through its time-domain window ``W2``:
    ``rect_window_sinc`` is the rectangular window over the packet,
    ``rrc(beta)`` a window with root-raised-cosine edges of total width
    ``beta * T`` and ``gaussian_sinc(alpha)`` the rectangle smoothed by a
    Gaussian whose standard deviation is ``alpha * T``.
    """

    delay_proto: str = "sinc"
    delay_param: float = 0.0
    doppler_proto: str = "rect_window_sinc"
    doppler_param: float = 0.0

    def __post_init__(self):
        if self.delay_proto not in DELAY_PROTOS:
            raise FilterError(f"unknown delay prototype {self.delay_proto!r}; choose from {DELAY_PROTOS}")
        if self.doppler_proto not in DOPPLER_PROTOS:
            raise FilterError(
                f"unknown Doppler prototype {self.doppler_proto!r}; choose from {DOPPLER_PROTOS}"
            )
        if self.delay_proto == "rrc" and not 0 <= self.delay_param <= 1:
            raise FilterError(f"rrc roll-off must lie in [0, 1], got {self.delay_param}")
        if self.delay_proto == "gaussian_sinc" and self.delay_param < 0:
            raise FilterError(f"gaussian_sinc alpha must be >= 0, got {self.delay_param}")
        if self.doppler_proto == "rrc" and not 0 <= self.doppler_param <= 1:
            raise FilterError(f"rrc roll-off must lie in [0, 1], got {self.doppler_param}")
        if self.doppler_proto == "gaussian_sinc" and self.doppler_param < 0:
            raise FilterError(f"gaussian_sinc alpha must be >= 0, got {self.doppler_param}")


@dataclass(frozen=True)
class UnconstrainedConfig:
    """Numerology of one unconstrained Zak-OTFS packet.

    ``guard_samples`` zeros precede the packet. The receive window runs
    ``rx_extension`` samples past the transmit window so that the delayed tail
    is folded back by the periodisation step; ``None`` means "same as the
    guard". ``rx_lead`` likewise opens the window early to catch the
    filter's precursor.
    """

    m: int
    n: int
    rate_hz: float
    guard_samples: int = 0
    oversample: int = 1
    half_width: int = 64
    rx_extension: int | None = None
    rx_lead: int = 0

    def __post_init__(self):
        if self.rx_lead < 0:
            raise ValueError(f"rx_lead must be >= 0, got {self.rx_lead}")
        if self.m < 1 or self.n < 1:
            raise ValueError(f"M and N must be positive, got ({self.m}, {self.n})")
        if self.oversample < 1:
            raise ValueError(f"oversample must be >= 1, got {self.oversample}")
        if self.guard_samples < 0:
            raise ValueError(f"guard_samples must be >= 0, got {self.guard_samples}")

    @property
    def mn(self) -> int:
        return self.m * self.n

    @property
    def packet_s(self) -> float:
        return self.mn / self.rate_hz

    @property
    def extension(self) -> int:
        return self.guard_samples if self.rx_extension is None else self.rx_extension


def _delay_prototype(spec: FilterSpec, u: np.ndarray) -> np.ndarray:
    """Delay pulse sampled at ``u`` (units of 1/B), before energy normalisation."""
    if spec.delay_proto == "sinc":
        return np.sinc(u)
    if spec.delay_proto == "gaussian_sinc":
        return np.sinc(u) * np.exp(-spec.delay_param * u ** 2)
    beta = spec.delay_param
    if beta == 0:
        return np.sinc(u)
    out = np.empty_like(u, dtype=float)
    at0 = np.isclose(u, 0.0)
    sing = np.isclose(np.abs(u), 1 / (4 * beta))
    reg = ~(at0 | sing)
    ur = u[reg]
    out[reg] = (np.sin(np.pi * ur * (1 - beta)) + 4 * beta * ur * np.cos(np.pi * ur * (1 + beta))) / (
        np.pi * ur * (1 - (4 * beta * ur) ** 2)
    )
    out[at0] = 1 - beta + 4 * beta / np.pi
    out[sing] = beta / np.sqrt(2) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
    )
    return out


def delay_kernel(spec: FilterSpec, oversample: int = 1, half_width: int = 64) -> np.ndarray:
    """Transmit delay filter taps at rate ``oversample * B`` (centre tap in the middle).

    Truncated at ``half_width`` samples of rate B with a raised-cosine taper
    over the outer quarter. Scaled so the matched cascade has unit gain at
    zero lag.
    """
    if spec.delay_proto == "rrc" and spec.delay_param > 0 and oversample == 1:
        raise FilterError("an rrc delay pulse with non-zero roll-off needs oversample >= 2")
    hw = half_width * oversample
    j = np.arange(-hw, hw + 1)
    u = j / oversample
    taper = np.ones_like(u)
    edge = max(half_width // 4, 1)
    outer = np.abs(u) > half_width - edge
    taper[outer] = 0.5 * (1 + np.cos(np.pi * (np.abs(u[outer]) - (half_width - edge)) / edge))
    g = _delay_prototype(spec, u) * taper
    if spec.delay_proto == "sinc" and oversample == 1:
        g = np.zeros_like(g)
        g[hw] = 1.0
        return g
    energy = np.sum(g ** 2) / oversample
    return g / math.sqrt(energy)


def time_window(spec: FilterSpec, t: np.ndarray, period_s: float) -> np.ndarray:
    """Transmit time window ``W2(t)`` for a packet nominally occupying ``[0, T)``."""
    T = period_s
    if spec.doppler_proto == "rect_window_sinc" or spec.doppler_param == 0:
        return ((t >= 0) & (t < T)).astype(float)
    if spec.doppler_proto == "rrc":
        half = spec.doppler_param * T / 2
        w = np.zeros_like(t, dtype=float)
        flat = (t >= half) & (t < T - half)
        w[flat] = 1.0
        for centre in (0.0, T):
            edge = np.abs(t - centre) < half
            # rising edge at 0, falling edge at T
            x = (t[edge] - centre) / half if centre == 0.0 else (centre - t[edge]) / half
            w[edge] = np.sqrt(0.5 * (1 + np.sin(np.pi * x / 2)))
        return w
    sigma = spec.doppler_param * T
    return 0.5 * (erf(t / (math.sqrt(2) * sigma)) - erf((t - T) / (math.sqrt(2) * sigma)))


def window_support(spec: FilterSpec, period_s: float) -> tuple[float, float]:
    T = period_s
    if spec.doppler_proto == "rect_window_sinc" or spec.doppler_param == 0:
        return 0.0, T
    if spec.doppler_proto == "rrc":
        half = spec.doppler_param * T / 2
        return -half, T + half
    reach = 5.0 * spec.doppler_param * T
    return -reach, T + reach


def _periodic_filter(x: np.ndarray, kernel: np.ndarray, oversample: int) -> np.ndarray:
    """Filter the MN-periodic impulse train of ``x`` at rate ``oversample * B``; one period out."""
    period = x.size * oversample
    train = np.zeros(period, dtype=complex)
    train[::oversample] = x
    hw = (kernel.size - 1) // 2
    wrapped = np.zeros(period, dtype=complex)
    np.add.at(wrapped, np.mod(np.arange(-hw, hw + 1), period), kernel)
    return ifft(fft(train) * fft(wrapped))


def unconstrained_zak_tx(frame: DDFrame, filt: FilterSpec, cfg: UnconstrainedConfig) -> TimeSamples:
    """Guard zeros, then ``W2 * (w1 conv impulse_train(idzt(frame)))`` at rate ``oversample * B``."""
    _check_frame(frame, cfg.m, cfg.n)
    os_ = cfg.oversample
    fs = cfg.rate_hz * os_
    x = idzt(frame).data
    kernel = delay_kernel(filt, os_, cfg.half_width)
    shaped = _periodic_filter(x, kernel, os_)
    lo, hi = window_support(filt, cfg.packet_s)
    j_lo = math.floor(lo * fs + 1e-9)
    j_hi = math.ceil(hi * fs - 1e-9)
    j = np.arange(j_lo, j_hi)
    body = shaped[np.mod(j, shaped.size)] * time_window(filt, j / fs, cfg.packet_s)
    guard = cfg.guard_samples * os_
    samples = np.concatenate([np.zeros(guard, dtype=complex), body])
    return TimeSamples(samples, offset=j_lo - guard, rate_hz=fs)


def unconstrained_zak_rx(r: TimeSamples, filt: FilterSpec, cfg: UnconstrainedConfig) -> DDFrame:
    """Matched filter, window, sample at rate B, periodise with period MN, then DZT."""
    os_ = cfg.oversample
    fs = cfg.rate_hz * os_
    if not math.isclose(r.rate_hz, fs):
        raise DimensionError(f"received rate {r.rate_hz} Hz, chain runs at {fs} Hz")
    lo, hi = window_support(filt, cfg.packet_s)
    hi += cfg.extension / cfg.rate_hz
    lo -= cfg.rx_lead / cfg.rate_hz
    j_lo = math.floor(lo * fs + 1e-9)
    j_hi = math.ceil(hi * fs - 1e-9)
    kernel = delay_kernel(filt, os_, cfg.half_width)
    hw = (kernel.size - 1) // 2
    if hw == 0 or (filt.delay_proto == "sinc" and os_ == 1):
        filtered = r.window(j_lo, j_hi - j_lo)
    else:
        seg = r.window(j_lo - hw, j_hi - j_lo + 2 * hw)
        matched = np.conj(kernel[::-1]) / os_
        filtered = np.convolve(seg, matched, mode="valid")
    j = np.arange(j_lo, j_hi)
    w4 = _rx_window(filt, j / fs, cfg)
    windowed = filtered * w4
    on_grid = np.mod(j, os_) == 0
    n_idx = j[on_grid] // os_
    y = np.zeros(cfg.mn, dtype=complex)
    np.add.at(y, np.mod(n_idx, cfg.mn), windowed[on_grid])
    return dzt(y, cfg.m, cfg.n)


def _rx_window(filt: FilterSpec, t: np.ndarray, cfg: UnconstrainedConfig) -> np.ndarray:
    """``conj(W2)`` with its flat top stretched by the receive lead and extension."""
    ext_s = cfg.extension / cfg.rate_hz
    lead_s = cfg.rx_lead / cfg.rate_hz
    T = cfg.packet_s
    if ext_s == 0 and lead_s == 0:
        return np.conj(time_window(filt, t, T))
    lo, hi = window_support(filt, T)
    mid = 0.5 * (lo + hi)
    rising = np.conj(time_window(filt, np.minimum(t + lead_s, mid), T))
    falling = np.conj(time_window(filt, np.maximum(t - ext_s, mid), T))
    return np.where(t < mid, rising, np.where(t - ext_s >= mid, falling, rising.max()))


@dataclass(frozen=True)
class UnconstrainedChain:
    cfg: UnconstrainedConfig
    filt: FilterSpec = field(default_factory=FilterSpec)

    @property
    def m(self) -> int:
        return self.cfg.m

    @property
    def n(self) -> int:
        return self.cfg.n

    def transmit(self, frame: DDFrame) -> TimeSamples:
        return unconstrained_zak_tx(frame, self.filt, self.cfg)

    def receive(self, r: TimeSamples) -> DDFrame:
        return unconstrained_zak_rx(r, self.filt, self.cfg)
