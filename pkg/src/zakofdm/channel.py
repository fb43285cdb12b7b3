"""Doubly-spread multipath channel on rate-B sample streams.

Each path delays the (band-limited) input by ``tau_i`` with a Kaiser-windowed
sinc interpolator and applies its Doppler as an exact per-sample phasor::

    r[n] = sum_i h_i x(n/B - tau_i) exp(j 2 pi nu_i (n/B - tau_i))
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.special import i0

from .transforms import DDFrame, DDTap, TimeSamples, qp_values

KERNEL_HALF_WIDTH = 64
KAISER_BETA = 12.0


@dataclass(frozen=True)
class ChannelPath:
    gain: complex
    delay_s: float
    doppler_hz: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.delay_s) and self.delay_s >= 0):
            raise ValueError(f"path delay must be finite and >= 0, got {self.delay_s}")


@dataclass(frozen=True)
class PathSet:
    paths: tuple[ChannelPath, ...]
    normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))

    @property
    def gain_energy(self) -> float:
        """Realised ``sum |h_i|^2``."""
        return float(sum(abs(p.gain) ** 2 for p in self.paths))

    @property
    def max_delay_s(self) -> float:
        return max((p.delay_s for p in self.paths), default=0.0)

    @classmethod
    def single(cls, gain: complex = 1.0, delay_s: float = 0.0, doppler_hz: float = 0.0) -> "PathSet":
        return cls((ChannelPath(complex(gain), delay_s, doppler_hz),), normalized=True)


@dataclass(frozen=True)
class TdlTap:
    normalized_delay: float
    power_db: float
    rician_k_db: float | None = None


@dataclass(frozen=True)
class TdlProfile:
    name: str
    taps: tuple[TdlTap, ...]
    delay_scale_s: float
    los: bool = False

    def __post_init__(self):
        if not self.taps:
            raise ValueError(f"TDL profile {self.name!r} has no taps")
        object.__setattr__(self, "taps", tuple(self.taps))

    def tap_powers(self) -> list[tuple[float, float, float]]:
        """``(delay_s, specular_power, diffuse_power)`` per tap, normalised to unit total."""
        rows = []
        for t in self.taps:
            p = 10 ** (t.power_db / 10)
            if t.rician_k_db is None:
                rows.append((t.normalized_delay, 0.0, p))
            else:
                rows.append((t.normalized_delay, p, p / 10 ** (t.rician_k_db / 10)))
        total = sum(s + d for _, s, d in rows)
        return [(dly * self.delay_scale_s, s / total, d / total) for dly, s, d in rows]

    @property
    def max_delay_s(self) -> float:
        return max(t.normalized_delay for t in self.taps) * self.delay_scale_s

    def with_delay_scale(self, delay_scale_s: float) -> "TdlProfile":
        return TdlProfile(self.name, self.taps, delay_scale_s, self.los)


def parse_tdl_profile(text: str) -> TdlProfile:
    header: dict[str, str] = {}
    taps: list[TdlTap] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = (s.strip() for s in line.split("=", 1))
            header[key] = value
            continue
        fields = [float(f) for f in line.replace(",", " ").split()]
        if len(fields) not in (2, 3):
            raise ValueError(f"line {lineno}: expected 2 or 3 fields, got {len(fields)}")
        taps.append(TdlTap(fields[0], fields[1], fields[2] if len(fields) == 3 else None))
    try:
        name = header["name"]
        scale = float(header["delay_scale_ns"]) * 1e-9
    except KeyError as exc:
        raise ValueError(f"TDL profile header is missing {exc.args[0]!r}") from None
    los = header.get("los", "false").lower() in ("1", "true", "yes")
    return TdlProfile(name, tuple(taps), scale, los)


def load_tdl_profile(name_or_path: str | Path, delay_scale_s: float | None = None) -> TdlProfile:
    """Load a bundled profile (``"TDL-C"``, ``"TDL-D"``) or a profile file."""
    builtin = {"tdl-c": "tdl_c.txt", "tdl-d": "tdl_d.txt"}
    key = str(name_or_path).lower()
    if key in builtin:
        text = resources.files("zakofdm.data").joinpath(builtin[key]).read_text()
    else:
        text = Path(name_or_path).read_text()
    profile = parse_tdl_profile(text)
    return profile if delay_scale_s is None else profile.with_delay_scale(delay_scale_s)


def draw_tdl_realization(profile: TdlProfile, nu_max_hz: float, rng: np.random.Generator) -> PathSet:
    """One random path set: complex Gaussian gains, ``nu_i = nu_max cos(theta_i)``."""
    paths = []
    for delay, spec, diff in profile.tap_powers():
        g = math.sqrt(diff / 2) * complex(rng.standard_normal(), rng.standard_normal())
        if spec > 0:
            g += math.sqrt(spec) * np.exp(2j * np.pi * rng.uniform())
        theta = rng.uniform(0.0, 2 * np.pi)
        paths.append(ChannelPath(complex(g), delay, nu_max_hz * math.cos(theta)))
    return PathSet(tuple(paths), normalized=True)


# ---------------------------------------------------------------------------
# fractional delay


def fractional_delay_taps(frac: float, half_width: int = KERNEL_HALF_WIDTH,
                          beta: float = KAISER_BETA) -> np.ndarray:
    """FIR taps ``c[j]``, ``j = -half_width..half_width``, approximating ``x(n - frac)``.

    Kaiser-windowed sinc; returns an exact unit impulse for ``frac == 0``.
    """
    c = np.zeros(2 * half_width + 1)
    if frac == 0.0:
        c[half_width] = 1.0
        return c
    u = np.arange(-half_width, half_width + 1) - frac
    span = half_width + 1.0
    window = i0(beta * np.sqrt(np.clip(1.0 - (u / span) ** 2, 0.0, None))) / i0(beta)
    return np.sinc(u) * window


def delay_samples(x: np.ndarray, delay: float, out_len: int,
                  half_width: int = KERNEL_HALF_WIDTH) -> np.ndarray:
    """``y[j] = x(j - delay)`` for ``j in [0, out_len)`` via windowed-sinc interpolation."""
    whole = math.floor(delay)
    frac = delay - whole
    if frac > 1.0 - 1e-12:
        whole, frac = whole + 1, 0.0
    taps = fractional_delay_taps(frac, half_width)
    full = np.convolve(x, taps)  # full[j + hw] ~ x(j - frac)
    y = np.zeros(out_len, dtype=complex)
    # y[j] = full[j - whole + hw]
    src = np.arange(out_len) - whole + half_width
    ok = (src >= 0) & (src < full.size)
    y[ok] = full[src[ok]]
    return y


def apply_channel(x: TimeSamples, ps: PathSet, half_width: int = KERNEL_HALF_WIDTH) -> TimeSamples:
    """Pass ``x`` through every path of ``ps`` and sum.

    The output keeps the input's time origin and is extended by
    ``ceil(B tau_max) + half_width`` samples to hold the delayed tail.
    """
    b = x.rate_hz
    extra = math.ceil(b * ps.max_delay_s - 1e-9) + half_width
    out_len = len(x) + extra
    t = (np.arange(out_len) + x.offset) / b
    r = np.zeros(out_len, dtype=complex)
    for p in ps.paths:
        delayed = delay_samples(x.data, p.delay_s * b, out_len, half_width)
        if p.doppler_hz:
            delayed = delayed * np.exp(2j * np.pi * p.doppler_hz * (t - p.delay_s))
        r += p.gain * delayed
    return TimeSamples(r, x.offset, b)


def add_awgn(x: TimeSamples, tsnr_db: float | None, signal_power: float,
             rng: np.random.Generator) -> TimeSamples:
    """Add circular complex Gaussian noise of variance ``signal_power / 10**(tsnr_db/10)``.

    ``tsnr_db`` of ``None`` or ``inf`` means noiseless.
    """
    if tsnr_db is None or math.isinf(tsnr_db):
        return x
    if not signal_power > 0:
        raise ValueError(f"signal_power must be positive, got {signal_power}")
    var = noise_variance(signal_power, tsnr_db)
    noise = math.sqrt(var / 2) * (rng.standard_normal(len(x)) + 1j * rng.standard_normal(len(x)))
    return TimeSamples(x.data + noise, x.offset, x.rate_hz)


def noise_variance(signal_power: float, tsnr_db: float | None) -> float:
    if tsnr_db is None or math.isinf(tsnr_db):
        return 0.0
    return signal_power / 10 ** (tsnr_db / 10)


# ---------------------------------------------------------------------------
# effective DD channel


class Chain(Protocol):
    m: int
    n: int

    def transmit(self, frame: DDFrame) -> TimeSamples: ...

    def receive(self, r: TimeSamples) -> DDFrame: ...


def probe_window(m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Default one-period tap window: delay ``[-floor(M/4), M - floor(M/4))``, Doppler centred."""
    k0 = m // 4
    l0 = n // 2
    return np.arange(-k0, m - k0), np.arange(-l0, n - l0)


def read_point_response(y: DDFrame, kp: int, lp: int, ks: np.ndarray, ls: np.ndarray,
                        prune_db: float | None = -60.0) -> list[DDTap]:
    """Undo the point-pilot phase: ``h[k, l] = y_dd[kp+k, lp+l] exp(-j2pi l kp / MN)``."""
    mn = y.m * y.n
    kk, ll = np.meshgrid(ks, ls, indexing="ij")
    vals = qp_values(y.data, kp + kk, lp + ll) * np.exp(-2j * np.pi * np.mod(ll * kp, mn) / mn)
    mag = np.abs(vals)
    keep = np.ones(vals.shape, dtype=bool)
    if prune_db is not None and mag.max() > 0:
        keep = mag >= mag.max() * 10 ** (prune_db / 20)
    return [DDTap(int(k), int(l), complex(v)) for k, l, v in zip(kk[keep], ll[keep], vals[keep])]


def effective_dd_channel(ps: PathSet, chain: Chain, pilot: tuple[int, int] | None = None,
                         window: tuple[np.ndarray, np.ndarray] | None = None,
                         prune_db: float | None = -60.0) -> list[DDTap]:
    """Probe oracle for ``h_dd``: send a noiseless point pilot through chain and channel.

    Returns the taps of one period around the pilot, pruned below
    ``prune_db`` relative to the strongest tap.
    """
    m, n = chain.m, chain.n
    kp, lp = pilot if pilot is not None else (math.ceil(m / 2) % m, math.ceil(n / 2) % n)
    y = chain.receive(apply_channel(chain.transmit(DDFrame.point(m, n, kp, lp)), ps))
    ks, ls = window if window is not None else probe_window(m, n)
    return read_point_response(y, kp, lp, ks, ls, prune_db)


def periodic_delay_taps(delay: float, size: int) -> np.ndarray:
    """Circular-convolution taps of an ideal band-limited delay on a ``size``-periodic sequence."""
    i = np.fft.fftfreq(size, 1.0 / size)  # centred subcarrier indices
    k = np.arange(size)
    phase = np.exp(2j * np.pi * np.outer(k - delay, i) / size)
    if size % 2 == 0:
        # split the Nyquist bin evenly between +B/2 and -B/2
        nyq = size // 2
        phase[:, nyq] = np.cos(np.pi * (k - delay))
    return phase.sum(axis=1) / size


def analytic_dd_channel(ps: PathSet, m: int, n: int, rate_hz: float, cp_samples: int,
                        prune_db: float | None = None) -> list[DDTap]:
    """Closed-form ``h_dd`` on the full ``MN x MN`` tap torus for the CP-OFDM-constrained chain.

    Assumes every path delay fits inside the cyclic prefix and ideal periodic
    band-limited interpolation, under which each path acts as a circular
    delay followed by multiplication with its Doppler phasor over ``[0, T)``.
    """
    mn = m * n
    nn = np.arange(mn)
    kk, ll = np.meshgrid(np.arange(mn), np.arange(mn), indexing="ij")
    total = np.zeros((mn, mn), dtype=complex)
    for p in ps.paths:
        d = p.delay_s * rate_hz
        if d > cp_samples + 1e-9:
            raise ValueError(f"path delay {d:.3f} samples exceeds the {cp_samples}-sample prefix")
        c = periodic_delay_taps(d, mn)
        g = np.fft.fft(np.exp(2j * np.pi * p.doppler_hz * nn / rate_hz)) / mn
        total += (p.gain * np.exp(-2j * np.pi * p.doppler_hz * p.delay_s)
                  * np.outer(c, g) * np.exp(2j * np.pi * np.mod(kk * ll, mn) / mn))
    # centred representatives of Z_MN
    ks = np.where(kk >= mn // 2, kk - mn, kk)
    ls = np.where(ll >= mn // 2, ll - mn, ll)
    mag = np.abs(total)
    keep = mag > 0
    if prune_db is not None:
        keep = mag >= mag.max() * 10 ** (prune_db / 20)
    return [DDTap(int(k), int(l), complex(v)) for k, l, v in zip(ks[keep], ls[keep], total[keep])]
