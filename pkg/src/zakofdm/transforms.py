"""Discrete Zak-family transforms on quasi-periodic delay-Doppler grids.

Conventions
-----------
* A :class:`DDFrame` stores one fundamental period ``x[k, l]`` with
  ``k in [0, M)`` (delay bins of width ``1/B``) and ``l in [0, N)`` (Doppler
  bins of width ``1/T``). Values outside are reached through
  :func:`qp_extend` only.
* All transforms are unitary: factors ``1/sqrt(M)``, ``1/sqrt(N)`` and
  ``1/sqrt(MN)`` throughout, implemented with ``norm="ortho"`` FFTs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.fft import fft, ifft


class DimensionError(ValueError):
    """Raised when array lengths do not match the declared grid sizes."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.complex128, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DDFrame:
    """One period of a quasi-periodic discrete delay-Doppler signal."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionError(f"DDFrame needs a non-empty 2-D array, got shape {data.shape}")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @classmethod
    def zeros(cls, m: int, n: int) -> "DDFrame":
        return cls(np.zeros((m, n), dtype=complex))

    @classmethod
    def point(cls, m: int, n: int, k: int, l: int, value: complex = 1.0) -> "DDFrame":
        """Frame with a single non-zero entry at ``(k mod m, l mod n)``."""
        data = np.zeros((m, n), dtype=complex)
        data[k % m, l % n] = value
        return cls(data)

    def energy(self) -> float:
        return float(np.vdot(self.data, self.data).real)


@dataclass(frozen=True)
class FreqSymbols:
    """Length-K vector of subcarrier symbols ``S[i]``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 1 or data.size < 1:
            raise DimensionError(f"FreqSymbols needs a non-empty 1-D array, got shape {data.shape}")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def k_total(self) -> int:
        return self.data.size


@dataclass(frozen=True)
class TimeSamples:
    """Complex baseband samples at rate ``rate_hz``.

    Sample ``q`` of ``data`` sits at time ``(q + offset) / rate_hz``; a
    negative ``offset`` marks samples (e.g. a cyclic prefix) before ``t = 0``.
    """

    data: np.ndarray
    offset: int = 0
    rate_hz: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 1:
            raise DimensionError(f"TimeSamples needs a 1-D array, got shape {data.shape}")
        if not self.rate_hz > 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        if self.offset > 0:
            raise ValueError(f"offset must be <= 0, got {self.offset}")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "offset", int(self.offset))

    def __len__(self) -> int:
        return self.data.size

    def window(self, start: int, length: int) -> np.ndarray:
        """Samples for time indices ``start .. start+length-1``, zero where absent."""
        out = np.zeros(length, dtype=complex)
        lo = start - self.offset
        src_lo, src_hi = max(lo, 0), min(lo + length, self.data.size)
        if src_hi > src_lo:
            out[src_lo - lo:src_hi - lo] = self.data[src_lo:src_hi]
        return out


@dataclass(frozen=True)
class DDTap:
    """One sample ``h_dd[k, l]`` of an effective delay-Doppler channel."""

    k: int
    l: int
    value: complex = field(default=1.0)


# ---------------------------------------------------------------------------
# quasi-periodic indexing


def qp_values(data: np.ndarray, k, l) -> np.ndarray:
    """Vectorised quasi-periodic extension of a fundamental-domain array.

    ``x_dd[k, l] = x[k mod M, l mod N] * exp(j 2 pi floor(k/M) l / N)``
    evaluated element-wise on broadcast integer arrays ``k`` and ``l``.
    """
    m, n = data.shape
    k = np.asarray(k, dtype=np.int64)
    l = np.asarray(l, dtype=np.int64)
    wraps = np.floor_divide(k, m)
    # phase depends on wraps*l only modulo N
    phase = np.exp(2j * np.pi * np.mod(wraps * l, n) / n)
    return data[np.mod(k, m), np.mod(l, n)] * phase


def qp_extend(frame: DDFrame, k: int, l: int) -> complex:
    """Value of the quasi-periodic extension of ``frame`` at integer ``(k, l)``."""
    return complex(qp_values(frame.data, k, l))


# ---------------------------------------------------------------------------
# DFT pair


def dft(x: TimeSamples) -> FreqSymbols:
    """Unitary DFT of all samples in ``x``."""
    return FreqSymbols(fft(x.data, norm="ortho"))


def idft(s: FreqSymbols, rate_hz: float = 1.0) -> TimeSamples:
    """Unitary inverse DFT; the result starts at ``t = 0``."""
    return TimeSamples(ifft(s.data, norm="ortho"), offset=0, rate_hz=rate_hz)


# ---------------------------------------------------------------------------
# Zak transforms


def idzt(frame: DDFrame, rate_hz: float = 1.0) -> TimeSamples:
    """Inverse discrete Zak transform: one MN-sample period of ``x[n]``.

    ``x[n] = N**-0.5 * sum_l x_dd[n, l]``. Writing ``n = k + qM`` turns the
    sum into an N-point inverse DFT along the Doppler axis of each delay row.
    """
    m, n = frame.m, frame.n
    block = ifft(frame.data, axis=1, norm="ortho")  # [k, q]
    return TimeSamples(block.T.reshape(m * n), offset=0, rate_hz=rate_hz)


def dzt(x: TimeSamples | np.ndarray, m: int, n: int) -> DDFrame:
    """Discrete Zak transform of one MN-sample period."""
    y = np.asarray(x.data if isinstance(x, TimeSamples) else x)
    if y.ndim != 1 or y.size != m * n:
        raise DimensionError(f"dzt expects {m}*{n}={m * n} samples, got {y.size}")
    return DDFrame(fft(y.reshape(n, m).T, axis=1, norm="ortho"))


def idfzt(frame: DDFrame) -> FreqSymbols:
    """Inverse discrete frequency Zak transform (the transmit precoder).

    For each Doppler bin ``l`` the M symbols ``x[k, l] exp(-j2pi lk/MN)`` are
    spread by an M-point FFT over subcarriers ``l + pN``, ``p in [0, M)``;
    cost ``O(MN log M)``.
    """
    m, n = frame.m, frame.n
    k = np.arange(m)[:, None]
    l = np.arange(n)[None, :]
    z = frame.data * np.exp(-2j * np.pi * k * l / (m * n))
    block = fft(z, axis=0, norm="ortho")  # [p, l] -> S[l + pN]
    return FreqSymbols(block.reshape(m * n))


def dfzt(s: FreqSymbols | np.ndarray, m: int, n: int) -> DDFrame:
    """Discrete frequency Zak transform (the receive post-processor).

    Computed as an MN-point inverse DFT followed by the DZT, which keeps the
    cost at ``O(MN log MN)``.
    """
    y = np.asarray(s.data if isinstance(s, FreqSymbols) else s)
    if y.ndim != 1 or y.size != m * n:
        raise DimensionError(f"dfzt expects {m}*{n}={m * n} symbols, got {y.size}")
    return dzt(ifft(y, norm="ortho"), m, n)


# ---------------------------------------------------------------------------
# twisted convolution


def taps_to_arrays(taps: Iterable[DDTap]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    taps = list(taps)
    ks = np.array([t.k for t in taps], dtype=np.int64)
    ls = np.array([t.l for t in taps], dtype=np.int64)
    vs = np.array([t.value for t in taps], dtype=complex)
    return ks, ls, vs


def arrays_to_taps(ks, ls, vs) -> list[DDTap]:
    return [DDTap(int(k), int(l), complex(v)) for k, l, v in zip(ks, ls, vs)]


def twisted_convolve(h: Sequence[DDTap], frame: DDFrame) -> DDFrame:
    """Twisted convolution of a sparse tap list with a quasi-periodic frame.

    ``out[k, l] = sum h[k', l'] x_dd[k-k', l-l'] exp(j2pi l'(k-k')/MN)``,
    evaluated on the fundamental domain.
    """
    m, n = frame.m, frame.n
    mn = m * n
    kk = np.arange(m)[:, None]
    ll = np.arange(n)[None, :]
    out = np.zeros((m, n), dtype=complex)
    for tap in h:
        dk = kk - tap.k
        shifted = qp_values(frame.data, dk, ll - tap.l)
        phase = np.exp(2j * np.pi * np.mod(tap.l * dk, mn) / mn)
        out += tap.value * shifted * phase
    return DDFrame(out)


def compose_taps(a: Sequence[DDTap], b: Sequence[DDTap], m: int, n: int) -> list[DDTap]:
    """Tap list of ``a *σ b`` so that applying it equals applying b then a."""
    mn = m * n
    acc: dict[tuple[int, int], complex] = {}
    for ta in a:
        for tb in b:
            k, l = ta.k + tb.k, ta.l + tb.l
            phase = np.exp(2j * np.pi * ((ta.l * tb.k) % mn) / mn)
            acc[(k, l)] = acc.get((k, l), 0.0) + ta.value * tb.value * phase
    return [DDTap(k, l, v) for (k, l), v in sorted(acc.items())]
