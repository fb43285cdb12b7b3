"""Pilot/guard/data layout, cross-ambiguity channel estimation and MMSE detection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .constellation import get_constellation
from .transforms import DDFrame, DDTap, qp_values, taps_to_arrays


class LayoutError(ValueError):
    """The frame cannot hold the pilot and guard regions for the given delay spread."""


@dataclass(frozen=True)
class FrameLayout:
    """Boolean region masks over the ``M x N`` fundamental domain.

    The pilot region spans delay bins ``k_p-1 .. k_p+b`` on every Doppler bin,
    where ``b = ceil(B tau_max)``; guard ``G1`` covers the ``b`` bins to its
    left and guard ``G2`` the single bin to its right. Everything else
    carries data.
    """

    m: int
    n: int
    pilot_pos: tuple[int, int]
    delay_bins: int
    pilot: np.ndarray
    guard1: np.ndarray
    guard2: np.ndarray
    data: np.ndarray
    pilot_amplitude: float
    symbol_energy: float = 1.0

    @property
    def overhead_count(self) -> int:
        return int(np.count_nonzero(self.pilot | self.guard1 | self.guard2))

    @property
    def overhead_fraction(self) -> float:
        return (2 * self.delay_bins + 3) / self.m

    @property
    def num_data(self) -> int:
        return int(np.count_nonzero(self.data))

    def pilot_frame(self) -> DDFrame:
        return DDFrame.point(self.m, self.n, *self.pilot_pos, self.pilot_amplitude)

    def frame_energy(self) -> float:
        return self.num_data * self.symbol_energy + self.pilot_amplitude ** 2

    def hypothesis_window(self) -> tuple[np.ndarray, np.ndarray]:
        """Delay and Doppler offsets searched by the estimator.

        Delay spans the pilot-region width plus the trailing guard bin,
        ``-1 .. b+1``; Doppler spans one full period.
        """
        l0 = self.n // 2
        return np.arange(-1, self.delay_bins + 2), np.arange(-l0, self.n - l0)


def build_layout(m: int, n: int, b_hz: float, tau_max_s: float,
                 pilot_energy_policy: str | float = "equal", symbol_energy: float = 1.0) -> FrameLayout:
    """Embedded point-pilot layout for an ``M x N`` frame.

    ``pilot_energy_policy`` is ``"equal"`` (pilot energy equals the total data
    energy) or a number giving the pilot-to-total-data energy ratio.
    """
    b = math.ceil(b_hz * tau_max_s - 1e-9)
    need = 2 * b + 3
    if not m > need:
        raise LayoutError(
            f"delay period too short: need M > 2*ceil(B*tau_max)+3 = {need}, got M = {m}"
        )
    kp, lp = math.ceil(m / 2) % m, math.ceil(n / 2) % n
    k = np.arange(m)[:, None] * np.ones((1, n), dtype=int)

    def rows(lo: int, hi: int) -> np.ndarray:
        sel = np.zeros(m, dtype=bool)
        sel[np.mod(np.arange(lo, hi + 1), m)] = True
        return sel[k]

    pilot = rows(kp - 1, kp + b)
    guard1 = rows(kp - 1 - b, kp - 2) if b > 0 else np.zeros((m, n), dtype=bool)
    guard2 = rows(kp + 1 + b, kp + 1 + b)
    data = ~(pilot | guard1 | guard2)
    ratio = 1.0 if pilot_energy_policy == "equal" else float(pilot_energy_policy)
    amp = math.sqrt(ratio * np.count_nonzero(data) * symbol_energy)
    return FrameLayout(m, n, (kp, lp), b, pilot, guard1, guard2, data, amp, symbol_energy)


def compose_frame(layout: FrameLayout, data_symbols: np.ndarray) -> DDFrame:
    """Place data symbols (row-major over the data mask) and the pilot into one frame."""
    grid = np.zeros((layout.m, layout.n), dtype=complex)
    grid[layout.data] = data_symbols
    grid[layout.pilot_pos] = layout.pilot_amplitude
    return DDFrame(grid)


def crystallization_margin(n: int, period_s: float, nu_max_hz: float) -> float:
    """``N - 2 T nu_max``; positive when the Doppler-period condition holds."""
    return n - 2 * period_s * nu_max_hz


def estimate_channel(y: DDFrame, layout: FrameLayout, prune_db: float | None = None) -> list[DDTap]:
    """Cross-ambiguity between the received frame and the transmitted point pilot.

    ``h[k, l] = sum_S y_dd[k', l'] x_p*[k'-k, l'-l] exp(-j2pi l(k'-k)/MN) / |A|^2``
    over the hypothesis window, with ``S`` the pilot shifted by that window.
    """
    m, n = y.m, y.n
    mn = m * n
    kp, lp = layout.pilot_pos
    amp = layout.pilot_amplitude
    hk, hl = layout.hypothesis_window()
    hk_g, hl_g = np.meshgrid(hk, hl, indexing="ij")
    hk_f, hl_f = hk_g.ravel(), hl_g.ravel()
    sk, sl = kp + hk_f, lp + hl_f
    ys = qp_values(y.data, sk, sl)
    pilot = np.zeros((m, n), dtype=complex)
    pilot[kp, lp] = amp
    # rows: hypotheses (k, l); columns: received samples (k', l') in S
    dk = sk[None, :] - hk_f[:, None]
    dl = sl[None, :] - hl_f[:, None]
    xp = qp_values(pilot, dk, dl)
    phase = np.exp(-2j * np.pi * np.mod(hl_f[:, None] * dk, mn) / mn)
    est = (np.conj(xp) * phase) @ ys / amp ** 2
    mag = np.abs(est)
    keep = np.ones(est.size, dtype=bool)
    if prune_db is not None and mag.max() > 0:
        keep = mag >= mag.max() * 10 ** (prune_db / 20)
    return [DDTap(int(k), int(l), complex(v)) for k, l, v in zip(hk_f[keep], hl_f[keep], est[keep])]


def taps_nmse_db(estimate: Sequence[DDTap], reference: Sequence[DDTap]) -> float:
    """NMSE of two tap lists over the union of their supports, relative to the reference."""
    ref = {(t.k, t.l): t.value for t in reference}
    est = {(t.k, t.l): t.value for t in estimate}
    keys = ref.keys() | est.keys()
    err = sum(abs(est.get(key, 0) - ref.get(key, 0)) ** 2 for key in keys)
    power = sum(abs(v) ** 2 for v in ref.values())
    return 10 * math.log10(max(err, 1e-300) / power)


def restrict_taps(taps: Sequence[DDTap], ks: np.ndarray, ls: np.ndarray) -> list[DDTap]:
    ks_set, ls_set = set(int(k) for k in ks), set(int(l) for l in ls)
    return [t for t in taps if t.k in ks_set and t.l in ls_set]


@dataclass(frozen=True)
class IoMatrix:
    """``H`` with ``vec(twisted_convolve(h, F)) = H @ vec(F)`` (row-major vec)."""

    matrix: np.ndarray
    m: int
    n: int

    def apply(self, frame: DDFrame) -> DDFrame:
        return DDFrame((self.matrix @ frame.data.reshape(-1)).reshape(self.m, self.n))


def build_io_matrix(h: Sequence[DDTap], m: int, n: int) -> IoMatrix:
    mn = m * n
    kk, ll = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    out_idx = (kk * n + ll).ravel()
    mat = np.zeros((mn, mn), dtype=complex)
    ks, ls, vs = taps_to_arrays(h)
    for tk, tl, v in zip(ks, ls, vs):
        sk, sl = kk - tk, ll - tl
        wraps = np.floor_divide(sk, m)
        coeff = v * np.exp(2j * np.pi * (np.mod(wraps * sl, n) / n + np.mod(tl * sk, mn) / mn))
        src_idx = (np.mod(sk, m) * n + np.mod(sl, n)).ravel()
        mat[out_idx, src_idx] += coeff.ravel()
    return IoMatrix(mat, m, n)


@dataclass(frozen=True)
class Equalized:
    """Soft MMSE estimates on the data region plus predicted per-symbol SINR."""

    frame: DDFrame
    soft: np.ndarray
    sinr: np.ndarray
    regularized: bool


def mmse_equalize(y: DDFrame, h_matrix: IoMatrix, noise_var: float, symbol_energy: float,
                  layout: FrameLayout) -> Equalized:
    """Cancel the known pilot through ``H`` and solve the LMMSE problem on the data carriers."""
    if noise_var < 0:
        raise ValueError(f"noise_var must be >= 0, got {noise_var}")
    H = h_matrix.matrix
    r = y.data.reshape(-1) - H @ layout.pilot_frame().data.reshape(-1)
    d_idx = np.flatnonzero(layout.data.reshape(-1))
    Hd = H[:, d_idx]
    gram = Hd.conj().T @ Hd
    ratio = noise_var / symbol_energy
    regularized = False
    if ratio == 0:
        ridge = 1e-12 * max(np.trace(gram).real / gram.shape[0], 1e-300)
        if np.linalg.cond(gram) > 1e12:
            ratio, regularized = ridge, True
    a = gram + ratio * np.eye(gram.shape[0])
    try:
        cho = scipy.linalg.cho_factor(a, check_finite=False)
        soft = scipy.linalg.cho_solve(cho, Hd.conj().T @ r, check_finite=False)
        inv_diag = np.real(np.diag(scipy.linalg.cho_solve(cho, np.eye(a.shape[0]), check_finite=False)))
    except np.linalg.LinAlgError:
        soft = np.linalg.solve(a, Hd.conj().T @ r)
        inv_diag = np.real(np.diag(np.linalg.inv(a)))
    # error covariance of the LMMSE estimate is noise_var * inv(a)
    if noise_var == 0:
        sinr = np.full(d_idx.size, np.inf)
    else:
        mse = np.clip(noise_var * inv_diag, 1e-300, symbol_energy)
        sinr = symbol_energy / mse - 1.0
    grid = np.zeros(layout.m * layout.n, dtype=complex)
    grid[d_idx] = soft
    return Equalized(DDFrame(grid.reshape(layout.m, layout.n)), soft, sinr, regularized)


def demap_and_score(soft: np.ndarray, truth_indices: np.ndarray, constellation: str = "QPSK",
                    sinr: np.ndarray | None = None) -> dict[str, float]:
    """Hard-decision SER/BER, EVM and the mean of the supplied SINRs (linear)."""
    const = get_constellation(constellation)
    soft = np.asarray(soft).ravel()
    truth_indices = np.asarray(truth_indices).ravel()
    decided = const.hard_decision(soft)
    ref = const.points[truth_indices]
    ser = float(np.mean(decided != truth_indices))
    ber = float(np.mean(const.bits(decided) != const.bits(truth_indices)))
    evm = float(np.sqrt(np.sum(np.abs(soft - ref) ** 2) / np.sum(np.abs(ref) ** 2)))
    out = {"ser": ser, "ber": ber, "evm": evm}
    if sinr is not None:
        out["mean_sinr"] = float(np.mean(sinr))
    return out
