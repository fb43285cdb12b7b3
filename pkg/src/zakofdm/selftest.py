"""Quick numerical self-checks of the transform and modem identities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ofdm import OfdmConfig, ofdm_demodulate, ofdm_modulate
from .transforms import DDFrame, FreqSymbols, TimeSamples, dft, dfzt, dzt, idft, idfzt, idzt
from .zak import ZakConfig, zak_ofdm_rx, zak_ofdm_tx


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    worst: float
    tol: float


def divisor_pairs(k: int) -> list[tuple[int, int]]:
    return [(m, k // m) for m in range(1, k + 1) if k % m == 0]


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def _random_frame(rng: np.random.Generator, m: int, n: int) -> DDFrame:
    return DDFrame(rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))


def composition_checks(sizes=(48, 720), frames: int = 100, seed: int = 0, tol: float = 1e-12) -> list[Check]:
    """``idft(idfzt(F)) = idzt(F)`` and ``dfzt(dft(y)) = dzt(y)`` over all divisor pairs."""
    rng = np.random.default_rng(seed)
    worst_tx = worst_rx = 0.0
    for k in sizes:
        for m, n in divisor_pairs(k):
            for _ in range(frames):
                f = _random_frame(rng, m, n)
                worst_tx = max(worst_tx, _rel(idft(idfzt(f)).data, idzt(f).data))
                y = TimeSamples(rng.standard_normal(k) + 1j * rng.standard_normal(k))
                worst_rx = max(worst_rx, _rel(dfzt(dft(y), m, n).data, dzt(y, m, n).data))
    return [Check("idft o idfzt == idzt", worst_tx < tol, worst_tx, tol),
            Check("dfzt o dft == dzt", worst_rx < tol, worst_rx, tol)]


def modem_checks(k: int = 48, cp: int = 3, frames: int = 20, seed: int = 1, tol: float = 1e-13) -> list[Check]:
    """Precoded CP-OFDM against the direct IDZT/DZT chain, and ``M = 1`` against plain CP-OFDM."""
    rng = np.random.default_rng(seed)
    ofdm = OfdmConfig(k, 15e3, cp)
    worst_tx = worst_rx = worst_m1 = 0.0
    for m, n in divisor_pairs(k):
        cfg = ZakConfig(m, n, ofdm)
        for _ in range(frames):
            f = _random_frame(rng, m, n)
            x = zak_ofdm_tx(f, cfg)
            body = idzt(f).data
            direct = np.concatenate([body[k - cp:], body])
            worst_tx = max(worst_tx, _rel(x.data, direct), _rel(x.data, ofdm_modulate(idfzt(f), ofdm).data))
            r = TimeSamples(rng.standard_normal(k + cp) + 1j * rng.standard_normal(k + cp), -cp, ofdm.rate_hz)
            got = zak_ofdm_rx(r, cfg).data
            worst_rx = max(worst_rx, _rel(got, dzt(r.data[cp:], m, n).data),
                           _rel(got, dfzt(ofdm_demodulate(r, ofdm), m, n).data))
    cfg1 = ZakConfig(1, k, ofdm)
    for _ in range(frames):
        s = rng.standard_normal(k) + 1j * rng.standard_normal(k)
        f = DDFrame(s.reshape(1, k))
        plain = ofdm_modulate(FreqSymbols(s), ofdm)
        worst_m1 = max(worst_m1, _rel(zak_ofdm_tx(f, cfg1).data, plain.data),
                       _rel(idfzt(f).data, s))
    return [Check("zak_ofdm_tx == ofdm_modulate o idfzt == cp + idzt", worst_tx < tol, worst_tx, tol),
            Check("zak_ofdm_rx == dfzt o ofdm_demodulate == dzt", worst_rx < tol, worst_rx, tol),
            Check("M = 1 is plain CP-OFDM", worst_m1 < tol, worst_m1, tol)]


def run_all() -> list[Check]:
    return composition_checks() + modem_checks()
