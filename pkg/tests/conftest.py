from __future__ import annotations

import numpy as np

from zakofdm.zak import FilterSpec, delay_kernel


def cascade_isi(spec: FilterSpec, oversample: int = 2, half_width: int = 64) -> float:
    """Relative energy off the zero lag of the sampled matched-filter cascade."""
    g = delay_kernel(spec, oversample, half_width)
    c = np.convolve(g, np.conj(g[::-1])) / oversample
    mid = (c.size - 1) // 2
    s = c[mid % oversample::oversample]
    z = mid // oversample
    return float(np.linalg.norm(np.delete(s, z)) / abs(s[z]))


def pytest_report_header(config):
    parts = [f"{name} {cascade_isi(spec):.2e}" for name, spec in
             [("sinc", FilterSpec()), ("rrc(0.2)", FilterSpec("rrc", 0.2)),
              ("gaussian_sinc(0.1)", FilterSpec("gaussian_sinc", 0.1))]]
    return "delay-kernel cascade ISI at half-width 64, oversample 2: " + ", ".join(parts)
