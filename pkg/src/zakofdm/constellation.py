"""Gray-labelled square QAM constellations with unit average energy."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class Constellation:
    name: str
    points: np.ndarray  # index -> complex point
    labels: np.ndarray  # index -> Gray bit label (integer)
    bits_per_symbol: int

    def random_indices(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.integers(0, self.points.size, size=size)

    def hard_decision(self, x: np.ndarray) -> np.ndarray:
        """Nearest-point indices for an array of soft symbols."""
        x = np.asarray(x)
        d = np.abs(x.reshape(-1, 1) - self.points.reshape(1, -1))
        return np.argmin(d, axis=1).reshape(x.shape)

    def bits(self, indices: np.ndarray) -> np.ndarray:
        """Bit matrix (..., bits_per_symbol), MSB first."""
        lab = self.labels[np.asarray(indices)]
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return (lab[..., None] >> shifts) & 1


def _gray(i: np.ndarray) -> np.ndarray:
    return i ^ (i >> 1)


@lru_cache(maxsize=None)
def get_constellation(name: str) -> Constellation:
    order = {"qpsk": 4, "16qam": 16, "64qam": 64}.get(name.lower())
    if order is None:
        raise ValueError(f"unsupported constellation {name!r}; choose QPSK, 16QAM or 64QAM")
    side = int(round(np.sqrt(order)))
    half_bits = side.bit_length() - 1
    levels = 2 * np.arange(side) - (side - 1)
    idx_i, idx_q = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    idx_i, idx_q = idx_i.ravel(), idx_q.ravel()
    points = (levels[idx_i] + 1j * levels[idx_q]).astype(complex)
    points /= np.sqrt(np.mean(np.abs(points) ** 2))
    labels = (_gray(idx_i) << half_bits) | _gray(idx_q)
    points.setflags(write=False)
    labels.setflags(write=False)
    return Constellation(name.upper(), points, labels, 2 * half_bits)
