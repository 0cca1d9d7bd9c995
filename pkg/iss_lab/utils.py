import hashlib
from pathlib import Path

import numpy as np
import pandas as pd

_MASK64 = (1 << 64) - 1
_TAYLOR_THRESHOLD = 1e-4


class SplitMix64:
    """
    SplitMix64 generator (Steele, Lea, Flood). Pure integer arithmetic, so the
    stream is bit-exact on every platform and numpy version.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_uint64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        # 53 random mantissa bits -> [0, 1)
        return (self.next_uint64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float, size: int) -> np.ndarray:
        return np.array([low + (high - low) * self.random() for _ in range(size)])

    def standard_normal(self, size: int) -> np.ndarray:
        out = np.empty(size)
        for i in range(size):
            u1 = 1.0 - self.random()
            u2 = self.random()
            out[i] = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return out


def phi1(z):
    """phi_1(z) = (e^z - 1)/z with phi_1(0) = 1, Taylor expansion near the origin."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _TAYLOR_THRESHOLD
    safe = np.where(small, 1.0, z)
    direct = np.expm1(safe) / safe
    taylor = 1.0 + z / 2.0 + z ** 2 / 6.0 + z ** 3 / 24.0
    return np.where(small, taylor, direct)


def phi2(z):
    """phi_2(z) = (e^z - 1 - z)/z^2 with phi_2(0) = 1/2."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-2
    safe = np.where(small, 1.0, z)
    direct = (np.expm1(safe) - safe) / safe ** 2
    taylor = 0.5 + z / 6.0 + z ** 2 / 24.0 + z ** 3 / 120.0 + z ** 4 / 720.0
    return np.where(small, taylor, direct)


def write_csv(frame: pd.DataFrame, path: str | Path) -> Path:
    """Write a table with 17 significant digits so that floats round-trip exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
