"""Periodic space-time grid shared by the kernel tables, noise and solver."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError

__all__ = ["GridSpec"]


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on the box ``[-half_width, half_width)**d`` times ``[0, T]``.

    ``symbol_tol`` and ``tail_tol`` are the thresholds of the two truncation
    heuristics checked when a Green table is built on this grid: the Fourier
    symbol at the Nyquist frequency after one time step, and the kernel mass
    that leaks out of the box by the horizon.
    """

    d: int
    half_width: float
    n: int
    T: float
    nt: int
    symbol_tol: float = 1e-8
    tail_tol: float = 1e-6

    def __post_init__(self):
        if self.d not in (1, 2):
            raise DomainError(f"grid.d={self.d!r} must be 1 or 2")
        if not self.half_width > 0:
            raise DomainError(f"grid.half_width={self.half_width!r} must be positive")
        n = int(self.n)
        if n != self.n or n < 2 or n & (n - 1):
            raise DomainError(f"grid.n={self.n!r} must be a power of two >= 2")
        if not self.T > 0:
            raise DomainError(f"grid.T={self.T!r} must be positive")
        if int(self.nt) != self.nt or self.nt < 1:
            raise DomainError(f"grid.nt={self.nt!r} must be an integer >= 1")
        if not (self.symbol_tol > 0 and self.tail_tol > 0):
            raise DomainError("grid tolerances must be positive")

    @property
    def length(self) -> float:
        return 2.0 * self.half_width

    @property
    def h(self) -> float:
        """Lattice spacing."""
        return self.length / self.n

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    @property
    def box_volume(self) -> float:
        return self.length ** self.d

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @cached_property
    def axis(self) -> np.ndarray:
        """Node coordinates along one axis, ``-half_width + j*h``."""
        return -self.half_width + self.h * np.arange(self.n)

    @cached_property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt + 1)

    def coordinates(self) -> np.ndarray:
        """Node coordinates with shape ``shape + (d,)``."""
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1)

    def lags(self) -> np.ndarray:
        """Signed lattice lags in FFT order along one axis."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n) * self.h

    def frequencies(self, real: bool = False) -> list:
        """Angular lattice frequencies per axis (last axis halved if ``real``)."""
        full = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)
        half = 2.0 * np.pi * np.fft.rfftfreq(self.n, d=self.h)
        axes = [full] * self.d
        if real:
            axes[-1] = half
        return axes

    def identity(self) -> str:
        """Stable hash used to bind noise realizations and tables to this grid."""
        fields = asdict(self)
        canon = {k: (int(v) if k in ("d", "n", "nt") else float(v)) for k, v in fields.items()}
        blob = json.dumps(canon, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
