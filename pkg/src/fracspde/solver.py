"""Lattice scheme for the mild solution and the Picard iteration.

On the grid the mild equation reads

    u_k = P_k u0 + sum_{l<k} G_{k-l} * F_l,

where ``*`` is the periodic lattice convolution (with cell volume) and the
forcing ``F_l`` collects the atoms with times in ``(t_l, t_{l+1}]``,
each weighted by ``sigma(u_l(y), h)`` and deposited by cloud-in-cell,
minus ``dt * int sigma(u_l, h) mu(dh)`` in the compensated case.
Cloud-in-cell deposition is the transpose of the multilinear kernel
interpolation used by :func:`fracspde.noise.stochastic_convolution`, so the
two agree to rounding.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BindingError, ConditionViolation, ConvergenceError, DomainError
from .grid import GridSpec
from .kernels import GreenTable, ModelParams, build_green_table
from .noise import (LevyMeasureSpec, NoiseRealization, SigmaSpec, left_step, replica_generator,
                    _draw_atoms, sample_noise, validate_conditions)

__all__ = [
    "GridSpec",
    "SolutionPath",
    "Ensemble",
    "EXPLOSION_GUARD",
    "deterministic_part",
    "simulate_path",
    "simulate_ensemble",
    "picard_solve",
    "PicardDiagnostics",
    "mild_residual",
    "weighted_norm",
    "worker_count",
]

#: |u| above this (or any non-finite value) marks a path as exploded.
EXPLOSION_GUARD = 1e12

_NOISE_KINDS = ("compensated", "noncompensated")


def worker_count() -> int:
    """Worker threads for ensembles, capped by ``FRACSPDE_THREADS`` when set."""
    cap = os.environ.get("FRACSPDE_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise DomainError(f"FRACSPDE_THREADS={cap!r} is not an integer") from None
    return n


@dataclass(frozen=True, eq=False)
class SolutionPath:
    """One trajectory ``u(t_k, x)``; ``values`` has shape ``(nt + 1,) + grid.shape``."""

    values: np.ndarray
    params: ModelParams
    grid: GridSpec
    sigma_name: str
    noise_kind: str
    seed: Optional[int]
    replica: Optional[int]
    exploded: bool = False
    explosion_time: Optional[float] = None

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Replicas stored as one array of shape ``(R, nt + 1) + grid.shape``."""

    values: np.ndarray
    params: ModelParams
    grid: GridSpec
    sigma_name: str
    noise_kind: str
    seed: int
    exploded: np.ndarray
    explosion_times: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def path(self, r: int) -> SolutionPath:
        t = self.explosion_times[r]
        return SolutionPath(self.values[r], self.params, self.grid, self.sigma_name, self.noise_kind,
                            self.seed, r, bool(self.exploded[r]), None if np.isnan(t) else float(t))

    def __iter__(self):
        return (self.path(r) for r in range(len(self)))


def _spatial_axes(grid: GridSpec, lead: int) -> tuple:
    return tuple(range(lead, lead + grid.d))


def _check_table(table: GreenTable, grid: GridSpec):
    if table.grid.identity() != grid.identity():
        raise BindingError("Green table was built on a different grid")


def _as_field(grid: GridSpec, u0) -> np.ndarray:
    if callable(u0):
        coords = grid.coordinates()
        u0 = u0(coords[..., 0]) if grid.d == 1 else u0(coords)
    u0 = np.asarray(u0, dtype=float)
    if u0.ndim == 0:
        u0 = np.full(grid.shape, float(u0))
    if u0.shape != grid.shape:
        raise DomainError(f"initial data has shape {u0.shape}, grid expects {grid.shape}")
    if not np.all(np.isfinite(u0)):
        raise DomainError("initial data must be finite")
    return u0


def deterministic_part(u0, table: GreenTable, k: int) -> np.ndarray:
    """``P_{t_k} u0``: lattice convolution of the ``k``-th Green slice with ``u0``."""
    grid = table.grid
    u0 = _as_field(grid, u0)
    if not 0 <= k <= grid.nt:
        raise DomainError(f"time index k={k} outside 0..{grid.nt}")
    if k == 0:
        return u0.copy()
    axes = _spatial_axes(grid, 0)
    return np.fft.irfftn(table.symbols[k] * np.fft.rfftn(u0, axes=axes), s=grid.shape, axes=axes)


def _deterministic_all(u0: np.ndarray, table: GreenTable) -> np.ndarray:
    grid = table.grid
    axes = _spatial_axes(grid, 1)
    out = np.fft.irfftn(table.symbols * np.fft.rfftn(u0)[None], s=grid.shape, axes=axes)
    out[0] = u0
    return out


class _Forcing:
    """Atoms of a batch of replicas binned by the grid step that precedes them."""

    def __init__(self, grid: GridSpec, realizations: list):
        self.grid = grid
        self.batch = len(realizations)
        rep, times, locs, marks = [], [], [], []
        for b, noise in enumerate(realizations):
            rep.append(np.full(len(noise), b, dtype=np.int64))
            times.append(noise.times)
            locs.append(noise.locations)
            marks.append(noise.marks)
        rep = np.concatenate(rep) if rep else np.empty(0, dtype=np.int64)
        times = np.concatenate(times) if times else np.empty(0)
        locs = np.concatenate(locs).reshape(-1, grid.d) if locs else np.empty((0, grid.d))
        marks = np.concatenate(marks).reshape(-1, grid.d) if marks else np.empty((0, grid.d))
        step = left_step(grid, times) if times.size else np.empty(0, dtype=np.int64)
        order = np.argsort(step, kind="stable")
        self.step_bounds = np.searchsorted(step[order], np.arange(grid.nt + 1))
        rep, locs, marks = rep[order], locs[order], marks[order]
        # cloud-in-cell corners and weights, flattened over (replica, lattice)
        pos = (locs + grid.half_width) / grid.h
        base = np.floor(pos).astype(np.int64)
        frac = pos - base
        size = grid.n ** grid.d
        self.corner_index = []
        self.corner_weight = []
        for corner in range(2 ** grid.d):
            w = np.ones(rep.size)
            flat = rep * size
            stride = size
            for axis in range(grid.d):
                bit = (corner >> axis) & 1
                w = w * (frac[:, axis] if bit else 1.0 - frac[:, axis])
                stride //= grid.n
                flat = flat + ((base[:, axis] + bit) % grid.n) * stride
            self.corner_index.append(flat)
            self.corner_weight.append(w)
        self.marks = marks

    def deposit(self, l: int, u_l: np.ndarray, sigma: SigmaSpec) -> np.ndarray:
        """Atom contributions of step ``l`` as a lattice density, shape ``(batch,) + grid.shape``."""
        grid = self.grid
        out = np.zeros(self.batch * grid.n ** grid.d)
        lo, hi = self.step_bounds[l], self.step_bounds[l + 1]
        if hi > lo:
            flat_u = u_l.reshape(-1)
            u_at = np.zeros(hi - lo)
            for idx, w in zip(self.corner_index, self.corner_weight):
                u_at += w[lo:hi] * flat_u[idx[lo:hi]]
            amp = sigma(u_at, self.marks[lo:hi])
            for idx, w in zip(self.corner_index, self.corner_weight):
                np.add.at(out, idx[lo:hi], w[lo:hi] * amp)
        return out.reshape((self.batch,) + grid.shape) / grid.cell_volume


def _march(u0: np.ndarray, table: GreenTable, sigma: SigmaSpec, mu: LevyMeasureSpec, compensated: bool,
           forcing: _Forcing) -> tuple:
    grid = table.grid
    batch = forcing.batch
    axes = _spatial_axes(grid, 1)
    det = _deterministic_all(u0, table)
    values = np.empty((batch, grid.nt + 1) + grid.shape)
    values[:, 0] = u0
    spec_shape = table.symbols.shape[1:]
    history = np.zeros((grid.nt, batch) + spec_shape, dtype=complex)
    alive = np.ones(batch, dtype=bool)
    explosion = np.full(batch, np.nan)
    mean_mass = sigma.scale * mu.integrate(sigma.weight) if compensated else 0.0
    for k in range(1, grid.nt + 1):
        l = k - 1
        u_l = values[:, l]
        force = forcing.deposit(l, u_l, sigma)
        if compensated and mean_mass != 0.0:
            force -= grid.dt * mean_mass * sigma.profile(u_l)
        force[~alive] = 0.0
        history[l] = np.fft.rfftn(force, axes=axes)
        lagged = table.symbols[k:0:-1]
        acc = np.einsum("l...,lb...->b...", lagged, history[:k])
        u_k = det[k][None] + np.fft.irfftn(acc, s=grid.shape, axes=axes)
        bad = ~np.all(np.isfinite(u_k) & (np.abs(u_k) <= EXPLOSION_GUARD),
                      axis=tuple(range(1, grid.d + 1)))
        newly = bad & alive
        explosion[newly] = grid.times[k]
        alive &= ~bad
        u_k[~alive] = np.nan
        values[:, k] = u_k
    return values, ~alive, explosion


def _require_conditions(sigma: SigmaSpec, mu: LevyMeasureSpec, noise_kind: str, override: bool):
    if override:
        return
    report = validate_conditions(sigma, mu)
    flag = "lipschitz_l2" if noise_kind == "compensated" else "lipschitz_l1"
    if not report.passes(flag):
        raise ConditionViolation(
            f"sigma '{sigma.name}' fails the {flag} existence condition for {noise_kind} noise; "
            "pass override=True to simulate anyway")


def _check_kind(noise_kind: str) -> bool:
    if noise_kind not in _NOISE_KINDS:
        raise DomainError(f"noise_kind={noise_kind!r} must be one of {_NOISE_KINDS}")
    return noise_kind == "compensated"


def simulate_path(params: ModelParams, grid: GridSpec, u0, sigma: SigmaSpec, mu: LevyMeasureSpec,
                  noise_kind: str = "compensated", seed: int = 0, *, noise: Optional[NoiseRealization] = None,
                  table: Optional[GreenTable] = None, override: bool = False) -> SolutionPath:
    """March one mild-solution path on the grid.

    The noise is ``sample_noise(grid, mu, seed)`` unless a realization is
    supplied. Marching stops contributing once a value is non-finite or
    exceeds :data:`EXPLOSION_GUARD`; later slices are NaN and the path is
    flagged with the first explosion time.
    """
    compensated = _check_kind(noise_kind)
    _require_conditions(sigma, mu, noise_kind, override)
    table = build_green_table(params, grid) if table is None else table
    _check_table(table, grid)
    if noise is None:
        noise = sample_noise(grid, mu, seed)
    elif noise.grid_id != grid.identity():
        raise BindingError("noise realization was sampled on a different grid")
    u0 = _as_field(grid, u0)
    values, exploded, when = _march(u0, table, sigma, mu, compensated, _Forcing(grid, [noise]))
    return SolutionPath(values[0], params, grid, sigma.name, noise_kind, noise.seed, noise.replica,
                        bool(exploded[0]), None if np.isnan(when[0]) else float(when[0]))


def simulate_ensemble(params: ModelParams, grid: GridSpec, u0, sigma: SigmaSpec, mu: LevyMeasureSpec,
                      noise_kind: str = "compensated", seed: int = 0, replicas: int = 100, *,
                      table: Optional[GreenTable] = None, override: bool = False,
                      batch_size: int = 128, workers: Optional[int] = None) -> Ensemble:
    """Simulate replicas ``0..replicas-1`` with noise streams keyed by ``(seed, r)``.

    Replica ``r`` equals ``simulate_path`` driven by ``sample_noise(grid, mu, seed, r)``.
    Batches are fixed-size and written to fixed slots, so the result does
    not depend on the number of worker threads.
    """
    compensated = _check_kind(noise_kind)
    if replicas < 1:
        raise DomainError("replicas must be >= 1")
    _require_conditions(sigma, mu, noise_kind, override)
    table = build_green_table(params, grid) if table is None else table
    _check_table(table, grid)
    u0 = _as_field(grid, u0)
    values = np.empty((replicas, grid.nt + 1) + grid.shape)
    exploded = np.zeros(replicas, dtype=bool)
    when = np.full(replicas, np.nan)
    starts = list(range(0, replicas, batch_size))

    def run(start):
        stop = min(start + batch_size, replicas)
        noises = [sample_noise(grid, mu, seed, r) for r in range(start, stop)]
        vals, exp_, t_ = _march(u0, table, sigma, mu, compensated, _Forcing(grid, noises))
        values[start:stop] = vals
        exploded[start:stop] = exp_
        when[start:stop] = t_

    n_workers = min(worker_count() if workers is None else workers, len(starts))
    if n_workers <= 1:
        for s in starts:
            run(s)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run, starts))
    return Ensemble(values, params, grid, sigma.name, noise_kind, int(seed), exploded, when)


# --------------------------------------------------------------------------
# Picard iteration
# --------------------------------------------------------------------------

def weighted_norm(path, gamma: float, p: int = 2) -> float:
    """``(max_{k,x} e^{-gamma t_k} |u(t_k, x)|^p)^(1/p)`` over the grid.

    ``path`` is a :class:`SolutionPath` or a tuple ``(values, times)``.
    """
    if p not in (1, 2):
        raise DomainError(f"p={p!r} must be 1 or 2")
    values, times = (path.values, path.times) if isinstance(path, SolutionPath) else path
    values = np.asarray(values, dtype=float)
    axes = tuple(range(1, values.ndim))
    peak = np.max(np.abs(values) ** p, axis=axes) if values.ndim > 1 else np.abs(values) ** p
    return float(np.max(np.exp(-gamma * np.asarray(times)) * peak) ** (1.0 / p))


def _ensemble_norm(values: np.ndarray, times: np.ndarray, gamma: float, p: int) -> float:
    """Weighted norm with the expectation replaced by the mean over the leading replica axis."""
    moment = np.mean(np.abs(values) ** p, axis=0)
    peak = np.max(moment.reshape(moment.shape[0], -1), axis=1)
    return float(np.max(np.exp(-gamma * np.asarray(times)) * peak) ** (1.0 / p))


def _operator(u: np.ndarray, table: GreenTable, sigma: SigmaSpec, mu: LevyMeasureSpec, compensated: bool,
              forcing: _Forcing) -> np.ndarray:
    """Stochastic convolution ``A u`` of a batch of paths, shape ``(B, nt+1) + grid.shape``."""
    grid = table.grid
    axes = _spatial_axes(grid, 2)
    mean_mass = sigma.scale * mu.integrate(sigma.weight) if compensated else 0.0
    force = np.empty((grid.nt, u.shape[0]) + grid.shape)
    for l in range(grid.nt):
        force[l] = forcing.deposit(l, u[:, l], sigma)
        if compensated and mean_mass != 0.0:
            force[l] -= grid.dt * mean_mass * sigma.profile(u[:, l])
    spectra = np.fft.rfftn(force, axes=axes)
    out = np.zeros_like(u)
    for k in range(1, grid.nt + 1):
        acc = np.einsum("l...,lb...->b...", table.symbols[k:0:-1], spectra[:k])
        out[:, k] = np.fft.irfftn(acc, s=grid.shape, axes=_spatial_axes(grid, 1))
    return out


@dataclass
class PicardDiagnostics:
    differences: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    residual: float = float("nan")


def mild_residual(path: SolutionPath, u0, table: GreenTable, sigma: SigmaSpec, mu: LevyMeasureSpec,
                  noise: NoiseRealization, gamma: float, p: int = 2) -> float:
    """Weighted norm of ``u - P u0 - A u`` for a path on a fixed noise realization."""
    grid = table.grid
    compensated = path.noise_kind == "compensated"
    u0 = _as_field(grid, u0)
    u = np.asarray(path.values)[None]
    rhs = _deterministic_all(u0, table)[None] + _operator(u, table, sigma, mu, compensated,
                                                         _Forcing(grid, [noise]))
    return _ensemble_norm(u - rhs, grid.times, gamma, p)


def picard_solve(params: ModelParams, grid: GridSpec, u0, sigma: SigmaSpec, mu: LevyMeasureSpec,
                 noise, gamma: float, max_iter: int = 50, tol: float = 1e-10,
                 noise_kind: str = "compensated", p: int = 2, table: Optional[GreenTable] = None) -> tuple:
    """Picard iteration ``u^(n+1) = P u0 + A u^(n)`` on fixed noise.

    Starts from ``u^(0) = P u0`` and stops when the weighted norm of the
    successive difference drops below ``tol``. With a single
    :class:`NoiseRealization` the norm uses realized values; with a sequence
    of realizations the iteration runs on all of them at once and the
    expectation in the norm is replaced by the mean over realizations.

    Returns
    -------
    (SolutionPath or Ensemble, PicardDiagnostics)

    Raises
    ------
    ConvergenceError
        After ``max_iter`` iterations; ``history`` carries the diagnostics.
    """
    compensated = _check_kind(noise_kind)
    if not gamma > 0:
        raise DomainError(f"gamma={gamma!r} must be positive")
    if p not in (1, 2):
        raise DomainError(f"p={p!r} must be 1 or 2")
    table = build_green_table(params, grid) if table is None else table
    _check_table(table, grid)
    single = isinstance(noise, NoiseRealization)
    noises = [noise] if single else list(noise)
    if not noises:
        raise DomainError("no noise realizations given")
    for nz in noises:
        if nz.grid_id != grid.identity():
            raise BindingError("noise realization was sampled on a different grid")
    u0 = _as_field(grid, u0)
    forcing = _Forcing(grid, noises)
    det = np.broadcast_to(_deterministic_all(u0, table), (len(noises), grid.nt + 1) + grid.shape)
    diag = PicardDiagnostics()
    current = np.array(det)
    for it in range(1, max_iter + 1):
        nxt = det + _operator(current, table, sigma, mu, compensated, forcing)
        diff = _ensemble_norm(nxt - current, grid.times, gamma, p)
        if diag.differences and diag.differences[-1] > 0:
            diag.ratios.append(diff / diag.differences[-1])
        diag.differences.append(diff)
        diag.iterations = it
        current = nxt
        if not math.isfinite(diff):
            raise ConvergenceError("Picard iterate is not finite", diag)
        if diff < tol:
            diag.converged = True
            break
    residual = current - det - _operator(current, table, sigma, mu, compensated, forcing)
    diag.residual = _ensemble_norm(residual, grid.times, gamma, p)
    if not diag.converged:
        raise ConvergenceError(f"Picard iteration did not converge in {max_iter} iterations", diag)
    if single:
        result = SolutionPath(current[0], params, grid, sigma.name, noise_kind, noise.seed, noise.replica)
    else:
        result = Ensemble(current, params, grid, sigma.name, noise_kind, noises[0].seed,
                          np.zeros(len(noises), dtype=bool), np.full(len(noises), np.nan))
    return result, diag
