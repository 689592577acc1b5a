"""Poisson random measures with intensity ``dt dx mu(dh)`` and their stochastic convolutions.

Sampling uses counter-based Philox streams keyed by ``(seed, replica)``, so
any replica of an ensemble can be regenerated on its own, bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import BindingError, DomainError, EvaluationError
from .grid import GridSpec
from .kernels import GreenTable, sphere_area

__all__ = [
    "LevyMeasureSpec",
    "SigmaSpec",
    "sigma_linear",
    "sigma_bounded",
    "sigma_power",
    "sigma_zero",
    "ConditionReport",
    "validate_conditions",
    "NoiseRealization",
    "replica_generator",
    "sample_noise",
    "interpolate_field",
    "stochastic_convolution",
    "IsometryReport",
    "isometry_check",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_ANGLES_2D = 16


def _norm(h: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.asarray(h, dtype=float) ** 2, axis=-1))


# --------------------------------------------------------------------------
# Levy measure
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LevyMeasureSpec:
    """Jump-mark measure ``mu(dh)`` on R^d, truncated to finite total mass.

    Use :meth:`discrete` for a finite sum of weighted atoms and
    :meth:`radial_density` for ``mu(dh) = f(|h|) dh`` restricted to
    ``eps <= |h| <= R``. ``f`` must accept numpy arrays.
    """

    d: int
    atoms: Optional[np.ndarray] = None
    masses: Optional[np.ndarray] = None
    density: Optional[Callable] = None
    eps: float = 0.0
    R: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.d not in (1, 2):
            raise DomainError(f"mu.d={self.d!r} must be 1 or 2")
        if (self.atoms is None) == (self.density is None):
            raise DomainError("give either atoms or a density")
        if self.atoms is not None:
            if self.atoms.shape != (self.masses.size, self.d):
                raise DomainError("atoms must have shape (m, d) matching masses")
            if np.any(self.masses < 0) or not np.all(np.isfinite(self.masses)):
                raise DomainError("atom masses must be finite and nonnegative")
        elif not 0.0 < self.eps < self.R < np.inf:
            raise DomainError(f"need 0 < eps < R < inf, got eps={self.eps!r}, R={self.R!r}")

    @classmethod
    def discrete(cls, atoms, masses, d: int = 1, label: str = "") -> "LevyMeasureSpec":
        atoms = np.array(atoms, dtype=float).reshape(-1, d)
        masses = np.array(masses, dtype=float).reshape(-1)
        atoms.setflags(write=False)
        masses.setflags(write=False)
        return cls(d=d, atoms=atoms, masses=masses, label=label)

    @classmethod
    def radial_density(cls, f: Callable, eps: float, R: float, d: int = 1,
                       label: str = "") -> "LevyMeasureSpec":
        return cls(d=d, density=f, eps=float(eps), R=float(R), label=label)

    @property
    def is_discrete(self) -> bool:
        return self.atoms is not None

    @cached_property
    def _radial_rule(self) -> tuple:
        # composite Gauss-Legendre in log r; weights carry the shell factor
        panels = max(8, int(math.ceil(4 * math.log(self.R / self.eps))) + 8)
        edges = np.linspace(math.log(self.eps), math.log(self.R), panels + 1)
        mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
        half = 0.5 * np.diff(edges)[:, None]
        v = (mid + half * _GL_NODES).ravel()
        r = np.exp(v)
        w = (half * _GL_WEIGHTS).ravel() * r ** self.d * sphere_area(self.d)
        return r, w

    @cached_property
    def quadrature(self) -> tuple:
        """Nodes ``(m, d)`` and weights ``(m,)`` integrating against ``mu``."""
        if self.is_discrete:
            return self.atoms, self.masses
        r, w = self._radial_rule
        w = w * np.asarray(self.density(r), dtype=float)
        if self.d == 1:
            nodes = np.concatenate([r, -r])[:, None]
            weights = np.concatenate([w, w]) / 2.0
        else:
            phi = 2.0 * np.pi * np.arange(_ANGLES_2D) / _ANGLES_2D
            nodes = np.stack([np.outer(r, np.cos(phi)).ravel(),
                              np.outer(r, np.sin(phi)).ravel()], axis=-1)
            weights = np.repeat(w, _ANGLES_2D) / _ANGLES_2D
        nodes.setflags(write=False)
        weights.setflags(write=False)
        return nodes, weights

    def integrate(self, fn: Callable) -> float:
        """``int fn(h) mu(dh)`` for ``fn`` mapping marks ``(m, d)`` to ``(m,)``."""
        nodes, weights = self.quadrature
        vals = np.asarray(fn(nodes), dtype=float)
        if vals.shape != weights.shape:
            vals = np.broadcast_to(vals, weights.shape)
        if not np.all(np.isfinite(vals[weights > 0])):
            raise EvaluationError("integrand is not finite on the support of mu")
        return float(np.dot(vals, weights))

    @cached_property
    def total_mass(self) -> float:
        if self.is_discrete:
            return float(self.masses.sum())
        return float(self._quadrature_sum(lambda r: np.ones_like(r)))

    def _quadrature_sum(self, radial: Callable) -> float:
        r, w = self._radial_rule
        return float(np.dot(w * np.asarray(self.density(r), dtype=float), radial(r)))

    def levy_integral(self) -> float:
        """``int (1 ^ |h|^2) mu(dh)`` on the truncated support."""
        return self.integrate(lambda h: np.minimum(1.0, _norm(h) ** 2))

    def small_jump_second_moment(self) -> float:
        """``int_{|h| < eps} |h|^2 mu(dh)`` discarded by the truncation (0 for atoms)."""
        if self.is_discrete:
            return 0.0
        s = sphere_area(self.d)
        val, _ = integrate.quad(lambda r: s * r ** (self.d + 1) * float(self.density(np.array([r]))[0]),
                                0.0, self.eps, limit=200)
        return float(val)

    @cached_property
    def _inverse_cdf(self) -> tuple:
        r = np.exp(np.linspace(math.log(self.eps), math.log(self.R), 20001))
        mass = np.asarray(self.density(r), dtype=float) * r ** self.d
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (mass[1:] + mass[:-1]) * np.diff(np.log(r)))])
        return cdf / cdf[-1], r

    def sample_marks(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Draw ``count`` marks from ``mu / total_mass``."""
        if count == 0:
            return np.empty((0, self.d))
        if self.is_discrete:
            idx = rng.choice(self.masses.size, size=count, p=self.masses / self.masses.sum())
            return self.atoms[idx].copy()
        cdf, r = self._inverse_cdf
        radius = np.interp(rng.random(count), cdf, r)
        if self.d == 1:
            sign = np.where(rng.random(count) < 0.5, -1.0, 1.0)
            return (sign * radius)[:, None]
        phi = 2.0 * np.pi * rng.random(count)
        return np.stack([radius * np.cos(phi), radius * np.sin(phi)], axis=-1)

    def describe(self) -> dict:
        if self.is_discrete:
            return {"form": "discrete", "atoms": self.atoms.tolist(), "masses": self.masses.tolist(),
                    "label": self.label}
        return {"form": "density", "eps": self.eps, "R": self.R, "label": self.label,
                "total_mass": self.total_mass}


# --------------------------------------------------------------------------
# nonlinearity
# --------------------------------------------------------------------------

def _abs_mark(h: np.ndarray) -> np.ndarray:
    return _norm(h)


@dataclass(frozen=True, eq=False)
class SigmaSpec:
    """Multiplicative nonlinearity ``sigma(u, h) = scale * weight(h) * profile(u)``.

    ``J`` is the Lipschitz envelope and ``J_bar`` the lower envelope (``None``
    when no lower bound is declared). ``lip`` and ``L`` are the constants in
    ``|sigma(x,h) - sigma(y,h)| <= J(h) lip |x-y|`` and
    ``|sigma(x,h)| >= L J_bar(h) |x|^growth_exponent``. ``lip`` is ``inf``
    for non-Lipschitz kinds.
    """

    kind: str
    profile: Callable
    weight: Callable
    scale: float
    J: Callable
    J_bar: Optional[Callable]
    lip: float
    L: float
    growth_exponent: float = 1.0
    name: str = ""
    options: dict = field(default_factory=dict)

    def __call__(self, u, h) -> np.ndarray:
        """Evaluate ``sigma`` elementwise; ``h`` has a trailing mark axis of length d."""
        return self.scale * self.weight(np.asarray(h, dtype=float)) * self.profile(np.asarray(u, dtype=float))

    def mean_field(self, u: np.ndarray, mu: LevyMeasureSpec) -> np.ndarray:
        """``int sigma(u, h) mu(dh)`` evaluated pointwise on a field ``u``."""
        return self.scale * mu.integrate(self.weight) * self.profile(u)

    def describe(self) -> dict:
        return {"kind": self.kind, "name": self.name, "scale": self.scale, **self.options}


def _envelope(mark_power: float) -> Callable:
    if mark_power == 1.0:
        return _abs_mark
    if mark_power == 0.0:
        return lambda h: np.ones(np.shape(h)[:-1])
    return lambda h: _norm(h) ** mark_power


def sigma_linear(scale: float = 1.0, mark_power: float = 1.0) -> SigmaSpec:
    """``sigma(u, h) = scale |h|^mark_power u``: Lipschitz with equal upper and lower envelopes."""
    J = _envelope(mark_power)
    return SigmaSpec("linear_lipschitz", lambda u: u, J, float(scale), J, J, abs(scale), abs(scale),
                     1.0, "linear", {"mark_power": mark_power})


def sigma_bounded(scale: float = 1.0, mark_power: float = 1.0) -> SigmaSpec:
    """``sigma(u, h) = scale |h|^mark_power sin(u)``: Lipschitz and bounded, no lower envelope."""
    J = _envelope(mark_power)
    return SigmaSpec("linear_lipschitz", np.sin, J, float(scale), J, None, abs(scale), 0.0,
                     1.0, "bounded", {"mark_power": mark_power})


def sigma_power(scale: float = 1.0, rho: float = 2.0, mark_power: float = 1.0) -> SigmaSpec:
    """``sigma(u, h) = scale |h|^mark_power |u|^rho sign(u)`` with ``rho > 1``: superlinear growth."""
    if not rho > 1.0:
        raise DomainError(f"sigma.rho={rho!r} must exceed 1")
    J = _envelope(mark_power)
    return SigmaSpec("power_growth", lambda u: np.sign(u) * np.abs(u) ** rho, J, float(scale), J, J,
                     np.inf, abs(scale), float(rho), "power", {"rho": rho, "mark_power": mark_power})


def sigma_zero() -> SigmaSpec:
    J = _envelope(0.0)
    return SigmaSpec("linear_lipschitz", np.zeros_like, J, 0.0, J, None, 0.0, 0.0, 1.0, "zero", {})


# --------------------------------------------------------------------------
# conditions
# --------------------------------------------------------------------------

#: Flag names and the requirement each one encodes.
CONDITION_FLAGS = {
    "lipschitz_l2": "sigma(0,h)=0, Lipschitz with envelope J, int J^2 dmu <= K (compensated existence)",
    "lipschitz_l1": "sigma(0,h)=0, Lipschitz with envelope J, int J dmu <= K (non-compensated existence)",
    "lower_linear_l2": "|sigma(x,h)| >= L J_bar(h)|x|, int J_bar^2 dmu >= kappa",
    "lower_power_l2": "|sigma(x,h)| >= L J_bar(h)|x|^rho with rho > 1, int J_bar^2 dmu >= kappa",
    "lower_linear_l1": "|sigma(x,h)| >= L J_bar(h)|x|, int J_bar dmu >= kappa",
}


@dataclass(frozen=True)
class ConditionReport:
    K2: float
    K1: float
    kappa2: float
    kappa1: float
    kappa1_lebesgue: float
    levy_integral: float
    small_jump_second_moment: float
    flags: dict
    notes: tuple

    def passes(self, name: str) -> bool:
        return bool(self.flags[name])

    def as_dict(self) -> dict:
        return {"K2": self.K2, "K1": self.K1, "kappa2": self.kappa2, "kappa1": self.kappa1,
                "kappa1_lebesgue": self.kappa1_lebesgue, "levy_integral": self.levy_integral,
                "small_jump_second_moment": self.small_jump_second_moment,
                "flags": dict(self.flags), "notes": list(self.notes)}


def _sample_checks(sigma: SigmaSpec, mu: LevyMeasureSpec) -> tuple:
    nodes, weights = mu.quadrature
    marks = nodes[weights > 0]
    if marks.shape[0] > 256:
        marks = marks[np.linspace(0, marks.shape[0] - 1, 256).astype(int)]
    rng = np.random.default_rng(20240917)
    x = rng.uniform(-10.0, 10.0, size=(64, 1))
    y = rng.uniform(-10.0, 10.0, size=(64, 1))
    hb = np.broadcast_to(marks[None, :, :], (64,) + marks.shape)
    with np.errstate(all="ignore"):
        s0 = sigma(np.zeros((1, marks.shape[0])), hb[:1])
        sx, sy = sigma(x, hb), sigma(y, hb)
        J = np.asarray(sigma.J(marks), dtype=float)
    if not (np.all(np.isfinite(sx)) and np.all(np.isfinite(J))):
        raise EvaluationError(f"sigma '{sigma.name}' or its envelope is undefined on a mark of mu")
    zero_ok = bool(np.all(s0 == 0.0))
    slack = 1e-12 * (1.0 + np.abs(sx) + np.abs(sy))
    lip_ok = bool(np.all(np.abs(sx - sy) <= J * sigma.lip * np.abs(x - y) + slack))
    lower_ok = False
    if sigma.J_bar is not None:
        Jb = np.asarray(sigma.J_bar(marks), dtype=float)
        if not np.all(np.isfinite(Jb)):
            raise EvaluationError("lower envelope is undefined on a mark of mu")
        lower_ok = bool(np.all(np.abs(sx) >= sigma.L * Jb * np.abs(x) ** sigma.growth_exponent
                               - 1e-12 * (1.0 + np.abs(sx))))
    return zero_ok, lip_ok, lower_ok


def validate_conditions(sigma: SigmaSpec, mu: LevyMeasureSpec, K: Optional[float] = None,
                        kappa: Optional[float] = None) -> ConditionReport:
    """Evaluate the envelope integrals and the existence / growth conditions.

    ``K2 = int J^2 dmu``, ``K1 = int J dmu``, ``kappa2 = int J_bar^2 dmu``,
    ``kappa1 = int J_bar dmu``. When ``K`` (``kappa``) is omitted the upper
    (lower) integral conditions only require finiteness (positivity).
    The pointwise inequalities are checked on a fixed sample of states and on
    the marks of ``mu``.

    ``kappa1_lebesgue`` integrates ``J_bar`` against Lebesgue measure on the
    truncated shell instead of ``mu``; it is reported for comparison only.
    """
    K2 = mu.integrate(lambda h: np.asarray(sigma.J(h), dtype=float) ** 2)
    K1 = mu.integrate(sigma.J)
    notes = []
    if sigma.J_bar is not None:
        kappa2 = mu.integrate(lambda h: np.asarray(sigma.J_bar(h), dtype=float) ** 2)
        kappa1 = mu.integrate(sigma.J_bar)
        if mu.is_discrete:
            kappa1_leb = float("nan")
            notes.append("kappa1_lebesgue undefined for a discrete measure")
        else:
            r, w = mu._radial_rule
            probe = np.zeros((r.size, mu.d))
            probe[:, 0] = r
            kappa1_leb = float(np.dot(w, np.asarray(sigma.J_bar(probe), dtype=float)))
    else:
        kappa2 = kappa1 = kappa1_leb = 0.0
        notes.append("no lower envelope declared")
    zero_ok, lip_ok, lower_ok = _sample_checks(sigma, mu)
    finite_lip = np.isfinite(sigma.lip)
    upper2 = np.isfinite(K2) and (K is None or K2 <= K)
    upper1 = np.isfinite(K1) and (K is None or K1 <= K)
    low2 = kappa2 > 0 and (kappa is None or kappa2 >= kappa)
    low1 = kappa1 > 0 and (kappa is None or kappa1 >= kappa)
    linear = sigma.growth_exponent == 1.0
    flags = {
        "lipschitz_l2": bool(zero_ok and lip_ok and finite_lip and upper2),
        "lipschitz_l1": bool(zero_ok and lip_ok and finite_lip and upper1),
        "lower_linear_l2": bool(lower_ok and linear and low2),
        "lower_power_l2": bool(lower_ok and sigma.growth_exponent > 1.0 and low2),
        "lower_linear_l1": bool(lower_ok and linear and low1),
    }
    if not zero_ok:
        notes.append("sigma(0, h) != 0 on a sampled mark")
    return ConditionReport(K2, K1, kappa2, kappa1, kappa1_leb, mu.levy_integral(),
                           mu.small_jump_second_moment(), flags, tuple(notes))


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """Atoms ``(s, y, h)`` of one Poisson realization, sorted by time."""

    times: np.ndarray
    locations: np.ndarray
    marks: np.ndarray
    seed: int
    replica: int
    grid_id: str

    def __post_init__(self):
        for arr in (self.times, self.locations, self.marks):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return self.times.size

    def same_atoms(self, other: "NoiseRealization") -> bool:
        return (np.array_equal(self.times, other.times) and np.array_equal(self.locations, other.locations)
                and np.array_equal(self.marks, other.marks))


def replica_generator(seed: int, replica: int = 0) -> np.random.Generator:
    """Counter-based stream for one replica, keyed by ``(seed, replica)``."""
    if not (0 <= int(seed) < 2 ** 64 and 0 <= int(replica) < 2 ** 64):
        raise DomainError("seed and replica index must be unsigned 64-bit integers")
    key = np.array([int(seed), int(replica)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _draw_atoms(rng: np.random.Generator, T: float, half_width: float, d: int, mu: LevyMeasureSpec):
    mass = mu.total_mass
    count = int(rng.poisson(T * (2.0 * half_width) ** d * mass)) if mass > 0 else 0
    times = rng.uniform(0.0, T, size=count)
    locations = rng.uniform(-half_width, half_width, size=(count, d))
    marks = mu.sample_marks(rng, count)
    order = np.argsort(times, kind="stable")
    return times[order], locations[order], marks[order]


def sample_noise(grid: GridSpec, mu: LevyMeasureSpec, seed: int, replica: int = 0) -> NoiseRealization:
    """Sample the Poisson measure on ``[0, T] x box`` with intensity ``dt dx mu(dh)``.

    The atom count is Poisson with mean ``T |box| total_mass``; times and
    locations are uniform; marks follow ``mu / total_mass``.
    """
    if mu.d != grid.d:
        raise BindingError(f"mu dimension {mu.d} != grid dimension {grid.d}")
    rng = replica_generator(seed, replica)
    times, locations, marks = _draw_atoms(rng, grid.T, grid.half_width, grid.d, mu)
    return NoiseRealization(times, locations, marks, int(seed), int(replica), grid.identity())


# --------------------------------------------------------------------------
# stochastic convolution (direct reference implementation)
# --------------------------------------------------------------------------

def left_step(grid: GridSpec, s: np.ndarray) -> np.ndarray:
    """Index ``l`` with ``t_l < s <= t_{l+1}`` (``s = 0`` maps to 0)."""
    return np.maximum(np.ceil(np.asarray(s) / grid.dt).astype(np.int64) - 1, 0)


def interpolate_field(grid: GridSpec, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation of a lattice field at points ``(m, d)``."""
    pos = (np.asarray(points, dtype=float).reshape(-1, grid.d) + grid.half_width) / grid.h
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    out = np.zeros(pos.shape[0])
    for corner in range(2 ** grid.d):
        weight = np.ones(pos.shape[0])
        idx = []
        for axis in range(grid.d):
            bit = (corner >> axis) & 1
            weight = weight * (frac[:, axis] if bit else 1.0 - frac[:, axis])
            idx.append((base[:, axis] + bit) % grid.n)
        out += weight * values[tuple(idx)]
    return out


def stochastic_convolution(table: GreenTable, noise: NoiseRealization, history: np.ndarray,
                           sigma: SigmaSpec, mu: LevyMeasureSpec, compensated: bool,
                           k: int, x) -> float:
    """Stochastic convolution at grid time ``t_k`` and point ``x``, summed atom by atom.

    An atom at ``s`` in ``(t_l, t_{l+1}]`` with ``l < k`` contributes
    ``G_{k-l}(x - y) sigma(u_l(y), h)`` where ``u_l(y)`` is interpolated from
    ``history[l]`` and the kernel slice is interpolated at the off-grid lag.
    The compensator subtracts
    ``dt * sum_{l<k} sum_j h^d G_{k-l}(x - x_j) int sigma(u_l(x_j), h) mu(dh)``.

    ``history`` has shape ``(>= k,) + grid.shape``.
    """
    grid = table.grid
    if noise.grid_id != grid.identity():
        raise BindingError("noise realization and Green table were built on different grids")
    k = int(k)
    if not 0 <= k <= grid.nt:
        raise DomainError(f"time index k={k} outside 0..{grid.nt}")
    history = np.asarray(history, dtype=float)
    if history.shape[0] < k or history.shape[1:] != grid.shape:
        raise DomainError("history must cover every grid time before t_k")
    x = np.asarray(x, dtype=float).reshape(grid.d)
    total = 0.0
    if len(noise):
        steps = left_step(grid, noise.times)
        active = noise.times < grid.times[k]
        for l in np.unique(steps[active]):
            sel = active & (steps == l)
            y = noise.locations[sel]
            u_at = interpolate_field(grid, history[l], y)
            contrib = sigma(u_at, noise.marks[sel])
            kern = table.at_lag(k - l, x[None, :] - y)
            total += float(np.dot(kern, contrib))
    if compensated and k > 0:
        nodes = grid.coordinates().reshape(-1, grid.d)
        comp = 0.0
        for l in range(k):
            drift = sigma.mean_field(history[l], mu).reshape(-1)
            kern = table.at_lag(k - l, x[None, :] - nodes)
            comp += float(np.dot(kern, drift))
        total -= grid.dt * grid.cell_volume * comp
    return total


# --------------------------------------------------------------------------
# isometry check
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IsometryReport:
    second_moment_mc: float
    second_moment_stderr: float
    second_moment_quadrature: float
    first_moment_mc: float
    first_moment_stderr: float
    first_moment_quadrature: float
    replicas: int

    @property
    def second_moment_pass(self) -> bool:
        return abs(self.second_moment_mc - self.second_moment_quadrature) <= 3.0 * self.second_moment_stderr

    @property
    def first_moment_pass(self) -> bool:
        return abs(self.first_moment_mc - self.first_moment_quadrature) <= 3.0 * self.first_moment_stderr

    @property
    def passed(self) -> bool:
        return self.second_moment_pass and self.first_moment_pass

    def rows(self) -> list:
        return [("second_moment_compensated", self.second_moment_mc, self.second_moment_stderr,
                 self.second_moment_quadrature, self.second_moment_pass),
                ("first_moment", self.first_moment_mc, self.first_moment_stderr,
                 self.first_moment_quadrature, self.first_moment_pass)]


def _intensity_integral(fn: Callable, T: float, half_width: float, d: int, mu: LevyMeasureSpec,
                        order: int = 24) -> float:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    s = 0.5 * T * (nodes + 1.0)
    ws = 0.5 * T * weights
    xs = half_width * nodes
    wx = half_width * weights
    if d == 1:
        grid_x = xs[:, None]
        grid_wx = wx
    else:
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        grid_x = np.stack([gx.ravel(), gy.ravel()], axis=-1)
        grid_wx = np.outer(wx, wx).ravel()
    marks, wm = mu.quadrature
    S, X, H = np.meshgrid(np.arange(s.size), np.arange(grid_x.shape[0]), np.arange(marks.shape[0]),
                          indexing="ij")
    vals = np.asarray(fn(s[S.ravel()], grid_x[X.ravel()], marks[H.ravel()]), dtype=float)
    w = (ws[S] * grid_wx[X] * wm[H]).ravel()
    return float(np.dot(vals, w))


def isometry_check(integrand: Callable, T: float, half_width: float, mu: LevyMeasureSpec,
                   replicas: int, seed: int, d: Optional[int] = None) -> IsometryReport:
    """Monte Carlo check of the first-moment identity and the compensated isometry.

    ``integrand(s, x, h)`` is a deterministic function evaluated on arrays
    of times ``(m,)``, locations ``(m, d)`` and marks ``(m, d)``. Replica
    ``r`` uses the stream keyed by ``(seed, r)``.
    """
    d = mu.d if d is None else d
    if replicas < 2:
        raise DomainError("need at least two replicas")
    first = np.empty(replicas)
    for r in range(replicas):
        rng = replica_generator(seed, r)
        times, locations, marks = _draw_atoms(rng, T, half_width, d, mu)
        first[r] = float(np.sum(integrand(times, locations, marks))) if times.size else 0.0
    mean_q = _intensity_integral(integrand, T, half_width, d, mu)
    square_q = _intensity_integral(lambda s, x, h: np.asarray(integrand(s, x, h)) ** 2, T, half_width, d, mu)
    centered_sq = (first - mean_q) ** 2
    sqrt_n = math.sqrt(replicas)
    return IsometryReport(
        second_moment_mc=float(centered_sq.mean()),
        second_moment_stderr=float(centered_sq.std(ddof=1) / sqrt_n),
        second_moment_quadrature=square_q,
        first_moment_mc=float(first.mean()),
        first_moment_stderr=float(first.std(ddof=1) / sqrt_n),
        first_moment_quadrature=mean_q,
        replicas=int(replicas),
    )
