"""Stable transition densities, the time-fractional Green function and lattice tables.

The Green function ``G_t`` of ``d^beta/dt^beta G = -nu (-Delta)^{alpha/2} G``
is the density of an isotropic alpha-stable process run on the clock of an
inverse beta-stable subordinator.  It is computed two ways:

* ``subordination``: integrate the stable density against the density of the
  random clock;
* ``spectral``: invert the Fourier symbol ``E_beta(-nu |xi|^alpha t^beta)``.

The two routes share no code beyond the special functions and are used as
mutual checks.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .errors import DomainError, IntegralDivergenceError, QuadratureError, ResolutionError
from .grid import GridSpec
from .specfun import check_order, inv_subordinator_density, mittag_leffler, ml_asymptotic_coefficients

__all__ = [
    "ModelParams",
    "GreenTable",
    "sphere_area",
    "stable_transition_density",
    "green_function",
    "green_l2_norm",
    "c_star",
    "tail_mass_estimate",
    "build_green_table",
]


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the space-time fractional operator.

    ``alpha`` is the stable index, ``beta`` the order of the Caputo
    derivative, ``nu`` the diffusivity and ``d`` the spatial dimension.
    """

    alpha: float
    beta: float
    nu: float = 1.0
    d: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha <= 2.0:
            raise DomainError(f"model.alpha={self.alpha!r} must lie in (0, 2]")
        check_order(self.beta)
        if not self.nu > 0.0:
            raise DomainError(f"model.nu={self.nu!r} must be positive")
        if self.d not in (1, 2):
            raise DomainError(f"model.d={self.d!r} must be 1 or 2")
        if not self.d < min(2.0, 1.0 / self.beta) * self.alpha:
            raise DomainError(
                f"d={self.d} violates d < min(2, 1/beta)*alpha = {min(2.0, 1.0 / self.beta) * self.alpha:g}")

    @property
    def decay_exponent(self) -> float:
        """``beta*d/alpha``, the exponent in ``||G_t||_2^2 = C* t^(-beta d/alpha)``."""
        return self.beta * self.d / self.alpha


def _radius(d: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if d == 1:
        return np.abs(x)
    if x.shape[-1:] != (2,):
        raise DomainError("points in d=2 need a trailing axis of length 2")
    return np.hypot(x[..., 0], x[..., 1])


# --------------------------------------------------------------------------
# standard symmetric stable density, symbol exp(-|xi|^alpha)
# --------------------------------------------------------------------------

_PANEL_NODES, _PANEL_WEIGHTS = np.polynomial.legendre.leggauss(16)


@lru_cache(maxsize=64)
def _composite_legendre(panels: int) -> tuple:
    edges = np.linspace(0.0, 1.0, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    return (mid + half * _PANEL_NODES).ravel(), (half * _PANEL_WEIGHTS).ravel()


def _stable_tail_series(alpha: float, d: int, r: np.ndarray):
    """Large-|x| expansion of the unit stable density and its truncation error estimate."""
    k = np.arange(1, 61)
    log_mag = (special.gammaln(alpha * k / 2 + 1) + special.gammaln((alpha * k + d) / 2)
               - special.gammaln(k + 1.0))
    log_mag = log_mag[None, :] + alpha * k[None, :] * np.log(2.0 / r[:, None])
    sign = (-1.0) ** (k + 1) * np.sin(math.pi * alpha * k / 2)
    mag = np.exp(log_mag)
    kstar = np.argmin(mag, axis=1)
    keep = k[None, :] <= kstar[:, None] + 1
    total = np.sum(np.where(keep, sign * mag, 0.0), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_err = mag[np.arange(r.size), kstar] / np.abs(total)
    value = total / (math.pi ** (d / 2 + 1) * r ** d)
    return value, rel_err


def _stable_fourier(alpha: float, d: int, r: np.ndarray) -> np.ndarray:
    # xi = cutoff * v**2 keeps the integrand smooth at xi = 0
    cutoff = 45.0 ** (1.0 / alpha)
    panels = 24 + int(math.ceil(cutoff * float(r.max(initial=0.0)) / math.pi))
    v, w = _composite_legendre(panels)
    xi = cutoff * v * v
    base = np.exp(-xi ** alpha) * 2.0 * cutoff * v * w
    out = np.empty_like(r)
    rows = max(1, 2_000_000 // xi.size)
    for start in range(0, r.size, rows):
        block = r[start:start + rows, None] * xi[None, :]
        if d == 1:
            out[start:start + rows] = np.cos(block) @ base / math.pi
        else:
            out[start:start + rows] = special.j0(block) @ (xi * base) / (2.0 * math.pi)
    return out


def _unit_stable_density(alpha: float, d: int, r) -> np.ndarray:
    """Radial profile of the density with Fourier transform ``exp(-|xi|^alpha)``."""
    r = np.asarray(r, dtype=float)
    flat = r.ravel()
    out = np.zeros_like(flat)
    if alpha == 2.0:
        # remaining mass beyond r = 40 is below 1e-170
        near = flat <= 40.0
        if near.any():
            out[near] = _stable_fourier(alpha, d, flat[near])
    else:
        use_tail = np.zeros(flat.shape, dtype=bool)
        pos = flat > 0.5
        if pos.any():
            tail, err = _stable_tail_series(alpha, d, flat[pos])
            good = err < 1e-12
            idx = np.flatnonzero(pos)[good]
            out[idx] = tail[good]
            use_tail[idx] = True
        rest = ~use_tail
        if rest.any():
            out[rest] = _stable_fourier(alpha, d, flat[rest])
    return np.maximum(out, 0.0).reshape(r.shape)


def stable_transition_density(params: ModelParams, s: float, x) -> np.ndarray:
    """Density of the isotropic stable process ``X(s)`` with symbol ``exp(-s nu |xi|^alpha)``.

    ``x`` holds points in R^d (trailing axis of length 2 when ``d == 2``).
    Computed by radial Fourier inversion, switching to the convergent or
    asymptotic large-|x| expansion where that is accurate to 1e-12.
    """
    s = float(s)
    if not s > 0.0:
        raise DomainError(f"s={s!r} must be positive")
    scale = (s * params.nu) ** (1.0 / params.alpha)
    r = _radius(params.d, x)
    out = _unit_stable_density(params.alpha, params.d, r / scale) / scale ** params.d
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# Green function
# --------------------------------------------------------------------------

def _green_subordination(params: ModelParams, t: float, r: np.ndarray) -> np.ndarray:
    alpha, beta, d = params.alpha, params.beta, params.d
    out = np.empty_like(r)
    at_origin = r == 0.0
    if at_origin.any() and d >= alpha:
        out[at_origin] = np.inf
        r_eval = r[~at_origin]
    else:
        at_origin = np.zeros_like(at_origin)
        r_eval = r
    if r_eval.size == 0:
        return out
    # s = t^beta * exp(v); the clock density is negligible beyond v ~ 8
    t_scale = t ** beta
    r_pos = r_eval[r_eval > 0]
    v_lo = -60.0
    if r_pos.size:
        # below s ~ r^alpha / nu the stable density is already in its tail
        v_lo = min(v_lo, alpha * math.log(r_pos.min()) - math.log(params.nu * t_scale) - 40.0)
    v_hi = 9.0

    def integrand(v):
        s = t_scale * math.exp(v)
        clock = inv_subordinator_density(beta, t, s)
        if clock == 0.0:
            return np.zeros_like(r_eval)
        scale = (s * params.nu) ** (1.0 / alpha)
        p = _unit_stable_density(alpha, d, r_eval / scale) / scale ** d
        return p * clock * s

    breaks = np.arange(math.ceil(v_lo / 4.0) * 4.0, v_hi, 4.0)
    knots = np.unique(np.concatenate([[v_lo], breaks, [v_hi]]))
    total = np.zeros_like(r_eval)
    for a, b in zip(knots[:-1], knots[1:]):
        val, err = integrate.quad_vec(integrand, a, b, epsabs=1e-12, epsrel=1e-10, limit=400)
        total += val
    out[~at_origin] = np.maximum(total, 0.0)
    return out


def _wynn_epsilon(partial: np.ndarray) -> float:
    """Wynn's epsilon acceleration of a sequence of partial sums."""
    eps_prev = np.zeros(partial.size + 1)
    eps = np.asarray(partial, dtype=float).copy()
    best = eps[-1]
    k = 0
    while eps.size > 1:
        diff = eps[1:] - eps[:-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            nxt = eps_prev[1:eps.size] + 1.0 / diff
        if not np.all(np.isfinite(nxt)):
            break
        eps_prev, eps = eps, nxt
        k += 1
        if k % 2 == 0:
            best = eps[-1]
    return float(best)


def _green_spectral(params: ModelParams, t: float, r: np.ndarray) -> np.ndarray:
    alpha, beta, d = params.alpha, params.beta, params.d
    c = params.nu * t ** beta
    scale = c ** (-1.0 / alpha)

    def symbol(w):
        return mittag_leffler(beta, -(w ** alpha))

    out = np.empty_like(r)
    for i, radius in enumerate(r):
        omega = radius * scale
        if d == 1:
            if omega == 0.0:
                if alpha <= 1.0:
                    out[i] = np.inf
                    continue
                # beyond z = w^alpha = 60 the asymptotic expansion is exact to ~1e-14
                w_cut = 60.0 ** (1.0 / alpha)
                val, err = integrate.quad(symbol, 0.0, w_cut, limit=400, epsabs=1e-13, epsrel=1e-12)
                coef = ml_asymptotic_coefficients(beta, 6)
                k = np.arange(1, 7)
                val += float(np.sum(coef * w_cut ** (1.0 - alpha * k) / (alpha * k - 1.0)))
            else:
                with warnings.catch_warnings():
                    # QAWF reports cycle-level trouble on the slowly decaying symbol;
                    # the returned error estimate is checked instead
                    warnings.simplefilter("ignore", integrate.IntegrationWarning)
                    head, err = integrate.quad(symbol, 0.0, 1.0, weight="cos", wvar=omega,
                                               limit=400, epsabs=1e-13)
                    tail, err2 = integrate.quad(symbol, 1.0, np.inf, weight="cos", wvar=omega,
                                                limlst=200, epsabs=1e-13)
                if err + err2 > 1e-7:
                    raise QuadratureError(f"spectral inversion at |x|={radius:g}: error estimate {err + err2:.2e}")
                val = head + tail
            out[i] = scale * val / math.pi
        else:
            if omega == 0.0:
                out[i] = np.inf
                continue
            # integrate between zeros of J0(omega w) and accelerate the alternating tail
            zeros = special.jn_zeros(0, 120) / omega
            edges = np.concatenate([[0.0], zeros])
            pieces = np.empty(zeros.size)
            for j in range(zeros.size):
                pieces[j], _ = integrate.quad(lambda w: symbol(w) * special.j0(omega * w) * w,
                                              edges[j], edges[j + 1], epsabs=1e-14, epsrel=1e-12)
            partial = np.cumsum(pieces)
            val = _wynn_epsilon(partial[40:])
            out[i] = scale ** 2 * val / (2.0 * math.pi)
    return np.maximum(out, 0.0)


def green_function(params: ModelParams, t: float, x, method: str = "subordination"):
    """Green function ``G_t(x)`` of the time-fractional equation.

    Parameters
    ----------
    params : ModelParams
    t : float
        Positive time.
    x : float or array_like
        Point(s) in R^d; the trailing axis has length 2 when ``d == 2``.
    method : {"subordination", "spectral"}
        ``subordination`` integrates the stable density against the density
        of the inverse subordinator with adaptive quadrature; ``spectral``
        inverts the Fourier symbol ``E_beta(-nu |xi|^alpha t^beta)``.
        At ``beta == 1`` both reduce to the stable density at time ``t``.

    Returns
    -------
    float or ndarray
        ``inf`` where the kernel is singular (``x = 0`` with ``d >= alpha``
        and ``beta < 1``).
    """
    t = float(t)
    if not t > 0.0:
        raise DomainError(f"t={t!r} must be positive")
    if method not in ("subordination", "spectral"):
        raise DomainError(f"unknown method {method!r}")
    if params.beta == 1.0:
        return stable_transition_density(params, t, x)
    r = _radius(params.d, x)
    flat = np.atleast_1d(r).astype(float).ravel()
    if method == "subordination":
        out = _green_subordination(params, t, flat)
    else:
        out = _green_spectral(params, t, flat)
    out = out.reshape(np.shape(r))
    return float(out) if out.ndim == 0 else out


def green_l2_norm(params: ModelParams, t: float, step: float = 0.1) -> float:
    """Squared L^2 norm ``int G_t(x)^2 dx`` by spatial quadrature.

    ``G_t`` is evaluated with the subordination route on a logarithmic
    radial grid and ``int r^(d-1) G(r)^2 dr`` is summed with the trapezoidal
    rule in ``log r``.
    """
    t = float(t)
    if not t > 0.0:
        raise DomainError(f"t={t!r} must be positive")
    d = params.d
    width = (params.nu * t ** params.beta) ** (1.0 / params.alpha)
    v = np.arange(math.log(width) - 32.0, math.log(width) + 14.0 + step, step)
    radii = np.exp(v)
    g = green_function(params, t, radii if d == 1 else np.stack([radii, 0 * radii], -1),
                       method="subordination")
    if not np.all(np.isfinite(g)):
        raise QuadratureError("Green function not finite on the radial grid")
    integrand = g ** 2 * radii ** d
    return float(sphere_area(d) * np.trapezoid(integrand, v))


def c_star(params: ModelParams) -> float:
    """Constant ``C*`` with ``||G_t||_2^2 = C* t^(-beta d / alpha)``.

    ``C* = nu^(-d/alpha) 2 pi^(d/2) / (alpha Gamma(d/2)) (2 pi)^(-d)
    * int_0^inf z^(d/alpha - 1) E_beta(-z)^2 dz``.
    """
    alpha, beta, d = params.alpha, params.beta, params.d
    expo = d / alpha
    if expo >= 2.0:
        raise IntegralDivergenceError(f"d/alpha={expo:g} >= 2: the C* integral diverges")

    def e2(z):
        return mittag_leffler(beta, -z) ** 2

    head, _ = integrate.quad(e2, 0.0, 1.0, weight="alg", wvar=(expo - 1.0, 0.0),
                             epsabs=0.0, epsrel=1e-12, limit=200)
    z_cut = 400.0
    mid, _ = integrate.quad(lambda z: z ** (expo - 1.0) * e2(z), 1.0, z_cut,
                            epsabs=0.0, epsrel=1e-12, limit=400)
    # squared asymptotic expansion integrated term by term beyond z_cut
    coef = ml_asymptotic_coefficients(beta, 8)
    sq = np.convolve(coef, coef)[:8]
    powers = np.arange(2, 10)
    tail = float(np.sum(sq * z_cut ** (expo - powers) / (powers - expo)))
    integral = head + mid + tail
    prefactor = (params.nu ** (-expo) * 2.0 * math.pi ** (d / 2)
                 / (alpha * math.gamma(d / 2)) / (2.0 * math.pi) ** d)
    return prefactor * integral


# --------------------------------------------------------------------------
# lattice tables
# --------------------------------------------------------------------------

def tail_mass_estimate(params: ModelParams, horizon: float, radius: float) -> float:
    """Estimated mass of ``G_horizon`` outside the ball of the given radius."""
    alpha, beta, d, nu = params.alpha, params.beta, params.d, params.nu
    if alpha == 2.0:
        if d == 1:
            def leak(s):
                return special.erfc(radius / (2.0 * math.sqrt(nu * s)))
        else:
            def leak(s):
                return math.exp(-radius ** 2 / (4.0 * nu * s))
        if beta == 1.0:
            return float(leak(horizon))
        scale = horizon ** beta
        val, _ = integrate.quad(
            lambda v: leak(scale * math.exp(v)) * inv_subordinator_density(beta, horizon, scale * math.exp(v))
            * scale * math.exp(v), -40.0, 9.0, limit=200, epsabs=1e-16)
        return float(val)
    # leading term of the power-law tail, averaged over the random clock
    coef = (math.gamma(alpha / 2 + 1) * math.gamma((alpha + d) / 2) * math.sin(math.pi * alpha / 2)
            * 2.0 ** alpha / math.pi ** (d / 2 + 1))
    mean_clock = horizon ** beta / math.gamma(1.0 + beta)
    return float(sphere_area(d) * coef * nu * mean_clock * radius ** (-alpha) / alpha)


@dataclass(frozen=True, eq=False)
class GreenTable:
    """Periodized Green-function slices ``G(k dt, .)`` on a lattice, ``k = 0..nt``.

    ``symbols[k]`` holds the truncated Fourier symbol on the real-FFT
    frequency lattice and ``values[k]`` the kernel at lattice lags in FFT
    order (lag 0 first). Slice 0 is the discrete delta ``1/h^d`` at lag 0.
    """

    params: ModelParams
    grid: GridSpec
    symbols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.symbols.setflags(write=False)
        self.values.setflags(write=False)

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def nt(self) -> int:
        return self.grid.nt

    def centered(self, k: int) -> np.ndarray:
        """Slice ``k`` reordered so that lag 0 sits at index ``n // 2``."""
        return np.fft.fftshift(self.values[k])

    def mass(self, k: int) -> float:
        return float(self.values[k].sum() * self.grid.cell_volume)

    def at_lag(self, k: int, lag) -> np.ndarray:
        """Slice ``k`` at arbitrary lags by periodic multilinear interpolation."""
        grid = self.grid
        lag = np.asarray(lag, dtype=float).reshape(-1, grid.d)
        pos = lag / grid.h
        base = np.floor(pos).astype(np.int64)
        frac = pos - base
        table = self.values[k]
        out = np.zeros(lag.shape[0])
        for corner in range(2 ** grid.d):
            weight = np.ones(lag.shape[0])
            idx = []
            for axis in range(grid.d):
                bit = (corner >> axis) & 1
                weight = weight * (frac[:, axis] if bit else 1.0 - frac[:, axis])
                idx.append((base[:, axis] + bit) % grid.n)
            out += weight * table[tuple(idx)]
        return out


def build_green_table(params: ModelParams, grid: GridSpec) -> GreenTable:
    """Build lattice slices of the periodized Green function from its Fourier symbol.

    Raises
    ------
    ResolutionError
        If the symbol at the Nyquist frequency after one step exceeds
        ``grid.symbol_tol`` (resolution too coarse for ``n``) or the kernel
        mass outside the box at ``T`` exceeds ``grid.tail_tol``.
    """
    if grid.d != params.d:
        raise DomainError(f"grid dimension {grid.d} != model dimension {params.d}")
    alpha, beta, nu = params.alpha, params.beta, params.nu
    xi_nyquist = math.pi / grid.h
    nyq = mittag_leffler(beta, -nu * xi_nyquist ** alpha * grid.dt ** beta)
    if nyq > grid.symbol_tol:
        raise ResolutionError(
            "nyquist-symbol", "grid.n",
            f"symbol at Nyquist after one step is {nyq:.3e} > {grid.symbol_tol:.1e}; "
            "increase n or dt")
    leak = tail_mass_estimate(params, grid.T, grid.half_width)
    if leak > grid.tail_tol:
        raise ResolutionError(
            "box-tail", "grid.half_width",
            f"estimated kernel mass outside the box at T is {leak:.3e} > {grid.tail_tol:.1e}")

    freqs = grid.frequencies(real=True)
    mesh = np.meshgrid(*freqs, indexing="ij")
    modulus = np.sqrt(sum(m ** 2 for m in mesh))
    radial = nu * modulus ** alpha
    spec_shape = modulus.shape
    symbols = np.empty((grid.nt + 1,) + spec_shape)
    symbols[0] = 1.0
    for k in range(1, grid.nt + 1):
        symbols[k] = mittag_leffler(beta, -radial * (k * grid.dt) ** beta)
    values = np.fft.irfftn(symbols, s=grid.shape, axes=tuple(range(1, grid.d + 1)))
    values /= grid.cell_volume
    # enforce exact evenness in the lag
    flipped = values
    for axis in range(1, grid.d + 1):
        flipped = np.roll(np.flip(flipped, axis=axis), 1, axis=axis)
    values = 0.5 * (values + flipped)
    return GreenTable(params=params, grid=grid, symbols=symbols, values=values)
