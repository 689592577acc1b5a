"""Explicit constants, Volterra renewal engines, moment statistics and blow-up checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import DomainError, IntegralDivergenceError
from .kernels import ModelParams, c_star, sphere_area
from .solver import Ensemble, SolutionPath

__all__ = [
    "contraction_constant",
    "choose_gamma",
    "contraction_constant_noncomp",
    "noncompensated_envelope_rates",
    "RenewalSolution",
    "product_weights",
    "renewal_solve",
    "renewal_residual",
    "BlowupEstimate",
    "nonlinear_blowup",
    "MomentSeries",
    "moment_estimator",
    "GrowthFit",
    "growth_rate_fit",
    "envelope_rates",
    "upsilon",
    "upsilon_closed_form",
    "upsilon_inverse",
    "CertificateReport",
    "energy_blowup_certificate",
]


def _memory_exponent(params: ModelParams) -> float:
    a = params.decay_exponent
    if a >= 1.0:
        raise DomainError(f"beta*d/alpha={a:g} must be < 1")
    return a


# --------------------------------------------------------------------------
# contraction constants
# --------------------------------------------------------------------------

_FORMS = ("printed", "derived")


def _gamma_power(a: float, form: str) -> float:
    if form not in _FORMS:
        raise DomainError(f"form={form!r} must be one of {_FORMS}")
    return 1.0 + a if form == "printed" else 1.0 - a


def contraction_constant(params: ModelParams, K: float, lip: float, gamma: float,
                         form: str = "printed") -> float:
    """Contraction constant of the compensated convolution operator in the
    weighted second-moment norm with weight ``exp(-gamma t)``.

    ``form="printed"`` gives
    ``C** = lip * sqrt(C* K Gamma(1 - a) / gamma^(1 + a))`` with
    ``a = beta d/alpha``. ``form="derived"`` uses ``gamma^(1 - a)``, which is
    what ``int_0^inf C* s^(-a) exp(-gamma s) ds = C* Gamma(1-a) gamma^(a-1)``
    gives; the two agree at ``gamma = 1`` and the printed one is smaller
    (not a valid bound) for ``gamma > 1``.
    """
    a = _memory_exponent(params)
    power = _gamma_power(a, form)
    if not gamma > 0:
        raise DomainError(f"gamma={gamma!r} must be positive")
    return lip * math.sqrt(c_star(params) * K * math.gamma(1.0 - a) / gamma ** power)


def choose_gamma(params: ModelParams, K: float, lip: float, target: float = 0.25,
                 per_octave: int = 16, form: str = "printed") -> float:
    """Smallest ``gamma = 2^(j/per_octave)`` with ``contraction_constant(..., form) <= target``."""
    if not 0.0 < target < 1.0:
        raise DomainError(f"target={target!r} must lie in (0, 1)")
    a = _memory_exponent(params)
    power = _gamma_power(a, form)
    if K * lip == 0:
        return 2.0 ** (-60)
    exact = (lip ** 2 * c_star(params) * K * math.gamma(1.0 - a) / target ** 2) ** (1.0 / power)
    j = math.ceil(per_octave * math.log2(exact))

    def cc(g):
        return contraction_constant(params, K, lip, g, form)

    # guard against rounding on either side of the exact root
    while cc(2.0 ** (j / per_octave)) > target:
        j += 1
    while cc(2.0 ** ((j - 1) / per_octave)) <= target:
        j -= 1
    return 2.0 ** (j / per_octave)


def contraction_constant_noncomp(K: float, lip: float, gamma: float) -> float:
    """``K lip / gamma``: bound for the non-compensated operator in the weighted first-moment norm."""
    if not gamma > 0:
        raise DomainError(f"gamma={gamma!r} must be positive")
    return K * lip / gamma


# --------------------------------------------------------------------------
# Volterra engines
# --------------------------------------------------------------------------

def _check_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 2 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
        raise DomainError("t_grid must be strictly increasing and start at 0")
    return t


def product_weights(t: np.ndarray, n: int, rho: float) -> np.ndarray:
    """Weights ``w_j`` with ``int_0^{t_n} (t_n - s)^(rho-1) f(s) ds = sum_j w_j f(t_j)``
    exactly for ``f`` piecewise linear on the grid."""
    tau = t[n]
    a, b = t[:n], t[1:n + 1]
    da, db = tau - a, tau - b
    i0 = (da ** rho - db ** rho) / rho
    i1 = (da ** (rho + 1) - db ** (rho + 1)) / (rho + 1)
    width = b - a
    left = (i1 - db * i0) / width
    right = (da * i0 - i1) / width
    w = np.zeros(n + 1)
    w[:n] += left
    w[1:] += right
    return w


@dataclass(frozen=True)
class RenewalSolution:
    """Solution of ``f(t) = c1 + kappa' int_0^t (t-s)^(rho-1) f(s) ds`` on a grid.

    ``envelope = c2 exp(c3 rate t)`` with ``rate = (Gamma(rho) kappa')^(1/rho)``,
    ``c3 = 1`` and ``c2`` the smallest constant making it dominate ``f`` on
    the grid.
    """

    t: np.ndarray
    f: np.ndarray
    c1: float
    kappa_prime: float
    rho: float
    rate: float
    c2: float
    c3: float = 1.0

    @property
    def envelope(self) -> np.ndarray:
        return self.c2 * np.exp(self.c3 * self.rate * self.t)


def renewal_solve(c1: float, kappa_prime: float, rho: float, t_grid) -> RenewalSolution:
    """Solve the renewal equality by product integration.

    The singular weight ``(t-s)^(rho-1)`` is integrated exactly against the
    piecewise-linear interpolant of ``f``; each step is a scalar linear
    solve for ``f(t_n)``. Graded grids (denser near 0) recover full accuracy
    when ``rho < 1``.
    """
    if not 0.0 < rho <= 1.0:
        raise DomainError(f"rho={rho!r} must lie in (0, 1]")
    t = _check_grid(t_grid)
    f = np.empty_like(t)
    f[0] = c1
    for n in range(1, t.size):
        w = product_weights(t, n, rho)
        f[n] = (c1 + kappa_prime * np.dot(w[:n], f[:n])) / (1.0 - kappa_prime * w[n])
    rate = (math.gamma(rho) * kappa_prime) ** (1.0 / rho) if kappa_prime > 0 else 0.0
    c2 = float(np.max(f * np.exp(-rate * t))) if c1 > 0 else 0.0
    return RenewalSolution(t, f, float(c1), float(kappa_prime), float(rho), rate, c2)


def renewal_residual(sol: RenewalSolution, indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Residual ``f - c1 - kappa' int (t-s)^(rho-1) f_lin(s) ds`` with the integral done by adaptive quadrature.

    ``f_lin`` is the piecewise-linear interpolant of the solution; the final
    subinterval uses an algebraic-weight rule for the endpoint singularity.
    """
    t, f = sol.t, sol.f
    idx = range(1, t.size) if indices is None else indices
    out = []
    for n in idx:
        total = 0.0
        for j in range(n):
            a, b = t[j], t[j + 1]
            fa, fb = f[j], f[j + 1]

            def lin(s, a=a, b=b, fa=fa, fb=fb):
                return fa + (fb - fa) * (s - a) / (b - a)

            if j == n - 1:
                val, _ = integrate.quad(lin, a, b, weight="alg", wvar=(0.0, sol.rho - 1.0),
                                        epsabs=0.0, epsrel=1e-13)
            else:
                val, _ = integrate.quad(lambda s: (t[n] - s) ** (sol.rho - 1.0) * lin(s), a, b,
                                        epsabs=0.0, epsrel=1e-13)
            total += val
        out.append(f[n] - sol.c1 - sol.kappa_prime * total)
    return np.asarray(out)


@dataclass(frozen=True)
class BlowupEstimate:
    time: float
    coarse_time: float
    reason: str


def _blowup_march(C: float, D: float, gamma_exp: float, rho: float, t: np.ndarray,
                  guard: float) -> Optional[tuple]:
    g = np.empty_like(t)
    h = C
    g[0] = h ** (1.0 + gamma_exp)
    for n in range(1, t.size):
        w = product_weights(t, n, rho)
        a = C + D * np.dot(w[:n], g[:n])
        b = D * w[n]
        if b == 0.0:
            h = a
        else:
            # smallest root of a + b h^(1+gamma) = h exists iff the minimum is <= 0
            h_min = (1.0 / (b * (1.0 + gamma_exp))) ** (1.0 / gamma_exp)
            if a + b * h_min ** (1.0 + gamma_exp) - h_min > 0.0:
                return t[n], "no fixed point"
            h = optimize.brentq(lambda x: a + b * x ** (1.0 + gamma_exp) - x, a, h_min, xtol=1e-14 * h_min,
                                rtol=1e-14)
        if not h <= guard:
            return t[n], "exceeded guard"
        g[n] = h ** (1.0 + gamma_exp)
    return None


def nonlinear_blowup(C: float, D: float, gamma_exp: float, theta: float, t_grid,
                     guard: float = 1e12) -> Optional[BlowupEstimate]:
    """Blow-up time of ``h(t) = C + D int_0^t h(s)^(1+gamma_exp) (t-s)^(-theta) ds``.

    Marches the equation with the product-integration weights (on the
    interpolant of ``h^(1+gamma_exp)``). Blow-up is declared at the first grid
    time where ``h`` exceeds ``guard`` or the implicit step has no solution.
    The estimate is refined by one grid halving. Returns ``None`` when no
    blow-up occurs on the grid.
    """
    if not 0.0 <= theta < 1.0:
        raise DomainError(f"theta={theta!r} must lie in [0, 1)")
    if not (C > 0 and D >= 0 and gamma_exp > 0):
        raise DomainError("need C > 0, D >= 0, gamma_exp > 0")
    t = _check_grid(t_grid)
    if D == 0:
        return None
    rho = 1.0 - theta
    coarse = _blowup_march(C, D, gamma_exp, rho, t, guard)
    if coarse is None:
        return None
    fine_t = np.empty(2 * t.size - 1)
    fine_t[0::2] = t
    fine_t[1::2] = 0.5 * (t[1:] + t[:-1])
    fine = _blowup_march(C, D, gamma_exp, rho, fine_t, guard)
    if fine is None:
        return BlowupEstimate(float(coarse[0]), float(coarse[0]), coarse[1])
    return BlowupEstimate(float(fine[0]), float(coarse[0]), fine[1])


# --------------------------------------------------------------------------
# moments
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentSeries:
    """Per-time sample ``p``-th moments, extremized over grid points."""

    times: np.ndarray
    sup_moment: np.ndarray
    inf_moment: np.ndarray
    stderr: np.ndarray
    inf_stderr: np.ndarray
    p: int
    replicas: int
    excluded: int
    mean_moment: Optional[np.ndarray] = None
    mean_stderr: Optional[np.ndarray] = None


def moment_estimator(paths, p: int = 2) -> MomentSeries:
    """Sample ``E|u(t,x)|^p`` with standard errors; ``sup``/``inf`` taken over ``x``.

    ``paths`` is an :class:`Ensemble` or a sequence of :class:`SolutionPath`.
    Exploded paths are excluded and counted in ``excluded``. ``stderr`` is
    the standard error at the maximizing point. ``mean_moment`` is the
    spatial average of the sample moment, with a standard error computed
    from the per-replica spatial averages.
    """
    if p not in (1, 2):
        raise DomainError(f"p={p!r} must be 1 or 2")
    if isinstance(paths, Ensemble):
        values, exploded, times = paths.values, paths.exploded, paths.times
    else:
        paths = list(paths)
        if not paths:
            raise DomainError("empty ensemble")
        ref = paths[0]
        for q in paths:
            if q.grid.identity() != ref.grid.identity() or q.params != ref.params:
                raise DomainError("paths do not share grid and parameters")
        values = np.stack([q.values for q in paths])
        exploded = np.array([q.exploded for q in paths])
        times = ref.times
    keep = ~np.asarray(exploded, dtype=bool)
    if not keep.any():
        raise DomainError("empty ensemble after excluding exploded paths")
    vals = np.abs(values[keep]) ** p
    nrep = vals.shape[0]
    vals = vals.reshape(nrep, vals.shape[1], -1)
    mean = vals.mean(axis=0)
    # identical replicas give the value itself, not a rounded average
    same = np.all(vals == vals[0], axis=0)
    mean = np.where(same, vals[0], mean)
    sd = vals.std(axis=0, ddof=1) if nrep > 1 else np.zeros_like(mean)
    sd = np.where(same, 0.0, sd)
    se = sd / math.sqrt(nrep)
    imax = np.argmax(mean, axis=1)
    imin = np.argmin(mean, axis=1)
    rows = np.arange(mean.shape[0])
    per_rep = vals.mean(axis=2)
    avg = per_rep.mean(axis=0)
    avg_se = per_rep.std(axis=0, ddof=1) / math.sqrt(nrep) if nrep > 1 else np.zeros_like(avg)
    return MomentSeries(np.asarray(times), mean[rows, imax], mean[rows, imin], se[rows, imax],
                        se[rows, imin], p, nrep, int((~keep).sum()), avg, avg_se)


@dataclass(frozen=True)
class GrowthFit:
    rate: float
    halfwidth: float
    stderr: float
    window: tuple
    points: int

    @property
    def positive(self) -> bool:
        """Rate positive at 95% confidence."""
        return self.rate - self.halfwidth > 0


def growth_rate_fit(series, window: Optional[tuple] = None, which: str = "sup") -> GrowthFit:
    """Least-squares slope of ``log moment`` against ``t`` over a time window.

    ``series`` is a :class:`MomentSeries` or a pair ``(times, values)``
    (optionally ``(times, values, stderr)``). The default window is the last
    half of the horizon. When standard errors are available the fit is
    weighted by them (delta method on the log); the reported standard error
    is the larger of the propagated one and the residual-based one, and the
    half-width is 1.96 times that.
    """
    if isinstance(series, MomentSeries):
        t = series.times
        if which not in ("sup", "inf", "mean"):
            raise DomainError(f"which={which!r} must be 'sup', 'inf' or 'mean'")
        y = {"sup": series.sup_moment, "inf": series.inf_moment, "mean": series.mean_moment}[which]
        se = {"sup": series.stderr, "inf": series.inf_stderr, "mean": series.mean_stderr}[which]
    else:
        t, y = np.asarray(series[0], float), np.asarray(series[1], float)
        se = np.asarray(series[2], float) if len(series) > 2 else np.zeros_like(y)
    if window is None:
        window = (0.5 * t[-1], t[-1])
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    if sel.sum() < 3:
        raise DomainError("window holds fewer than three points")
    tw, yw, sw = t[sel], y[sel], se[sel]
    if np.any(~(yw > 0)):
        raise DomainError("moments must be positive in the fit window")
    logy = np.log(yw)
    sig = sw / yw
    weighted = np.all(sig > 0)
    w = 1.0 / sig ** 2 if weighted else np.ones_like(tw)
    tbar = np.sum(w * tw) / np.sum(w)
    sxx = np.sum(w * (tw - tbar) ** 2)
    slope = float(np.sum(w * (tw - tbar) * logy) / sxx)
    intercept = np.sum(w * logy) / np.sum(w) - slope * tbar
    resid = logy - intercept - slope * tw
    dof = tw.size - 2
    resid_se = math.sqrt(np.sum(w * resid ** 2) / dof / sxx)
    prop_se = math.sqrt(1.0 / sxx) if weighted else 0.0
    stderr = max(prop_se, resid_se)
    return GrowthFit(slope, 1.96 * stderr, stderr, (float(window[0]), float(window[1])), int(tw.size))


def envelope_rates(params: ModelParams, K: float, lip: float, kappa: float, L: float) -> dict:
    """Exponential rates of the upper and lower second-moment envelopes.

    Both solve the renewal inequality with ``rho = 1 - beta d/alpha``: the
    upper one with ``kappa' = K lip^2 C*`` and the lower one with
    ``kappa' = kappa L^2 C*``; the rate is ``(Gamma(rho) kappa')^(1/rho)``.
    """
    rho = 1.0 - _memory_exponent(params)
    cs = c_star(params)
    up = K * lip ** 2 * cs
    low = kappa * L ** 2 * cs
    return {"rho": rho, "kappa_upper": up, "kappa_lower": low,
            "upper": (math.gamma(rho) * up) ** (1.0 / rho), "lower": (math.gamma(rho) * low) ** (1.0 / rho)}


def noncompensated_envelope_rates(params: ModelParams, kappa: float, L: float) -> dict:
    """Candidate first-moment lower-envelope rates for non-compensated noise.

    The mean equation integrates ``G`` against ``dy``, which has mass one,
    so the renewal kernel is constant and the rate equals ``kappa'``.
    ``"mass_one"`` uses ``kappa' = kappa L``; ``"with_c_star"`` keeps the
    extra ``C*`` factor for comparison.
    """
    if not (kappa > 0 and L > 0):
        raise DomainError("need kappa, L > 0")
    return {"mass_one": kappa * L, "with_c_star": kappa * L * c_star(params)}


# --------------------------------------------------------------------------
# Upsilon
# --------------------------------------------------------------------------

def _check_upsilon(alpha: float, nu: float, d: int, gamma: float):
    if d not in (1, 2):
        raise DomainError(f"d={d!r} must be 1 or 2")
    if not (0 < alpha <= 2 and nu > 0):
        raise DomainError("need 0 < alpha <= 2 and nu > 0")
    if d >= alpha:
        raise IntegralDivergenceError(f"d={d} >= alpha={alpha}: the Upsilon integral diverges")
    if not gamma > 0:
        raise DomainError(f"gamma={gamma!r} must be positive")


def upsilon(alpha: float, nu: float, d: int, gamma: float) -> float:
    """``(2 pi)^(-d) int_{R^d} dxi / (gamma + 2 nu |xi|^alpha)`` by radial quadrature."""
    _check_upsilon(alpha, nu, d, gamma)
    # substitute r = (gamma / (2 nu))^(1/alpha) e^v so the integrand peaks near v = 0
    r0 = (gamma / (2.0 * nu)) ** (1.0 / alpha)

    def integrand(v):
        return math.exp(d * v - np.logaddexp(0.0, alpha * v))

    val, _ = integrate.quad(integrand, -np.inf, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)
    return sphere_area(d) * (2.0 * math.pi) ** (-d) * r0 ** d / gamma * val


def upsilon_closed_form(alpha: float, nu: float, d: int, gamma: float) -> float:
    """Closed form ``S_d (2 pi)^(-d) gamma^(d/alpha - 1) (2 nu)^(-d/alpha) pi / (alpha sin(pi d/alpha))``."""
    _check_upsilon(alpha, nu, d, gamma)
    return (sphere_area(d) * (2.0 * math.pi) ** (-d) * gamma ** (d / alpha - 1.0) * (2.0 * nu) ** (-d / alpha)
            * math.pi / (alpha * math.sin(math.pi * d / alpha)))


def upsilon_inverse(alpha: float, nu: float, d: int, t: float, lam_range: tuple = (1e-12, 1e12)) -> float:
    """``sup{lam > 0 : Upsilon(lam) > t}`` by bisection over ``lam_range``.

    Returns 0 when ``Upsilon(lam_min) <= t`` and ``inf`` when
    ``Upsilon(lam_max) > t``.
    """
    lo, hi = lam_range
    _check_upsilon(alpha, nu, d, lo)
    if not t > 0:
        raise DomainError(f"t={t!r} must be positive")
    if upsilon(alpha, nu, d, lo) <= t:
        return 0.0
    if upsilon(alpha, nu, d, hi) > t:
        return math.inf
    root = optimize.brentq(lambda v: upsilon(alpha, nu, d, math.exp(v)) - t, math.log(lo), math.log(hi),
                           xtol=1e-14, rtol=1e-14)
    return math.exp(root)


# --------------------------------------------------------------------------
# blow-up certificate
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CertificateReport:
    C1: float
    theta0: float
    theta0_printed: float
    exponent: float
    A_at_theta0: float
    below_A: float
    below_diverged: bool
    below_steps: int
    above_A: float
    above_diverged: bool
    above_limit: float

    @property
    def certified(self) -> bool:
        return self.below_diverged and not self.above_diverged


def _iterate(eta2: float, A: float, max_steps: int = 200, guard: float = 1e12) -> tuple:
    x = eta2
    for n in range(1, max_steps + 1):
        x = eta2 + A * x
        if not x <= guard:
            return True, n, x
    return False, max_steps, x


def energy_blowup_certificate(params: ModelParams, kappa: float, L: float, rho: float, eta: float) -> CertificateReport:
    """Threshold ``theta0`` of the Laplace-variable inequality and a numerical divergence check.

    With ``a = beta d/alpha``, ``C1 = C* Gamma(1 - a)`` and
    ``A(theta) = kappa L^2 C1 theta^(-(1-a)) eta^(2 rho - 2)``, the map
    ``x -> eta^2 + A x`` diverges when ``A >= 1``. ``theta0`` solves
    ``A(theta0) = 1``, i.e. ``theta0 = (kappa L^2 C1 eta^(2rho-2))^(1/(1-a))``.
    ``theta0_printed`` uses the exponent ``1 - a`` instead and is reported
    for comparison only.
    """
    a = _memory_exponent(params)
    if not rho > 1:
        raise DomainError(f"rho={rho!r} must exceed 1")
    if not (eta > 0 and kappa > 0 and L > 0):
        raise DomainError("need eta, kappa, L > 0")
    C1 = c_star(params) * math.gamma(1.0 - a)
    base = kappa * L ** 2 * C1 * eta ** (2.0 * rho - 2.0)
    theta0 = base ** (1.0 / (1.0 - a))

    def A(theta):
        return base * theta ** (-(1.0 - a))

    below, above = A(0.5 * theta0), A(2.0 * theta0)
    div_b, steps_b, _ = _iterate(eta ** 2, below)
    div_a, _, last = _iterate(eta ** 2, above)
    return CertificateReport(C1, theta0, base ** (1.0 - a), 1.0 / (1.0 - a), A(theta0), below, div_b, steps_b,
                             above, div_a, last)
