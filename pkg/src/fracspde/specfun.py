"""Special functions behind the time-fractional Green function.

Three functions are provided:

``mittag_leffler``
    The one-parameter Mittag-Leffler function ``E_beta(z)`` on the negative
    real axis.
``stable_density``
    The density ``g_beta`` of a one-sided beta-stable random variable ``D_1``
    with Laplace transform ``exp(-lam**beta)``.
``inv_subordinator_density``
    The density of the inverse stable subordinator ``E_t`` at time ``t``.

All functions are pure and accept scalars or arrays.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special

from .errors import DomainError

__all__ = [
    "SERIES_RADIUS",
    "check_order",
    "mittag_leffler",
    "stable_density",
    "inv_subordinator_density",
]

#: |z| at or below which E_beta is summed as a power series.
SERIES_RADIUS = 1.0

# Below this value of 1 - beta the trapezoid step collapses with the analytic
# strip and E_beta is evaluated by adaptive quadrature instead.
_NEAR_ONE = 1e-2

# Largest number of matrix entries materialised per trapezoid chunk.
_CHUNK_ENTRIES = 4_000_000


def check_order(beta: float, allow_one: bool = True) -> float:
    """Validate a fractional order and return it as a float."""
    beta = float(beta)
    upper_ok = beta <= 1.0 if allow_one else beta < 1.0
    if not (beta > 0.0 and upper_ok):
        bound = "(0, 1]" if allow_one else "(0, 1)"
        raise DomainError(f"beta={beta!r} must lie in {bound}")
    return beta


# --------------------------------------------------------------------------
# Mittag-Leffler
# --------------------------------------------------------------------------


def _ml_series(beta: float, z: np.ndarray) -> np.ndarray:
    # 1/Gamma(beta*k + 1) < 1e-17 once beta*k + 1 exceeds ~19
    nterms = int(20.0 / beta) + 10
    k = np.arange(nterms)
    coef = special.rgamma(beta * k + 1.0)
    powers = z[:, None] ** k[None, :]
    return powers @ coef


def _ml_laplace_trapezoid(beta: float, x: np.ndarray) -> np.ndarray:
    """E_beta(-x) for x > 0 via the completely-monotone Laplace representation.

    With s = x**(1/beta) and r = exp(u),

        E_beta(-x) = sin(beta*pi)/pi * int exp(-s e^u) / (2 cosh(beta u) + 2 cos(beta pi)) du

    over the real line. The integrand is analytic in the strip
    |Im u| < min(pi/2, (1 - beta) pi / beta), so the trapezoidal rule
    converges geometrically in the step size.
    """
    s = x ** (1.0 / beta)
    strip = min(0.5 * math.pi, (1.0 - beta) * math.pi / beta)
    step = 2.0 * math.pi * strip / (math.log(1e16) + 2.0)
    prefactor = math.sin(beta * math.pi) / math.pi
    left = math.log(1e-17 * beta / max(prefactor, 1e-300)) / beta
    right = math.log(45.0 / s.min()) + 1.0
    u = np.arange(left, right + step, step)
    weight = 1.0 / (2.0 * np.cosh(beta * u) + 2.0 * math.cos(beta * math.pi))
    eu = np.exp(u)
    out = np.empty_like(s)
    rows = max(1, _CHUNK_ENTRIES // u.size)
    for start in range(0, s.size, rows):
        block = s[start:start + rows]
        out[start:start + rows] = np.exp(-np.outer(block, eu)) @ weight
    return prefactor * step * out


def _ml_near_one(beta: float, x: np.ndarray) -> np.ndarray:
    """E_beta(-x) for x > 0 and beta close to 1 by adaptive quadrature.

    Uses E_beta(-x) = int_0^inf exp(-r s) K(r) dr with s = x**(1/beta) and

        K(r) = sin(beta pi)/pi * r**(beta-1) / (r**(2 beta) + 2 r**beta cos(beta pi) + 1),

    a Lorentzian of width pi (1 - beta) around r = 1. The core is mapped by
    r = 1 + w tan(theta), the flanks by r = 1 +- exp(u), and every factor is
    written in terms of eps = 1 - beta to avoid cancellation.
    """
    eps = 1.0 - beta
    w = math.pi * eps
    sb = math.sin(math.pi * eps) / math.pi
    half = 2.0 * math.sin(0.5 * math.pi * eps) ** 2  # 1 + cos(beta pi)
    d0 = min(50.0 * w, 0.25)
    opts = dict(limit=200, epsabs=0.0, epsrel=1e-13)
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        s = xi ** (1.0 / beta)

        def dens(d, s=s):
            # exp(-r s) K(r) at r = 1 + d
            if d <= -1.0:
                return 0.0
            lg = math.log1p(d)
            rbm1 = math.expm1(beta * lg)
            return math.exp(-(1.0 + d) * s - eps * lg) * sb / (rbm1 * rbm1 + 2.0 * (rbm1 + 1.0) * half)

        th = math.atan(d0 / w)
        core = integrate.quad(lambda a: dens(w * math.tan(a)) * w / math.cos(a) ** 2, -th, th, **opts)[0]
        right = integrate.quad(lambda u: dens(math.exp(u)) * math.exp(u), math.log(d0), 0.0, **opts)[0]
        left = integrate.quad(lambda u: dens(-math.exp(u)) * math.exp(u),
                              math.log(d0), math.log(0.5), **opts)[0]
        head = integrate.quad(
            lambda r, s=s: math.exp(-r * s) * sb / ((r ** beta - 1.0) ** 2 + 2.0 * r ** beta * half),
            0.0, 0.5, weight="alg", wvar=(beta - 1.0, 0.0), **opts)[0]
        tail = integrate.quad(lambda r: dens(r - 1.0), 2.0, np.inf, **opts)[0]
        out[i] = head + left + core + right + tail
    return out


def mittag_leffler(beta: float, z):
    """Mittag-Leffler function ``E_beta(z) = sum_k z**k / Gamma(beta*k + 1)``.

    Parameters
    ----------
    beta : float
        Order in (0, 1].
    z : float or array_like
        Nonpositive argument(s).

    Returns
    -------
    float or ndarray
        Values accurate to about 1e-12 absolute. ``beta == 1`` is evaluated
        as ``exp(z)``. For ``|z| <= SERIES_RADIUS`` the power series is
        summed directly; beyond it a trapezoidal rule on a Laplace-type
        integral representation is used, which does not suffer from the
        cancellation that ruins the alternating series for large ``|z|``.
        For ``1 - beta < 1e-2`` the strip of analyticity is too thin for the
        trapezoid and adaptive quadrature of the same representation is used.

    Raises
    ------
    DomainError
        If ``beta`` is outside (0, 1] or any ``z`` is positive.
    """
    beta = check_order(beta)
    arr = np.asarray(z, dtype=float)
    if np.any(arr > 0.0) or np.any(np.isnan(arr)):
        raise DomainError("mittag_leffler is only supported for z <= 0")
    flat = arr.ravel()
    if beta == 1.0:
        out = np.exp(flat)
    else:
        out = np.empty_like(flat)
        small = np.abs(flat) <= SERIES_RADIUS
        if small.any():
            out[small] = _ml_series(beta, flat[small])
        large = ~small
        if large.any():
            finite = large & np.isfinite(flat)
            out[large & ~finite] = 0.0
            if finite.any():
                route = _ml_near_one if 1.0 - beta < _NEAR_ONE else _ml_laplace_trapezoid
                out[finite] = route(beta, -flat[finite])
    out = out.reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def ml_asymptotic_coefficients(beta: float, nterms: int) -> np.ndarray:
    """Coefficients c_k with E_beta(-z) ~ sum_k c_k z**(-k) as z -> +inf."""
    k = np.arange(1, nterms + 1)
    return (-1.0) ** (k + 1) * special.rgamma(1.0 - beta * k)


# --------------------------------------------------------------------------
# one-sided stable density
# --------------------------------------------------------------------------


def _kanter(beta: float, phi):
    return (np.sin(beta * phi) ** (beta / (1.0 - beta)) * np.sin((1.0 - beta) * phi)
            / np.sin(phi) ** (1.0 / (1.0 - beta)))


def _g_integral(beta: float, u: float) -> float:
    # Zolotarev/Kanter single-integral form on (0, pi)
    c = u ** (-beta / (1.0 - beta))

    def integrand(phi):
        a = _kanter(beta, phi)
        return a * math.exp(-c * a)

    with np.errstate(over="ignore", under="ignore"):
        val, _ = integrate.quad(integrand, 0.0, math.pi, limit=200,
                                epsabs=0.0, epsrel=1e-11)
    return beta / ((1.0 - beta) * math.pi) * u ** (-1.0 / (1.0 - beta)) * val


def _g_series(beta: float, u: np.ndarray) -> np.ndarray:
    # convergent expansion in u**(-beta); used where u**(-beta) <= 1/4
    k = np.arange(1, 81)
    log_coef = special.gammaln(beta * k + 1.0) - special.gammaln(k + 1.0)
    coef = (-1.0) ** (k + 1) * np.exp(log_coef) * np.sin(math.pi * beta * k) / math.pi
    w = u[:, None] ** (-beta * k[None, :])
    return (w @ coef) / u


def stable_density(beta: float, u):
    """Density ``g_beta`` of the one-sided stable law with Laplace transform ``exp(-lam**beta)``.

    ``g_beta(u) = 0`` for ``u <= 0``. For small and moderate ``u`` the
    Zolotarev-type integral is evaluated by adaptive quadrature; for large
    ``u`` the convergent series in ``u**(-beta)`` is used.

    Raises
    ------
    DomainError
        If ``beta`` is not in (0, 1); at ``beta == 1`` the law is a point mass.
    """
    beta = check_order(beta, allow_one=False)
    arr = np.asarray(u, dtype=float)
    flat = arr.ravel()
    out = np.zeros_like(flat)
    switch = 4.0 ** (1.0 / beta)
    big = flat >= switch
    if big.any():
        out[big] = np.maximum(_g_series(beta, flat[big]), 0.0)
    mid = (flat > 0.0) & ~big
    for i in np.flatnonzero(mid):
        out[i] = _g_integral(beta, float(flat[i]))
    out = out.reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def inv_subordinator_density(beta: float, t: float, x):
    """Density of the inverse beta-stable subordinator ``E_t`` at ``x``.

    ``f(x) = t / beta * x**(-1 - 1/beta) * g_beta(t * x**(-1/beta))``.
    """
    beta = check_order(beta, allow_one=False)
    t = float(t)
    if not t > 0.0:
        raise DomainError(f"t={t!r} must be positive")
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0.0)):
        raise DomainError("x must be positive")
    out = t / beta * arr ** (-1.0 - 1.0 / beta) * stable_density(beta, t * arr ** (-1.0 / beta))
    return float(out) if np.ndim(out) == 0 else out
