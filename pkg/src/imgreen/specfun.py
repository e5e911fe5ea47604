"""Special functions and closed-form kernels.

Free-space outgoing Green functions for the Helmholtz equation in d = 2, 3,
the Laplace fundamental solution, and the small-argument splits used by the
singular quadrature rules.  Conventions:

    green_free(d, k, r) = (i/4) (k / (2 pi r))^nu  H^(1)_nu(k r),  nu = d/2 - 1

which for d = 3 collapses to exp(ikr)/(4 pi r).  Bessel/Hankel evaluation is
delegated to scipy.special; the test suite pins values against an independent
arbitrary-precision series oracle.
"""

from __future__ import annotations

import numpy as np
from scipy.special import hankel1, j0, j1, jv, jvp, y0, yv, yvp

EULER_GAMMA = 0.5772156649015328606

# int over the unit square [-1/2,1/2]^2 of ln|x| dA = pi/4 - 3/2 - ln(2)/2
LOG_CELL_CONSTANT = np.pi / 4.0 - 1.5 - 0.5 * np.log(2.0)


def bessel_jy(order, z):
    """First- and second-kind Bessel functions (J_nu(z), Y_nu(z)).

    order : non-negative real (integers and the half-integer 1/2 are the
        supported use cases); z : positive real or array of positive reals.
    Raises ValueError for z <= 0, where Y is singular.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0):
        raise ValueError("bessel_jy requires z > 0")
    if np.any(np.asarray(order) < 0):
        raise ValueError("bessel_jy requires order >= 0")
    return jv(order, z), yv(order, z)


def bessel_jy_derivative(order, z):
    """Derivatives (J_nu'(z), Y_nu'(z)), same domain as bessel_jy."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0):
        raise ValueError("bessel_jy_derivative requires z > 0")
    return jvp(order, z), yvp(order, z)


def unit_ball_volume(d):
    """Volume of the unit ball in R^d."""
    from scipy.special import gamma

    return np.pi ** (d / 2.0) / gamma(d / 2.0 + 1.0)


def laplace_fundamental(d, r):
    """Fundamental solution E of -Delta in R^d, evaluated at distance r.

    E(r) = -(1/2 pi) ln r for d = 2 and r^(2-d) / (d (d-2) omega_d) for
    d >= 3 with omega_d the unit-ball volume.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("laplace_fundamental is singular at r = 0")
    if d == 2:
        return -np.log(r) / (2.0 * np.pi)
    if d >= 3:
        return r ** (2 - d) / (d * (d - 2) * unit_ball_volume(d))
    raise ValueError(f"unsupported dimension {d}")


def green_free(d, k, r):
    """Outgoing free-space Green function of (-Delta - k^2) at distance r.

    d = 2: (i/4) H0^(1)(k r).   d = 3: exp(i k r)/(4 pi r)  (half-integer
    Hankel closed form).  Singular at r = 0; use green_free_expansion there.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("green_free is singular at r = 0")
    if k <= 0.0:
        raise ValueError("green_free requires k > 0")
    if d == 2:
        return 0.25j * hankel1(0, k * r)
    if d == 3:
        return np.exp(1j * k * r) / (4.0 * np.pi * r)
    raise ValueError(f"unsupported dimension {d}")


def _y0_series_remainder(z):
    """S(z) with Y0(z) = (2/pi)[(ln(z/2)+gamma) J0(z) + S(z)], entire part.

    S(z) = sum_{m>=1} (-1)^(m+1) H_m (z^2/4)^m / (m!)^2, H_m harmonic.
    Converges rapidly for z <= a few.
    """
    z = np.asarray(z, dtype=float)
    q = z * z / 4.0
    total = np.zeros_like(q)
    term = np.ones_like(q)  # (z^2/4)^m / (m!)^2 at m = 0
    harmonic = 0.0
    for m in range(1, 40):
        term = term * q / (m * m)
        harmonic += 1.0 / m
        contrib = ((-1.0) ** (m + 1)) * harmonic * term
        total = total + contrib
        if np.all(np.abs(contrib) < 1e-18 * (1.0 + np.abs(total))):
            break
    return total


def green_free_expansion(d, k, r):
    """Small-distance split of the free Green function.

    Returns (re_regular, im_value) where

        Re G = E(r) + C(k) + re_regular      (d = 2, C = -(ln(k/2)+gamma)/2pi)
        Re G = E(r) + re_regular             (d = 3)
        Im G = im_value                      (entire in r)

    re_regular -> 0 as r -> 0 in both dimensions.  Valid for k r <= 1 (the
    series forms are used; accuracy degrades gracefully slightly beyond).
    """
    r = np.asarray(r, dtype=float)
    if k <= 0.0:
        raise ValueError("green_free_expansion requires k > 0")
    z = k * r
    if d == 2:
        im_value = 0.25 * j0(z)
        # -Y0/4 + (ln(z/2)+gamma)/2pi, written in cancellation-free form
        with np.errstate(divide="ignore", invalid="ignore"):
            log_half = np.where(z > 0.0, np.log(np.maximum(z, 1e-300) / 2.0), 0.0)
        re_regular = ((log_half + EULER_GAMMA) * (1.0 - j0(z)) - _y0_series_remainder(z)) / (
            2.0 * np.pi
        )
        # the (ln)(1-J0) product vanishes at z = 0
        re_regular = np.where(z == 0.0, 0.0, re_regular)
        return re_regular, im_value
    if d == 3:
        # sin(kr)/(4 pi r), finite at r = 0
        im_value = np.where(r == 0.0, k / (4.0 * np.pi), np.sin(z) / (4.0 * np.pi * np.maximum(r, 1e-300)))
        # (cos(kr)-1)/(4 pi r) = -sin^2(kr/2)/(2 pi r)
        re_regular = np.where(
            r == 0.0, 0.0, -np.sin(z / 2.0) ** 2 / (2.0 * np.pi * np.maximum(r, 1e-300))
        )
        return re_regular, im_value
    raise ValueError(f"unsupported dimension {d}")


def green_free_log_constant(d, k):
    """Constant part C(k) of Re G - E near coincidence (0 unless d = 2)."""
    if d == 2:
        return -(np.log(k / 2.0) + EULER_GAMMA) / (2.0 * np.pi)
    return 0.0


def log_cell_integral(h):
    """Exact integral of ln|x| over a square cell of side h centered at 0."""
    return h * h * (np.log(h) + LOG_CELL_CONSTANT)


# convenience re-exports used by the Nystrom kernels
__all__ = [
    "EULER_GAMMA",
    "bessel_jy",
    "bessel_jy_derivative",
    "green_free",
    "green_free_expansion",
    "green_free_log_constant",
    "laplace_fundamental",
    "log_cell_integral",
    "unit_ball_volume",
    "hankel1",
    "j0",
    "j1",
    "y0",
]
