"""Barnes G-function, the constant G(1+l/2)/(2pi)^(l/4) and exact Ginibre moments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, loggamma

__all__ = [
    "EULER_GAMMA",
    "LogBarnesG",
    "log_barnes_g",
    "log_g",
    "log_g_weierstrass",
    "g_constant",
    "log_g_constant",
    "ginibre_exact_moment",
    "ginibre_moment_gamma_sum",
    "ginibre_asymptotic_moment",
]

EULER_GAMMA = 0.577215664901532860606512090082
# zeta'(-1) = 1/12 - log(Glaisher's constant)
ZETA_PRIME_M1 = -0.165421143700450929213919660242
LOG_2PI = math.log(2.0 * math.pi)

# Bernoulli numbers B_4, B_6, ..., B_24 for the large-argument series
_BERNOULLI = [
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
    854513.0 / 138.0,
    -236364091.0 / 2730.0,
]
_SHIFT_TARGET = 20.0


class DomainError(ValueError):
    """Argument outside the supported domain."""


@dataclass(frozen=True)
class LogBarnesG:
    argument: complex
    log_value: complex


def _asymptotic_log_g1p(z):
    """ln G(1+z) for large |z| via the Stirling-type series."""
    logz = np.log(z)
    z2 = z * z
    out = 0.5 * z2 * logz - 0.75 * z2 + 0.5 * z * LOG_2PI - logz / 12.0 + ZETA_PRIME_M1
    inv2 = 1.0 / z2
    power = inv2
    for k, b in enumerate(_BERNOULLI, start=1):
        out = out + b / (4.0 * k * (k + 1)) * power
        power = power * inv2
    return out


def log_g(z):
    """ln G(z) for Re z > 0, vectorized over numpy arrays.

    Real input gives real output. Small arguments are shifted up with
    ln G(z) = ln G(z+n) - sum_j ln Gamma(z+j) until Re z >= 20.
    """
    arr = np.asarray(z)
    is_real = not np.iscomplexobj(arr)
    zc = arr.astype(complex)
    if np.any(zc.real <= 0):
        raise DomainError("log_g requires Re z > 0")
    if np.any(np.abs(zc) > 1e6):
        raise DomainError("log_g supports |z| <= 1e6")
    shift = np.maximum(np.ceil(_SHIFT_TARGET - zc.real), 0).astype(int)
    acc = np.zeros_like(zc)
    nmax = int(shift.max()) if shift.size else 0
    for j in range(nmax):
        mask = shift > j
        if not np.any(mask):
            break
        acc = acc + np.where(mask, loggamma(zc + j), 0.0)
    val = _asymptotic_log_g1p(zc + shift - 1.0) - acc
    if is_real:
        val = val.real
    return val[()] if val.ndim == 0 else val


def log_barnes_g(z: complex) -> LogBarnesG:
    """ln G(z) packaged with its argument."""
    return LogBarnesG(argument=z, log_value=log_g(z))


def log_g_weierstrass(z: complex, terms: int = 200_000) -> complex:
    """ln G(1+z) from the Weierstrass product, truncated.

    Slow; only meant as a cross-check for small |z|. Uses the standard
    prefactor exp(-(z + z^2 (1+gamma_E))/2); the truncated tail is
    corrected at leading order, sum_{k>K} z^3/(3k^2) ~ z^3/(3K).
    """
    k = np.arange(1, terms + 1, dtype=float)
    z = complex(z)
    s = np.sum(k * np.log1p(z / k) + z * z / (2.0 * k) - z)
    head = 0.5 * z * LOG_2PI - 0.5 * (z + z * z * (1.0 + EULER_GAMMA))
    return head + s + z**3 / (3.0 * terms)


def log_g_constant(lam):
    """ln of G(1+lam/2)/(2pi)^(lam/4)."""
    lam_arr = np.asarray(lam)
    if np.any(np.real(lam_arr) <= -2):
        raise DomainError("g_constant requires Re lambda > -2")
    return log_g(1.0 + lam_arr / 2.0) - lam_arr / 4.0 * LOG_2PI


def g_constant(lam):
    """G(1+lam/2)/(2pi)^(lam/4)."""
    return np.exp(log_g_constant(lam))


def _check_moment_args(n: int, gamma) -> None:
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    if np.real(gamma) <= -2:
        raise DomainError("moment requires Re gamma > -2")


def ginibre_exact_moment(n: int, gamma):
    """ln E|det X|^gamma for complex Ginibre X of size n (entries of variance 1/n)."""
    _check_moment_args(n, gamma)
    if gamma == 0:
        return 0.0
    a = gamma / 2.0
    return (
        -n * a * math.log(n)
        + log_g(n + 1.0 + a)
        - log_g(float(n + 1))
        - log_g(1.0 + a)
    )


def ginibre_moment_gamma_sum(n: int, gamma):
    """Same moment via independent Gamma moduli: sum_j ln Gamma(j+g/2) - ln Gamma(j)."""
    _check_moment_args(n, gamma)
    j = np.arange(1, n + 1, dtype=float)
    a = gamma / 2.0
    lg = loggamma(j + a) if np.iscomplexobj(np.asarray(gamma)) else gammaln(j + a)
    return np.sum(lg - gammaln(j)) - n * a * math.log(n)


def ginibre_asymptotic_moment(n: int, gamma):
    """ln of e^{-gN/2} N^{g^2/8} (2pi)^{g/4} / G(1+g/2)."""
    _check_moment_args(n, gamma)
    if gamma == 0:
        return 0.0
    return -gamma * n / 2.0 + gamma**2 / 8.0 * math.log(n) - log_g_constant(gamma)
