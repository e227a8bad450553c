"""Deterministic self-consistent equation for the Hermitized resolvent.

For a spectral parameter z and w in the upper half plane, m = m^z(w) solves

    -1/m = w + m - |z|^2/(w + m),   Im m * Im w > 0,

and u = m/(w + m). The density rho^z(x) = Im m(x + i0)/pi is symmetric and
supported on [-e_z, e_z].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate

__all__ = [
    "MdeSolution",
    "DensityProfile",
    "MdeCenterings",
    "Characteristic",
    "NoConvergence",
    "QuadratureFailure",
    "StepUnderflow",
    "mde_residual",
    "imag_axis",
    "solve_mde",
    "rho",
    "edge",
    "edge_by_bisection",
    "density",
    "density_cdf",
    "quantiles",
    "centering_integral",
    "time_rescaled_mde",
    "characteristic_path",
]


class NoConvergence(RuntimeError):
    pass


class QuadratureFailure(RuntimeError):
    pass


class StepUnderflow(RuntimeError):
    pass


@dataclass(frozen=True)
class MdeSolution:
    z: complex
    w: complex
    m: complex
    u: complex
    residual: float


@dataclass
class DensityProfile:
    """Density on x >= 0 (it is even), with the support edge."""

    z: complex
    edge: float
    grid: np.ndarray  # shape (resolution, 2): columns x, rho(x)
    quantiles: np.ndarray | None = field(default=None)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.grid, delimiter=",", header="x,rho", comments="")


@dataclass(frozen=True)
class MdeCenterings:
    """The deterministic integral of log(x^2 + eta^2) against rho^z."""

    z: complex
    eta: float
    integral: float

    def matches(self, z: complex, eta: float) -> bool:
        return self.z == z and self.eta == eta


@dataclass(frozen=True)
class Characteristic:
    z0: complex
    path: np.ndarray  # shape (steps+1, 2): columns t, eta_t, t increasing
    step_error: np.ndarray  # per-step RK4 error estimate from step doubling


def mde_residual(z: complex, w: complex, m: complex) -> float:
    """|-1/m - (w + m - |z|^2/(w+m))|."""
    a = w + m
    return abs(-1.0 / m - (a - abs(z) ** 2 / a))


# ---------------------------------------------------------------------------
# imaginary axis

def imag_axis(z, eta):
    """Solve on w = i*eta; returns (y, u) with m = i*y and u = y/(eta + y).

    Vectorized over z and eta. Uses the real reduction s = eta + y,
    s = (s - eta)(s^2 + |z|^2), solved for y by safeguarded Newton on the
    monotone function y((eta+y)^2 + |z|^2)/(eta+y) - 1 with bracket [0, 2].
    At eta = 0 the closed form y = sqrt(1 - |z|^2) is used (y = 0 outside
    the unit disc, where u = 1/|z|^2).
    """
    zz = np.abs(np.asarray(z, dtype=complex)) ** 2
    eta = np.asarray(eta, dtype=float)
    zz, eta = np.broadcast_arrays(zz, eta)
    if np.any(eta < 0):
        raise ValueError("eta must be >= 0")
    y = np.zeros(zz.shape)
    u = np.zeros(zz.shape)

    zero = eta == 0
    inside = zero & (zz < 1.0)
    y[inside] = np.sqrt(1.0 - zz[inside])
    u[inside] = 1.0
    outside = zero & ~inside
    u[outside] = 1.0 / zz[outside]

    pos = ~zero
    if np.any(pos):
        e, q = eta[pos], zz[pos]
        lo = np.zeros_like(e)
        hi = np.full_like(e, 2.0)
        yy = np.clip(np.sqrt(np.maximum(1.0 - q, 0.0)), 1e-3, 1.0)
        yy = np.minimum(yy, 1.0 / (e + 1e-300))

        def g(v):
            s = e + v
            return v * (s * s + q) - s, 3 * v * v + 4 * e * v + e * e + q - 1.0

        for _ in range(200):
            f, df = g(yy)
            lo = np.where(f < 0, yy, lo)
            hi = np.where(f > 0, yy, hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = f / df
            cand = yy - step
            bad = ~np.isfinite(cand) | (cand <= lo) | (cand >= hi)
            cand = np.where(bad, 0.5 * (lo + hi), cand)
            done = np.abs(cand - yy) <= 4e-16 * np.maximum(cand, 1e-300)
            yy = cand
            if np.all(done):
                break
        else:
            raise NoConvergence("imaginary-axis Newton did not converge")
        y[pos] = yy
        u[pos] = yy / (e + yy)
    if y.ndim == 0:
        return float(y), float(u)
    return y, u


# ---------------------------------------------------------------------------
# general spectral parameter

def _fixed_point(z: complex, w: complex, tol: float = 1e-15, budget: int = 200_000) -> complex:
    """Damped iteration m <- -1/(w + m - |z|^2/(w+m)) with continuation in Im w."""
    zz = abs(z) ** 2
    target = w.imag
    sign = 1.0 if target > 0 else -1.0
    levels = [sign * max(abs(target), 10.0)]
    while abs(levels[-1]) > abs(target) * 1.5:
        levels.append(levels[-1] / 1.5)
    levels.append(target)
    m = -1.0 / complex(w.real, levels[0])
    used = 0
    for im in levels:
        ww = complex(w.real, im)
        for _ in range(budget):
            a = ww + m
            new = -1.0 / (a - zz / a)
            if new.imag * sign <= 0:
                new = complex(new.real, sign * 1e-300)
            nxt = 0.5 * m + 0.5 * new
            used += 1
            if abs(nxt - m) <= tol * abs(nxt):
                m = nxt
                break
            m = nxt
        else:
            raise NoConvergence("fixed-point iteration budget exceeded")
    return m


def _newton_polish(z: complex, w: complex, m: complex, iters: int = 4) -> complex:
    zz = abs(z) ** 2
    for _ in range(iters):
        a = w + m
        f = 1.0 / m + a - zz / a
        df = -1.0 / m**2 + 1.0 + zz / a**2
        if df == 0:
            break
        step = f / df
        m = m - step
        if abs(step) <= 1e-17 * abs(m):
            break
    return m


def solve_mde(z: complex, w: complex) -> MdeSolution:
    """Unique solution with Im m * Im w > 0.

    w = i*eta (eta >= 0) uses the real reduction. Other w use the cubic
    a^3 - w a^2 + (1 - |z|^2) a + w|z|^2 = 0 in a = w + m with the
    stability selection, falling back to damped fixed-point iteration.
    Real w is read as the limit from the upper half plane.
    """
    z = complex(z)
    w = complex(w)
    if w.real == 0.0 and w.imag >= 0.0:
        y, u = imag_axis(z, w.imag)
        m = complex(0.0, y)
        res = 0.0 if y == 0.0 else mde_residual(z, w, m)
        return MdeSolution(z, w, m, complex(u), res)
    if w.imag < 0:
        sol = solve_mde(z, w.conjugate())
        return MdeSolution(z, w, sol.m.conjugate(), sol.u.conjugate(), sol.residual)
    zz = abs(z) ** 2
    wq = w if w.imag > 0 else complex(w.real, 1e-14)
    roots = np.roots([1.0, -wq, 1.0 - zz, wq * zz])
    ms = roots - wq
    good = [m for m in ms if m.imag > 0]
    if w.imag > 0 and len(good) == 1:
        m = _newton_polish(z, w, complex(good[0]))
    elif w.imag > 0:
        m = _newton_polish(z, w, _fixed_point(z, w))
    else:
        # on the real line: complex pair inside the support, else the real limit
        m = complex(max(ms, key=lambda v: v.imag))
        if abs(m.imag) < 1e-7:
            m = complex(m.real, 0.0)
        else:
            m = _newton_polish(z, w, m)
    a = w + m
    return MdeSolution(z, w, m, m / a, mde_residual(z, w, m) if m != 0 else 0.0)


# ---------------------------------------------------------------------------
# density on the real line

def _cardano_im(x, zz):
    """Im of the complex root pair of a^3 - x a^2 + (1-|z|^2) a + x|z|^2 (0 if none).

    Uses Im = sqrt(3 D)/(u^2 + u v + v^2), which avoids the cancellation in
    (sqrt(3)/2)|u - v| near the edge where D -> 0.
    """
    x = np.asarray(x, dtype=float)
    c = 1.0 - zz
    b = -x
    d = x * zz
    p = c - b * b / 3.0
    q = 2.0 * b**3 / 27.0 - b * c / 3.0 + d
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    sd = np.sqrt(np.maximum(disc, 0.0))
    uu = np.cbrt(-q / 2.0 + sd)
    vv = np.cbrt(-q / 2.0 - sd)
    den = uu * uu + uu * vv + vv * vv
    with np.errstate(divide="ignore", invalid="ignore"):
        im = np.where(disc > 0, np.sqrt(3.0 * np.maximum(disc, 0.0)) / den, 0.0)
    return np.abs(im)


def rho(z: complex, x):
    """rho^z(x) = Im m^z(x + i0)/pi, vectorized in x."""
    zz = abs(complex(z)) ** 2
    return _cardano_im(np.abs(np.asarray(x, dtype=float)), zz) / math.pi


@lru_cache(maxsize=4096)
def _edge_cached(zz: float) -> float:
    # the real cubic has a complex root pair iff its discriminant is negative;
    # the discriminant is 4Z X^2 + (C^2 - 18CZ - 27Z^2) X - 4C^3 with X = x^2
    c = 1.0 - zz
    if zz == 0.0:
        return 2.0
    bq = c * c - 18.0 * c * zz - 27.0 * zz * zz
    disc = bq * bq + 64.0 * zz * c**3
    if c > 0:
        # numerically stable positive root of the quadratic in X
        if bq <= 0:
            xs = (-bq + math.sqrt(disc)) / (8.0 * zz)
        else:
            xs = (8.0 * c**3) / (bq + math.sqrt(disc))
        return math.sqrt(xs)
    raise ValueError("edge is only defined for |z| < 1")


def edge(z: complex) -> float:
    """Right end e_z of the support [-e_z, e_z], for |z| < 1."""
    return _edge_cached(abs(complex(z)) ** 2)


def edge_by_bisection(z: complex, threshold: float = 1e-10) -> float:
    """sup{x : rho(x) > threshold} located by bisection (independent of the closed form)."""
    lo, hi = 0.0, 4.0
    if rho(z, lo) <= threshold:
        return 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rho(z, mid) > threshold:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# Substitution x = e (1 - (1-s)^2) on [0, e]: the square-root vanishing of
# rho at the edge becomes a smooth zero, so Gauss-Legendre converges fast.
# Near |z| = 1 rho has a dip of width ~sqrt(1-|z|^2) around 0, resolved by
# composite panels refined at that scale.
_GL_NODES, _GL_WEIGHTS = leggauss(32)


def _x_of_s(e, s):
    return e * s * (2.0 - s)


def _s_of_x(e, x):
    return 1.0 - np.sqrt(np.maximum(1.0 - x / e, 0.0))


def _integrand_s(z, e, s):
    return rho(z, _x_of_s(e, s)) * 2.0 * e * (1.0 - s)


@lru_cache(maxsize=4096)
def _panels(zz: float) -> np.ndarray:
    e = _edge_cached(zz)
    dip = math.sqrt(max(1.0 - zz, 0.0)) / (2.0 * e)
    cuts = {0.0, 1.0, 0.05, 0.2, 0.5}
    cuts |= {dip * f for f in (0.1, 0.3, 1.0, 3.0, 10.0) if 0.0 < dip * f < 1.0}
    return np.array(sorted(cuts))


def _cdf_s(z, e, s):
    """int_0^{x(s)} rho, vectorized over s in [0, 1]."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    br = _panels(abs(z) ** 2)
    a = br[:-1][None, :]
    b = np.minimum(br[1:][None, :], s[:, None])
    width = np.maximum(b - a, 0.0)
    half = 0.5 * width
    nodes = a[..., None] + half[..., None] * (_GL_NODES + 1.0)
    vals = _integrand_s(z, e, nodes)
    return np.sum(half * (vals @ _GL_WEIGHTS), axis=1)


def density_cdf(z: complex, x):
    """int_0^x rho^z, for 0 <= x (returns 1/2 beyond the edge)."""
    e = edge(z)
    xs = np.minimum(np.abs(np.asarray(x, dtype=float)), e)
    out = _cdf_s(z, e, _s_of_x(e, xs))
    return out if np.ndim(x) else float(out[0])


def density(z: complex, resolution: int = 256) -> DensityProfile:
    """Tabulate rho^z on [0, e_z] (x >= 0; rho is even)."""
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    z = complex(z)
    if abs(z) > 0.99:
        raise ValueError("density requires |z| <= 0.99")
    e = edge(z)
    x = np.linspace(0.0, e, resolution)
    grid = np.column_stack([x, rho(z, x)])
    return DensityProfile(z=z, edge=e, grid=grid)


def quantiles(profile: DensityProfile, n: int) -> np.ndarray:
    """gamma_i, i = 1..n, solving int_0^{gamma_i} rho = i/(2n).

    Newton in the substituted variable s with a bisection safeguard.
    """
    z, e = profile.z, profile.edge
    target = np.arange(1, n + 1) / (2.0 * n)
    lo = np.zeros(n)
    hi = np.ones(n)
    # small-i linearization as the initial guess
    x0 = np.minimum(target / rho(z, 0.0), 0.999 * e)
    s = _s_of_x(e, x0)
    for _ in range(100):
        f = _cdf_s(z, e, s) - target
        lo = np.where(f < 0, s, lo)
        hi = np.where(f > 0, s, hi)
        df = _integrand_s(z, e, s)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = s - f / df
        bad = ~np.isfinite(cand) | (cand <= lo) | (cand >= hi)
        cand = np.where(bad, 0.5 * (lo + hi), cand)
        if np.max(np.abs(f)) < 1e-13 or np.max(hi - lo) < 1e-15:
            break
        s = cand
    s = np.where(target >= 0.5, 1.0, s)
    g = _x_of_s(e, s)
    profile.quantiles = g
    return g


# ---------------------------------------------------------------------------
# centering integrals

@lru_cache(maxsize=65536)
def _centering_cached(zz: float, eta: float) -> float:
    z = complex(math.sqrt(zz), 0.0)
    e = _edge_cached(zz)

    def g(s):
        return float(_integrand_s(z, e, np.array([s]))[0])

    opts = dict(epsabs=1e-13, epsrel=1e-12, limit=400)
    if eta == 0.0:
        # log(x^2) = 2 log s + 2 log(e (2 - s)); the log s part is integrated
        # with the algebraic-logarithmic weight (exact handling of the singularity)
        a, err_a = integrate.quad(g, 0.0, 1.0, weight="alg-loga", wvar=(0.0, 0.0), **opts)
        b, err_b = integrate.quad(lambda s: math.log(e * (2.0 - s)) * g(s), 0.0, 1.0, **opts)
        val, err = 4.0 * (a + b), 4.0 * (err_a + err_b)
    else:
        sk = float(_s_of_x(e, min(eta, e)))
        pts = sorted({min(sk * f, 0.999) for f in (0.1, 1.0, 10.0) if sk * f < 1.0})
        val, err = integrate.quad(
            lambda s: math.log(_x_of_s(e, s) ** 2 + eta * eta) * g(s), 0.0, 1.0, points=pts, **opts
        )
        val, err = 2.0 * val, 2.0 * err
    if not math.isfinite(val) or err > 1e-8:
        raise QuadratureFailure(f"centering quadrature error {err:.2e}")
    return val


def centering_integral(z: complex, eta: float) -> MdeCenterings:
    """int log(x^2 + eta^2) rho^z(x) dx by quadrature against the density."""
    z = complex(z)
    eta = float(eta)
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if abs(z) > 0.99:
        raise ValueError("centering requires |z| <= 0.99")
    return MdeCenterings(z=z, eta=eta, integral=_centering_cached(abs(z) ** 2, eta))


# ---------------------------------------------------------------------------
# time-dependent solution and characteristics

def time_rescaled_mde(z: complex, eta: float, t: float) -> MdeSolution:
    """m_t^z(i eta) = (1/c) m^{z/c}(i eta/c) with c = sqrt(1+t); u_t = m_t/(w + m_t)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    c = math.sqrt(1.0 + t)
    base = solve_mde(complex(z) / c, complex(0.0, eta / c))
    m = base.m / c
    w = complex(0.0, eta)
    a = w + m
    u = m / a if a != 0 else base.u
    return MdeSolution(complex(z), w, m, u, base.residual)


def _im_mt(z0: complex, eta: float, t: float) -> float:
    c = math.sqrt(1.0 + t)
    y, _ = imag_axis(z0 / c, eta / c)
    return y / c


def characteristic_path(z0: complex, eta_end: float, t_end: float, steps: int = 200) -> Characteristic:
    """Integrate d eta/dt = -Im m_t(i eta) backward from (t_end, eta_end) to t = 0 with RK4."""
    if eta_end <= 0 or t_end <= 0:
        raise ValueError("eta_end and t_end must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    z0 = complex(z0)
    h = -t_end / steps

    def f(t, e):
        if e <= 0:
            raise StepUnderflow("eta_t left the upper half line")
        return -_im_mt(z0, e, t)

    def rk4(t, e, hh):
        k1 = f(t, e)
        k2 = f(t + hh / 2, e + hh * k1 / 2)
        k3 = f(t + hh / 2, e + hh * k2 / 2)
        k4 = f(t + hh, e + hh * k3)
        return e + hh * (k1 + 2 * k2 + 2 * k3 + k4) / 6

    ts = [t_end]
    es = [eta_end]
    errs = []
    t, e = t_end, eta_end
    for _ in range(steps):
        full = rk4(t, e, h)
        half = rk4(t + h / 2, rk4(t, e, h / 2), h / 2)
        errs.append(abs(full - half) / 15.0)
        e = half + (half - full) / 15.0
        t = t + h
        ts.append(max(t, 0.0))
        es.append(e)
    path = np.column_stack([ts[::-1], es[::-1]])
    return Characteristic(z0=z0, path=path, step_error=np.array(errs[::-1]))
