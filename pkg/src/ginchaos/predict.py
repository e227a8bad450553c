"""Deterministic predictions: covariance functionals, expectation correction,
limiting kernel, K-point moment formula and the a-priori bound envelope."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .ensembles import SymmetryClass
from .mde import imag_axis
from .special import LOG_2PI, log_g

__all__ = [
    "PairParams",
    "KPointQuery",
    "Prediction",
    "CoincidentSingular",
    "LogDomainError",
    "RealAxisError",
    "cov_v",
    "cov_v_forms",
    "cov_v_matrix",
    "cov_c",
    "cov_c_matrix",
    "expectation_correction",
    "kernel_k",
    "kernel_gram",
    "kpoint_predict",
    "bound_envelope",
]


class CoincidentSingular(ValueError):
    pass


class LogDomainError(ValueError):
    pass


class RealAxisError(ValueError):
    pass


@dataclass(frozen=True)
class PairParams:
    z1: complex
    z2: complex
    eta1: float
    eta2: float
    cls: SymmetryClass = SymmetryClass(2)
    kappa4: float = 0.0

    def __post_init__(self):
        if self.eta1 < 0 or self.eta2 < 0:
            raise ValueError("eta must be >= 0")


# ---------------------------------------------------------------------------
# covariance functional

def _v_terms(z1, y1, u1, z2, y2, u2):
    """Arguments of the two displayed forms, with m_i = i y_i (so m_i^2 = -y_i^2)."""
    a1, a2 = np.abs(z1), np.abs(z2)
    uu = u1 * u2
    main = 1.0 + (uu * a1 * a2) ** 2 - (y1 * y2) ** 2 - 2.0 * uu * np.real(z1 * np.conj(z2))
    # all four terms are nonnegative, so the sum has no cancellation
    alt = (
        uu * np.abs(z1 - z2) ** 2
        + y1 * y1 * (u2 / u1) * (1.0 - u1)
        + y2 * y2 * (u1 / u2) * (1.0 - u2)
        + (1.0 - u1) * (1.0 - u2)
    )
    return main, alt


def cov_v_forms(z1, eta1, z2, eta2) -> tuple[float, float]:
    """Both displayed forms of V(z1, eta1, z2, eta2): (main, alternate)."""
    y1, u1 = imag_axis(z1, eta1)
    y2, u2 = imag_axis(z2, eta2)
    main, alt = _v_terms(complex(z1), y1, u1, complex(z2), y2, u2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -0.25 * math.log(main) if main > 0 else math.nan, -0.25 * math.log(alt) if alt > 0 else math.inf


def _check_pair(z1, eta1, z2, eta2):
    if z1 == z2 and eta1 == 0 and eta2 == 0:
        raise CoincidentSingular("V is singular at z1 = z2 with eta1 = eta2 = 0")


def cov_v(p: PairParams) -> float:
    """V(z1, eta1, z2, eta2), evaluated in the alternate (well-conditioned) form."""
    _check_pair(p.z1, p.eta1, p.z2, p.eta2)
    return cov_v_forms(p.z1, p.eta1, p.z2, p.eta2)[1]


def cov_c(p: PairParams) -> float:
    """C = V + 1_{beta=1} V(z1, eta1, conj z2, eta2) + (kappa4/4)(m1 m2)^2."""
    _check_pair(p.z1, p.eta1, p.z2, p.eta2)
    val = cov_v(p)
    if p.cls.beta == 1:
        z2b = complex(p.z2).conjugate()
        _check_pair(p.z1, p.eta1, z2b, p.eta2)
        val += cov_v_forms(p.z1, p.eta1, z2b, p.eta2)[1]
    y1, _ = imag_axis(p.z1, p.eta1)
    y2, _ = imag_axis(p.z2, p.eta2)
    return val + p.kappa4 / 4.0 * (y1 * y2) ** 2


def cov_v_matrix(z, eta) -> np.ndarray:
    """V(z_j, eta, z_k, eta) for all pairs of points (diagonal finite iff eta > 0)."""
    z = np.asarray(z, dtype=complex).reshape(-1)
    y, u = imag_axis(z, np.full(z.shape, float(eta)))
    _, alt = _v_terms(z[:, None], y[:, None], u[:, None], z[None, :], y[None, :], u[None, :])
    with np.errstate(divide="ignore"):
        return -0.25 * np.log(alt)


def cov_c_matrix(z, eta, cls: SymmetryClass, kappa4: float, w=None) -> np.ndarray:
    """C(z_j, eta, w_k, eta) for all pairs (w defaults to z)."""
    z = np.asarray(z, dtype=complex).reshape(-1)
    w = z if w is None else np.asarray(w, dtype=complex).reshape(-1)
    yz, uz = imag_axis(z, np.full(z.shape, float(eta)))
    yw, uw = imag_axis(w, np.full(w.shape, float(eta)))
    zc, yzc, uzc = z[:, None], yz[:, None], uz[:, None]
    _, alt = _v_terms(zc, yzc, uzc, w[None, :], yw[None, :], uw[None, :])
    with np.errstate(divide="ignore"):
        out = -0.25 * np.log(alt)
        if cls.beta == 1:
            _, alt2 = _v_terms(zc, yzc, uzc, np.conj(w)[None, :], yw[None, :], uw[None, :])
            out = out - 0.25 * np.log(alt2)
    return out + kappa4 / 4.0 * (yzc * yw[None, :]) ** 2


def expectation_correction(z: complex, eta: float, cls: SymmetryClass, kappa4: float) -> float:
    """E(z, eta) = -(kappa4/4) m^4 + 1_{beta=1}/4 * log[1 - u^2 + 2u^3|z|^2 - u^2(z^2 + conj z^2)].

    The real-case term enters with a plus sign: only then does the second
    moment E|det(X - z)|^2, which depends on second moments of the entries
    alone, come out identical for real and complex ensembles.
    """
    z = complex(z)
    y, u = imag_axis(z, eta)
    val = -kappa4 / 4.0 * y**4  # m^4 = y^4
    if cls.beta == 1:
        arg = 1.0 - u * u + 2.0 * u**3 * abs(z) ** 2 - 2.0 * u * u * (z * z).real
        if arg <= 0:
            raise LogDomainError("real-case correction undefined (z on the real axis with eta = 0?)")
        val += 0.25 * math.log(arg)
    return val


# ---------------------------------------------------------------------------
# limiting kernel

def kernel_k(z: complex, w: complex, cls: SymmetryClass, kappa4: float) -> float:
    """-1/2 log|z-w| - 1_{beta=1}/2 log|z - conj w| + (kappa4/4)(1-|z|^2)(1-|w|^2); 0 off the disc."""
    z, w = complex(z), complex(w)
    if abs(z) >= 1 or abs(w) >= 1:
        return 0.0
    if z == w or (cls.beta == 1 and z == w.conjugate()):
        raise CoincidentSingular("kernel is singular at this pair")
    val = -0.5 * math.log(abs(z - w))
    if cls.beta == 1:
        val -= 0.5 * math.log(abs(z - w.conjugate()))
    return val + kappa4 / 4.0 * (1 - abs(z) ** 2) * (1 - abs(w) ** 2)


def kernel_gram(points, cls: SymmetryClass, kappa4: float, radius: float | None = None) -> np.ndarray:
    """Gram matrix <mu_j, K mu_k> for uniform probability measures mu_j on discs.

    The point kernel is infinite on the diagonal, so each point z_j stands
    for the uniform measure on the disc D(z_j, r). For disjoint discs the
    mean-value property makes the off-diagonal log terms exact point values;
    the self-interaction of one disc is -1/2 (log r - 1/4). The kappa4 part
    is rank one with weights int (1 - |x|^2) d mu_j = 1 - |z_j|^2 - r^2/2.
    The default r is half the minimal pairwise distance (discs disjoint).
    """
    z = np.asarray(points, dtype=complex).reshape(-1)
    n = z.size
    d = np.abs(z[:, None] - z[None, :])
    iu = np.triu_indices(n, 1)
    dmin = float(np.min(d[iu])) if n > 1 else 1.0
    r = 0.5 * dmin if radius is None else float(radius)
    if r > 0.5 * dmin + 1e-15:
        raise ValueError("discs must be disjoint")
    if np.any(np.abs(z) + r >= 1):
        raise ValueError("discs must lie inside the unit disc")
    if cls.beta == 1 and np.any(z.imag - r <= 0):
        raise ValueError("real case needs discs in the upper half plane")
    with np.errstate(divide="ignore"):
        g = -0.5 * np.log(d)
    g[np.diag_indices(n)] = -0.5 * (math.log(r) - 0.25)
    if cls.beta == 1:
        g += -0.5 * np.log(np.abs(z[:, None] - np.conj(z)[None, :]))
    psi = 1.0 - np.abs(z) ** 2 - r * r / 2.0
    return g + kappa4 / 4.0 * np.outer(psi, psi)


# ---------------------------------------------------------------------------
# K-point formula

@dataclass(frozen=True)
class KPointQuery:
    n: int
    points: tuple[complex, ...]
    exponents: tuple[complex, ...]
    cls: SymmetryClass = SymmetryClass(2)
    kappa4: float = 0.0

    def __post_init__(self):
        pts = tuple(complex(p) for p in np.atleast_1d(self.points))
        exps = tuple(np.atleast_1d(self.exponents).tolist())
        if len(pts) < 1 or len(pts) != len(exps):
            raise ValueError("need K >= 1 points and as many exponents")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "exponents", exps)

    @property
    def k(self) -> int:
        return len(self.points)

    def separation(self) -> float:
        """min |z_i - z_j| * sqrt(N) (inf for K = 1)."""
        if self.k < 2:
            return math.inf
        p = np.array(self.points)
        d = np.abs(p[:, None] - p[None, :])
        return float(np.min(d[np.triu_indices(self.k, 1)])) * math.sqrt(self.n)

    def to_dict(self) -> dict:
        def enc(v):
            v = complex(v)
            return [v.real, v.imag]

        return {
            "n": self.n,
            "points": [enc(p) for p in self.points],
            "exponents": [enc(g) for g in self.exponents],
            "beta": self.cls.beta,
            "kappa4": self.kappa4,
        }


@dataclass
class Prediction:
    log_value: complex
    parts: dict[str, complex]
    flags: dict[str, float | bool] = field(default_factory=dict)

    @property
    def centered_log_value(self) -> complex:
        """Prediction for E exp(sum gamma_i Phi_N(z_i, 0)): the leading part removed."""
        return self.log_value - self.parts["leading"]


def _real_if_close(v: complex):
    v = complex(v)
    return v.real if v.imag == 0 else v


def kpoint_predict(q: KPointQuery) -> Prediction:
    """ln of the predicted E prod_i |det(X - z_i)|^{gamma_i}, itemized."""
    z = np.array(q.points, dtype=complex)
    g = np.array(q.exponents, dtype=complex)
    flags: dict[str, float | bool] = {
        "separation_sqrtN": q.separation(),
        "max_gamma": float(np.max(np.abs(g))),
        "reflected": False,
    }
    if q.cls.beta == 1:
        if np.any(z.imag == 0):
            raise RealAxisError("real case requires points off the real axis")
        if np.any(z.imag < 0):
            flags["reflected"] = True
            z = np.where(z.imag < 0, np.conj(z), z)
        flags["axis_distance_sqrtN"] = float(np.min(z.imag)) * math.sqrt(q.n)
    if q.k > 1:
        d = np.abs(z[:, None] - z[None, :])
        if np.any(d[np.triu_indices(q.k, 1)] == 0):
            raise CoincidentSingular("coincident points")
    if np.any(np.abs(z) >= 1):
        warnings.warn("points outside the unit disc: the formula is stated for the bulk")
    n, k4 = q.n, q.kappa4
    b = np.abs(z) ** 2 - 1.0
    parts = {
        "leading": complex(np.sum(g * n * b / 2.0)),
        "kappa4_single": complex(np.sum(-(2 * g - g * g) * k4 * b * b / 8.0)),
        "n_power": complex(np.sum(g * g / 8.0) * math.log(n)),
        "barnes": complex(np.sum(g / 4.0 * LOG_2PI - log_g(1.0 + g / 2.0))),
        "kappa4_pair": 0j,
        "pair_log": 0j,
        "real_correction": 0j,
    }
    for j in range(q.k):
        for l in range(j + 1, q.k):
            parts["kappa4_pair"] += k4 * g[j] * g[l] * b[j] * b[l] / 4.0
            parts["pair_log"] += -(g[j] * g[l] / 2.0) * math.log(abs(z[j] - z[l]))
    if q.cls.beta == 1:
        lz = np.log(np.abs(z[:, None] - np.conj(z)[None, :]) ** 2)
        parts["real_correction"] = complex(
            -np.sum(np.outer(g, g) * lz) / 8.0 + np.sum(g * np.diag(lz)) / 4.0
        )
    total = sum(parts.values())
    return Prediction(
        log_value=_real_if_close(total),
        parts={k: _real_if_close(v) for k, v in parts.items()},
        flags=flags,
    )


def bound_envelope(q: KPointQuery) -> float:
    """ln D = sum lambda_i^2/8 ln N + sum_{i != j} lambda_i lambda_j/8 [log |z_i - z_j|^{-2}]_+."""
    lam = np.real(np.array(q.exponents, dtype=complex))
    if np.any(lam < 0):
        raise ValueError("bound envelope needs real lambda_i >= 0")
    z = np.array(q.points, dtype=complex)
    val = float(np.sum(lam**2) / 8.0 * math.log(q.n))
    for i in range(q.k):
        for j in range(q.k):
            if i != j:
                val += lam[i] * lam[j] / 8.0 * max(-2.0 * math.log(abs(z[i] - z[j])), 0.0)
    return val
