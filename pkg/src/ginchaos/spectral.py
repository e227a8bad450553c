"""Hermitization: singular values of X - z, the regularized log-determinant and
the empirical Stieltjes transform on the imaginary axis."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .ensembles import MatrixDraw
from .mde import MdeCenterings, MdeSolution

__all__ = [
    "SpectralSample",
    "RegularizedLogDet",
    "SingularDeterminant",
    "CenteringMismatch",
    "hermitize_singular_values",
    "hermitization",
    "phi_n",
    "phi_from_logdet",
    "log_abs_det",
    "log_abs_det_from_eigenvalues",
    "empirical_stieltjes",
    "resolvent_deviation",
]

SINGULAR_RTOL = 1e-13


class SingularDeterminant(ArithmeticError):
    pass


class CenteringMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SpectralSample:
    z: complex
    n: int
    sigma: np.ndarray  # ascending singular values of X - z


@dataclass(frozen=True)
class RegularizedLogDet:
    z: complex
    eta: float
    value: float


def _entries(X) -> np.ndarray:
    return X.entries if isinstance(X, MatrixDraw) else np.asarray(X)


def _shifted(X, z: complex) -> np.ndarray:
    a = _entries(X)
    if z != 0 or np.iscomplexobj(a):
        a = a.astype(complex if (np.iscomplexobj(a) or complex(z).imag != 0) else float, copy=True)
    else:
        a = a.copy()
    a[np.diag_indices_from(a)] -= z if np.iscomplexobj(a) else complex(z).real
    return a


def hermitize_singular_values(X, z: complex) -> SpectralSample:
    """Singular values of X - z (the nonnegative half of the Hermitization spectrum)."""
    z = complex(z)
    a = _shifted(X, z)
    sv = sla.svdvals(a, check_finite=False)
    return SpectralSample(z=z, n=a.shape[0], sigma=np.sort(sv))


def hermitization(X, z: complex) -> np.ndarray:
    """The 2N x 2N block matrix [[0, X - z], [(X - z)^*, 0]] (small-N test path)."""
    a = _shifted(X, complex(z))
    n = a.shape[0]
    h = np.zeros((2 * n, 2 * n), dtype=complex)
    h[:n, n:] = a
    h[n:, :n] = a.conj().T
    return h


def phi_n(sample: SpectralSample, eta: float, centering: MdeCenterings) -> RegularizedLogDet:
    """(1/2) sum log(lambda_i^2 + eta^2) - (N/2) * int log(x^2 + eta^2) rho^z."""
    eta = float(eta)
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if not centering.matches(sample.z, eta):
        raise CenteringMismatch(
            f"centering at (z={centering.z}, eta={centering.eta}) used for (z={sample.z}, eta={eta})"
        )
    sig = sample.sigma
    if eta == 0.0:
        if sig[0] <= SINGULAR_RTOL * sig[-1]:
            raise SingularDeterminant("numerically zero singular value at eta = 0")
        random_part = float(np.sum(np.log(sig)))
    else:
        random_part = 0.5 * float(np.sum(np.log(sig * sig + eta * eta)))
    return RegularizedLogDet(sample.z, eta, random_part - 0.5 * sample.n * centering.integral)


def phi_from_logdet(logdet: float, n: int, centering: MdeCenterings) -> float:
    """Phi_N(z, 0) from a precomputed log|det(X - z)|."""
    if centering.eta != 0.0:
        raise CenteringMismatch("log-determinant route is only valid at eta = 0")
    return logdet - 0.5 * n * centering.integral


def log_abs_det(X, z: complex) -> float:
    """log|det(X - z)| via LU; raises SingularDeterminant on an exactly singular pivot."""
    a = _shifted(X, complex(z))
    with warnings.catch_warnings():
        # an exactly singular pivot is reported below as SingularDeterminant
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, _ = sla.lu_factor(a, check_finite=False)
    d = np.abs(np.diag(lu))
    if np.any(d == 0) or not np.all(np.isfinite(d)):
        raise SingularDeterminant("singular X - z")
    return float(np.sum(np.log(d)))


def log_abs_det_from_eigenvalues(eigs: np.ndarray, z) -> np.ndarray:
    """sum_i log|sigma_i - z| for each z, given the eigenvalues sigma_i of X."""
    z = np.asarray(z, dtype=complex)
    flat = z.reshape(-1)
    out = np.empty(flat.shape)
    chunk = max(1, 2_000_000 // max(len(eigs), 1))
    for s in range(0, flat.size, chunk):
        block = flat[s : s + chunk]
        out[s : s + chunk] = np.sum(np.log(np.abs(block[:, None] - eigs[None, :])), axis=1)
    return out.reshape(z.shape)


def empirical_stieltjes(sample: SpectralSample, eta: float) -> complex:
    """m_N^z(i eta) = i (1/N) sum eta/(lambda_i^2 + eta^2)."""
    if eta <= 0:
        raise ValueError("nonpositive eta")
    s = sample.sigma
    return complex(0.0, float(np.mean(eta / (s * s + eta * eta))))


def resolvent_deviation(sample: SpectralSample, mde: MdeSolution, eta: float) -> float:
    """|m_N^z(i eta) - m^z(i eta)|."""
    if abs(mde.w - complex(0.0, eta)) > 1e-15 * max(1.0, eta) or mde.z != sample.z:
        raise CenteringMismatch("MDE solution computed at a different (z, eta)")
    return abs(empirical_stieltjes(sample, eta) - mde.m)
