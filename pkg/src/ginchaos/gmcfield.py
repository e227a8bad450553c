"""Log-correlated Gaussian field with the kernel of the log-determinant and
its mollified multiplicative chaos.

The field psi carries the full-log normalization, Cov(psi(z), psi(w)) ~
-log|z - w|, so psi = sqrt(2) Phi where Phi is the centered log-determinant.
The chaos parameter gamma is that of |det(X - z)|^gamma, so cell masses are
exp(gamma psi / sqrt(2) - gamma^2 Var(psi) / 4) times the cell area and the
subcritical range is 0 < gamma < 2 sqrt(2).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .ensembles import SymmetryClass
from .mc import Region
from .predict import cov_c_matrix
from .rng import stream

__all__ = [
    "GAMMA_CRITICAL",
    "FieldGrid",
    "Factorization",
    "GmcSample",
    "ClipMassError",
    "KernelRangeError",
    "SupercriticalWarning",
    "regularized_covariance",
    "sample_field",
    "sample_fields",
    "real_field_from_complex",
    "chaos_measure",
    "total_masses",
    "boundary_distance",
    "boundary_mass",
    "fit_boundary_constant",
]

GAMMA_CRITICAL = 2.0 * math.sqrt(2.0)


class ClipMassError(ValueError):
    """Negative eigenvalues too large to be rounding: grid too coarse for epsilon."""


class KernelRangeError(ValueError):
    pass


class SupercriticalWarning(UserWarning):
    pass


@dataclass
class FieldGrid:
    """Square lattice on a disc (beta = 2) or the real-case half-disc (beta = 1).

    Spacing defaults to epsilon / 2 so that the diagonal log-divergence is
    resolved; a coarser spacing is refused.
    """

    region: Region
    epsilon: float
    cls: SymmetryClass = field(default_factory=lambda: SymmetryClass(2))
    kappa4: float = 0.0
    spacing: float | None = None
    points: np.ndarray = field(init=False, repr=False)
    cell_area: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 1e-6 <= self.epsilon**2 <= 1e-1:
            raise ValueError("epsilon^2 must be in [1e-6, 1e-1]")
        if self.kappa4 < -4.0 / self.cls.beta:
            raise KernelRangeError("kappa4 < -4/beta: kernel is not positive definite")
        if self.cls.beta == 1 and self.region.kind != "half-disc":
            raise ValueError("the real case lives on the half-disc region")
        h_max = self.epsilon / 2.0
        h = h_max if self.spacing is None else self.spacing
        if h > h_max * (1 + 1e-12):
            raise ValueError("spacing must be <= epsilon/2")
        res = int(math.ceil(2.0 * self.region.radius / h - 1e-9))
        self.points, self.cell_area, self.spacing = self.region.cells(res)
        if self.points.size == 0:
            raise ValueError("empty region")

    @property
    def size(self) -> int:
        return int(self.points.size)

    def to_dict(self) -> dict:
        return {
            "region": {"kind": self.region.kind, "radius": self.region.radius},
            "epsilon": self.epsilon,
            "beta": self.cls.beta,
            "kappa4": self.kappa4,
            "spacing": self.spacing,
            "cells": self.size,
        }


@dataclass
class Factorization:
    grid: FieldGrid
    covariance: np.ndarray = field(repr=False)
    root: np.ndarray = field(repr=False)  # symmetric square root
    clip_mass: float

    @property
    def variance(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.root, self.root)


@dataclass
class GmcSample:
    field: np.ndarray
    masses: np.ndarray
    gamma: float

    @property
    def total(self) -> float:
        return float(np.sum(self.masses))

    def to_csv(self, path, points) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["re", "im", "field", "mass"])
            for p, f, m in zip(points, self.field, self.masses):
                w.writerow([repr(float(p.real)), repr(float(p.imag)), repr(float(f)), repr(float(m))])


def regularized_covariance(grid: FieldGrid, clip_tol: float = 1e-6) -> Factorization:
    """C_jk = 2 C(z_j, eps^2, z_k, eps^2), clipped to its PSD part.

    The discarded negative spectrum is reported as ``clip_mass``; if it
    exceeds ``clip_tol`` times the trace the grid is too coarse for epsilon.
    """
    c = 2.0 * cov_c_matrix(grid.points, grid.epsilon**2, grid.cls, grid.kappa4)
    c = 0.5 * (c + c.T)
    lam, vec = np.linalg.eigh(c)
    neg = lam < 0
    clip = max(0.0, float(-np.sum(lam[neg])))
    if clip > clip_tol * float(np.trace(c)):
        raise ClipMassError(f"clip mass {clip:.3e} exceeds {clip_tol:g} * trace")
    lam = np.where(neg, 0.0, lam)
    root = (vec * np.sqrt(lam)) @ vec.T
    return Factorization(grid, c, root, clip)


def sample_field(fact: Factorization, seed, xi: np.ndarray | None = None) -> np.ndarray:
    """One mean-zero Gaussian draw with the factored covariance.

    Supplying ``xi`` (standard normals) couples draws across factorizations
    of the same grid.
    """
    if xi is None:
        keys = (seed,) if isinstance(seed, (int, np.integer)) else tuple(seed)
        xi = stream(*keys).standard_normal(fact.grid.size)
    return fact.root @ np.asarray(xi, dtype=float)


def sample_fields(fact: Factorization, draws: int, seed: int, xi: np.ndarray | None = None) -> np.ndarray:
    """(draws, P) array; draw d uses the stream (seed, d) unless ``xi`` is given."""
    if xi is None:
        xi = np.stack([stream(seed, d).standard_normal(fact.grid.size) for d in range(draws)])
    return np.asarray(xi) @ fact.root.T


def real_field_from_complex(grid: FieldGrid, draws: int, seed: int) -> np.ndarray:
    """Real-case field as (psi2(z) + psi2(conj z))/sqrt(2), psi2 a complex-case
    field with kappa4/2 sampled jointly at the points and their mirror images."""
    if grid.cls.beta != 1:
        raise ValueError("grid must be real-case")
    z = grid.points
    both = np.concatenate([z, np.conj(z)])
    c = 2.0 * cov_c_matrix(both, grid.epsilon**2, SymmetryClass(2), grid.kappa4 / 2.0)
    lam, vec = np.linalg.eigh(0.5 * (c + c.T))
    root = (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.T
    xi = np.stack([stream(seed, d).standard_normal(both.size) for d in range(draws)])
    f = xi @ root.T
    p = z.size
    return (f[:, :p] + f[:, p:]) / math.sqrt(2.0)


def chaos_measure(fact: Factorization, psi: np.ndarray, gamma: float) -> GmcSample:
    """Normalized cell masses exp(gamma psi/sqrt 2 - gamma^2 Var psi / 4) |cell|."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if gamma >= GAMMA_CRITICAL:
        warnings.warn("gamma >= 2 sqrt(2): supercritical regime", SupercriticalWarning, stacklevel=2)
    psi = np.asarray(psi, dtype=float)
    if gamma == 0:
        return GmcSample(psi, fact.grid.cell_area.copy(), 0.0)
    var = fact.variance
    w = np.exp(gamma / math.sqrt(2.0) * psi - gamma * gamma / 4.0 * var)
    return GmcSample(psi, w * fact.grid.cell_area, float(gamma))


def total_masses(fact: Factorization, fields: np.ndarray, gamma: float) -> np.ndarray:
    """Total chaos mass for each row of ``fields``."""
    var = fact.variance
    w = np.exp(gamma / math.sqrt(2.0) * np.asarray(fields) - gamma * gamma / 4.0 * var)
    return w @ fact.grid.cell_area


def boundary_distance(grid: FieldGrid) -> np.ndarray:
    d = grid.region.radius - np.abs(grid.points)
    if grid.region.kind == "half-disc":
        d = np.minimum(d, grid.points.imag - grid.region.floor)
    return d


def boundary_mass(grid: FieldGrid, masses: np.ndarray, delta: float) -> np.ndarray:
    """Mass of the cells whose centers lie within delta of the boundary (per row)."""
    sel = boundary_distance(grid) < delta
    return np.asarray(masses)[..., sel].sum(axis=-1)


def fit_boundary_constant(grid: FieldGrid, masses: np.ndarray, deltas) -> tuple[float, np.ndarray]:
    """Least-squares C in E[mass within delta of the boundary] ~ C delta (through 0)."""
    deltas = np.asarray(deltas, dtype=float)
    means = np.array([float(np.mean(boundary_mass(grid, masses, d))) for d in deltas])
    return float(np.dot(deltas, means) / np.dot(deltas, deltas)), means
