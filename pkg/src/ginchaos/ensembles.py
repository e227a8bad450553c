"""Real and complex i.i.d. matrix ensembles with entries of variance 1/N."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .rng import stream, stream_id

__all__ = [
    "LawKind",
    "SymmetryClass",
    "EntryLaw",
    "EnsembleSpec",
    "MatrixDraw",
    "UnsupportedLaw",
    "real_fourth_moment",
    "kappa4_of_law",
    "sample_entries",
    "sample_matrix",
]


class UnsupportedLaw(ValueError):
    pass


class LawKind(str, Enum):
    GAUSSIAN = "gaussian"
    SYMMETRIC_BERNOULLI = "symmetric-bernoulli"
    UNIFORM = "uniform"
    TWO_POINT = "two-point"


@dataclass(frozen=True)
class SymmetryClass:
    """beta = 1 for real entries, beta = 2 for complex entries."""

    beta: int

    def __post_init__(self):
        if self.beta not in (1, 2):
            raise ValueError(f"beta must be 1 or 2, got {self.beta}")


REAL = SymmetryClass(1)
COMPLEX = SymmetryClass(2)


@dataclass(frozen=True)
class EntryLaw:
    """Law of the real building block of an entry, normalized to mean 0 and variance 1.

    ``two-point`` takes one parameter p in (0, 1): the value sqrt((1-p)/p)
    with probability p and -sqrt(p/(1-p)) otherwise.
    """

    kind: LawKind
    parameters: tuple[float, ...] = ()

    def __post_init__(self):
        try:
            kind = LawKind(self.kind)
        except ValueError as exc:
            raise UnsupportedLaw(f"unsupported law {self.kind!r}") from exc
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "parameters", tuple(float(p) for p in self.parameters))
        if kind is LawKind.TWO_POINT:
            if len(self.parameters) != 1 or not 0.0 < self.parameters[0] < 1.0:
                raise UnsupportedLaw("two-point law needs one parameter p in (0, 1)")
        elif self.parameters:
            raise UnsupportedLaw(f"{kind.value} law takes no parameters")


def real_fourth_moment(law: EntryLaw) -> float:
    """E a^4 for the unit-variance real building block."""
    if law.kind is LawKind.GAUSSIAN:
        return 3.0
    if law.kind is LawKind.SYMMETRIC_BERNOULLI:
        return 1.0
    if law.kind is LawKind.UNIFORM:
        return 9.0 / 5.0
    if law.kind is LawKind.TWO_POINT:
        p = law.parameters[0]
        return (1.0 - p) ** 2 / p + p**2 / (1.0 - p)
    raise UnsupportedLaw(str(law.kind))


def kappa4_of_law(law: EntryLaw, cls: SymmetryClass) -> float:
    """E|chi|^4 - (4 - beta) for the normalized entry chi.

    For beta = 2, chi = (a + ib)/sqrt(2) with a, b i.i.d. copies of the
    real law, so E|chi|^4 = (E a^4 + 1)/2.
    """
    m4 = real_fourth_moment(law)
    if cls.beta == 1:
        return m4 - 3.0
    return 0.5 * (m4 + 1.0) - 2.0


@dataclass(frozen=True)
class EnsembleSpec:
    cls: SymmetryClass
    law: EntryLaw
    n: int
    kappa4: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        exact = kappa4_of_law(self.law, self.cls)
        if self.kappa4 is None:
            object.__setattr__(self, "kappa4", exact)
        elif not math.isclose(self.kappa4, exact, rel_tol=0.0, abs_tol=1e-12):
            raise ValueError(f"kappa4={self.kappa4} inconsistent with law (expected {exact})")
        if self.kappa4 < -4.0 / self.cls.beta:
            raise ValueError("kappa4 below -4/beta")

    @property
    def beta(self) -> int:
        return self.cls.beta

    @classmethod
    def make(cls, beta: int, law: str = "gaussian", n: int = 2, parameters=()) -> EnsembleSpec:
        return cls(SymmetryClass(beta), EntryLaw(LawKind(law), tuple(parameters)), n)

    def to_dict(self) -> dict:
        return {
            "beta": self.cls.beta,
            "law": self.law.kind.value,
            "parameters": list(self.law.parameters),
            "n": int(self.n),
            "kappa4": self.kappa4,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EnsembleSpec:
        spec = cls.make(d["beta"], d.get("law", "gaussian"), d["n"], d.get("parameters", ()))
        if "kappa4" in d and d["kappa4"] is not None:
            cls(spec.cls, spec.law, spec.n, d["kappa4"])
        return spec


@dataclass(frozen=True)
class MatrixDraw:
    entries: np.ndarray
    seed: tuple[int, ...]


def _real_block(law: EntryLaw, rng: np.random.Generator, shape) -> np.ndarray:
    if law.kind is LawKind.GAUSSIAN:
        return rng.standard_normal(shape)
    if law.kind is LawKind.SYMMETRIC_BERNOULLI:
        return 2.0 * rng.integers(0, 2, size=shape).astype(float) - 1.0
    if law.kind is LawKind.UNIFORM:
        s3 = math.sqrt(3.0)
        return rng.uniform(-s3, s3, size=shape)
    if law.kind is LawKind.TWO_POINT:
        p = law.parameters[0]
        hi, lo = math.sqrt((1.0 - p) / p), -math.sqrt(p / (1.0 - p))
        return np.where(rng.random(shape) < p, hi, lo)
    raise UnsupportedLaw(str(law.kind))


def sample_entries(law: EntryLaw, cls: SymmetryClass, rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance entries chi of the given law and class."""
    a = _real_block(law, rng, shape)
    if cls.beta == 1:
        return a
    b = _real_block(law, rng, shape)
    return (a + 1j * b) / math.sqrt(2.0)


def sample_matrix(spec: EnsembleSpec, seed) -> MatrixDraw:
    """Draw X with X_ab = chi_ab / sqrt(N); deterministic in (spec, seed).

    ``seed`` is an int or a key tuple (master_seed, index, ...).
    """
    if spec.n < 2:
        raise ValueError("sample_matrix needs n >= 2")
    keys = (seed,) if isinstance(seed, (int, np.integer)) else tuple(seed)
    rng = stream(*keys)
    chi = sample_entries(spec.law, spec.cls, rng, (spec.n, spec.n))
    return MatrixDraw(entries=chi / math.sqrt(spec.n), seed=stream_id(*keys))
