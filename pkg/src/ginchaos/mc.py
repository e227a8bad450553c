"""Monte Carlo estimation of fractional joint moments and field statistics."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .ensembles import EnsembleSpec, EntryLaw, LawKind, sample_matrix
from .mde import centering_integral
from .predict import KPointQuery
from .spectral import (
    SingularDeterminant,
    hermitize_singular_values,
    log_abs_det,
    log_abs_det_from_eigenvalues,
    phi_n,
)

__all__ = [
    "MomentEstimate",
    "Region",
    "FieldScan",
    "CltReport",
    "pairwise_logsumexp",
    "log_mean_estimate",
    "map_indexed",
    "sample_phi",
    "estimate_kpoint",
    "estimate_from_phi",
    "scan_field",
    "thick_points",
    "free_energy",
    "free_energy_prediction",
    "clt_test",
]

MIN_EFFECTIVE = 8
ESS_FRACTION = 0.01


# ---------------------------------------------------------------------------
# reproducible execution and reductions

def _default_workers() -> int:
    env = os.environ.get("GINCHAOS_WORKERS")
    return max(1, int(env)) if env else 1


def map_indexed(task: Callable[[int], object], count: int, workers: int | None = None, chunk: int = 64,
                progress: Callable[[int, int], None] | None = None) -> list:
    """[task(i) for i in range(count)], optionally across processes.

    Results are always returned in index order; task(i) must depend only
    on i (per-sample random streams), so the output is independent of the
    worker count.
    """
    workers = _default_workers() if workers is None else max(1, int(workers))
    out: list = [None] * count
    batches = [range(s, min(s + chunk, count)) for s in range(0, count, chunk)]
    if workers == 1:
        for b in batches:
            for i in b:
                out[i] = task(i)
            if progress:
                progress(b.stop, count)
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [(b, pool.submit(_run_batch, task, b)) for b in batches]
        for b, fut in futures:
            for i, v in zip(b, fut.result()):
                out[i] = v
            if progress:
                progress(b.stop, count)
    return out


def _run_batch(task, idx: range) -> list:
    return [task(i) for i in idx]


def pairwise_logsumexp(a) -> float:
    """log sum exp(a) by a fixed binary tree over the index order."""
    v = np.asarray(a, dtype=float).ravel()
    v = v[~np.isnan(v)]
    if v.size == 0:
        return -math.inf
    while v.size > 1:
        if v.size % 2:
            v = np.append(v, -np.inf)
        v = np.logaddexp(v[0::2], v[1::2])
    return float(v[0])


def log_mean_estimate(logw) -> tuple[float, float, float]:
    """(ln mean w, delta-method std error of ln mean, ess) from log-weights."""
    lw = np.asarray(logw, dtype=float)
    lw = lw[~np.isnan(lw)]
    s = lw.size
    if s == 0:
        return math.nan, math.nan, 0.0
    lm = pairwise_logsumexp(lw) - math.log(s)
    w = np.exp(lw - lw.max())
    mean = w.mean()
    se = float(np.std(w, ddof=1) / math.sqrt(s) / mean) if s > 1 else math.inf
    ess = float(w.sum() ** 2 / np.sum(w * w))
    return lm, se, ess


# ---------------------------------------------------------------------------
# K-point moments

@dataclass
class MomentEstimate:
    query: KPointQuery
    samples: int
    log_mean: float
    std_error: float
    ess: float
    eta: tuple[float, ...]
    rejected: int = 0
    flagged: bool = False
    law: str = "gaussian"

    def to_dict(self) -> dict:
        return {
            "query": self.query.to_dict(),
            "samples": self.samples,
            "log_mean": self.log_mean,
            "std_error": self.std_error,
            "ess": self.ess,
            "eta": list(self.eta),
            "rejected": self.rejected,
            "flagged": self.flagged,
            "law": self.law,
        }


class _PhiTask:
    """Picklable per-draw evaluation of Phi_N at all points of a query."""

    def __init__(self, spec: EnsembleSpec, points, etas, seed: int):
        self.spec = spec
        self.points = tuple(complex(p) for p in points)
        self.etas = tuple(float(e) for e in etas)
        self.seed = int(seed)
        self.cent = tuple(centering_integral(p, e) for p, e in zip(self.points, self.etas))

    def __call__(self, i: int) -> np.ndarray:
        x = sample_matrix(self.spec, (self.seed, i))
        out = np.empty(len(self.points))
        n = self.spec.n
        for k, (p, e, c) in enumerate(zip(self.points, self.etas, self.cent)):
            try:
                if e == 0.0:
                    out[k] = log_abs_det(x, p) - 0.5 * n * c.integral
                else:
                    out[k] = phi_n(hermitize_singular_values(x, p), e, c).value
            except SingularDeterminant:
                out[k] = math.nan
        return out


def sample_phi(spec: EnsembleSpec, points, eta, samples: int, seed: int, workers: int | None = None,
               progress=None) -> np.ndarray:
    """Array (samples, K) of Phi_N(z_k, eta_k) over independent draws (NaN marks a rejected draw).

    At eta = 0 the log-determinant comes from an LU factorization, which
    equals the singular-value sum but costs a fraction of an SVD.
    """
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    etas = np.broadcast_to(np.asarray(eta, dtype=float), pts.shape)
    task = _PhiTask(spec, pts, etas, seed)
    rows = map_indexed(task, samples, workers, progress=progress)
    return np.vstack(rows) if rows else np.empty((0, pts.size))


def estimate_from_phi(q: KPointQuery, phi: np.ndarray, eta, law: str = "gaussian") -> MomentEstimate:
    g = np.real(np.asarray(q.exponents, dtype=complex))
    bad = np.any(np.isnan(phi), axis=1)
    logw = phi[~bad] @ g
    if np.all(g == 0):
        lm, se, ess = 0.0, 0.0, float(logw.size)
    else:
        lm, se, ess = log_mean_estimate(logw)
    s = phi.shape[0]
    flagged = ess < max(MIN_EFFECTIVE, ESS_FRACTION * s)
    etas = tuple(np.broadcast_to(np.asarray(eta, dtype=float), (q.k,)).tolist())
    return MomentEstimate(q, s, lm, se, ess, etas, int(bad.sum()), bool(flagged), law)


def estimate_kpoint(q: KPointQuery, eta, samples: int, seed: int, law: EntryLaw | str = "gaussian",
                    workers: int | None = None, progress=None) -> MomentEstimate:
    """Plain MC estimate of ln E exp(sum_i gamma_i Phi_N(z_i, eta)).

    One matrix draw serves all K points. Draws with an exactly singular
    X - z at eta = 0 are rejected and counted.
    """
    g = np.asarray(q.exponents, dtype=complex)
    if np.any(g.imag != 0) or np.any(g.real < 0):
        raise ValueError("MC supports real exponents gamma_i >= 0")
    if not isinstance(law, EntryLaw):
        law = EntryLaw(LawKind(law))
    spec = EnsembleSpec(q.cls, law, q.n)
    if abs(spec.kappa4 - q.kappa4) > 1e-12:
        raise ValueError(f"query kappa4={q.kappa4} does not match the law ({spec.kappa4})")
    phi = sample_phi(spec, q.points, eta, samples, seed, workers, progress)
    return estimate_from_phi(q, phi, eta, law.kind.value)


# ---------------------------------------------------------------------------
# field scans

def _disc_rect_area(r: float, x0: float, x1: float, y0: float, y1: float) -> float:
    """Exact area of {x^2 + y^2 <= r^2} within [x0, x1] x [y0, y1]."""
    x0, x1 = max(x0, -r), min(x1, r)
    if x1 <= x0 or y1 <= y0:
        return 0.0

    def prim(x):  # antiderivative of sqrt(r^2 - x^2)
        x = min(max(x, -r), r)
        s = math.sqrt((r - x) * (r + x))  # factored: no cancellation near |x| = r
        return 0.5 * (x * s + r * r * math.atan2(x, s))

    cuts = {x0, x1}
    for y in (y0, y1):
        if abs(y) < r:
            xc = math.sqrt((r - y) * (r + y))
            cuts.update(c for c in (-xc, xc) if x0 < c < x1)
    cuts = sorted(cuts)
    area = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        xm = 0.5 * (a + b)
        s = math.sqrt(max((r - xm) * (r + xm), 0.0))
        top_is_circle = s <= y1
        bot_is_circle = -s >= y0
        top = (prim(b) - prim(a)) if top_is_circle else y1 * (b - a)
        bot = -(prim(b) - prim(a)) if bot_is_circle else y0 * (b - a)
        if (s if top_is_circle else y1) > (-s if bot_is_circle else y0):
            area += top - bot
    return area


@dataclass(frozen=True)
class Region:
    """The disc |z| < r, or its real-case version {|z| < r, Im z > 1 - r}."""

    kind: str = "disc"
    radius: float = 0.5

    def __post_init__(self):
        if self.kind not in ("disc", "half-disc"):
            raise ValueError("region kind must be 'disc' or 'half-disc'")
        if not 0 < self.radius <= 0.95:
            raise ValueError("region radius must be in (0, 0.95]")

    @property
    def floor(self) -> float:
        return 1.0 - self.radius if self.kind == "half-disc" else -math.inf

    def area(self) -> float:
        r = self.radius
        if self.kind == "disc":
            return math.pi * r * r
        return _disc_rect_area(r, -r, r, self.floor, r)

    def cells(self, resolution: int) -> tuple[np.ndarray, np.ndarray, float]:
        """Cell centers, clipped cell areas and spacing of a square lattice."""
        r = self.radius
        h = 2.0 * r / resolution
        c = -r + h * (np.arange(resolution) + 0.5)
        pts, areas = [], []
        for x in c:
            for y in c:
                lo = max(y - h / 2, self.floor)
                a = _disc_rect_area(r, x - h / 2, x + h / 2, lo, y + h / 2)
                if a > 1e-14 * h * h:
                    # cells cut by the floor are centered on their clipped part
                    pts.append(complex(x, 0.5 * (lo + y + h / 2)))
                    areas.append(a)
        return np.array(pts), np.array(areas), h


@dataclass
class FieldScan:
    region: Region
    n: int
    points: np.ndarray
    cell_area: np.ndarray
    spacing: float
    values: np.ndarray  # (draws, points)

    @property
    def draws(self) -> int:
        return self.values.shape[0]


class _ScanTask:
    def __init__(self, spec, points, seed, method):
        self.spec, self.points, self.seed, self.method = spec, points, int(seed), method
        self.shift = 0.5 * spec.n * np.maximum(1.0 - np.abs(points) ** 2, 0.0)

    def __call__(self, i: int) -> np.ndarray:
        x = sample_matrix(self.spec, (self.seed, i))
        if self.method == "eig":
            ev = np.linalg.eigvals(x.entries)
            ld = log_abs_det_from_eigenvalues(ev, self.points)
        else:
            ld = np.empty(self.points.size)
            for k, p in enumerate(self.points):
                sv = hermitize_singular_values(x, p).sigma
                ld[k] = np.sum(np.log(sv)) if sv[0] > 0 else -math.inf
        return ld + self.shift


def scan_field(spec: EnsembleSpec, region: Region, resolution: int, draws: int, seed: int,
               method: str = "eig", workers: int | None = None, progress=None) -> FieldScan:
    """Phi_N(z) = log|det(X - z)| + N(1 - |z|^2)_+/2 on a lattice over the region.

    ``method="svd"`` takes one SVD per (draw, point). The default ``"eig"``
    diagonalizes each draw once and sums log|sigma_i - z| over its
    eigenvalues, which is the same quantity at O(N) cost per point.
    """
    if method not in ("eig", "svd"):
        raise ValueError("method must be 'eig' or 'svd'")
    pts, areas, h = region.cells(resolution)
    task = _ScanTask(spec, pts, seed, method)
    rows = map_indexed(task, draws, workers, chunk=4, progress=progress)
    return FieldScan(region, spec.n, pts, areas, h, np.vstack(rows))


def thick_points(scan: FieldScan, nu: float) -> float:
    """Mean area of {Phi_N >= nu log N} (cell counting, averaged over draws)."""
    if not 0 <= nu < 1 / math.sqrt(2):
        raise ValueError("nu must be in [0, 1/sqrt(2))")
    thr = nu * math.log(scan.n)
    return float(np.mean((scan.values >= thr) @ scan.cell_area))


def free_energy(scan: FieldScan, gamma: float, per_draw: bool = False):
    """log(N int_K e^{gamma Phi_N}) / (gamma log N), averaged over draws."""
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    la = np.log(scan.cell_area)
    vals = np.array([pairwise_logsumexp(gamma * row + la) for row in scan.values])
    fe = (math.log(scan.n) + vals) / (gamma * math.log(scan.n))
    return fe if per_draw else float(np.mean(fe))


def free_energy_prediction(gamma: float) -> float:
    """1/gamma + gamma/8 below 2 sqrt 2, and 1/sqrt 2 above."""
    return 1.0 / gamma + gamma / 8.0 if gamma <= 2.0 * math.sqrt(2.0) else 1.0 / math.sqrt(2.0)


# ---------------------------------------------------------------------------
# central limit theorem

@dataclass
class CltReport:
    points: np.ndarray
    n: int
    draws: int
    sample_cov: np.ndarray
    predicted_cov: np.ndarray
    skewness: np.ndarray
    excess_kurtosis: np.ndarray
    separation_exponent: float
    psi: np.ndarray = field(repr=False)

    def sample_corr(self) -> np.ndarray:
        d = np.sqrt(np.diag(self.sample_cov))
        return self.sample_cov / np.outer(d, d)

    def predicted_corr(self) -> np.ndarray:
        d = np.sqrt(np.diag(self.predicted_cov))
        return self.predicted_cov / np.outer(d, d)


def clt_test(spec: EnsembleSpec, points: Sequence[complex], draws: int, seed: int,
             workers: int | None = None, progress=None) -> CltReport:
    """Sample covariance of Psi_N(z) = (log|det(X - z)| - N(|z|^2 - 1)/2)/sqrt(log N)."""
    if draws < 32:
        raise ValueError("clt_test needs at least 32 draws")
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    n = spec.n
    ln = math.log(n)
    phi = sample_phi(spec, pts, 0.0, draws, seed, workers, progress)
    phi = phi[~np.any(np.isnan(phi), axis=1)]
    psi = phi / math.sqrt(ln)
    cov = np.atleast_2d(np.cov(psi, rowvar=False))
    cov = 0.5 * (cov + cov.T)
    d2 = np.abs(pts[:, None] - pts[None, :]) ** 2
    pred = -0.25 * np.log(d2 + 1.0 / n) / ln
    if pts.size > 1:
        dmin = float(np.min(np.sqrt(d2)[np.triu_indices(pts.size, 1)]))
        b = math.log(dmin) / ln + 0.5
    else:
        b = math.inf
    return CltReport(pts, n, psi.shape[0], cov, pred, stats.skew(psi, axis=0),
                     stats.kurtosis(psi, axis=0), b, psi)
