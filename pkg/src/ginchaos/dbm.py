"""Dyson Brownian motion for singular values and the local factor of the
log-determinant Laplace transform at z = 0."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ensembles import COMPLEX, REAL, EnsembleSpec, EntryLaw, LawKind, MatrixDraw, sample_entries, sample_matrix
from .mc import log_mean_estimate, map_indexed
from .rng import stream, stream_id
from .special import log_g_constant

__all__ = [
    "DbmConfig",
    "DbmPath",
    "LocalVariables",
    "LocalFactorResult",
    "StepCollision",
    "MissingNoise",
    "evolve_matrix",
    "reference_flow",
    "matrix_flow",
    "local_variables",
    "local_factor",
    "local_factor_prediction",
    "local_path",
]

RHO0 = 1.0 / math.pi  # rho^0(0)


class StepCollision(RuntimeError):
    pass


class MissingNoise(ValueError):
    pass


@dataclass(frozen=True)
class DbmConfig:
    """Scales of the local analysis at z = 0.

    eta_m < 1/N < eta_star < t1 < 1, ell1 < n_b < n. The exponents are free
    knobs subject only to these orderings.
    """

    n: int
    t1: float
    eta_star: float
    eta_m: float
    ell1: int
    n_b: int  # N^b, the index window of the first local variable
    steps: int = 200
    a1: float = 1e3
    omega1: float = math.nan
    b_frak: float = math.nan

    def __post_init__(self):
        n = self.n
        if not (0 < self.eta_m < 1.0 / n < self.eta_star < self.t1 < 1.0):
            raise ValueError("need eta_m < 1/N < eta_star < t1 < 1")
        if not (1 < self.ell1 < n) or not (1 < self.n_b <= n):
            raise ValueError("need 1 < ell1 < n and 1 < n_b <= n")
        if self.steps < 2:
            raise ValueError("steps must be >= 2")

    @classmethod
    def from_exponents(cls, n: int, omega1: float = 0.2, q1: float = 0.5, b_frak: float = 0.6,
                       delta_m: float = 0.5, c_star: float | None = None, steps: int = 200,
                       a1: float = 1e3) -> DbmConfig:
        """t1 = N^(omega1-1), ell1 = N^q1, n_b = N^b, eta_m = N^(-1-delta_m),
        eta_star = (log N)^C* / N.

        By default C* puts eta_star at the geometric mean of 1/N and t1.
        """
        if not (0 < omega1 < q1 < b_frak < 1):
            raise ValueError("need 0 < omega1 < q1 < b < 1")
        if c_star is None:
            c_star = 0.5 * omega1 * math.log(n) / math.log(math.log(n))
        return cls(
            n=n,
            t1=n ** (omega1 - 1.0),
            eta_star=math.log(n) ** c_star / n,
            eta_m=n ** (-1.0 - delta_m),
            ell1=int(round(n**q1)),
            n_b=int(round(n**b_frak)),
            steps=steps,
            a1=a1,
            omega1=omega1,
            b_frak=b_frak,
        )

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class DbmPath:
    times: np.ndarray  # (T,)
    mu: np.ndarray  # (T, N) ascending nonnegative
    noise: np.ndarray | None  # (T-1, ell1): increments dW_i, i = 1..ell1
    repairs: int = 0

    def save(self, path) -> None:
        """Dump to an uncompressed .npz with arrays times, mu, noise."""
        noise = np.empty((0, 0)) if self.noise is None else self.noise
        np.savez(path, times=self.times, mu=self.mu, noise=noise)

    @classmethod
    def load(cls, path) -> DbmPath:
        with np.load(path) as d:
            noise = d["noise"] if d["noise"].size else None
            return cls(d["times"], d["mu"], noise)


@dataclass(frozen=True)
class LocalVariables:
    l1: float
    l2: float
    l3: float

    def windows(self, n: int, a1: float) -> tuple[bool, bool, bool]:
        ln = math.log(n)
        return self.l1 <= ln**0.75, abs(self.l3) <= 1.0, abs(self.l2) <= a1 * ln


@dataclass
class LocalFactorResult:
    estimate: float
    std_error: float
    prediction: float
    log_estimate: float
    log_std_error: float
    ess: float
    paths: int
    window_violations: dict[str, int]
    variables: np.ndarray = field(repr=False)

    @property
    def ratio(self) -> float:
        return self.estimate / self.prediction


# ---------------------------------------------------------------------------
# flows

def evolve_matrix(x0: MatrixDraw, t: float, seed) -> MatrixDraw:
    """X0 + B(t)/sqrt(N): exact one-shot law of dX = dB/sqrt(N) at time t."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return x0
    n = x0.entries.shape[0]
    beta = 2 if np.iscomplexobj(x0.entries) else 1
    keys = (seed,) if isinstance(seed, (int, np.integer)) else tuple(seed)
    rng = stream(*keys)
    g = sample_entries(EntryLaw(LawKind.GAUSSIAN), COMPLEX if beta == 2 else REAL, rng, (n, n))
    return MatrixDraw(x0.entries + math.sqrt(t / n) * g, stream_id(*keys))


def _ginibre_start(n: int, seed: int) -> np.ndarray:
    x = sample_matrix(EnsembleSpec.make(2, "gaussian", n), (seed, 0))
    return np.sort(np.linalg.svd(x.entries, compute_uv=False))


def _drift(mu: np.ndarray, n: int) -> np.ndarray:
    d = mu[:, None] - mu[None, :]
    s = mu[:, None] + mu[None, :]
    np.fill_diagonal(d, np.inf)
    np.fill_diagonal(s, np.inf)
    return (np.sum(1.0 / d, axis=1) + np.sum(1.0 / s, axis=1) + 0.5 / mu) / (2.0 * n)


def _min_gap(mu: np.ndarray) -> float:
    return float(min(2.0 * mu[0], np.min(np.diff(mu)))) if mu.size > 1 else 2.0 * float(mu[0])


def reference_flow(config: DbmConfig, seed: int, noise_scale: float = 1.0, max_halvings: int = 10,
                   max_repairs: int = 1000) -> DbmPath:
    """Symmetrized singular-value DBM from a complex Ginibre start at z = 0.

    Only mu_1..mu_N are simulated; the mirror particles -mu_i enter the
    drift as 1/(mu_i + mu_j) and 1/(2 mu_i). Euler-Maruyama with a
    Brownian-bridge step halving whenever the configuration is too tight
    for the step (gap < 4 sqrt(dt/2N)) or the step breaks the ordering.
    A step that still breaks the ordering at the finest level is reflected
    at 0 and relabeled; more than ``max_repairs`` such steps raise
    StepCollision.
    """
    n = config.n
    mu = _ginibre_start(n, seed)
    dt = config.t1 / config.steps
    rng = stream(seed, 1)
    amp = noise_scale / math.sqrt(2.0 * n)
    repairs = [0]

    def advance(m, h, dw, depth):
        if depth < max_halvings and _min_gap(m) < 4.0 * math.sqrt(h / (2.0 * n)):
            return split(m, h, dw, depth)
        new = m + amp * dw + _drift(m, n) * h
        if new[0] > 0 and np.all(np.diff(new) > 0):
            return new
        if depth >= max_halvings:
            # reflect through the mirror at 0 and relabel
            repairs[0] += 1
            if repairs[0] > max_repairs:
                raise StepCollision("ordering lost after maximal step halving")
            return np.sort(np.abs(new))
        return split(m, h, dw, depth)

    def split(m, h, dw, depth):
        first = 0.5 * dw + math.sqrt(h / 4.0) * rng.standard_normal(n)
        mid = advance(m, h / 2.0, first, depth + 1)
        return advance(mid, h / 2.0, dw - first, depth + 1)

    mus = [mu]
    noise = np.empty((config.steps, config.ell1))
    for k in range(config.steps):
        dw = math.sqrt(dt) * rng.standard_normal(n)
        noise[k] = dw[: config.ell1] * noise_scale
        mu = advance(mu, dt, dw, 0)
        mus.append(mu)
    path = DbmPath(np.linspace(0.0, config.t1, config.steps + 1), np.array(mus), noise)
    path.repairs = repairs[0]
    return path


def matrix_flow(config: DbmConfig, seed: int) -> DbmPath:
    """Singular values of G + B(s)/sqrt(N) on the time grid, with the driving noise.

    The exact singular values are recorded at every step, and the Brownian
    increments seen by mu_i are dW_i = sqrt(2) Re(u_i^* dB v_i), using the
    singular vectors at the left end of each step (Ito convention).
    """
    n = config.n
    x = sample_matrix(EnsembleSpec.make(2, "gaussian", n), (seed, 0)).entries
    rng = stream(seed, 2)
    dt = config.t1 / config.steps
    law = EntryLaw(LawKind.GAUSSIAN)
    mus = []
    noise = np.empty((config.steps, config.ell1))
    for k in range(config.steps + 1):
        u, s, vh = np.linalg.svd(x)
        order = np.argsort(s)
        mus.append(s[order])
        if k == config.steps:
            break
        db = math.sqrt(dt) * sample_entries(law, COMPLEX, rng, (n, n))
        idx = order[: config.ell1]
        ui = u[:, idx]
        vi = vh[idx, :].conj().T
        proj = np.einsum("ai,ab,bi->i", ui.conj(), db, vi)
        noise[k] = math.sqrt(2.0) * proj.real
        x = x + db / math.sqrt(n)
    return DbmPath(np.linspace(0.0, config.t1, config.steps + 1), np.array(mus), noise)


# ---------------------------------------------------------------------------
# local variables

def _arctan_primitive(a: float, u: float) -> float:
    """Antiderivative in u of arctan(a/u)."""
    return u * math.atan(a / u) + 0.5 * a * math.log(a * a + u * u)


def local_variables(path: DbmPath, config: DbmConfig, terminal: np.ndarray | None = None) -> LocalVariables:
    """The three local variables of one path at z = 0.

    ``terminal`` replaces the path's final configuration in the first
    variable (the hybrid scheme uses an exact matrix draw there).
    """
    if path.noise is None or path.noise.shape[0] != len(path.times) - 1:
        raise MissingNoise("path carries no driving noise")
    n, es, em, t1 = config.n, config.eta_star, config.eta_m, config.t1
    if abs(path.times[-1] - t1) > 1e-12 * t1:
        raise ValueError("path does not end at t1")

    # first variable: terminal configuration on the window |i| < n_b
    a = config.n_b * math.pi / (2.0 * n)
    det = n * RHO0 * 2.0 * (_arctan_primitive(a, es) - _arctan_primitive(a, em))
    mu_end = (path.mu[-1] if terminal is None else np.sort(terminal))[: config.n_b - 1]
    rnd = 0.5 * float(np.sum(np.log((mu_end**2 + es**2) / (mu_end**2 + em**2))))
    l1 = det - rnd

    # second variable: Ito sum; the +-i pair gives 2 mu/(mu^2 + nu^2)
    ell = config.ell1
    mu = path.mu[:-1, : ell - 1]
    nu = (es + t1 - path.times[:-1])[:, None]
    l2 = float(np.sum(mu / (mu * mu + nu * nu) * path.noise[:, : ell - 1])) / math.sqrt(2.0 * n)

    # third variable: the centered sum over |i| < ell1 is purely imaginary,
    # so its square is -(...)^2 and the time integral is <= 0
    sel = path.times >= 0.5 * t1 - 1e-15
    ts = path.times[sel]
    nus = es + t1 - ts
    muw = path.mu[sel, : ell - 1]
    a1 = ell * math.pi / (2.0 * n)
    im_sum = np.sum(2.0 * nus[:, None] / (muw**2 + nus[:, None] ** 2), axis=1) / (2.0 * n)
    im_det = 2.0 * RHO0 * np.arctan(a1 / nus)
    integrand = -0.5 * n * (im_sum - im_det) ** 2
    l3 = float(np.trapezoid(integrand, ts)) if hasattr(np, "trapezoid") else float(np.trapz(integrand, ts))
    return LocalVariables(l1, l2, l3)


def local_factor_prediction(config: DbmConfig, lam: float) -> float:
    """e^{lam^2/8 log(2 N t1)} / G(lam)."""
    return math.exp(lam * lam / 8.0 * math.log(2.0 * config.n * config.t1) - float(log_g_constant(lam)))


def _path_seed(seed: int, i: int) -> int:
    s = stream_id(int(seed), int(i))
    return int(np.random.SeedSequence(list(s)).generate_state(1, np.uint64)[0])


def local_path(config: DbmConfig, seed: int, i: int, method: str = "matrix") -> tuple[DbmPath, np.ndarray | None]:
    """Path ``i`` of a local_factor run with master ``seed``, and the exact
    terminal singular values when ``method="hybrid"`` (else None)."""
    sd = _path_seed(seed, i)
    if method == "matrix":
        return matrix_flow(config, sd), None
    path = reference_flow(config, sd)
    if method != "hybrid":
        return path, None
    g = sample_matrix(EnsembleSpec.make(2, "gaussian", config.n), (sd, 0))
    x = evolve_matrix(g, config.t1, (sd, 3))
    return path, np.linalg.svd(x.entries, compute_uv=False)


class _LocalTask:
    def __init__(self, config: DbmConfig, seed: int, method: str):
        self.config, self.seed, self.method = config, int(seed), method

    def __call__(self, i: int) -> tuple[float, float, float]:
        path, terminal = local_path(self.config, self.seed, i, self.method)
        lv = local_variables(path, self.config, terminal)
        return lv.l1, lv.l2, lv.l3


def local_factor(config: DbmConfig, lam: float, paths: int, seed: int, method: str = "matrix",
                 workers: int | None = None, progress=None) -> LocalFactorResult:
    """MC mean of e^{lam (L1 + L2 + L3)} on the indicator windows.

    ``method="matrix"`` drives all three variables with one matrix
    Brownian path (exact singular values, noise from singular-vector
    projections). ``"sde"`` uses the reference Euler-Maruyama flow for all
    three. ``"hybrid"`` takes the first variable from an exact terminal
    matrix drawn independently of the SDE noise, which decouples it from
    the other two.
    """
    if not 0 <= lam <= 3:
        raise ValueError("lambda must be in [0, 3]")
    if paths < 100:
        raise ValueError("need at least 100 paths")
    if method not in ("matrix", "sde", "hybrid"):
        raise ValueError("method must be 'matrix', 'sde' or 'hybrid'")
    rows = np.array(map_indexed(_LocalTask(config, seed, method), paths, workers, chunk=8, progress=progress))
    ln = math.log(config.n)
    w1 = rows[:, 0] <= ln**0.75
    w3 = np.abs(rows[:, 2]) <= 1.0
    w2 = np.abs(rows[:, 1]) <= config.a1 * ln
    inside = w1 & w2 & w3
    logw = np.where(inside, lam * rows.sum(axis=1), -np.inf)
    if lam == 0:
        est = float(inside.mean())
        se = float(np.std(inside.astype(float), ddof=1) / math.sqrt(paths))
        lm, lse, ess = math.log(est) if est > 0 else -math.inf, se / est if est > 0 else math.inf, float(paths)
    else:
        finite = np.isfinite(logw)
        lw = np.where(finite, logw, np.nan)
        # indicator zeros count as samples with weight 0
        lm_in, lse_in, ess = log_mean_estimate(lw)
        frac = finite.mean()
        lm = lm_in + math.log(frac) if frac > 0 else -math.inf
        w = np.where(finite, np.exp(np.where(finite, logw, 0.0) - np.max(logw[finite])), 0.0)
        lse = float(np.std(w, ddof=1) / math.sqrt(paths) / np.mean(w))
        est = math.exp(lm)
        se = est * lse
    return LocalFactorResult(
        estimate=est,
        std_error=se,
        prediction=local_factor_prediction(config, lam),
        log_estimate=lm,
        log_std_error=lse,
        ess=ess,
        paths=paths,
        window_violations={"l1": int((~w1).sum()), "l2": int((~w2).sum()), "l3": int((~w3).sum())},
        variables=rows,
    )
