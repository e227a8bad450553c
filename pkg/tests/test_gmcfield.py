import math
import warnings

import numpy as np
import pytest
from scipy import stats

from ginchaos.ensembles import EnsembleSpec, SymmetryClass
from ginchaos.gmcfield import (
    GAMMA_CRITICAL,
    ClipMassError,
    FieldGrid,
    KernelRangeError,
    SupercriticalWarning,
    boundary_distance,
    chaos_measure,
    fit_boundary_constant,
    real_field_from_complex,
    regularized_covariance,
    sample_field,
    sample_fields,
    total_masses,
)
from ginchaos.mc import Region, scan_field
from ginchaos.predict import KPointQuery, kpoint_predict


@pytest.fixture(scope="module")
def small():
    return regularized_covariance(FieldGrid(Region("disc", 0.4), 0.2))


def test_grid_rules():
    g = FieldGrid(Region("disc", 0.4), 0.2)
    assert g.spacing <= 0.1 and g.size == len(set(g.points.tolist()))
    assert g.cell_area.sum() == pytest.approx(math.pi * 0.16, rel=1e-12)
    with pytest.raises(ValueError):
        FieldGrid(Region("disc", 0.4), 0.5)
    with pytest.raises(ValueError):
        FieldGrid(Region("disc", 0.4), 0.2, spacing=0.2)
    with pytest.raises(ValueError):
        FieldGrid(Region("disc", 0.4), 0.2, SymmetryClass(1))
    with pytest.raises(KernelRangeError):
        FieldGrid(Region("disc", 0.4), 0.2, kappa4=-2.5)
    with pytest.raises(KernelRangeError):
        FieldGrid(Region("half-disc", 0.9), 0.2, SymmetryClass(1), kappa4=-4.5)
    half = FieldGrid(Region("half-disc", 0.9), 0.2, SymmetryClass(1))
    assert np.all(half.points.imag > 0)


def test_diagonal(small):
    z = small.grid.points
    eps2 = small.grid.epsilon**2
    expected = -0.5 * np.log(2 * np.sqrt(1 - np.abs(z) ** 2) * eps2)
    assert np.max(np.abs(np.diag(small.covariance) - expected)) < 3 * eps2
    assert np.array_equal(small.covariance, small.covariance.T)
    assert small.clip_mass == 0.0


def test_diagonal_kappa_term():
    g = FieldGrid(Region("disc", 0.4), 0.2, kappa4=1.5)
    c = regularized_covariance(g).covariance
    z = g.points
    expected = -0.5 * np.log(2 * np.sqrt(1 - np.abs(z) ** 2) * 0.04) + 0.75 * (1 - np.abs(z) ** 2) ** 2
    assert np.max(np.abs(np.diag(c) - expected)) < 0.12


def test_far_points():
    g = FieldGrid(Region("disc", 0.3), 0.1)
    c = regularized_covariance(g).covariance
    d = np.abs(g.points[:, None] - g.points[None, :])
    i, j = np.unravel_index(np.argmin(np.abs(d - 0.5)), d.shape)
    assert abs(c[i, j] + math.log(d[i, j])) < 0.1


def test_clip_mass_error():
    g = FieldGrid(Region("disc", 0.4), 0.2)
    with pytest.raises(ClipMassError):
        regularized_covariance(g, clip_tol=-1.0)


def test_sample_moments(small):
    draws = 10_000
    f = sample_fields(small, draws, 3)
    var = np.diag(small.covariance)
    assert np.all(np.abs(f.mean(axis=0)) <= 4 * np.sqrt(var / draws))
    assert np.all(np.abs(f.var(axis=0, ddof=1) / var - 1) < 0.1)
    assert np.allclose(f[7], sample_field(small, (3, 7)))


def test_real_case_construction():
    g = FieldGrid(Region("half-disc", 0.9), 0.3, SymmetryClass(1), kappa4=1.0)
    target = regularized_covariance(g).covariance
    draws = 6000
    f = real_field_from_complex(g, draws, 5)
    sc = np.cov(f, rowvar=False)
    tol = 5 * np.sqrt((np.outer(np.diag(target), np.diag(target)) + target**2) / draws)
    assert np.all(np.abs(sc - target) <= tol)
    with pytest.raises(ValueError):
        real_field_from_complex(FieldGrid(Region("disc", 0.3), 0.3), 2, 1)


def test_zero_gamma(small):
    psi = sample_field(small, 1)
    m = chaos_measure(small, psi, 0.0)
    assert np.array_equal(m.masses, small.grid.cell_area)
    with pytest.raises(ValueError):
        chaos_measure(small, psi, -1.0)


def test_supercritical_warns(small):
    psi = sample_field(small, 1)
    with pytest.warns(SupercriticalWarning):
        chaos_measure(small, psi, GAMMA_CRITICAL)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m = chaos_measure(small, psi, 1.0)
    assert np.all(m.masses >= 0)
    assert m.total == pytest.approx(total_masses(small, psi[None, :], 1.0)[0])


def test_mean_total_mass(small):
    t = total_masses(small, sample_fields(small, 2000, 9), 1.0)
    area = small.grid.cell_area.sum()
    assert abs(t.mean() - area) <= 3 * t.std(ddof=1) / math.sqrt(t.size)


def test_epsilon_stability():
    region = Region("disc", 0.3)
    seconds = []
    for eps in (0.1, 0.05, 0.025):
        fact = regularized_covariance(FieldGrid(region, eps))
        t = total_masses(fact, sample_fields(fact, 1000, 21), 1.0)
        seconds.append((np.mean(t**2), np.std(t**2, ddof=1) / math.sqrt(t.size)))
    for (a, sa), (b, sb) in zip(seconds, seconds[1:]):
        assert abs(a - b) <= 3 * math.hypot(sa, sb)


def test_boundary_control():
    g = FieldGrid(Region("half-disc", 0.8), 0.1, SymmetryClass(1))
    fact = regularized_covariance(g)
    fields = sample_fields(fact, 500, 4)
    masses = np.exp(fields / math.sqrt(2) - fact.variance / 4) * g.cell_area
    assert np.all(boundary_distance(g) > -g.spacing)
    c, means = fit_boundary_constant(g, masses, [0.05, 0.1, 0.15, 0.2])
    assert np.all(np.diff(means) >= 0)
    assert 0 < c <= 10


@pytest.mark.slow
def test_matrix_versus_gmc_mean():
    # f(z) = 1 - |z|^2/r^2 on the disc of radius 0.8, gamma = 1
    n, r, gamma = 512, 0.8, 1.0
    region = Region("disc", r)
    scan = scan_field(EnsembleSpec.make(2, n=n), region, 16, 200, 8675309)
    norm = np.array([kpoint_predict(KPointQuery(n, (z,), (gamma,))).centered_log_value.real
                     for z in scan.points])
    f = 1 - np.abs(scan.points) ** 2 / r**2
    mat = (np.exp(gamma * scan.values - norm) * f * scan.cell_area).sum(axis=1)

    fact = regularized_covariance(FieldGrid(region, n**-0.5))
    g = fact.grid
    fg = 1 - np.abs(g.points) ** 2 / r**2
    w = np.exp(gamma / math.sqrt(2) * sample_fields(fact, 1000, 8675309) - gamma**2 / 4 * fact.variance)
    gmc = (w * fg * g.cell_area).sum(axis=1)
    se = math.hypot(mat.std(ddof=1) / math.sqrt(mat.size), gmc.std(ddof=1) / math.sqrt(gmc.size))
    assert abs(mat.mean() - gmc.mean()) <= 3 * se
