import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from ginchaos import mde
from ginchaos.mde import (
    centering_integral,
    characteristic_path,
    density,
    density_cdf,
    edge,
    edge_by_bisection,
    imag_axis,
    mde_residual,
    quantiles,
    rho,
    solve_mde,
    time_rescaled_mde,
)

# m^z(w) from a 40-digit damped fixed-point iteration m <- -1/(w + m - |z|^2/(w + m))
FIXED_POINT_ORACLE = [
    (0.3, 0.1j, 0.90990195135927848373j),
    (0.3, 0.2 + 0.1j, -0.086048865151382248625 + 0.90578832438899675059j),
    (0.7 + 0.2j, 0.5 + 0.05j, -0.08233851745447958179 + 0.74865795533090428312j),
    (0.5, 1.3 + 0.2j, -0.45858335461409577662 + 0.66864503972881303566j),
    (0.9, 0.01j, 0.45064149668584791888j),
]


@pytest.mark.parametrize("z,w,m", FIXED_POINT_ORACLE)
def test_solve_mde_against_fixed_point_oracle(z, w, m):
    sol = solve_mde(z, w)
    assert abs(sol.m - m) < 1e-10
    assert sol.residual < 1e-12
    assert abs(sol.u - sol.m / (w + sol.m)) < 1e-14


def test_closed_form_on_axis():
    sol = solve_mde(0.6, 0j)
    assert abs(sol.m - 0.8j) < 1e-12 and abs(sol.u - 1) < 1e-12


@given(st.floats(0, 0.95), st.floats(0, 2 * math.pi), st.floats(-3, 3), st.floats(1e-4, 3))
def test_residual_and_stability(r, th, x, y):
    z = r * complex(math.cos(th), math.sin(th))
    w = complex(x, y)
    sol = solve_mde(z, w)
    assert sol.m.imag > 0
    assert mde_residual(z, w, sol.m) < 1e-12


@given(st.floats(0, 0.95), st.floats(1e-6, 5))
def test_imaginary_axis_reduction(r, eta):
    y, u = imag_axis(r, eta)
    s = eta + y
    assert abs(s - (s - eta) * (s * s + r * r)) < 1e-12 * max(1.0, s**3)
    sol = solve_mde(r, 1j * eta)
    assert abs(sol.m.real) == 0 and abs(sol.u.imag) == 0


def test_small_eta_expansion_bound():
    worst = 0.0
    for r in np.linspace(0, 0.9, 10):
        for eta in np.logspace(-6, -2, 9):
            y, _ = imag_axis(r, eta)
            worst = max(worst, abs(y - math.sqrt(1 - r * r)) / eta)
    assert worst <= 10


def test_conjugate_symmetry():
    a = solve_mde(0.4, -0.3 + 0.2j)
    b = solve_mde(0.4, 0.3 + 0.2j)
    assert abs(a.m + b.m.conjugate()) < 1e-13


@pytest.mark.parametrize("z,val", [(0, 1 / math.pi), (0.8, 0.6 / math.pi), (0.6j, 0.8 / math.pi)])
def test_rho_at_zero(z, val):
    assert abs(rho(z, 0.0) - val) < 1e-12


@pytest.mark.parametrize("z", [0, 0.3, 0.6 + 0.2j, 0.9, 0.99])
def test_density_normalized(z):
    e = edge(z)
    total = 2 * integrate.quad(lambda x: rho(z, x), 0, e, limit=200, points=[min(0.5, e / 2)])[0]
    assert abs(total - 1) < 1e-6
    assert abs(density_cdf(z, e) - 0.5) < 1e-10


@pytest.mark.parametrize("z", [0, 0.2, 0.5, 0.8, 0.95])
def test_edge_closed_form_vs_bisection(z):
    assert abs(edge(z) - edge_by_bisection(z)) < 1e-7
    assert rho(z, edge(z) * (1 + 1e-9)) == 0


def test_edge_at_origin():
    assert abs(edge(0) - 2) < 1e-14


@pytest.mark.parametrize("r", [0.0, 0.5, 0.9])
def test_bulk_regularity(r):
    e = edge(r)
    x = np.linspace(0, 0.9 * e, 400)
    p = rho(r, x)
    assert p.min() >= 0.05
    assert np.max(np.abs(np.diff(p) / np.diff(x))) <= 10


def test_density_profile_and_csv(tmp_path):
    prof = density(0.6, 64)
    assert prof.grid.shape == (64, 2) and prof.grid[0, 1] == pytest.approx(0.8 / math.pi)
    prof.to_csv(tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().startswith("x,rho")
    with pytest.raises(ValueError):
        density(0.6, 4)


@pytest.mark.parametrize("z", [0.0, 0.4, 0.85])
def test_quantile_round_trip(z):
    n = 300
    prof = density(z, 16)
    g = quantiles(prof, n)
    i = np.arange(1, n + 1)
    assert np.max(np.abs(density_cdf(z, g) - i / (2 * n))) < 1e-8
    assert np.all(np.diff(g) > 0) and g[-1] <= prof.edge


def test_first_quantile_linearization():
    g = quantiles(density(0, 16), 512)
    assert abs(g[0] / (math.pi / 1024) - 1) < 0.02


@pytest.mark.parametrize("z,val", [(0, -1.0), (0.5, -0.75), (0.9, 0.81 - 1)])
def test_centering_identity(z, val):
    assert abs(centering_integral(z, 0.0).integral - val) < 1e-6


@pytest.mark.parametrize("z", [0.0, 0.3, 0.7])
def test_centering_derivative(z):
    h = 1e-4
    d = (centering_integral(z, 0.2 + h).integral - centering_integral(z, 0.2 - h).integral) / (2 * h)
    y, _ = imag_axis(z, 0.2)
    assert abs(d - 2 * y) < 1e-5


def test_centering_record():
    c = centering_integral(0.3, 0.01)
    assert c.matches(0.3, 0.01) and not c.matches(0.3, 0.02)
    with pytest.raises(ValueError):
        centering_integral(0.995, 0.0)


def test_time_rescaled():
    assert time_rescaled_mde(0.3, 0.1, 0).m == pytest.approx(solve_mde(0.3, 0.1j).m, abs=1e-15)
    assert abs(time_rescaled_mde(0, 0, 3).m.imag - 0.5) < 1e-14
    c = math.sqrt(1.7)
    direct = solve_mde(0.4 / c, 0.05j / c).m / c
    assert abs(time_rescaled_mde(0.4, 0.05, 0.7).m - direct) < 1e-12


def test_characteristic_invariant():
    # m_t(i eta_t) is constant along a characteristic, so eta is linear in t
    for z, eta_t, t in [(0.0, 1e-3, 1.0), (0.5, 0.02, 0.3), (0.8, 1e-4, 2.0)]:
        ch = characteristic_path(z, eta_t, t, steps=100)
        eta0 = ch.path[0, 1]
        slope = mde._im_mt(z, eta_t, t)
        assert abs(eta0 - eta_t - t * slope) < 1e-10
        assert np.all(np.diff(ch.path[:, 1]) < 0)
        assert np.all(ch.step_error < 1e-8)


def test_characteristic_small_eta_closed_form():
    # z = 0, eta_T -> 0: Im m_T = 1/sqrt(1+T), so eta_0 = T/sqrt(1+T)
    t = 1.0
    ch = characteristic_path(0, 1e-9, t, steps=50)
    assert abs(ch.path[0, 1] - 1e-9 - t / math.sqrt(1 + t)) < 1e-8


def test_characteristic_short_time_bound():
    t, eta_t = 1e-3, 1e-3
    ch = characteristic_path(0.5, eta_t, t, steps=40)
    assert abs(ch.path[0, 1] - eta_t - t * math.sqrt(0.75)) <= 5 * t * (eta_t + t)


def test_characteristic_step_halving():
    a = characteristic_path(0.3, 0.01, 0.5, steps=50).path[0, 1]
    b = characteristic_path(0.3, 0.01, 0.5, steps=100).path[0, 1]
    assert abs(a - b) < 1e-9
