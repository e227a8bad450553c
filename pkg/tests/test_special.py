import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import gammaln

from ginchaos.special import (
    EULER_GAMMA,
    DomainError,
    g_constant,
    ginibre_asymptotic_moment,
    ginibre_exact_moment,
    ginibre_moment_gamma_sum,
    log_barnes_g,
    log_g,
    log_g_constant,
    log_g_weierstrass,
)

# ln G(z) frozen from mpmath.barnesg at 30 digits (principal branch of the log)
MPMATH_LOG_G = {
    0.5: -0.5054330544896953828,
    1.5: 0.066931888435004704274,
    2.25: -0.035255217918005787521,
    3.7: 0.3852902057046427196,
    7.3: 12.228615592899987424,
    12.5: 72.511509332766057012,
    30.1: 818.37468704326474436,
    0.1 + 0.3j: -0.94789511275782279833 + 1.4393216708924254738j,
    2 + 1j: -0.060978179283356929139 - 0.29791637446455506089j,
    5.5 - 2j: 0.83825983203831453732 + 0.23408692378622830836j,
}


def _same_log(a, b, tol):
    """Equal real parts, imaginary parts equal modulo 2 pi."""
    a, b = complex(a), complex(b)
    d = (a.imag - b.imag + math.pi) % (2 * math.pi) - math.pi
    return abs(a.real - b.real) <= tol * max(1.0, abs(b.real)) and abs(d) <= tol * max(1.0, abs(b))


@pytest.mark.parametrize("z,expected", list(MPMATH_LOG_G.items()))
def test_log_g_matches_frozen_mpmath(z, expected):
    assert _same_log(log_g(z), expected, 1e-10)


def test_euler_gamma_constant():
    assert abs(EULER_GAMMA - float(mpmath.euler)) < 1e-16


@pytest.mark.parametrize("n,g", [(1, 1.0), (2, 1.0), (3, 1.0), (4, 2.0), (5, 12.0), (6, 288.0)])
def test_integer_values(n, g):
    # G(n+1) = prod_{k=1}^{n-1} k!
    assert abs(log_g(n) - math.log(g)) < 1e-12 * max(1, math.log(g))


def test_log_barnes_g_record():
    r = log_barnes_g(4)
    assert r.argument == 4 and abs(r.log_value - math.log(2)) < 1e-12


@pytest.mark.parametrize("z", np.arange(0.5, 10.0, 0.5))
def test_recurrence_grid(z):
    assert abs(log_g(z + 1) - log_g(z) - gammaln(z)) < 1e-10


@given(st.floats(0.05, 50.0), st.floats(-20.0, 20.0))
def test_recurrence_complex(x, y):
    z = complex(x, y)
    lhs = log_g(z + 1) - log_g(z)
    rhs = complex(mpmath.loggamma(z))
    assert _same_log(lhs, rhs, 1e-9)


def test_real_input_gives_real_output():
    v = log_g(np.array([0.5, 1.5, 20.0]))
    assert v.dtype.kind == "f"


def test_weierstrass_product_cross_check():
    for z in (0.3, 0.75, 1.2, 0.4 + 0.2j):
        assert abs(log_g_weierstrass(z) - log_g(1 + z)) < 1e-6


@pytest.mark.parametrize("bad", [0.0, -1.5, -0.1 + 2j, 2e6])
def test_domain(bad):
    with pytest.raises(DomainError):
        log_g(bad)


@pytest.mark.parametrize("lam,val", [(0, 1.0), (2, (2 * math.pi) ** -0.5), (4, 1 / (2 * math.pi))])
def test_g_constant(lam, val):
    assert abs(g_constant(lam) - val) < 1e-12


def test_log_g_constant_composition():
    for lam in (0.3, 1.0, 2.7):
        assert abs(log_g_constant(lam) - (log_g(1 + lam / 2) - lam / 4 * math.log(2 * math.pi))) < 1e-14


def test_exact_moment_small_cases():
    assert abs(math.exp(ginibre_exact_moment(3, 2.0)) - 2 / 9) < 1e-13
    assert abs(math.exp(ginibre_exact_moment(1, 2.0)) - 1.0) < 1e-13
    assert ginibre_exact_moment(17, 0.0) == 0


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0, 3.7])
def test_exact_moment_two_routes(gamma):
    for n in (1, 2, 5, 17, 64, 128, 200):
        assert abs(ginibre_exact_moment(n, gamma) - ginibre_moment_gamma_sum(n, gamma)) < 1e-9


def test_gamma_sum_is_independent_of_barnes():
    # direct Kostlan product with plain gammaln
    n, g = 50, 1.3
    direct = sum(gammaln(j + g / 2) - gammaln(j) for j in range(1, n + 1)) - n * g / 2 * math.log(n)
    assert abs(ginibre_moment_gamma_sum(n, g) - direct) < 1e-10


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0, 3.0])
def test_asymptotic_ratio(gamma):
    n = 1024
    r = math.exp(ginibre_exact_moment(n, gamma) - ginibre_asymptotic_moment(n, gamma))
    assert abs(r - 1) <= 10 * gamma / n


def test_asymptotic_zero():
    assert ginibre_asymptotic_moment(100, 0.0) == 0


@given(st.integers(2, 300), st.floats(0.0, 3.5))
def test_moment_log_convex_in_gamma(n, g):
    h = 1e-3
    f = lambda x: ginibre_exact_moment(n, x) + x * n / 2
    assert f(g + 2 * h) - 2 * f(g + h) + f(g) >= -1e-9
