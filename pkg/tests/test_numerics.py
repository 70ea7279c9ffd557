import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as sint, special

from lipriors.errors import ComputationFailed, SingularHessian
from lipriors.numerics import (gradient_fd, hessian_fd, integrate, kronrod_rule,
                               newton_minimize, sum_discrete)
from lipriors.support import SupportSpec

POS = SupportSpec.interval(0, math.inf)
REAL = SupportSpec.interval(-math.inf, math.inf)
UNIT = SupportSpec.interval(0, 1)


def test_kronrod_rule_exact_on_polynomials():
    x, wk, wg = kronrod_rule(10)
    # 21-point Kronrod is exact to degree 31, 10-point Gauss to degree 19
    for k in (0, 2, 10, 30):
        exact = 2.0 / (k + 1)
        assert np.dot(wk, x ** k) == pytest.approx(exact, rel=1e-14)
    assert np.dot(wg, x ** 18) == pytest.approx(2.0 / 19, rel=1e-13)
    assert np.dot(wg, x ** 22) != pytest.approx(2.0 / 23, rel=1e-6)


@pytest.mark.parametrize("f, support, exact", [
    (lambda t: np.exp(-t), POS, 1.0),
    (lambda t: np.exp(-0.5 * t * t), REAL, math.sqrt(2 * math.pi)),
    (lambda t: 1 / np.sqrt(t * (1 - t)), UNIT, math.pi),
    (lambda t: t ** -3 * np.exp(-3 / t), POS, 1 / 9),  # inverse-gamma kernel, Gamma(2)/3^2
    (lambda t: np.log(t), UNIT, -1.0),
])
def test_integrate_closed_forms(f, support, exact):
    r = integrate(f, support, tol=0.0, rtol=1e-12)
    assert not r.diverged
    assert r.value == pytest.approx(exact, rel=1e-10)


@pytest.mark.parametrize("f, support", [
    (lambda t: 1 / t, POS),
    (lambda t: 1 / np.sqrt(t), POS),
    (lambda t: np.ones_like(t), REAL),
    (lambda t: 1 / t, UNIT),
])
def test_integrate_flags_divergence(f, support):
    r = integrate(f, support)
    assert r.diverged


def test_integrate_vector_valued():
    r = integrate(lambda t: np.stack([np.exp(-t), t * np.exp(-t), t * t * np.exp(-t)]), POS,
                  tol=0.0, rtol=1e-12)
    assert np.allclose(r.value, [1.0, 1.0, 2.0], rtol=1e-11)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 20.0), st.floats(0.2, 10.0))
def test_integrate_gamma_kernels_against_gamma_function(a, b):
    r = integrate(lambda t: t ** (a - 1) * np.exp(-b * t), POS, tol=0.0, rtol=1e-11)
    exact = math.exp(special.gammaln(a) - a * math.log(b))
    assert r.value == pytest.approx(exact, rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 6.0), st.floats(0.2, 6.0))
def test_integrate_beta_kernels_match_scipy_quad(a, b):
    f = lambda t: t ** (a - 1) * (1 - t) ** (b - 1)
    r = integrate(f, UNIT, tol=0.0, rtol=1e-11)
    ours, exact = r.value, math.exp(special.betaln(a, b))
    if r.reason == "resolution":
        # endpoint singularity finer than float spacing: the estimate must cover the truth
        assert abs(ours - exact) <= r.error_estimate
    else:
        assert ours == pytest.approx(exact, rel=1e-9)
    if a > 1 and b > 1:
        ref, _ = sint.quad(f, 0, 1, epsabs=0, epsrel=1e-12)
        assert ours == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("p", [-0.9, -0.5, 0.3])
@pytest.mark.parametrize("at_one", [False, True])
def test_integrate_log_endpoint_singularities(k, p, at_one):
    # int_0^1 d^p ln(d)^k = (-1)^k k! / (p+1)^(k+1), with d the distance to either end
    dist = (lambda t: 1 - t) if at_one else (lambda t: t)
    r = integrate(lambda t: dist(t) ** p * np.log(dist(t)) ** k, UNIT, tol=0.0, rtol=1e-11)
    exact = (-1) ** k * math.factorial(k) / (p + 1) ** (k + 1)
    assert not r.diverged
    assert r.value == pytest.approx(exact, rel=1e-10)


def test_integrate_slowly_converging_end_is_not_divergent():
    r = integrate(lambda t: (1 - t) ** -0.99, UNIT, tol=0.0, rtol=1e-11)
    assert not r.diverged
    assert r.value == pytest.approx(100.0, rel=1e-8)


def test_sum_discrete_poisson_mass():
    rate = 4.5
    f = lambda k: np.exp(k * math.log(rate) - rate - special.gammaln(k + 1))
    r = sum_discrete(f, SupportSpec.naturals())
    assert r.value == pytest.approx(1.0, abs=1e-13)
    r = sum_discrete(lambda k: k * f(k), SupportSpec.naturals())
    assert r.value == pytest.approx(rate, rel=1e-13)


def test_finite_differences():
    f = lambda x: math.exp(x[0]) * math.sin(x[1])
    p = np.array([0.3, 1.1])
    g = gradient_fd(f, p)
    assert g == pytest.approx([math.exp(0.3) * math.sin(1.1), math.exp(0.3) * math.cos(1.1)], rel=1e-9)
    H = hessian_fd(f, p)
    assert H[0, 1] == pytest.approx(math.exp(0.3) * math.cos(1.1), rel=1e-5)


def test_newton_quadratic_and_rosenbrock_like():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])
    res = newton_minimize(lambda x: 0.5 * x @ A @ x - b @ x, lambda x: A @ x - b,
                          lambda x: A, [5.0, 5.0])
    assert res.converged
    assert res.argmin == pytest.approx(np.linalg.solve(A, b), abs=1e-12)
    # log-partition of a gamma kernel, convex in the rate: minimizer of b*m + a log... is a/m
    f = lambda x: 3.0 * x[0] / 2.0 - 3.0 * math.log(x[0]) if x[0] > 0 else math.inf
    res = newton_minimize(f, lambda x: np.array([1.5 - 3.0 / x[0]]),
                          lambda x: np.array([[3.0 / x[0] ** 2]]), [10.0])
    assert res.argmin[0] == pytest.approx(2.0, rel=1e-10)


def test_newton_singular_hessian():
    # flat direction: f(x, y) = (x + y)^2
    f = lambda v: (v[0] + v[1]) ** 2 + v[0] + v[1]
    g = lambda v: np.array([2 * (v[0] + v[1]) + 1] * 2)
    H = lambda v: np.array([[2.0, 2.0], [2.0, 2.0]])
    with pytest.raises(SingularHessian):
        newton_minimize(f, g, H, [1.0, 2.0])


def test_newton_infinite_start():
    with pytest.raises(ComputationFailed):
        newton_minimize(lambda x: math.inf, lambda x: x, lambda x: np.eye(1), [1.0])
