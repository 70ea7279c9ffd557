import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as sint, special, stats

from lipriors.errors import DominationViolated, ImproperAtLambda, SingularHessian
from lipriors.fisher import BaseMeasure
from lipriors.maxent import (InducedFamily, entropy_continuous, entropy_discrete,
                             family_density, gibbs_bound_check, log_partition, moments,
                             moments_and_covariance, quantiles, sample, solve_lagrange)
from lipriors.support import SupportSpec

UNIT = SupportSpec.interval(0, 1)
# E[ln theta] under inverse-gamma(2, 3) is ln 3 - digamma(2)
IG23_MOMENTS = (-(math.log(3) - special.digamma(2)), -2 / 3)


def arcsine(t):
    t = np.asarray(t, dtype=float)
    return 1 / (math.pi * np.sqrt(t * (1 - t)))


def test_exponential_family_is_inverse_gamma(families):
    fam = families["exponential"]
    lam = (-2.0, -3.0)
    # m exp(-lambda f) = theta^-3 exp(-3/theta), Z = Gamma(2)/3^2
    assert log_partition(fam, lam) == pytest.approx(-math.log(9), abs=1e-10)
    assert family_density(fam, lam, 1.0) == pytest.approx(9 * math.exp(-3), rel=1e-9)
    assert moments(fam, lam) == pytest.approx(IG23_MOMENTS, rel=1e-9)
    grid = np.linspace(0.3, 12, 25)
    assert np.allclose(family_density(fam, lam, grid), stats.invgamma(2, scale=3).pdf(grid), rtol=1e-9)


def test_improper_multipliers_raise(families):
    with pytest.raises(ImproperAtLambda):
        log_partition(families["exponential"], (2.0, -3.0))
    with pytest.raises(ImproperAtLambda):
        log_partition(families["exponential"], (0.0, 0.0))


def test_probe_outcomes(families):
    # theta^(lambda1 - 1) exp(lambda2/theta) is integrable only for lambda1 < 0, lambda2 < 0
    assert families["exponential"].admissible() == [(-1.0, -1.0)]
    # theta^(-1/2 - l2) (1 - theta)^(-1/2 - l1 + l2): needs l2 < 1/2 and l1 - l2 < 1/2
    ok = set(families["bernoulli"].admissible())
    expected = {(l1, l2) for l1 in (-1.0, 0.0, 1.0) for l2 in (-1.0, 0.0, 1.0)
                if l2 < 0.5 and l1 - l2 < 0.5}
    assert ok == expected
    assert set(families["poisson"].admissible()) == {(-1.0, -1.0), (-1.0, 0.0)}
    assert families["gaussian"].admissible() == [(-1.0, -1.0), (-1.0, 0.0), (-1.0, 1.0)]


def test_bernoulli_partition_at_origin(families):
    fam = families["bernoulli"]
    assert log_partition(fam, (0.0, 0.0)) == pytest.approx(math.log(math.pi), abs=1e-10)
    assert family_density(fam, (0.0, 0.0), 0.5) == pytest.approx(2 / math.pi, rel=1e-10)


@pytest.mark.parametrize("name, lam", [("exponential", (-2.0, -3.0)), ("bernoulli", (-0.5, 0.2)),
                                       ("poisson", (-2.0, -0.5)), ("gaussian", (-1.5, 0.4))])
def test_log_partition_gradient_is_minus_moments(families, name, lam):
    fam = families[name]
    lam = np.array(lam)
    h = 1e-5
    fd = [(log_partition(fam, lam + h * e) - log_partition(fam, lam - h * e)) / (2 * h)
          for e in np.eye(2)]
    assert np.max(np.abs(np.array(fd) + moments(fam, lam))) <= 1e-5
    _, F, cov = moments_and_covariance(fam, lam)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_solve_round_trip_exponential(families):
    sol = solve_lagrange(families["exponential"], IG23_MOMENTS)
    assert sol.converged and sol.residual <= 1e-8
    assert sol.multipliers == pytest.approx([-2.0, -3.0], rel=1e-6)
    # entropy identity: H = ln Z + lambda . F
    assert sol.entropy == pytest.approx(sol.entropy_identity, abs=1e-9)
    assert sol.entropy == pytest.approx(-math.log(9) + 2 * 0.6758277 * 1 + 2.0, abs=1e-6)
    assert sol.scale_dependent


def test_duplicate_laws_singular(families):
    fam = InducedFamily.from_parts(BaseMeasure.uniform(UNIT), ["theta", "theta"], UNIT)
    with pytest.raises(SingularHessian):
        solve_lagrange(fam, [0.3, 0.3])


def test_uniform_base_zero_multiplier():
    fam = InducedFamily.from_parts(lambda t: np.ones_like(t), ["theta"], UNIT)
    assert moments(fam, [0.0])[0] == pytest.approx(0.5, abs=1e-13)
    sol = solve_lagrange(fam, [0.5])
    assert sol.multipliers[0] == pytest.approx(0.0, abs=1e-9)
    # E[theta] = 0.3 under theta -> exp(-l theta): a truncated exponential
    sol = solve_lagrange(fam, [0.3])
    l = sol.multipliers[0]
    assert 1 / l - 1 / math.expm1(l) == pytest.approx(0.3, abs=1e-9)


def test_entropy_against_arcsine():
    # H(uniform || arcsine pdf) = -int ln(pi sqrt(t(1-t))) = 1 - ln pi
    H = entropy_continuous(lambda t: np.ones_like(t), arcsine, UNIT)
    assert H == pytest.approx(1 - math.log(math.pi), abs=1e-10)
    ref, _ = sint.quad(lambda t: -math.log(1 / arcsine(t)), 0, 1, epsabs=1e-13)
    assert H == pytest.approx(ref, abs=1e-9)


def test_entropy_zero_at_equality():
    assert abs(entropy_continuous(arcsine, arcsine, UNIT)) <= 1e-8
    assert entropy_discrete([0.2, 0.8], [0.2, 0.8]) == 0.0


def test_entropy_discrete_value():
    # -(1/2 ln 2 + 1/2 ln(2/3)) = -1/2 ln(4/3)
    assert entropy_discrete([0.5, 0.5], [0.25, 0.75]) == pytest.approx(-0.5 * math.log(4 / 3), rel=1e-14)
    with pytest.raises(DominationViolated):
        entropy_discrete([0.5, 0.5], [1.0, 0.0])


def test_domination_violated():
    with pytest.raises(DominationViolated):
        entropy_continuous(lambda t: np.ones_like(t), lambda t: np.where(t > 0.5, 2.0, 0.0), UNIT)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.6, 8.0), st.floats(0.6, 8.0))
def test_relative_entropy_nonpositive_against_normalized_base(a, b):
    H = entropy_continuous(stats.beta(a, b).pdf, arcsine, UNIT)
    assert H <= 1e-9


@settings(max_examples=25, deadline=None)
@given(st.floats(2.0, 8.0), st.floats(0.5, 6.0))
def test_gibbs_bound(families, a, b):
    fam = families["exponential"]
    gb = gibbs_bound_check(fam, (-2.0, -3.0), stats.invgamma(a, scale=b).pdf)
    assert gb.entropy <= gb.bound + 1e-9


def test_gibbs_equality_at_family_member(families):
    fam = families["exponential"]
    gb = gibbs_bound_check(fam, (-2.0, -3.0), stats.invgamma(2, scale=3).pdf)
    assert gb.entropy == pytest.approx(gb.bound, abs=1e-8)


def test_sampling_is_deterministic_and_correct(families):
    fam = families["bernoulli"]
    a = sample(fam, (0.0, 0.0), 20000, seed=11)
    b = sample(fam, (0.0, 0.0), 20000, seed=11)
    assert a.tobytes() == b.tobytes()
    assert np.all((a > 0) & (a < 1))
    # arcsine distribution: mean 1/2, variance 1/8
    assert abs(a.mean() - 0.5) <= 4 * math.sqrt(0.125 / a.size)
    q = quantiles(fam, (0.0, 0.0), [0.25, 0.5, 0.75])
    assert q == pytest.approx(stats.beta(0.5, 0.5).ppf([0.25, 0.5, 0.75]), abs=1e-8)
