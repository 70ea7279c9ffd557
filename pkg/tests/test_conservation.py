import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as sint, special, stats

from lipriors.conservation import (average_log_likelihood, compute_mle,
                                   extract_conservation_laws, laws_for_model)
from lipriors.dsl import decompose_log_density, parse_model
from lipriors.errors import EmptyObservations, NoLaws, OutOfSupport
from lipriors.expr import compile_expr, to_text

LAW_TEXTS = {
    "exponential": ["-log(theta)", "-1/theta"],
    "bernoulli": ["log(1 - theta)", "log(theta/(1 - theta))"],
    "bernoulli_counts": ["log(theta)", "log(1 - theta)"],
    "poisson": ["-theta", "log(theta)"],
    "gaussian": ["-(0.5*theta^2)", "theta"],
}


@pytest.mark.parametrize("name", sorted(LAW_TEXTS))
def test_law_texts(models, name):
    assert laws_for_model(models[name]).texts == LAW_TEXTS[name]


def test_law_statistics(models):
    laws = laws_for_model(models["exponential"])
    assert [to_text(l.statistic) for l in laws] == ["1", "x"]
    assert [l.sources for l in laws] == [("param",), ("mixed",)]
    assert laws.statistics([1.0, 2.0]).tolist() == [[1.0, 1.0], [1.0, 2.0]]


def test_repeated_factor_merges_statistics():
    m = parse_model('model "r"\nparam theta in (0, inf)\nobs x in (0, inf) continuous\n'
                    "logpdf = x*log(theta) + x^2*log(theta) - theta*x\n")
    laws = laws_for_model(m)
    assert laws.texts == ["log(theta)", "-theta"]
    assert laws.statistics([2.0])[0, 0] == pytest.approx(6.0)


def test_no_parameter_dependence():
    m = parse_model('model "c"\nparam theta in (0, 1)\nobs x in {0, 1} discrete\n'
                    "logpdf = log(0.5) + 0*x\n")
    with pytest.raises(NoLaws):
        extract_conservation_laws(decompose_log_density(m), m)


@pytest.mark.parametrize("name", sorted(LAW_TEXTS) + ["normal_mean_scale"])
def test_laws_reconstruct_log_density(models, name):
    m = models[name]
    laws = laws_for_model(m)
    rng = np.random.default_rng(3)
    if m.dim == 1:
        thetas = m.param_support.interior_grid(7)[:, None]
    else:
        thetas = np.column_stack([rng.normal(size=7), rng.uniform(0.2, 3, size=7)])
    xs = np.array([0.0, 1.0]) if not m.obs.support.continuous else rng.uniform(0.1, 4.0, 5)
    if m.obs.support.kind == "naturals":
        xs = np.arange(6.0)
    data = sum(compile_expr(e, (m.obs_name,))(xs) for e in laws.data_terms) + 0 * xs
    S = laws.statistics(xs)
    for t in thetas:
        f = laws.evaluate(t if m.dim > 1 else t[0])
        recon = data + f @ S
        direct = m.logpdf_fn(*t, xs)
        assert np.allclose(recon, direct, rtol=1e-12, atol=1e-12)


def test_average_log_likelihood_exponential(models):
    ll = average_log_likelihood(models["exponential"], [1.0, 2.0, 3.0])
    assert ll(1.0) == pytest.approx(-2.0, rel=1e-15)
    assert ll(2.0) == pytest.approx(-math.log(2) - 1.0, rel=1e-15)
    assert ll.statistic_means == (1.0, 2.0)
    assert ll.gradient(2.0)[0] == pytest.approx(0.0, abs=1e-14)


def test_average_log_likelihood_bernoulli(models):
    ll = average_log_likelihood(models["bernoulli"], [1, 0, 1, 1])
    assert ll(0.5) == pytest.approx(math.log(0.5), rel=1e-15)
    # 3/4 log theta + 1/4 log(1 - theta)
    assert ll(0.2) == pytest.approx(0.75 * math.log(0.2) + 0.25 * math.log(0.8), rel=1e-14)


def test_average_log_likelihood_errors(models):
    with pytest.raises(EmptyObservations):
        average_log_likelihood(models["exponential"], [])
    with pytest.raises(OutOfSupport):
        average_log_likelihood(models["exponential"], [1.0, -2.0])
    with pytest.raises(OutOfSupport):
        average_log_likelihood(models["bernoulli"], [0.5])


def test_non_separable_average_still_evaluates(models):
    ll = average_log_likelihood(models["lomax"], [1.0, 3.0])
    assert ll.laws.laws == ()
    t = 2.0
    assert ll(t) == pytest.approx(np.mean([math.log(t) - 2 * math.log(x + t) for x in (1.0, 3.0)]))


def test_coarse_graining_inverse_gamma(models):
    # E_pi[l] through the law expectations equals direct quadrature of pi(theta) l(theta)
    ll = average_log_likelihood(models["exponential"], [0.5, 1.5, 4.0])
    a, b = 2.0, 3.0
    law_means = [-(math.log(b) - special.digamma(a)), -a / b]
    pi = stats.invgamma(a, scale=b)
    direct, _ = sint.quad(lambda t: pi.pdf(t) * ll(t), 0, np.inf, epsabs=0, epsrel=1e-12)
    assert ll.coarse_grain(law_means) == pytest.approx(direct, rel=1e-9)


def test_mle_closed_forms(models):
    assert compute_mle(models["exponential"], [1, 2, 3])[0] == pytest.approx(2.0, rel=1e-10)
    assert compute_mle(models["bernoulli"], [1, 0, 1, 1])[0] == pytest.approx(0.75, rel=1e-10)
    assert compute_mle(models["poisson"], [0, 3, 4, 9])[0] == pytest.approx(4.0, rel=1e-10)
    assert compute_mle(models["gaussian"], [-1.0, 1.0])[0] == pytest.approx(0.0, abs=1e-10)
    mu, sigma = compute_mle(models["normal_mean_scale"], [1.0, 2.0, 4.0])
    assert mu == pytest.approx(7 / 3, rel=1e-9)
    assert sigma == pytest.approx(math.sqrt(14 / 9), rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.05, 50.0), min_size=1, max_size=10))
def test_exponential_mle_is_sample_mean(models, xs):
    assert compute_mle(models["exponential"], xs)[0] == pytest.approx(np.mean(xs), rel=1e-8)
