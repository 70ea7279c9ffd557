import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lipriors.dsl import parse_model
from lipriors.errors import Inconclusive
from lipriors.fisher import (BaseMeasure, check_normalization, check_properness,
                             fisher_batch, fisher_information, jeffreys_measure, score,
                             score_mean)
from lipriors.support import SupportSpec

# closed-form Fisher information of the catalog models
FISHER = {
    "exponential": lambda t: 1 / t ** 2,
    "bernoulli": lambda t: 1 / (t * (1 - t)),
    "bernoulli_counts": lambda t: 1 / (t * (1 - t)),
    "poisson": lambda t: 1 / t,
    "gaussian": lambda t: 1.0,
}
POINTS = {"exponential": [0.01, 0.5, 2.0, 300.0], "bernoulli": [1e-3, 0.2, 0.5, 0.97],
          "bernoulli_counts": [0.3, 0.8], "poisson": [0.05, 1.0, 7.5, 400.0],
          "gaussian": [-50.0, 0.0, 3.0]}

LOG_THETA = """\
model "exponential-log-scale"
param phi in (-inf, inf)
obs x in (0, inf) continuous
logpdf = -phi - x*exp(-phi)
"""


@pytest.mark.parametrize("name", sorted(FISHER))
def test_fisher_closed_forms(models, name):
    m = models[name]
    for t in POINTS[name]:
        F = fisher_information(m, t)
        assert F.matrix.shape == (1, 1)
        assert F.matrix[0, 0] == pytest.approx(FISHER[name](t), rel=1e-9)


def test_fisher_spec_points(models):
    assert fisher_information(models["exponential"], 2.0).matrix[0, 0] == pytest.approx(0.25, rel=1e-10)
    assert fisher_information(models["bernoulli"], 0.5).matrix[0, 0] == pytest.approx(4.0, rel=1e-12)
    assert fisher_information(models["bernoulli"], 0.5).method == "discrete-sum"


def test_fisher_two_parameters(models):
    # normal(mu, sigma): I = diag(1/sigma^2, 2/sigma^2)
    F = fisher_information(models["normal_mean_scale"], [0.7, 1.5]).matrix
    expected = np.diag([1 / 1.5 ** 2, 2 / 1.5 ** 2])
    assert np.allclose(F, expected, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("name", sorted(FISHER) + ["normal_mean_scale"])
def test_score_mean_vanishes(models, name):
    m = models[name]
    thetas = [[0.3, 2.0], [-4.0, 0.2]] if m.dim > 1 else [[t] for t in POINTS[name]]
    for t in thetas:
        assert np.linalg.norm(score_mean(m, t)) <= 1e-8


def test_score_pointwise(models):
    # d/dtheta (-log theta - x/theta) = -1/theta + x/theta^2
    s = score(models["exponential"], 2.0, 3.0)
    assert s[0] == pytest.approx(-0.5 + 0.75, rel=1e-12)


@pytest.mark.parametrize("name", sorted(FISHER) + ["normal_mean_scale", "lomax"])
def test_models_are_normalized(models, name):
    assert check_normalization(models[name]) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(st.floats(-30.0, 30.0))
def test_exponential_fisher_scale_free(log_theta):
    t = math.exp(log_theta)
    F = fisher_information(parse_model(_exp_source()), t).matrix[0, 0]
    assert F * t * t == pytest.approx(1.0, rel=1e-9)


def _exp_source():
    return ('model "e"\nparam theta in (0, inf)\nobs x in (0, inf) continuous\n'
            "logpdf = -log(theta) - x/theta\n")


def test_jeffreys_exponential_is_inverse_theta(models):
    m = jeffreys_measure(models["exponential"])
    grid = np.geomspace(1e-3, 1e3, 10)
    assert np.allclose(m(grid) * grid, 1.0, rtol=1e-9)
    assert m.properness == "improper"
    assert "theta^-1" in m.description


def test_jeffreys_bernoulli_is_proper_with_mass_pi(models):
    m = jeffreys_measure(models["bernoulli"])
    assert m.properness == "proper"
    assert m.mass == pytest.approx(math.pi, rel=1e-8)
    grid = np.linspace(0.05, 0.95, 10)
    assert np.allclose(m.normalized(grid), 1 / (math.pi * np.sqrt(grid * (1 - grid))), rtol=1e-8)


def test_jeffreys_reparameterization_invariance():
    # under phi = log theta, sqrt(I_phi) = sqrt(I_theta) |dtheta/dphi| = 1
    m = jeffreys_measure(parse_model(LOG_THETA))
    phis = np.linspace(-20, 20, 9)
    assert np.allclose(m(phis), 1.0, rtol=1e-9)


def test_jeffreys_density_two_parameters(models):
    # sqrt(det diag(1/s^2, 2/s^2)) = sqrt(2)/s^2
    m = jeffreys_measure(models["normal_mean_scale"])
    pts = np.array([[0.0, 0.5], [3.0, 2.0], [-1.0, 10.0]])
    assert np.allclose(m(pts), math.sqrt(2) / pts[:, 1] ** 2, rtol=1e-8)


def test_fisher_batch_matches_pointwise(models):
    m = models["poisson"]
    thetas = np.array([0.5, 2.0, 9.0])
    F = fisher_batch(m, thetas)
    assert F.shape == (3, 1, 1)
    assert np.allclose(F[:, 0, 0], 1 / thetas, rtol=1e-10)


def test_check_properness_known_measures():
    pos = SupportSpec.interval(0, math.inf)
    gamma = BaseMeasure.from_function(lambda t: t * np.exp(-t), pos)
    p = check_properness(gamma, pos)
    assert p.status == "proper" and p.mass == pytest.approx(1.0, rel=1e-10)
    assert check_properness(BaseMeasure.from_function(lambda t: 1 / t, pos), pos).status == "improper"
    assert check_properness(BaseMeasure.uniform(pos), pos).status == "improper"


def test_properness_inconclusive_when_density_fails_everywhere():
    pos = SupportSpec.interval(0, math.inf)

    def broken(t):
        return np.full(np.shape(t), np.nan)

    with pytest.raises(Inconclusive):
        check_properness(BaseMeasure.from_function(broken, pos), pos)
