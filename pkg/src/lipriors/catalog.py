"""Closed-form reference families, family matching and conjugate updates.

Each known family is an exponential family over one parameter, recorded as a
kernel basis b_j(theta) with hyperparameter-dependent coefficients c_j, so that
log pdf = sum_j c_j b_j(theta) + const. Aliasing between multipliers of an
induced family and hyperparameters is a linear least-squares fit of the
family's log-density onto that basis; for the shipped models it reproduces

    exponential   inverse-gamma(alpha, beta)   lambda = (-alpha, -beta)
    bernoulli     beta(a, b)                   lambda = (1 - a - b, 1/2 - a)
    poisson       gamma(alpha, rate beta)      lambda = (-beta, 1/2 - alpha)
    gaussian      normal(mu, sigma)            lambda = (-1/sigma^2, -mu/sigma^2)

with the laws in the order they are extracted from the model file.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from .conservation import laws_for_model
from .dsl import ModelSpec
from .errors import ComputationFailed, InvalidHyperparameters, OutOfSupport
from .maxent import InducedFamily, family_density, log_partition, quantiles
from .numerics import integrate
from .support import SupportSpec

ALIAS_POINTS = 25
ALIAS_RTOL = 1e-7
MATCH_POINTS = 200
MATCH_MASS = (0.0005, 0.9995)


@dataclass(frozen=True)
class FamilyType:
    """A closed-form one-parameter family registered in the catalog."""
    name: str
    hyper_names: tuple
    support: SupportSpec
    basis: tuple  # callables theta -> b_j(theta)
    basis_text: tuple
    coefficients: Callable  # hyper -> c
    from_coefficients: Callable  # c -> hyper
    valid: Callable  # hyper -> bool
    frozen: Callable  # hyper -> scipy.stats frozen distribution
    basis_moments: Callable  # hyper -> E[b_j]


@dataclass(frozen=True)
class KnownFamily:
    """A family member with concrete hyperparameters."""
    type: FamilyType
    params: tuple

    def __post_init__(self):
        if len(self.params) != len(self.type.hyper_names) or not self.type.valid(self.params):
            raise InvalidHyperparameters(
                f"{self.type.name} needs {', '.join(self.type.hyper_names)} in its valid region, "
                f"got {self.params}")

    @property
    def name(self) -> str:
        return self.type.name

    @property
    def support(self) -> SupportSpec:
        return self.type.support

    def pdf(self, theta):
        return self.type.frozen(self.params).pdf(theta)

    def logpdf(self, theta):
        return self.type.frozen(self.params).logpdf(theta)

    def ppf(self, q):
        return self.type.frozen(self.params).ppf(q)

    def mean(self) -> float:
        return float(self.type.frozen(self.params).mean())

    def basis_moments(self) -> np.ndarray:
        return np.asarray(self.type.basis_moments(self.params), dtype=float)

    def mass(self) -> float:
        r = integrate(lambda t: self.pdf(t), self.support, tol=0.0, rtol=1e-12)
        return float(r.value)

    def describe(self) -> str:
        args = ", ".join(f"{n}={v:.6g}" for n, v in zip(self.type.hyper_names, self.params))
        return f"{self.name}({args})"


def _positive(*idx):
    return lambda h: all(math.isfinite(h[i]) and h[i] > 0 for i in idx)


_POS = SupportSpec.interval(0.0, math.inf)
_UNIT = SupportSpec.interval(0.0, 1.0)
_REAL = SupportSpec.interval(-math.inf, math.inf)

INVERSE_GAMMA = FamilyType(
    "inverse-gamma", ("alpha", "beta"), _POS,
    (np.log, lambda t: 1.0 / t), ("log(theta)", "1/theta"),
    lambda h: (-h[0] - 1.0, -h[1]),
    lambda c: (-c[0] - 1.0, -c[1]),
    _positive(0, 1),
    lambda h: stats.invgamma(h[0], scale=h[1]),
    lambda h: (math.log(h[1]) - special.digamma(h[0]), h[0] / h[1]),
)

GAMMA = FamilyType(
    "gamma", ("alpha", "rate"), _POS,
    (np.log, lambda t: t), ("log(theta)", "theta"),
    lambda h: (h[0] - 1.0, -h[1]),
    lambda c: (c[0] + 1.0, -c[1]),
    _positive(0, 1),
    lambda h: stats.gamma(h[0], scale=1.0 / h[1]),
    lambda h: (special.digamma(h[0]) - math.log(h[1]), h[0] / h[1]),
)

BETA = FamilyType(
    "beta", ("a", "b"), _UNIT,
    (np.log, lambda t: np.log1p(-t)), ("log(theta)", "log(1 - theta)"),
    lambda h: (h[0] - 1.0, h[1] - 1.0),
    lambda c: (c[0] + 1.0, c[1] + 1.0),
    _positive(0, 1),
    lambda h: stats.beta(h[0], h[1]),
    lambda h: (special.digamma(h[0]) - special.digamma(h[0] + h[1]),
               special.digamma(h[1]) - special.digamma(h[0] + h[1])),
)

NORMAL = FamilyType(
    "normal", ("mu", "sigma"), _REAL,
    (lambda t: t * t, lambda t: t), ("theta^2", "theta"),
    lambda h: (-0.5 / h[1] ** 2, h[0] / h[1] ** 2),
    lambda c: (-0.5 * c[1] / c[0], math.sqrt(-0.5 / c[0]) if c[0] < 0 else float("nan")),
    lambda h: math.isfinite(h[0]) and math.isfinite(h[1]) and h[1] > 0,
    lambda h: stats.norm(h[0], h[1]),
    lambda h: (h[0] ** 2 + h[1] ** 2, h[0]),
)

FAMILIES: dict[str, FamilyType] = {}
# shipped model name -> name of the family its induced prior should match
CATALOG_MODELS: dict[str, str] = {}


def register_family(ft: FamilyType) -> None:
    FAMILIES[ft.name] = ft


def register_model(model_name: str, family_name: str) -> None:
    if family_name not in FAMILIES:
        raise KeyError(f"unknown family {family_name!r}")
    CATALOG_MODELS[model_name] = family_name


for _ft in (INVERSE_GAMMA, GAMMA, BETA, NORMAL):
    register_family(_ft)
for _m, _f in (("exponential", "inverse-gamma"), ("bernoulli", "beta"),
               ("bernoulli_counts", "beta"), ("poisson", "gamma"), ("gaussian", "normal")):
    register_model(_m, _f)


def known_family(name: str, params: Sequence[float]) -> KnownFamily:
    if name not in FAMILIES:
        raise KeyError(f"unknown family {name!r}; known: {', '.join(sorted(FAMILIES))}")
    return KnownFamily(FAMILIES[name], tuple(float(p) for p in params))


def known_pdf(name: str, params: Sequence[float], theta) -> float:
    """Closed-form density of a catalog family."""
    fam = known_family(name, params)
    t = float(theta)
    if not fam.support.contains_interior(t):
        raise OutOfSupport(f"theta = {t:g} is outside {fam.support.to_text()}")
    return float(fam.pdf(t))


# --- aliasing ----------------------------------------------------------------------

def _alias_grid(support: SupportSpec) -> np.ndarray:
    return support.interior_grid(ALIAS_POINTS)


def _design(ft: FamilyType, theta) -> np.ndarray:
    return np.stack([np.asarray(b(theta), dtype=float) for b in ft.basis]
                    + [np.ones_like(theta)], axis=1)


def _log_kernel(fam: InducedFamily, lam, theta) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(fam.base_values(theta)) + fam.exponent(lam, theta)


def _fit(X, y):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = np.max(np.abs(X @ coef - y)) / max(1.0, float(np.max(np.abs(y))))
    return coef, resid


def hyperparameters(fam: InducedFamily, lam, family: str | FamilyType) -> KnownFamily:
    """The catalog member whose kernel equals the family density at `lam`."""
    ft = FAMILIES[family] if isinstance(family, str) else family
    grid = _alias_grid(fam.support)
    y = _log_kernel(fam, lam, grid)
    if not np.all(np.isfinite(y)):
        raise ValueError("family density vanishes on the aliasing grid")
    coef, resid = _fit(_design(ft, grid), y)
    if resid > ALIAS_RTOL:
        raise ValueError(f"multipliers do not alias to {ft.name} (residual {resid:.2e})")
    return KnownFamily(ft, tuple(float(v) for v in ft.from_coefficients(coef[:-1])))


def multipliers_for(fam: InducedFamily, family: KnownFamily) -> np.ndarray:
    """lambda with m(theta) exp(-lambda . f(theta)) proportional to the catalog pdf."""
    ft = family.type
    grid = _alias_grid(fam.support)
    c = np.asarray(ft.coefficients(family.params), dtype=float)
    with np.errstate(divide="ignore"):
        target = _design(ft, grid)[:, :-1] @ c - np.log(fam.base_values(grid))
    # target = -lambda . f + const
    X = np.concatenate([-fam.law_values(grid).T, np.ones((grid.size, 1))], axis=1)
    coef, resid = _fit(X, target)
    if resid > ALIAS_RTOL:
        raise ValueError(f"{family.describe()} is not a member of this family (residual {resid:.2e})")
    return coef[:-1]


def identify(fam: InducedFamily, lam) -> KnownFamily | None:
    """The first registered family the density at `lam` aliases to, if any."""
    for ft in FAMILIES.values():
        if ft.support.lo != fam.support.lo or ft.support.hi != fam.support.hi:
            continue
        try:
            return hyperparameters(fam, lam, ft)
        except (ValueError, InvalidHyperparameters):
            continue
    return None


# --- verification -----------------------------------------------------------------

def match_grid(candidate: KnownFamily, n: int = MATCH_POINTS) -> np.ndarray:
    lo, hi = candidate.ppf(np.array(MATCH_MASS))
    return np.linspace(lo, hi, n)


def match_family(fam: InducedFamily, lam, candidate: KnownFamily, grid=None) -> float:
    """sup over the grid of |family density - candidate pdf| / candidate pdf."""
    grid = match_grid(candidate) if grid is None else np.asarray(grid, dtype=float)
    q = family_density(fam, lam, grid)
    p = candidate.pdf(grid)
    return float(np.max(np.abs(q - p) / p))


def _require_model_laws(fam: InducedFamily, m: ModelSpec):
    laws = laws_for_model(m)
    if laws.texts != fam.laws.texts:
        raise ValueError("family laws do not come from this model")
    return laws


def conjugate_update(fam: InducedFamily, lam, m: ModelSpec, data: Sequence[float]) -> np.ndarray:
    """Posterior multipliers: lambda' = lambda - sum_i s_k(x_i).

    Raises ImproperAtLambda when the posterior is not normalizable.
    """
    lam = np.asarray(lam, dtype=float).copy()
    xs = np.asarray(data, dtype=float).ravel()
    if xs.size == 0:
        return lam
    laws = _require_model_laws(fam, m)
    bad = [v for v in xs if not m.obs.support.contains(v)]
    if bad:
        raise OutOfSupport(f"observation {bad[0]:g} is outside {m.obs.support.to_text()}")
    post = lam - laws.statistics(xs).sum(axis=1)
    log_partition(fam, post)
    return post


def verify_closure(fam: InducedFamily, lam, m: ModelSpec, data: Sequence[float]) -> float:
    """Max relative error between the quadrature-normalized prior x likelihood and
    the family density at the updated multipliers."""
    post = conjugate_update(fam, lam, m, data)
    xs = np.asarray(data, dtype=float).ravel()

    def loglik(theta):
        t = np.atleast_1d(theta)
        if xs.size == 0:
            return np.zeros_like(t)
        return m.logpdf_fn(t[:, None], xs[None, :]).sum(axis=1)

    grid = np.linspace(*quantiles(fam, post, MATCH_MASS), MATCH_POINTS)
    shift = float(np.max(loglik(grid)))

    def unnorm(theta):
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        prior = family_density(fam, lam, t)
        out = np.zeros_like(t)
        live = prior > 0
        if np.any(live):
            with np.errstate(under="ignore"):
                out[live] = prior[live] * np.exp(loglik(t[live]) - shift)
        return out

    r = integrate(unnorm, fam.support, tol=0.0, rtol=1e-11)
    if r.diverged and r.reason != "stall":
        raise ComputationFailed(f"posterior normalization failed ({r.reason})")
    direct = unnorm(grid) / r.value
    fam_post = family_density(fam, post, grid)
    return float(np.max(np.abs(direct - fam_post) / fam_post))


def random_dataset(m: ModelSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    """Observations for closure checks: uniform on finite sets, 0..10 on the
    naturals, exponential on half-lines and standard normal on the real line."""
    sup = m.obs.support
    if sup.kind == "finite":
        return rng.choice(np.array(sup.values, dtype=float), size=size)
    if sup.kind == "naturals":
        return rng.integers(0, 11, size=size).astype(float)
    if math.isfinite(sup.lo) and math.isfinite(sup.hi):
        return rng.uniform(sup.lo, sup.hi, size=size)
    if math.isfinite(sup.lo):
        return sup.lo + rng.exponential(1.0, size=size)
    if math.isfinite(sup.hi):
        return sup.hi - rng.exponential(1.0, size=size)
    return rng.standard_normal(size)
