"""Average log-likelihood, coarse-graining, conservation laws and the MLE."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dsl import ModelSpec, SeparableDecomposition, decompose_log_density
from .errors import (DomainError, EmptyObservations, NoLaws, NotConverged,
                     NotSeparable, OutOfSupport)
from .expr import BinOp, Const, Expr, compile_expr, diff, free_vars, to_text
from .fisher import _theta_rows, score_steps
from .numerics import gradient_fd, newton_minimize

PARAM_TERM = "param"
MIXED_FACTOR = "mixed"


@dataclass(frozen=True)
class Law:
    """One conserved quantity f(theta) and the statistic s(x) it multiplies in log p.

    A parameter-only term contributes s = 1. When the same f appears in several
    terms their statistics are summed, so log p = c(x) + sum_k f_k(theta) s_k(x).
    """
    expr: Expr
    statistic: Expr
    sources: tuple

    @property
    def text(self) -> str:
        return to_text(self.expr)


@dataclass(frozen=True)
class ConservationLaws:
    laws: tuple
    params: tuple
    obs: str
    data_terms: tuple = ()

    def __len__(self):
        return len(self.laws)

    def __iter__(self):
        return iter(self.laws)

    def __getitem__(self, i):
        return self.laws[i]

    @property
    def texts(self) -> list[str]:
        return [law.text for law in self.laws]

    def evaluate(self, theta) -> np.ndarray:
        """Law values, shape (r, n) for n parameter points (rows of `theta`)."""
        t = np.asarray(theta, dtype=float)
        cols = [t] if len(self.params) == 1 else [t[..., i] for i in range(len(self.params))]
        out = [np.broadcast_to(compile_expr(law.expr, self.params)(*cols), np.shape(cols[0]))
               for law in self.laws]
        return np.array(out, dtype=float)

    def statistics(self, xs) -> np.ndarray:
        """Per-law statistics s_k(x_i), shape (r, n)."""
        xs = np.asarray(xs, dtype=float).ravel()
        return np.array([np.broadcast_to(compile_expr(law.statistic, (self.obs,))(xs), xs.shape)
                         for law in self.laws], dtype=float)


def extract_conservation_laws(d: SeparableDecomposition, model: ModelSpec | None = None) -> ConservationLaws:
    """Every parameter-only term and every mixed-term parameter factor, as raw laws.

    Signs and scales are kept as written; they are absorbed by the multipliers.
    """
    order: list[str] = []
    found: dict[str, list] = {}
    for term in d.param_terms:
        _add_law(order, found, term, Const(1.0), PARAM_TERM)
    for m in d.mixed:
        _add_law(order, found, m.theta_factor, m.data_factor, MIXED_FACTOR)
    if not order:
        raise NoLaws("the log-density does not depend on the parameters")
    laws = []
    for key in order:
        expr, stats, sources = found[key]
        stat = stats[0]
        for s in stats[1:]:
            stat = BinOp("+", stat, s)
        laws.append(Law(expr, stat, tuple(sources)))
    if model is not None:
        params, obs = model.param_names, model.obs_name
    else:
        params = tuple(sorted(set().union(*(free_vars(law.expr) for law in laws))))
        obs_vars = set().union(*(free_vars(law.statistic) for law in laws))
        obs = next(iter(obs_vars)) if obs_vars else "x"
    return ConservationLaws(tuple(laws), params, obs, d.data_terms)


def _add_law(order, found, expr, stat, source):
    key = to_text(expr)
    if key not in found:
        order.append(key)
        found[key] = (expr, [stat], [source])
    else:
        found[key][1].append(stat)
        if source not in found[key][2]:
            found[key][2].append(source)


def laws_for_model(model: ModelSpec) -> ConservationLaws:
    return extract_conservation_laws(decompose_log_density(model), model)


@dataclass(frozen=True)
class AvgLogLik:
    """theta -> (1/n) sum_i log p(x_i | theta), with the sample statistics of each law."""
    model: ModelSpec
    obs: tuple
    laws: ConservationLaws
    statistic_means: tuple
    data_mean: float

    def __call__(self, theta) -> float | np.ndarray:
        rows = np.asarray(theta, dtype=float)
        scalar = rows.ndim == 0 or (rows.ndim == 1 and rows.size == self.model.dim)
        rows = rows.reshape(-1, self.model.dim)
        cols = [rows[:, i][:, None] for i in range(self.model.dim)]
        x = np.asarray(self.obs, dtype=float)[None, :]
        vals = self.model.logpdf_fn(*cols, x).mean(axis=1)
        return float(vals[0]) if scalar else vals

    def coarse_grain(self, law_expectations) -> float:
        """E_pi[l] from the expectations <f_k> under a density pi over theta."""
        return float(self.data_mean + np.dot(np.asarray(law_expectations, dtype=float),
                                             np.asarray(self.statistic_means)))

    def gradient(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        names = self.model.param_names + (self.model.obs_name,)
        x = np.asarray(self.obs, dtype=float)
        parts = [diff(self.model.logpdf, p) for p in self.model.param_names]
        if all(p is not None for p in parts):
            try:
                return np.array([compile_expr(p, names)(*theta, x).mean() for p in parts])
            except DomainError:
                pass
        h = score_steps(self.model, theta.reshape(1, -1))[0]
        return gradient_fd(lambda t: self(t), theta, h)


def average_log_likelihood(m: ModelSpec, pseudo_obs: Sequence[float], laws: ConservationLaws | None = None) -> AvgLogLik:
    xs = tuple(float(v) for v in np.asarray(pseudo_obs, dtype=float).ravel())
    if not xs:
        raise EmptyObservations("at least one pseudo-observation is required")
    sup = m.obs.support
    bad = [v for v in xs if not sup.contains(v)]
    if bad:
        raise OutOfSupport(f"observation {bad[0]:g} is outside {sup.to_text()}")
    if laws is None:
        try:
            laws = laws_for_model(m)
        except (NotSeparable, NoLaws):  # the average itself needs no decomposition
            laws = ConservationLaws((), m.param_names, m.obs_name)
    if laws.laws:
        means = tuple(float(v) for v in laws.statistics(xs).mean(axis=1))
        args = (m.obs_name,)
        data_mean = float(sum(np.mean(np.broadcast_to(compile_expr(e, args)(np.array(xs)), len(xs)))
                              for e in laws.data_terms))
    else:
        means, data_mean = (), float("nan")
    return AvgLogLik(m, xs, laws, means, data_mean)


def compute_mle(m: ModelSpec, obs: Sequence[float], init=None) -> np.ndarray:
    """argmax of the average log-likelihood by damped Newton on its negative."""
    ll = average_log_likelihood(m, obs)
    if init is None:
        init = [p.support.midpoint() for p in m.params]
    x0 = _theta_rows(m, np.atleast_1d(np.asarray(init, dtype=float)).reshape(1, -1))[0]

    def obj(t):
        if not all(p.support.contains_interior(v) for p, v in zip(m.params, t)):
            return np.inf
        return -ll(t)

    def grad(t):
        return -ll.gradient(t)

    def hess(t):
        h = score_steps(m, np.asarray(t, dtype=float).reshape(1, -1))[0]
        H = np.array([gradient_fd(lambda u: grad(u)[i], t, h) for i in range(m.dim)])
        return 0.5 * (H + H.T)

    res = newton_minimize(obj, grad, hess, x0, tol=1e-10)
    if not res.converged:
        raise NotConverged(f"MLE did not converge (|grad| = {res.grad_norm:.3e})", res)
    return res.argmin


__all__ = ["Law", "ConservationLaws", "AvgLogLik", "average_log_likelihood",
           "extract_conservation_laws", "laws_for_model", "compute_mle"]
