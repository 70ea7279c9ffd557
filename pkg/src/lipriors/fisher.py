"""Score function, Fisher information and the Jeffreys base measure."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dsl import ModelSpec
from .errors import ComputationFailed, DomainError, Inconclusive, NegativeDeterminant
from .expr import compile_expr, diff
from .numerics import FD_STEP, _growth, integrate
from .support import FINITE, NATURALS, SupportSpec

FISHER_RTOL = 1e-10
# finite-difference scores (the fallback) carry noise near 1e-8 relative; a
# stalled refinement is accepted when every component is resolved to this level
FISHER_NOISE_RTOL = 1e-6
BATCH = 128
# a well-standardized x-integral needs about 20 pieces
X_MAX_PIECES = 400


@dataclass(frozen=True)
class FisherMatrix:
    theta: np.ndarray
    matrix: np.ndarray
    method: str  # "quadrature" | "discrete-sum"

    def det(self) -> float:
        return float(np.linalg.det(self.matrix))


def _theta_rows(model: ModelSpec, thetas) -> np.ndarray:
    t = np.asarray(thetas, dtype=float)
    if t.ndim == 0:
        t = t.reshape(1, 1)
    elif t.ndim == 1:
        t = t.reshape(-1, 1) if model.dim == 1 else t.reshape(1, -1)
    if t.shape[1] != model.dim:
        raise ValueError(f"expected {model.dim} parameter value(s) per point, got {t.shape[1]}")
    for i, p in enumerate(model.params):
        col = t[:, i]
        if not np.all((col > p.support.lo) & (col < p.support.hi)):
            raise DomainError(f"{p.name} must lie in the interior of {p.support.to_text()}")
    return t


def score_steps(model: ModelSpec, thetas: np.ndarray) -> np.ndarray:
    """Finite-difference steps kept strictly inside the parameter support.

    h = cbrt(eps) * min(max(1, |theta|), distance to the nearest finite endpoint),
    but never below two ulps and never beyond half that distance.
    """
    h = np.empty_like(thetas)
    for i, p in enumerate(model.params):
        col = thetas[:, i]
        dist = p.support.distance_to_boundary(col)
        base = FD_STEP * np.minimum(np.maximum(1.0, np.abs(col)), dist)
        base = np.maximum(base, 2.0 * np.spacing(np.abs(col)))
        h[:, i] = np.minimum(base, 0.5 * dist)
    return h


def score_functions(model: ModelSpec):
    """Compiled symbolic partial derivatives of log p, or None when one is unavailable."""
    names = model.param_names + (model.obs_name,)
    out = []
    for p in model.param_names:
        d = diff(model.logpdf, p)
        if d is None:
            return None
        out.append(compile_expr(d, names))
    return tuple(out)


def _fd_scores(model: ModelSpec, thetas, cols, x):
    fn = model.logpdf_fn
    h = score_steps(model, thetas)
    scores = []
    for i in range(model.dim):
        up = list(cols)
        dn = list(cols)
        up[i] = cols[i] + h[:, i][:, None]
        dn[i] = cols[i] - h[:, i][:, None]
        width = up[i] - dn[i]
        scores.append((fn(*up, x) - fn(*dn, x)) / width)
    return scores


def _log_and_scores(model: ModelSpec, thetas: np.ndarray, x: np.ndarray):
    """log p and scores; thetas (n, d), x broadcastable to (n, m).

    Scores are symbolic derivatives when every partial is expressible in the
    DSL, central differences otherwise (or where a derivative is undefined).
    """
    cols = [thetas[:, i][:, None] for i in range(model.dim)]
    lp = model.logpdf_fn(*cols, x)
    fns = score_functions(model)
    if fns is not None:
        try:
            return lp, [np.broadcast_to(f(*cols, x), lp.shape) for f in fns]
        except DomainError:
            pass
    return lp, _fd_scores(model, thetas, cols, x)


def score(model: ModelSpec, theta, x) -> np.ndarray:
    """d log p(x|theta) / d theta at a single point."""
    rows = _theta_rows(model, np.atleast_1d(np.asarray(theta, dtype=float)).reshape(1, -1))
    if not model.obs.support.contains(x):
        raise DomainError(f"observation {x} outside {model.obs.support.to_text()}")
    _, s = _log_and_scores(model, rows, np.array([[float(x)]]))
    return np.array([float(si[0, 0]) for si in s])


# --- locating the bulk of p(.|theta) ---------------------------------------------

def _golden_max(f, lo, hi, iters=40):
    """Vectorized golden-section maximization on brackets [lo, hi]."""
    r = (math.sqrt(5) - 1) / 2
    a, b = lo.copy(), hi.copy()
    c = b - r * (b - a)
    d = a + r * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = b - r * (b - a)
        d_new = a + r * (b - a)
        c, d = np.where(left, c_new, d), np.where(left, c, d_new)
        fc_new = f(np.where(left, c_new, d))
        fd_new = f(np.where(left, d, d_new))
        fc, fd = np.where(left, fc_new, fd), np.where(left, fc, fd_new)
    return 0.5 * (a + b)


def _lenient_logp(model: ModelSpec, thetas):
    fn = compile_expr(model.logpdf, model.param_names + (model.obs_name,), strict=False)
    cols = [thetas[:, i][:, None] for i in range(model.dim)]

    def lp(x):
        v = fn(*cols, x)
        return np.where(np.isfinite(v), v, -np.inf)
    return lp


def locate(model: ModelSpec, thetas: np.ndarray):
    """Per-row (mode, width) of the data density, used to standardize the x-integral."""
    sup = model.obs.support
    lp = _lenient_logp(model, thetas)
    n = thetas.shape[0]
    if sup.kind == NATURALS:
        grid = np.unique(np.concatenate([np.arange(0.0, 16.0), np.round(np.geomspace(16, 2.0 ** 45, 200))]))
        vals = lp(grid[None, :])
        i = np.argmax(vals, axis=1)
        lo = grid[np.maximum(i - 1, 0)]
        hi = grid[np.minimum(i + 1, grid.size - 1)]
        mode = _golden_max(lambda x: lp(np.floor(x)[:, None])[:, 0], lo, hi + 1.0)
        cand = np.stack([np.floor(mode) - 1, np.floor(mode), np.floor(mode) + 1], axis=1)
        cand = np.maximum(cand, 0.0)
        best = np.argmax(lp(cand), axis=1)
        mode = cand[np.arange(n), best]
        # curvature of log p at the mode sets the width of the bulk
        around = lp(np.stack([np.maximum(mode - 1, 0), mode, mode + 1], axis=1))
        with np.errstate(invalid="ignore", divide="ignore"):
            curv = 2 * around[:, 1] - around[:, 0] - around[:, 2]
            width = np.where(np.isfinite(curv) & (curv > 0), 1.0 / np.sqrt(curv), 1.0)
        return mode, np.maximum(width, 1.0)
    lo_s, hi_s = sup.lo, sup.hi
    offsets = np.geomspace(1e-300, 1e300, 1201)
    if math.isfinite(lo_s) and math.isfinite(hi_s):
        return None, None
    if math.isfinite(lo_s):
        grid = lo_s + offsets
    elif math.isfinite(hi_s):
        grid = hi_s - offsets[::-1]
    else:
        grid = np.concatenate([-offsets[::-1], [0.0], offsets])
    vals = lp(grid[None, :])
    if not np.all(np.isfinite(np.max(vals, axis=1))):
        raise ComputationFailed("log-density is not finite anywhere on the probe grid")
    i = np.argmax(vals, axis=1)
    a = grid[np.maximum(i - 1, 0)]
    b = grid[np.minimum(i + 1, grid.size - 1)]
    if math.isfinite(lo_s):
        a = np.where(i == 0, lo_s, a)
    if math.isfinite(hi_s):
        b = np.where(i == grid.size - 1, hi_s, b)
    mode = _golden_max(lambda x: lp(x[:, None])[:, 0], a, b)
    peak = lp(mode[:, None])[:, 0]
    width = np.full(n, offsets[-1])
    for sign in (1.0, -1.0):
        pts = mode[:, None] + sign * offsets[None, :]
        inside = (pts > lo_s) & (pts < hi_s)
        v = np.where(inside, lp(np.where(inside, pts, mode[:, None])), -np.inf)
        dropped = (v <= peak[:, None] - 1.0) & inside
        first = np.where(dropped.any(axis=1), np.argmax(dropped, axis=1), offsets.size - 1)
        width = np.minimum(width, offsets[first])
    return mode, width


# --- expectations under the data model --------------------------------------------

def param_scales(model: ModelSpec, thetas: np.ndarray) -> np.ndarray:
    """Per-point parameter scales: distance to the boundary, or max(1, |theta|) on R.

    Scores are multiplied by these before squaring so that Fisher entries stay
    representable when theta approaches 0 or grows without bound.
    """
    c = np.empty_like(thetas)
    for i, p in enumerate(model.params):
        col = thetas[:, i]
        dist = p.support.distance_to_boundary(col)
        c[:, i] = np.where(np.isfinite(dist), dist, np.maximum(1.0, np.abs(col)))
    return c


def _components(model, thetas, x, jac, scales):
    """Stacked integrands [p, p*S_i, p*S_i*S_j (i<=j)] of shape (n, C, m).

    Scores are pre-multiplied by `scales` (n, d).
    """
    lp, s = _log_and_scores(model, thetas, x)
    s = [si * scales[:, i][:, None] for i, si in enumerate(s)]
    p = np.exp(lp) * jac
    comps = [p]
    comps += [np.where(p > 0, p * si, 0.0) for si in s]
    d = model.dim
    for i in range(d):
        for j in range(i, d):
            comps.append(np.where(p > 0, p * s[i] * s[j], 0.0))
    return np.stack(comps, axis=1)  # (n, C, m)


def _unpack(model, totals):
    """totals (n, C) -> mass (n,), mean score (n, d), fisher (n, d, d)."""
    d = model.dim
    mass = totals[:, 0]
    mean = totals[:, 1:1 + d]
    fisher = np.empty((totals.shape[0], d, d))
    k = 1 + d
    for i in range(d):
        for j in range(i, d):
            fisher[:, i, j] = fisher[:, j, i] = totals[:, k]
            k += 1
    return mass, mean, fisher


def _expect_continuous(model, thetas, scales):
    sup = model.obs.support
    n = thetas.shape[0]
    mode, width = locate(model, thetas)
    if mode is None:
        std_support = sup

        def to_x(u):
            return np.broadcast_to(u[None, :], (n, u.size)), 1.0
    elif math.isfinite(sup.lo) or math.isfinite(sup.hi):
        edge = sup.lo if math.isfinite(sup.lo) else sup.hi
        direction = 1.0 if math.isfinite(sup.lo) else -1.0
        scale = np.abs(mode - edge) + width
        std_support = SupportSpec.interval(0.0, math.inf)

        def to_x(u):
            return edge + direction * scale[:, None] * u[None, :], scale[:, None]
    else:
        std_support = SupportSpec.interval(-math.inf, math.inf)

        def to_x(u):
            return mode[:, None] + width[:, None] * u[None, :], width[:, None]

    def f(u):
        with np.errstate(over="ignore"):  # far tails overflow to inf, where p = 0
            x, jac = to_x(u)
        c = _components(model, thetas, x, jac, scales)
        return c.reshape(-1, u.size)

    r = integrate(f, std_support, tol=0.0, rtol=FISHER_RTOL, detect_divergence=False,
                  max_pieces=X_MAX_PIECES)
    if r.diverged:
        err = np.asarray(r.error_estimate, dtype=float)
        scale = np.maximum(np.asarray(r.abs_value, dtype=float), 1e-300)
        if r.reason != "stall" or not np.all(err <= FISHER_NOISE_RTOL * scale):
            raise ComputationFailed(f"quadrature over the observable failed ({r.reason})")
    return np.asarray(r.value).reshape(n, -1)


def _expect_discrete(model, thetas, scales):
    sup = model.obs.support
    if sup.kind == FINITE:
        xs = np.array(sup.values)[None, :]
        c = _components(model, thetas, xs, 1.0, scales)
        return c.sum(axis=2)
    return _expect_naturals(model, thetas, scales)


def _expect_naturals(model, thetas, scales, tol=1e-15, run=32, budget=1 << 22):
    """Sums over the naturals on windows around each row's mode, doubled until the
    outer `run` terms on each open side are below tol times the largest component sum."""
    centres, widths = locate(model, thetas)
    n = thetas.shape[0]
    out = np.zeros((n, _n_components(model)))
    if np.any(12.0 * widths > budget):
        raise ComputationFailed("discrete sum would exceed its term budget")
    pending = np.arange(n)
    half = int(2 ** np.ceil(np.log2(max(64.0, 12.0 * float(np.max(widths))))))
    while pending.size:
        if half > budget:
            raise ComputationFailed("discrete sum did not terminate (budget)")
        offs = np.arange(-half, half, dtype=float)
        step = max(1, (1 << 22) // (2 * half * out.shape[1]))
        still = []
        for s0 in range(0, pending.size, step):
            idx = pending[s0:s0 + step]
            xs = centres[idx][:, None] + offs[None, :]
            valid = xs >= 0
            c = _components(model, thetas[idx], np.where(valid, xs, 0.0), 1.0, scales[idx])
            c = np.where(valid[:, None, :], c, 0.0)
            l1 = np.abs(c).sum(axis=2)
            thresh = tol * l1.max(axis=1)[:, None, None]
            right_ok = np.all(np.abs(c[:, :, -run:]) <= thresh, axis=(1, 2))
            left_ok = (xs[:, 0] <= 0) | np.all(np.abs(c[:, :, :run]) <= thresh, axis=(1, 2))
            done = right_ok & left_ok
            out[idx[done]] = c[done].sum(axis=2)
            still.append(idx[~done])
        pending = np.concatenate(still)
        half *= 2
    return out


def _n_components(model):
    d = model.dim
    return 1 + d + d * (d + 1) // 2


def scaled_expectations(model: ModelSpec, thetas):
    """Mass, scaled mean score, scaled Fisher matrix and the scales, per row.

    With c = param_scales, the scaled Fisher matrix is I_ij * c_i * c_j.
    """
    rows = _theta_rows(model, thetas)
    chunks = []
    scales = param_scales(model, rows)
    for start in range(0, rows.shape[0], BATCH):
        part, sc = rows[start:start + BATCH], scales[start:start + BATCH]
        if model.obs.support.continuous:
            chunks.append(_expect_continuous(model, part, sc))
        else:
            chunks.append(_expect_discrete(model, part, sc))
    mass, mean, fisher = _unpack(model, np.concatenate(chunks, axis=0))
    return mass, mean, fisher, scales


def data_expectations(model: ModelSpec, thetas):
    """Mass, mean score and Fisher matrix of p(.|theta) for each row of `thetas`."""
    mass, mean, fisher, c = scaled_expectations(model, thetas)
    with np.errstate(over="ignore"):
        return mass, mean / c, fisher / (c[:, :, None] * c[:, None, :])


def _method(model):
    return "quadrature" if model.obs.support.continuous else "discrete-sum"


def score_mean(model: ModelSpec, theta) -> np.ndarray:
    """E[score | theta]; zero for regular models."""
    _, mean, _ = data_expectations(model, np.atleast_1d(theta).reshape(1, -1))
    return mean[0]


def fisher_information(model: ModelSpec, theta) -> FisherMatrix:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    _, _, fisher = data_expectations(model, theta.reshape(1, -1))
    return FisherMatrix(theta, fisher[0], _method(model))


def fisher_batch(model: ModelSpec, thetas) -> np.ndarray:
    """Fisher matrices for many parameter points, shape (n, d, d)."""
    return data_expectations(model, thetas)[2]


def check_normalization(model: ModelSpec, grid=None) -> float:
    """Largest |integral of p(x|theta) dx - 1| over a parameter probe grid."""
    mass, _, _ = data_expectations(model, _default_grid(model) if grid is None else grid)
    return float(np.max(np.abs(mass - 1.0)))


def _default_grid(model: ModelSpec, n: int = 10) -> np.ndarray:
    if model.dim == 1:
        return model.param_support.interior_grid(n).reshape(-1, 1)
    axes = [p.support.interior_grid(3) for p in model.params]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


# --- base measures -----------------------------------------------------------------

@dataclass(frozen=True)
class Properness:
    status: str  # "proper" | "improper"
    mass: float | None
    reason: str = ""


@dataclass
class BaseMeasure:
    """Unnormalized density on parameter space.

    `density` maps an array of parameter points ((n,) for scalar models, (n, d)
    otherwise) to nonnegative values.
    """
    density: Callable[[np.ndarray], np.ndarray]
    support: SupportSpec | tuple
    properness: str = "unknown"  # "proper" | "improper" | "unknown"
    mass: float | None = None
    description: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    def __call__(self, theta):
        return self.density(theta)

    def normalized(self, theta):
        if self.properness != "proper":
            raise ValueError("only proper measures can be normalized")
        return self.density(theta) / self.mass

    @classmethod
    def from_function(cls, fn, support, description=""):
        m = cls(fn, support, description=description)
        return m

    @classmethod
    def uniform(cls, support: SupportSpec):
        return cls(lambda t: np.ones(np.shape(np.asarray(t))[:1] or (1,)), support,
                   description="uniform", properness="unknown")


def _slab_masses(fn, support: SupportSpec, end: int, max_slabs: int = 24) -> list:
    """Masses of nested slabs towards one end, stopping at the first unevaluable slab."""
    lo, hi = support.lo, support.hi
    finite = math.isfinite(lo) if end < 0 else math.isfinite(hi)
    if math.isfinite(lo) and math.isfinite(hi):
        centre = 0.5 * (lo + hi)
    elif math.isfinite(lo):
        centre = lo + 1.0
    elif math.isfinite(hi):
        centre = hi - 1.0
    else:
        centre = 0.0
    edge = (lo if end < 0 else hi) if finite else None
    out = []
    for k in range(max_slabs):
        if finite:
            d0, d1 = abs(centre - edge) * 4.0 ** -k, abs(centre - edge) * 4.0 ** -(k + 1)
            a, b = sorted((edge - end * d0, edge - end * d1))
        else:
            r0 = 0.0 if k == 0 else 4.0 ** (k - 1)
            a, b = sorted((centre + end * r0, centre + end * 4.0 ** k))
        try:
            r = integrate(lambda t: np.asarray(fn(t), dtype=float), SupportSpec.interval(a, b),
                          tol=0.0, rtol=1e-6, detect_divergence=False)
        except (ComputationFailed, DomainError, FloatingPointError):
            break
        if r.diverged:
            break
        out.append(float(r.value))
    return out


def _probe_by_slabs(fn, support: SupportSpec) -> Properness:
    masses = {end: _slab_masses(fn, support, end) for end in (-1, 1)}
    for end, m in masses.items():
        if len(m) >= 5:
            v = np.array(m)[None, :]
            if _growth(v, np.array([v.sum()])):
                return Properness("improper", None,
                                  f"mass grows across the last 5 of {len(m)} evaluable cutoffs")
    raise Inconclusive("measure not evaluable far enough out to decide properness")


def check_properness(measure, support: SupportSpec) -> Properness:
    """Decide whether a nonnegative (unnormalized) density has finite mass.

    When the density cannot be evaluated everywhere the integral needs (for
    instance a Fisher matrix at a parameter so large the data density
    underflows), growth is judged on the nested cutoffs that can be evaluated.
    """
    fn = measure.density if isinstance(measure, BaseMeasure) else measure
    try:
        r = integrate(lambda t: np.asarray(fn(t), dtype=float), support)
    except (ComputationFailed, DomainError):
        return _probe_by_slabs(fn, support)
    if r.reason == "growth":
        return Properness("improper", None, "mass grows across successive cutoffs")
    if r.reason == "nonfinite":
        return _probe_by_slabs(fn, support)
    if r.diverged:
        raise Inconclusive(f"cannot decide properness ({r.reason}); partial mass {r.value:.6g}")
    return Properness("proper", float(r.value))


def _describe_power_law(fn, support: SupportSpec) -> str:
    """Describe fn as const * (theta-lo)^a * (hi-theta)^b when that fits to 1e-6."""
    grid = support.interior_grid(10)
    cols, names = [np.ones_like(grid)], []
    if math.isfinite(support.lo):
        cols.append(np.log(grid - support.lo))
        names.append("theta" if support.lo == 0 else f"(theta - {support.lo:g})")
    if math.isfinite(support.hi):
        cols.append(np.log(support.hi - grid))
        names.append(f"({support.hi:g} - theta)")
    try:
        y = np.log(np.asarray(fn(grid), dtype=float))
    except (DomainError, ComputationFailed, FloatingPointError):
        return ""
    X = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    if np.max(np.abs(X @ coef - y)) > 1e-6:
        return ""
    parts = []
    for name, c in zip(names, coef[1:]):
        c = round(float(c), 6)
        if abs(c) < 1e-6:
            continue
        parts.append(f"{name}^{c:g}")
    return "proportional to " + (" * ".join(parts) if parts else "a constant")


def jeffreys_measure(model: ModelSpec, grid=None) -> BaseMeasure:
    """theta -> sqrt(det I(theta)), with values cached per parameter point."""
    cache: dict = {}

    def density(theta):
        rows = np.asarray(theta, dtype=float)
        scalar_in = rows.ndim == 0
        rows = rows.reshape(-1, model.dim)
        keys = [tuple(r) for r in rows]
        todo = [i for i, k in enumerate(keys) if k not in cache]
        if todo:
            uniq = {}
            for i in todo:
                uniq.setdefault(keys[i], i)
            pts = rows[list(uniq.values())]
            _, _, Fs, c = scaled_expectations(model, pts)
            det = np.linalg.det(Fs) if model.dim > 1 else Fs[:, 0, 0]
            if np.any(det < -1e-8):
                bad = pts[np.argmin(det)]
                raise NegativeDeterminant(f"det I = {det.min():.3e} < 0 at theta = {bad}")
            vals = np.sqrt(np.maximum(det, 0.0)) / np.prod(c, axis=1)
            for k, v in zip(uniq.keys(), vals):
                cache[k] = float(v)
        out = np.array([cache[k] for k in keys])
        return out[0] if scalar_in else out

    probe = _default_grid(model) if grid is None else np.asarray(grid, dtype=float).reshape(-1, model.dim)
    F = fisher_batch(model, probe)
    eig = np.linalg.eigvalsh(F)
    if np.any(eig < -1e-8):
        raise NegativeDeterminant(f"Fisher matrix not positive semi-definite (min eigenvalue {eig.min():.3e})")
    if model.dim == 1:
        support = model.param_support
        m = BaseMeasure(density, support, description="sqrt(det I(theta))", _cache=cache)
        try:
            prop = check_properness(m, support)
            m.properness, m.mass = prop.status, prop.mass
        except Inconclusive:
            m.properness = "unknown"
        law = _describe_power_law(density, support)
        if law:
            m.description = f"sqrt(det I(theta)), {law}"
        return m
    return BaseMeasure(density, tuple(p.support for p in model.params),
                       description="sqrt(det I(theta))", _cache=cache)
