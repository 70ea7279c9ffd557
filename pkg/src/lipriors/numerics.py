"""Numerical kernels: adaptive quadrature, discrete sums, finite differences, Newton.

Integrands are vectorized: ``f(x)`` receives a 1-D array of points and returns an
array of shape ``(n,)`` or ``(components, n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial import legendre
from scipy import optimize

from .errors import ComputationFailed, NotConverged, PriorError, SingularHessian
from .support import FINITE, NATURALS, SupportSpec

EPS = np.finfo(float).eps
FD_STEP = EPS ** (1.0 / 3.0)
# width, in units of float spacing at a nonzero end, below which end pieces use the tail model
TAIL_ULPS = 2.0 ** 30
TAIL_POINTS = 24
TAIL_RESID = 1e-10
TAIL_AT_ZERO = 2.0 ** -100  # ends at t = 0 resolve far below the float spacing elsewhere
TAIL_MIN_Q = 1e-3  # fitted d^p with p + 1 below this counts as divergent


# --- Gauss-Kronrod rule -------------------------------------------------------

@lru_cache(maxsize=None)
def kronrod_rule(n: int = 10):
    """Nodes and weights of the (2n+1)-point Kronrod extension of n-point Gauss-Legendre.

    Returns (nodes, kronrod_weights, gauss_weights) with gauss weights zero on the new nodes.
    """
    xg, wg = legendre.leggauss(n)
    xq, wq = legendre.leggauss(3 * n + 4)

    def P(k, x):
        return legendre.legval(x, [0] * k + [1])

    # Stieltjes polynomial E_{n+1} = sum c_i P_i, orthogonal to P_j * P_n for j <= n
    A = np.empty((n + 1, n + 1))
    rhs = np.empty(n + 1)
    pn = P(n, xq)
    for j in range(n + 1):
        pj = P(j, xq)
        for i in range(n + 1):
            A[j, i] = np.sum(wq * P(i, xq) * pn * pj)
        rhs[j] = -np.sum(wq * P(n + 1, xq) * pn * pj)
    c = np.append(np.linalg.solve(A, rhs), 1.0)
    xe = np.sort(np.real(legendre.legroots(c)))
    if xe.size % 2 == 1:
        xe[xe.size // 2] = 0.0
    nodes = np.sort(np.concatenate([xg, xe]))
    V = np.array([P(j, nodes) for j in range(2 * n + 1)])
    b = np.zeros(2 * n + 1)
    b[0] = 2.0
    wk = np.linalg.solve(V, b)
    wgauss = np.zeros_like(nodes)
    for x, w in zip(xg, wg):
        wgauss[np.argmin(np.abs(nodes - x))] = w
    return nodes, wk, wgauss


# --- variable changes for unbounded intervals --------------------------------

@dataclass(frozen=True)
class _Map:
    """x = phi(t) with t in (A, B); `inf_end` flags ends of t mapping to infinite x."""
    kind: str
    lo: float
    hi: float

    @classmethod
    def for_support(cls, support: SupportSpec) -> "_Map":
        lo, hi = support.lo, support.hi
        if math.isfinite(lo) and math.isfinite(hi):
            return cls("finite", lo, hi)
        if math.isfinite(lo):
            return cls("upper-inf", lo, hi)
        if math.isfinite(hi):
            return cls("lower-inf", lo, hi)
        return cls("both-inf", lo, hi)

    @property
    def t_range(self):
        if self.kind == "finite":
            return self.lo, self.hi
        if self.kind == "both-inf":
            return -1.0, 1.0
        return 0.0, 1.0

    @property
    def inf_end(self):
        return {"finite": (False, False), "upper-inf": (False, True),
                "lower-inf": (False, True), "both-inf": (True, True)}[self.kind]

    def __call__(self, t):
        if self.kind == "finite":
            return t, np.ones_like(t)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):  # t = +-1 -> inf
            if self.kind == "both-inf":
                d = 1.0 - t * t
                return t / d, (1.0 + t * t) / (d * d)
            d = 1.0 - t
            u, jac = t / d, 1.0 / (d * d)
        return (self.lo + u, jac) if self.kind == "upper-inf" else (self.hi - u, jac)


@dataclass
class QuadratureResult:
    value: float | np.ndarray
    error_estimate: float | np.ndarray
    diverged: bool
    evaluations: int
    reason: str = ""
    abs_value: float | np.ndarray = 0.0


def _ulp_width(a, b):
    return 4096.0 * np.spacing(np.maximum(np.abs(a), np.abs(b)))


class _Pieces:
    """Bookkeeping for adaptive Gauss-Kronrod on a set of t-intervals."""

    def __init__(self, f, xmap, support):
        self.f = f
        self.map = xmap
        self.support = support
        self.nodes, self.wk, self.wg = kronrod_rule(10)
        self.evaluations = 0
        self.one_d = None

    def _g(self, t):
        x, jac = self.map(t)
        inside = (x > self.support.lo) & (x < self.support.hi) & np.isfinite(x)
        flat = x[inside]
        vals = np.asarray(self.f(flat), dtype=float) if flat.size else None
        self.evaluations += flat.size
        if vals is not None and self.one_d is None:
            self.one_d = vals.ndim == 1
        ncomp = 1 if vals is None or vals.ndim == 1 else vals.shape[0]
        out = np.zeros((ncomp,) + t.shape)
        if vals is not None:
            with np.errstate(over="ignore", invalid="ignore"):  # inf is handled as divergence
                out[:, inside] = vals.reshape(ncomp, -1) * jac[inside]
        return out

    def evaluate(self, a, b):
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        t = mid[:, None] + half[:, None] * self.nodes[None, :]
        g = self._g(t)  # (C, P, 21)
        k = np.einsum("cpn,n->cp", g, self.wk) * half
        gs = np.einsum("cpn,n->cp", g, self.wg) * half
        l1 = np.einsum("cpn,n->cp", np.abs(g), self.wk) * half
        # QUADPACK-style error scaling (qk21)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            mean = np.where(half > 0, k / np.where(half > 0, 2.0 * half, 1.0), 0.0)
            asc = np.einsum("cpn,n->cp", np.abs(g - mean[..., None]), self.wk) * half
            diff = np.abs(k - gs)
            err = np.where(asc > 0, asc * np.minimum(1.0, (200.0 * diff / asc) ** 1.5), diff)
        err = np.maximum(err, 50.0 * EPS * l1)
        return k, err, l1

    def point(self, t):
        return self._g(np.asarray(t, dtype=float))[:, ...]


def _growth(values: np.ndarray, scale: np.ndarray, runs: int = 5, ratio: float = 0.95):
    """True if the last `runs` slab integrals fail to shrink (per component)."""
    v = np.abs(values[:, -runs:])
    if v.shape[1] < runs:
        return False
    significant = v[:, -1] > 1e-12 * np.maximum(scale, 1e-300)
    grows = np.all(v[:, 1:] >= ratio * v[:, :-1], axis=1)
    return bool(np.any(significant & grows))


def integrate(f: Callable, support: SupportSpec, tol: float = 1e-10, rtol: float = 1e-10, *,
              detect_divergence: bool = True, max_pieces: int = 4000,
              floor_rtol: float = 1e-7) -> QuadratureResult:
    """Adaptive 21-point Gauss-Kronrod quadrature over an interval support.

    The target accuracy per component is max(tol, rtol * integral of |f|). Unbounded
    ends are mapped to a finite t-interval. The interval is split geometrically
    towards both ends; with `detect_divergence`, slab integrals that keep growing
    over 5 successive cutoffs flag the integral as diverged ("growth"). Refinement
    that cannot reach the tolerance within `max_pieces` flags "stall". Pieces too
    narrow to bisect in floating point are closed with a power-law tail estimate;
    their residual error may exceed `tol` by up to `floor_rtol` relative.
    """
    if not support.continuous:
        raise ValueError("integrate needs an interval support; use sum_discrete")
    xmap = _Map.for_support(support)
    A, B = xmap.t_range
    W = B - A
    inf_lo, inf_hi = xmap.inf_end
    if detect_divergence:
        k_lo, k_hi = (10 if inf_lo else 16), (10 if inf_hi else 16)
    else:
        k_lo = k_hi = 4
    d_lo = 0.5 * W * 4.0 ** -np.arange(0, k_lo + 1)
    d_hi = 0.5 * W * 4.0 ** -np.arange(0, k_hi + 1)
    # left slabs from the middle outwards, then left tail; same on the right
    a = np.concatenate([A + d_lo[1:], [A], B - d_hi[:-1], [B - d_hi[-1]]])
    b = np.concatenate([A + d_lo[:-1], [A + d_lo[-1]], B - d_hi[1:], [B]])
    a[k_lo + 1] = A + d_lo[0]  # first right piece starts at the midpoint
    left_slabs = np.arange(0, k_lo)
    right_slabs = np.arange(k_lo + 1, k_lo + 1 + k_hi)
    end_piece = np.zeros(len(a), dtype=int)  # -1 touches A, +1 touches B
    end_piece[k_lo] = -1
    end_piece[-1] = 1

    pieces = _Pieces(f, xmap, support)
    pieces.span = B - A
    try:
        val, err, l1 = pieces.evaluate(a, b)
    except FloatingPointError as exc:  # pragma: no cover - integrand bug
        raise ComputationFailed(str(exc)) from None
    ncomp = val.shape[0]

    def result(diverged, reason, floor_err=0.0):
        v, e, s = val.sum(axis=1), err.sum(axis=1) + floor_err, l1.sum(axis=1)
        if pieces.one_d is not False:
            v, e, s = float(v[0]), float(e[0]), float(s[0])
        return QuadratureResult(v, e, diverged, pieces.evaluations, reason, s)

    if not np.all(np.isfinite(val)) or not np.all(np.isfinite(err)):
        return result(True, "nonfinite")
    if detect_divergence:
        scale = l1.sum(axis=1)
        for slabs, idx, end, inf in ((left_slabs, k_lo, -1, inf_lo), (right_slabs, len(a) - 1, 1, inf_hi)):
            if _growth(val[:, slabs], scale):
                # slow but integrable finite ends (d^-0.99, d^-0.9 ln^2 d) also keep growing;
                # mapped infinite ends are not probed further out (costly or unevaluable there)
                tail = None if inf else _power_tail(pieces, a[idx], b[idx], end)
                if tail is None or tail is False:
                    return result(True, "growth")

    floor_err = np.zeros(ncomp)
    active = np.ones(len(a), dtype=bool)
    while True:
        total_l1 = l1.sum(axis=1)
        target = np.maximum(tol, rtol * total_l1)
        act_err = np.where(active[None, :], err, 0.0)
        if np.all(act_err.sum(axis=1) <= target):
            floor_target = np.maximum(target, floor_rtol * total_l1)
            if np.all(floor_err <= floor_target):
                return result(False, "", floor_err)
            return result(True, "resolution", floor_err)
        if len(a) >= max_pieces:
            return result(True, "stall", floor_err)
        score = np.max(act_err / np.maximum(target, np.finfo(float).tiny)[:, None], axis=0)
        order = np.argsort(score)[::-1]
        cum = np.cumsum(score[order])
        n_take = int(np.searchsorted(cum, 0.5 * cum[-1]) + 1)
        chosen = order[:min(n_take, 64)]
        chosen = chosen[score[chosen] > 0]
        if chosen.size == 0:
            return result(True, "stall", floor_err)
        narrow = (b[chosen] - a[chosen]) <= _ulp_width(a[chosen], b[chosen])
        # end pieces switch to the tail model where node rounding would start to matter
        ends = end_piece[chosen]
        t_end = np.where(ends < 0, A, B)
        width = b[chosen] - a[chosen]
        narrow |= (ends != 0) & np.where(t_end != 0.0, width <= TAIL_ULPS * np.spacing(np.abs(t_end)),
                                         width <= TAIL_AT_ZERO * W)
        xa, _ = xmap(a[chosen])
        xb, _ = xmap(b[chosen])
        narrow |= np.abs(xb - xa) <= _ulp_width(xa, xb)
        for idx in chosen[narrow]:
            active[idx] = False
            inf = inf_lo if end_piece[idx] < 0 else inf_hi
            tail = _power_tail(pieces, a[idx], b[idx], end_piece[idx], reach=not inf)
            if tail is None:
                floor_err = floor_err + err[:, idx]
            elif tail is False:
                return result(True, "growth", floor_err)
            else:
                tail, tail_err = tail
                floor_err = floor_err + tail_err
                val[:, idx] = tail
                err[:, idx] = 0.0
        split = chosen[~narrow]
        if split.size == 0:
            continue
        mids = 0.5 * (a[split] + b[split])
        na = np.concatenate([a[split], mids])
        nb = np.concatenate([mids, b[split]])
        nv, ne, nl = pieces.evaluate(na, nb)
        if not np.all(np.isfinite(nv)) or not np.all(np.isfinite(ne)):
            return result(True, "nonfinite", floor_err)
        keep = np.ones(len(a), dtype=bool)
        keep[split] = False
        ends_new = np.concatenate([np.where(end_piece[split] < 0, -1, 0),
                                   np.where(end_piece[split] > 0, 1, 0)])
        a = np.concatenate([a[keep], na])
        b = np.concatenate([b[keep], nb])
        val = np.concatenate([val[:, keep], nv], axis=1)
        err = np.concatenate([err[:, keep], ne], axis=1)
        l1 = np.concatenate([l1[:, keep], nl], axis=1)
        active = np.concatenate([active[keep], np.ones(len(na), dtype=bool)])
        end_piece = np.concatenate([end_piece[keep], ends_new])


def _log_moment(q, k, lw):
    """Integral over (0, w] of d^(q-1) ln(d)^k, with lw = ln w and q > 0."""
    total = 0.0
    coef = 1.0
    for j in range(k + 1):
        total += (-1) ** j * coef * lw ** (k - j) / q ** (j + 1)
        coef *= k - j
    return math.exp(q * lw) * total


def _tail_fit(d, g, w):
    """Fit g ~ d^p (sum_k a_k ln(d)^k + d (b_0 + b_1 ln d)) and integrate over (0, w].

    p is found by variable projection; the coefficients by least squares.
    Returns (integral, relative residual); the integral is False for p + 1 <= TAIL_MIN_Q.
    """
    L = np.log(d)
    M = np.column_stack([np.ones_like(L), L, L ** 2, L ** 3, d, d * L])
    norms = np.linalg.norm(M, axis=0)
    Q, _ = np.linalg.qr(M / norms)

    def resid(p):
        y = g * np.exp(-p * L)
        r = y - Q @ (Q.T @ y)
        return float(np.linalg.norm(r) / np.linalg.norm(y))

    # the d terms alias p - 1, so stay within 1/2 of the local slope; scan, then refine
    slope = np.polyfit(L[-4:], np.log(np.abs(g[-4:])), 1)[0]
    grid = slope + np.linspace(-0.5, 0.5, 41)
    p0 = grid[np.argmin([resid(p) for p in grid])]
    best = optimize.minimize_scalar(resid, bounds=(p0 - 0.025, p0 + 0.025), method="bounded",
                                    options={"xatol": 1e-12})
    p = float(best.x)
    coef = np.linalg.lstsq(M / norms, g * np.exp(-p * L), rcond=None)[0] / norms
    q = p + 1.0
    if not q > TAIL_MIN_Q:
        return False, best.fun
    lw = math.log(w)
    value = sum(coef[k] * _log_moment(q, k, lw) for k in range(4))
    value += coef[4] * _log_moment(q + 1.0, 0, lw) + coef[5] * _log_moment(q + 1.0, 1, lw)
    return value, best.fun




def _power_tail(pieces: _Pieces, a: float, b: float, end: int, reach: bool = True):
    """Integral of an endpoint piece from a local fit in the distance d to the end.

    Samples sit at D 2^-j, with D the larger of w and TAIL_ULPS float spacings when
    `reach` allows sampling beyond the piece, else D = w. The error is the spread
    between fits on the upper and lower parts of the sample range. Returns (estimate, error) per component, None
    when the piece is not at an end or no fit is adequate, or False when the fitted
    exponent is not integrable.
    """
    if end == 0:
        return None
    w = b - a
    t_end = a if end < 0 else b
    ulp = max(np.spacing(abs(t_end)), np.finfo(float).tiny)
    top = min(max(w, TAIL_ULPS * ulp), 0.5 * abs(pieces.span)) if reach else w
    n = min(TAIL_POINTS, int(np.floor(np.log2(top / (64.0 * ulp)))) + 1)
    if n < 16 or top < w:
        return None
    frac = 2.0 ** -np.arange(n)
    t = a + frac * top if end < 0 else b - frac * top
    d = t - a if end < 0 else b - t  # actual distances; t is rounded near the end
    if np.any(d <= 0) or len(set(d)) < n:
        return None
    g = pieces.point(t)
    out = np.zeros(g.shape[0])
    err = np.zeros(g.shape[0])
    for c in range(g.shape[0]):
        gc = g[c]
        if np.all(gc == 0.0):
            continue
        if not np.all(np.isfinite(gc)) or np.any(gc == 0.0):
            return None
        fits = [_tail_fit(d[s], gc[s], w) for s in (slice(None), slice(0, n - 4), slice(4, None))]
        if any(v is False and r <= TAIL_RESID for v, r in fits):
            return False
        if any(v is False or r > TAIL_RESID for v, r in fits):
            return None
        out[c] = fits[0][0]
        err[c] = max(abs(fits[1][0] - out[c]), abs(fits[2][0] - out[c]))
    return out, err


# --- discrete sums ------------------------------------------------------------------

def _as2d(v):
    v = np.asarray(v, dtype=float)
    return v[None, :] if v.ndim == 1 else v


def sum_discrete(f: Callable, support: SupportSpec, tol: float = 1e-12, *,
                 center: float | None = None, run: int = 32,
                 budget: int = 1 << 24) -> QuadratureResult:
    """Sum f over a finite set exactly, or over the naturals with tail truncation.

    For the naturals, summation starts at `center` (or the largest |f| among probes at
    0, 1, 2, 3, 4, 6, 8, ...) and extends both ways until `run` consecutive terms are
    each below tol times the running sum of |terms|.
    """
    if support.kind == FINITE:
        xs = np.array(support.values)
        vals = np.asarray(f(xs), dtype=float)
        total = vals.sum(axis=-1)
        l1 = np.abs(vals).sum(axis=-1)
        return QuadratureResult(total if vals.ndim > 1 else float(total),
                                np.zeros_like(total) if vals.ndim > 1 else 0.0,
                                False, xs.size, "", l1 if vals.ndim > 1 else float(l1))
    if support.kind != NATURALS:
        raise ValueError("sum_discrete needs a discrete support")

    one_d = None
    if center is None:
        probes = np.unique(np.concatenate([np.arange(5.0), np.round(2.0 ** np.arange(2, 41, 0.5))]))
        pv = np.asarray(f(probes), dtype=float)
        one_d = pv.ndim == 1
        center = float(probes[np.argmax(np.max(np.abs(_as2d(pv)), axis=0))])
    center = max(0.0, float(np.floor(center)))

    chunk = 64
    lo, hi = center, center  # summed range is [lo, hi)
    total = None
    l1 = None
    evaluations = 0
    left_done = lo <= 0
    right_done = False
    left_tail = right_tail = None

    def block(start, stop):
        nonlocal evaluations, one_d
        xs = np.arange(start, stop, dtype=float)
        v = np.asarray(f(xs), dtype=float)
        if one_d is None:
            one_d = v.ndim == 1
        evaluations += xs.size
        return _as2d(v)

    while not (left_done and right_done):
        if evaluations > budget:
            if one_d:
                return QuadratureResult(float(total[0]), float(l1[0]), True, evaluations,
                                        "budget", float(l1[0]))
            return QuadratureResult(total, l1, True, evaluations, "budget", l1)
        if not right_done:
            vr = block(hi, hi + chunk)
            hi += chunk
            total = vr.sum(axis=1) if total is None else total + vr.sum(axis=1)
            l1 = np.abs(vr).sum(axis=1) if l1 is None else l1 + np.abs(vr).sum(axis=1)
            right_tail = vr[:, -run:]
        if not left_done:
            start = max(0.0, lo - chunk)
            vl = block(start, lo)
            lo = start
            total = total + vl.sum(axis=1)
            l1 = l1 + np.abs(vl).sum(axis=1)
            left_tail = vl[:, :run]
            left_done = lo <= 0
        thresh = tol * np.maximum(l1, np.max(l1))[:, None]
        if not right_done and np.max(l1) > 0:
            right_done = bool(np.all(np.abs(right_tail) <= thresh))
        if not left_done and np.max(l1) > 0:
            left_done = bool(np.all(np.abs(left_tail) <= thresh))
        chunk *= 2
    err = tol * l1
    if one_d:
        return QuadratureResult(float(total[0]), float(err[0]), False, evaluations, "", float(l1[0]))
    return QuadratureResult(total, err, False, evaluations, "", l1)


# --- finite differences ----------------------------------------------------------------

def _steps(point, h):
    point = np.asarray(point, dtype=float)
    if isinstance(h, str):
        if h != "auto":
            raise ValueError(f"unknown step rule {h!r}")
        h = FD_STEP * np.maximum(1.0, np.abs(point))
    return np.broadcast_to(np.asarray(h, dtype=float), point.shape)


def gradient_fd(f: Callable, point, h="auto") -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    steps = _steps(point, h)
    g = np.empty_like(point)
    for i in range(point.size):
        up, dn = point.copy(), point.copy()
        up[i] += steps[i]
        dn[i] -= steps[i]
        g[i] = (f(up) - f(dn)) / (up[i] - dn[i])
    return g


def hessian_fd(f: Callable, point, h="auto") -> np.ndarray:
    """Hessian by central differences of `gradient_fd`, symmetrized."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if isinstance(h, str):
        h = EPS ** 0.25 * np.maximum(1.0, np.abs(point))
    steps = _steps(point, h)
    H = np.empty((point.size, point.size))
    for i in range(point.size):
        up, dn = point.copy(), point.copy()
        up[i] += steps[i]
        dn[i] -= steps[i]
        H[:, i] = (gradient_fd(f, up) - gradient_fd(f, dn)) / (up[i] - dn[i])
    return 0.5 * (H + H.T)


# --- damped Newton -----------------------------------------------------------------

@dataclass
class OptimResult:
    argmin: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def _safe(fun, x):
    try:
        v = float(fun(x))
    except (PriorError, ArithmeticError, ValueError):
        return math.inf
    return v if math.isfinite(v) else math.inf


def newton_minimize(objective: Callable, gradient: Callable, hessian: Callable, init, *,
                    tol: float = 1e-10, max_iter: int = 200, armijo: float = 1e-4,
                    rcond: float = 1e-12, noise: float = 1e-13) -> OptimResult:
    """Damped Newton with halving Armijo backtracking.

    The objective may return inf (or raise) outside its domain; such trial points are
    rejected by the line search. A singular Hessian triggers one gradient step; a
    second consecutive singular Hessian raises SingularHessian. An indefinite one is
    replaced by its absolute-eigenvalue counterpart. `noise` relaxes the
    Armijo test by noise*(1+|f|) so that convergence is not blocked by rounding in
    objectives computed by quadrature.
    """
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    fx = _safe(objective, x)
    if not math.isfinite(fx):
        raise ComputationFailed("objective is not finite at the initial point")
    singular_streak = 0
    history = []
    for it in range(max_iter + 1):
        g = np.atleast_1d(np.asarray(gradient(x), dtype=float))
        gnorm = float(np.linalg.norm(g))
        H = np.atleast_2d(np.asarray(hessian(x), dtype=float))
        H = 0.5 * (H + H.T)
        eig = np.linalg.eigvalsh(H)
        big = max(float(np.max(np.abs(eig))), 1e-300)
        singular = float(np.min(np.abs(eig))) <= rcond * big
        indefinite = not singular and eig[0] < 0
        history.append((x.copy(), fx, gnorm))
        state = OptimResult(x.copy(), fx, gnorm, it, False, history)
        if singular:
            singular_streak += 1
            if singular_streak >= 2:
                raise SingularHessian(
                    f"Hessian is singular (eigenvalues {eig}); constraints may be dependent", state)
        else:
            singular_streak = 0
            if gnorm <= tol and not indefinite:
                state.converged = True
                return state
        if it == max_iter:
            break
        if singular:
            direction = -g
        elif indefinite:  # modified Newton: flip the negative curvature directions
            w, V = np.linalg.eigh(H)
            direction = -V @ ((V.T @ g) / np.abs(w))
        else:
            direction = -np.linalg.solve(H, g)
        slope = float(g @ direction)
        if slope >= 0:  # not a descent direction: fall back to steepest descent
            direction, slope = -g, -float(g @ g)
        alpha = 1.0
        accepted = False
        for _ in range(60):
            trial = x + alpha * direction
            ft = _safe(objective, trial)
            if ft <= fx + armijo * alpha * slope + noise * (1.0 + abs(fx)):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if singular:
                continue
            raise NotConverged(f"line search failed at iteration {it} (|g|={gnorm:.3e})", state)
        x, fx = trial, ft
    raise NotConverged(f"no convergence within {max_iter} iterations", state)
