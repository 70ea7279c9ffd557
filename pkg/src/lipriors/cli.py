"""Command-line front end.

Exit codes:
    0  success
    1  model-file syntax/DSL errors and bad arguments
    2  the log-density is not separable
    3  numerical failure (ComputationFailed, NotConverged, SingularHessian) or a failed verification
    4  the family is improper at the requested multipliers

Text output by default; ``--json`` prints a RunReport matching ``REPORT_SCHEMA``.
Grids (``jeffreys``) are CSV with a header row, draws (``sample``) one per line.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import catalog
from .dsl import ModelSpec, load_model
from .errors import (ComputationFailed, ImproperAtLambda, ModelError, NotSeparable,
                     PriorError, UnsupportedModel)
from .fisher import fisher_information, jeffreys_measure
from .maxent import induce_prior_family, log_partition, sample, solve_lagrange

EXIT_OK, EXIT_USAGE, EXIT_NOT_SEPARABLE, EXIT_NUMERICAL, EXIT_IMPROPER = range(5)

DEFAULT_HYPER = {"inverse-gamma": (2.0, 3.0), "beta": (2.0, 2.0),
                 "gamma": (2.0, 3.0), "normal": (0.0, 1.0)}
VERIFY_MATCH_TOL = 1e-8
VERIFY_CLOSURE_TOL = 1e-6
VERIFY_DATASETS = 5

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "RunReport",
    "type": "object",
    "required": ["command", "model", "outputs", "warnings"],
    "additionalProperties": False,
    "properties": {
        "command": {"type": "array", "items": {"type": "string"}},
        "model": {"type": "string"},
        "outputs": {"type": "object"},
        "warnings": {"type": "array", "items": {"type": "string"}},
    },
}


class UsageError(PriorError):
    pass


@dataclass
class RunReport:
    command: list
    model: str
    outputs: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        d = json.loads(text)
        return cls(list(d["command"]), d["model"], dict(d["outputs"]), list(d["warnings"]))


# --- argument parsing -----------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def parse_grid(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"grid must be lo:hi:n, got {text!r}")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError(f"grid must be lo:hi:n, got {text!r}") from None
    if n < 1:
        raise UsageError("grid needs at least one point")
    return np.linspace(lo, hi, n)


def parse_targets(text: str, r: int) -> np.ndarray:
    """`law_index value` per line, indices 1-based as printed by `induce`."""
    vals: dict[int, float] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            k, v = int(parts[0]), float(parts[1])
            if len(parts) != 2:
                raise ValueError
        except (ValueError, IndexError):
            raise UsageError(f"targets line {lineno}: expected 'law_index value'") from None
        if not 1 <= k <= r:
            raise UsageError(f"targets line {lineno}: law index {k} outside 1..{r}")
        if k in vals:
            raise UsageError(f"targets line {lineno}: law {k} given twice")
        vals[k] = v
    missing = [k for k in range(1, r + 1) if k not in vals]
    if missing:
        raise UsageError(f"targets missing for laws {missing}")
    return np.array([vals[k] for k in range(1, r + 1)])


def parse_hyper(text: str):
    """`family:p1,p2` into a catalog member."""
    name, _, params = text.partition(":")
    if name not in catalog.FAMILIES:
        raise UsageError(f"unknown family {name!r}; known: {', '.join(catalog.FAMILIES)}")
    try:
        return catalog.known_family(name, _floats(params))
    except ValueError as e:
        raise UsageError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lipriors", description="Likelihood-induced priors.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("model", help="model file, or the name of a shipped model")
        s.add_argument("--json", action="store_true", help="print a structured RunReport")
        return s

    s = add("induce", "conservation laws, base measure and admissible multipliers")
    s.add_argument("--pseudo-obs", help="v1,v2,... (default: support midpoint)")
    s = add("fisher", "Fisher information at one parameter point")
    s.add_argument("--theta", required=True, help="t1,t2,...")
    s = add("jeffreys", "sqrt(det I) on a grid, as CSV")
    s.add_argument("--grid", required=True, help="lo:hi:n")
    s = add("maxent", "solve for the multipliers matching target law expectations")
    s.add_argument("--targets", required=True, help="file of 'law_index value' lines")
    s.add_argument("--lambda", dest="lam", help="initial multipliers l1,l2,...")
    s.add_argument("--tol", type=float, default=1e-10)
    s = add("sample", "draws from the induced family")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--lambda", dest="lam", help="multipliers l1,l2,...")
    g.add_argument("--hyper", help="catalog member, e.g. inverse-gamma:3,3")
    s.add_argument("-n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s = add("verify", "match against the catalog family and check conjugate closure")
    s.add_argument("--hyper", help="catalog member to test (default per family)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=VERIFY_CLOSURE_TOL)
    return p


# --- commands --------------------------------------------------------------------

def _family_tag(fam) -> str | None:
    for lam in fam.admissible():
        kf = catalog.identify(fam, lam)
        if kf is not None:
            return kf.name
    return None


def cmd_induce(m: ModelSpec, args, rep: RunReport) -> list[str]:
    pseudo = _floats(args.pseudo_obs) if args.pseudo_obs else None
    fam = induce_prior_family(m, pseudo)
    avg = fam.avg_loglik
    tag = _family_tag(fam)
    probes = [{"lambda": list(p.lam), "status": p.status} for p in fam.probes]
    rep.outputs.update({
        "laws": fam.laws.texts,
        "pseudo_obs": list(avg.obs),
        "statistic_means": list(avg.statistic_means),
        "base_measure": fam.base.description,
        "properness": fam.base.properness,
        "probes": probes,
        "admissible": [list(v) for v in fam.admissible()],
        "family": f"{tag} (matched)" if tag else "unmatched",
    })
    if fam.base.properness == "improper":
        rep.warnings.append("base measure is improper; entropies relative to it are scale-dependent")
    elif fam.base.properness == "unknown":
        rep.warnings.append("properness of the base measure is inconclusive")
    if any(p.status == "unknown" for p in fam.probes):
        rep.warnings.append("some probe multipliers could not be classified")
    lines = ["conservation laws:"]
    lines += [f"  {k}: {t}" for k, t in enumerate(fam.laws.texts, 1)]
    lines.append(f"base measure: {fam.base.description} ({fam.base.properness})")
    n_ok = sum(p.status == "proper" for p in fam.probes)
    lines.append(f"probes: {n_ok} of {len(fam.probes)} multiplier points proper")
    for p in fam.probes:
        lines.append(f"  lambda=({', '.join(f'{v:g}' for v in p.lam)}): {p.status}")
    lines.append(f"family: {rep.outputs['family']}")
    return lines


def cmd_fisher(m: ModelSpec, args, rep: RunReport) -> list[str]:
    theta = _floats(args.theta)
    if len(theta) != m.dim:
        raise UsageError(f"--theta needs {m.dim} value(s)")
    F = fisher_information(m, theta).matrix
    rep.outputs.update({"theta": theta, "fisher": F.tolist()})
    return [" ".join(f"{v:.12g}" for v in row) for row in F]


def cmd_jeffreys(m: ModelSpec, args, rep: RunReport) -> list[str]:
    if m.dim != 1:
        raise UsageError("jeffreys grids are one-dimensional")
    grid = parse_grid(args.grid)
    bad = [t for t in grid if not m.param_support.contains_interior(t)]
    if bad:
        raise UsageError(f"grid point {bad[0]:g} is outside the parameter support")
    vals = jeffreys_measure(m, grid)(grid)
    rep.outputs.update({"theta": grid.tolist(), "jeffreys": np.asarray(vals).tolist()})
    return [f"{m.param_names[0]},sqrt_det_I"] + [f"{t:.12g},{v:.12g}" for t, v in zip(grid, vals)]


def cmd_maxent(m: ModelSpec, args, rep: RunReport) -> list[str]:
    fam = induce_prior_family(m, probe=False)
    with open(args.targets, encoding="utf-8") as fh:
        F = parse_targets(fh.read(), fam.r)
    init = _floats(args.lam) if args.lam else None
    sol = solve_lagrange(fam, F, init, tol=args.tol)
    kf = catalog.identify(fam, sol.multipliers)
    rep.outputs.update({
        "laws": fam.laws.texts, "targets": F.tolist(),
        "multipliers": sol.multipliers.tolist(), "log_partition": sol.log_partition,
        "moments": sol.moments.tolist(), "entropy": sol.entropy,
        "residual": sol.residual, "iterations": sol.iterations,
        "family": kf.describe() if kf else None,
    })
    if sol.scale_dependent:
        rep.warnings.append("entropy is relative to an improper base measure (scale-dependent)")
    fmt = lambda v: ", ".join(f"{x:.10g}" for x in v)
    lines = [f"lambda: {fmt(sol.multipliers)}", f"ln Z: {sol.log_partition:.10g}",
             f"moments: {fmt(sol.moments)}", f"entropy: {sol.entropy:.10g}",
             f"residual: {sol.residual:.3e}"]
    if kf:
        lines.append(f"family: {kf.describe()}")
    return lines


def cmd_sample(m: ModelSpec, args, rep: RunReport) -> list[str]:
    fam = induce_prior_family(m, probe=False)
    if args.hyper:
        lam = catalog.multipliers_for(fam, parse_hyper(args.hyper))
    else:
        lam = np.array(_floats(args.lam))
        if lam.size != fam.r:
            raise UsageError(f"--lambda needs {fam.r} value(s)")
    if args.n < 0:
        raise UsageError("-n must be nonnegative")
    log_partition(fam, lam)
    draws = sample(fam, lam, args.n, args.seed)
    rep.outputs.update({"multipliers": lam.tolist(), "seed": args.seed, "draws": draws.tolist()})
    return [repr(float(v)) for v in draws]


def _catalog_member(fam, stem: str, hyper: str | None):
    """The catalog member to verify against, and its multipliers."""
    if hyper:
        kf = parse_hyper(hyper)
        return kf, catalog.multipliers_for(fam, kf)
    names = [catalog.CATALOG_MODELS[stem]] if stem in catalog.CATALOG_MODELS else list(catalog.FAMILIES)
    for name in names:
        ft = catalog.FAMILIES[name]
        if (ft.support.lo, ft.support.hi) != (fam.support.lo, fam.support.hi):
            continue
        kf = catalog.known_family(name, DEFAULT_HYPER.get(name, ()))
        try:
            return kf, catalog.multipliers_for(fam, kf)
        except ValueError:
            continue
    raise UsageError("no catalog family spans this model's laws; pass --hyper")


def cmd_verify(m: ModelSpec, args, rep: RunReport) -> list[str]:
    fam = induce_prior_family(m, probe=False)
    kf, lam = _catalog_member(fam, Path(args.model).stem, args.hyper)
    match = catalog.match_family(fam, lam, kf)
    rng = np.random.default_rng(args.seed)
    closure = []
    for _ in range(VERIFY_DATASETS):
        data = catalog.random_dataset(m, rng, int(rng.integers(1, 11)))
        closure.append(catalog.verify_closure(fam, lam, m, data))
    ok = match <= VERIFY_MATCH_TOL and max(closure) <= args.tol
    rep.outputs.update({"family": kf.describe(), "multipliers": lam.tolist(),
                        "match_error": match, "closure_errors": closure,
                        "max_closure_error": max(closure), "passed": ok})
    if not ok:
        rep.warnings.append("verification failed")
    return [f"family: {kf.describe()}", f"multipliers: {', '.join(f'{v:.10g}' for v in lam)}",
            f"match error: {match:.3e}", f"max closure error: {max(closure):.3e}",
            "passed" if ok else "FAILED"]


COMMANDS = {"induce": cmd_induce, "fisher": cmd_fisher, "jeffreys": cmd_jeffreys,
            "maxent": cmd_maxent, "sample": cmd_sample, "verify": cmd_verify}


def exit_code(err: BaseException) -> int:
    if isinstance(err, NotSeparable):
        return EXIT_NOT_SEPARABLE
    if isinstance(err, ImproperAtLambda):
        return EXIT_IMPROPER
    if isinstance(err, ComputationFailed):
        return EXIT_NUMERICAL
    return EXIT_USAGE


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on usage errors; 2 is reserved here
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    rep = RunReport(["lipriors"] + argv, str(args.model))
    try:
        m = load_model(args.model)
        rep.model = m.name
        lines = COMMANDS[args.command](m, args, rep)
    except (ModelError, UsageError, UnsupportedModel, FileNotFoundError, ValueError,
            ComputationFailed, ImproperAtLambda, NotSeparable, PriorError) as e:
        print(f"error: {e}", file=sys.stderr)
        return exit_code(e)
    if args.json:
        print(rep.to_json())
    else:
        print("\n".join(lines))
        for w in rep.warnings:
            print(f"warning: {w}", file=sys.stderr)
    if args.command == "verify" and not rep.outputs["passed"]:
        return EXIT_NUMERICAL
    return EXIT_OK


__all__ = ["RunReport", "REPORT_SCHEMA", "main", "build_parser", "parse_targets", "parse_grid"]
