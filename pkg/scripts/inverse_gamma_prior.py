"""Induce the prior for the exponential model and compare it with inverse-gamma.

    python3 scripts/inverse_gamma_prior.py --alpha 2 --beta 3
"""
import argparse
from dataclasses import dataclass

import numpy as np

from lipriors import (induce_prior_family, known_family, known_pdf, load_model, moments,
                      multipliers_for, solve_lagrange)
from lipriors.maxent import family_density


@dataclass
class Config:
    model: str = "exponential"
    alpha: float = 2.0
    beta: float = 3.0
    points: int = 9


def run(cfg: Config) -> float:
    m = load_model(cfg.model)
    fam = induce_prior_family(m)
    print("laws:", ", ".join(law.text for law in fam.laws))
    target = known_family("inverse-gamma", (cfg.alpha, cfg.beta))
    lam = multipliers_for(fam, target)
    print("multipliers for IG(%g, %g): %s" % (cfg.alpha, cfg.beta, np.array2string(lam, precision=12)))

    # solving from the moments alone has to land on the same multipliers
    sol = solve_lagrange(fam, moments(fam, lam))
    print("solved from moments: %s  (residual %.2e)" % (np.array2string(sol.multipliers, precision=12),
                                                       sol.residual))

    theta = np.geomspace(0.1, 20.0, cfg.points)
    ours = family_density(fam, lam, theta)
    ref = np.array([known_pdf("inverse-gamma", (cfg.alpha, cfg.beta), t) for t in theta])
    worst = float(np.max(np.abs(ours / ref - 1.0)))
    print("%10s %22s %22s" % ("theta", "induced", "inverse-gamma"))
    for t, a, b in zip(theta, ours, ref):
        print("%10.4g %22.15g %22.15g" % (t, a, b))
    print("max relative difference %.2e" % worst)
    return worst


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alpha", type=float, default=Config.alpha)
    ap.add_argument("--beta", type=float, default=Config.beta)
    ap.add_argument("--points", type=int, default=Config.points)
    args = ap.parse_args()
    run(Config(alpha=args.alpha, beta=args.beta, points=args.points))


if __name__ == "__main__":
    main()
