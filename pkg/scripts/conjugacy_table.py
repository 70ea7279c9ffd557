"""Table of induced families for the catalog models, with closure errors.

For each model: its conservation laws, the known family the induced prior
matches, the match error, and the worst posterior-closure error over a few
random datasets.

    python3 scripts/conjugacy_table.py --datasets 5 --seed 1
"""
import argparse
import time
from dataclasses import dataclass

import numpy as np

from lipriors import (induce_prior_family, known_family, load_model, match_family,
                      multipliers_for, verify_closure)
from lipriors.catalog import CATALOG_MODELS, random_dataset

# one member per family, inside each valid region
MEMBERS = {"inverse-gamma": (2.0, 3.0), "beta": (0.5, 0.5), "gamma": (2.0, 3.0), "normal": (0.3, 1.5)}


@dataclass
class Config:
    datasets: int = 5
    max_size: int = 10
    seed: int = 1


def run(cfg: Config) -> list:
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for name, family in CATALOG_MODELS.items():
        t0 = time.perf_counter()
        m = load_model(name)
        fam = induce_prior_family(m)
        kf = known_family(family, MEMBERS[family])
        lam = multipliers_for(fam, kf)
        match = match_family(fam, lam, kf)
        closure = max(verify_closure(fam, lam, m, random_dataset(m, rng, int(rng.integers(1, cfg.max_size + 1))))
                      for _ in range(cfg.datasets))
        rows.append((name, "; ".join(fam.laws.texts), f"{family}{MEMBERS[family]}", match, closure,
                     time.perf_counter() - t0))
    print("%-17s %-40s %-24s %9s %9s %6s" % ("model", "laws", "family", "match", "closure", "s"))
    for r in rows:
        print("%-17s %-40s %-24s %9.1e %9.1e %6.2f" % r)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--datasets", type=int, default=Config.datasets)
    ap.add_argument("--max-size", type=int, default=Config.max_size)
    ap.add_argument("--seed", type=int, default=Config.seed)
    args = ap.parse_args()
    run(Config(args.datasets, args.max_size, args.seed))


if __name__ == "__main__":
    main()
