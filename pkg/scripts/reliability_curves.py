"""Survival curves, effective error over detector recall, and error-count variance growth.

    python3 scripts/reliability_curves.py --out results/reliability
"""
import argparse

import numpy as np

from csvout import write_rows
from sagelab.reliability import (
    effective_error,
    hybrid_success_step,
    mc_effective_error,
    mc_survival,
    survival_curve,
    variance_scaling,
)

p = argparse.ArgumentParser()
p.add_argument("--out", default="results/reliability")
p.add_argument("--eps", type=float, default=0.1)
p.add_argument("--trials", type=int, default=200_000)
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

n_max = 100
p_std = 1 - args.eps
p_hyb = hybrid_success_step(p_std, 1.0, 0.8, 0.7)
std, hyb = survival_curve(p_std, n_max), survival_curve(p_hyb, n_max)
sim_std = mc_survival(p_std, n_max, args.trials, args.seed)
sim_hyb = mc_survival(p_hyb, n_max, args.trials, args.seed + 1)
write_rows(f"{args.out}/survival.csv", ["n", "standard", "hybrid", "standard_mc", "hybrid_mc"],
           list(zip(range(n_max + 1), std, hyb, sim_std, sim_hyb)))

rows = []
for alpha in np.linspace(0, 1, 21):
    mc = mc_effective_error(args.eps, alpha, 0.05, args.trials, args.seed)
    rows.append((alpha, effective_error(args.eps, alpha, 0.05), mc.mean, mc.stderr))
write_rows(f"{args.out}/effective_error.csv", ["alpha", "analytic", "mc", "mc_stderr"], rows)

rows = [(n, variance_scaling(args.eps, n, args.trials, args.seed + n), n * args.eps * (1 - args.eps))
        for n in (1, 2, 5, 10, 20, 50, 100)]
write_rows(f"{args.out}/variance.csv", ["n", "variance_mc", "variance_analytic"], rows)
