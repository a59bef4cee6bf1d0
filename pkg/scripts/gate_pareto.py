"""Accuracy/cost frontier of the entropy gate on the chain suite.

    python3 scripts/gate_pareto.py --out results/gate
"""
import argparse

import numpy as np

from csvout import write_rows
from sagelab.controller import best_tradeoff, chain_suite, evaluate_gate, gate_sweep

p = argparse.ArgumentParser()
p.add_argument("--out", default="results/gate")
p.add_argument("--tasks", type=int, default=200)
p.add_argument("--c-mch", type=float, default=2.8)
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

suite = chain_suite(n_tasks=args.tasks, seed=args.seed)
slow = evaluate_gate(suite, -1.0, c_mch=args.c_mch)
taus = np.linspace(0.0, float(suite.entropies.max()) + 0.05, 120)
rows = gate_sweep(suite, taus, c_mch=args.c_mch)
write_rows(f"{args.out}/pareto.csv", ["tau", "mu", "accuracy", "cost", "accuracy_ratio", "cost_ratio"],
           [(r.tau, r.mu, r.accuracy, r.cost, r.accuracy / slow.accuracy, r.cost / slow.cost) for r in rows])
best = best_tradeoff(rows, slow)
if best is not None:
    print(f"tau={best.tau:.3f}: {best.accuracy / slow.accuracy:.3f}x accuracy at {best.cost / slow.cost:.3f}x cost")
