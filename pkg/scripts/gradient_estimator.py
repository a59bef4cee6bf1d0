"""Score-function estimator error against the enumerated gradient, with and without a baseline.

    python3 scripts/gradient_estimator.py --out results/gradient
"""
import argparse

import numpy as np

from csvout import write_rows
from sagelab.inverse import CategoricalSequencePolicy, exact_policy_gradient, inverse_gradient_estimate

p = argparse.ArgumentParser()
p.add_argument("--out", default="results/gradient")
p.add_argument("--repeats", type=int, default=16)
args = p.parse_args()

pol = CategoricalSequencePolicy(3, 2, seed=0)
table = np.random.default_rng(1).uniform(0, 1, size=(3, 3))
reward = lambda z: table[tuple(np.asarray(z).T)]
exact = exact_policy_gradient(pol, reward)
z = pol.all_sequences()
oracle = float(np.sum(pol.probability_of(z) * reward(z)))

rows = []
for n in (100, 300, 1_000, 3_000, 10_000, 30_000, 100_000):
    for label, b in (("none", 0.0), ("oracle", oracle)):
        errs = [np.linalg.norm(inverse_gradient_estimate(pol, reward, n, b, rng=s) - exact) / np.linalg.norm(exact)
                for s in range(args.repeats)]
        rows.append((n, label, float(np.mean(errs)), float(np.std(errs))))
write_rows(f"{args.out}/estimator_error.csv", ["samples", "baseline", "rel_error_mean", "rel_error_std"], rows)
