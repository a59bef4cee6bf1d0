"""Majority vote vs ICS-filtered vote on the arithmetic task, swept over k and the floor quantile.

    python3 scripts/vote_ablation.py --out results/vote
"""
import argparse

from csvout import write_rows
from sagelab.synthetic import ArithConfig, calibrate_ics_floor, train_arith, vote_eval

p = argparse.ArgumentParser()
p.add_argument("--out", default="results/vote")
p.add_argument("--prompts", type=int, default=200)
p.add_argument("--steps", type=int, default=1500)
args = p.parse_args()

log = []
model = train_arith(ArithConfig(steps=args.steps), log=log)
write_rows(f"{args.out}/arith_loss.csv", ["step", "loss_fwd", "loss_inv"], log)

rows = []
for q in (0.001, 0.01, 0.05, 0.1):
    floor = calibrate_ics_floor(model, quantile=q)
    for k in (4, 8, 16, 32):
        van, ir, recs = vote_eval(model, n_prompts=args.prompts, k=k, ics_floor=floor)
        filtered = sum(r.n_filtered for r in recs) / (len(recs) * k)
        rows.append((q, floor, k, van, ir, filtered))
write_rows(f"{args.out}/vote_accuracy.csv",
           ["floor_quantile", "ics_floor", "k", "vanilla_acc", "ir_acc", "filtered_frac"], rows)
