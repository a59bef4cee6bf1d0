"""Needle retrieval vs sequence length, with and without landmark columns.

    python3 scripts/needle_retrieval.py --out results/needle
"""
import argparse

from csvout import write_rows
from sagelab.synthetic import needle_accuracy, needle_config, train_needle

p = argparse.ArgumentParser()
p.add_argument("--out", default="results/needle")
p.add_argument("--steps", type=int, default=300)
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

cfg = needle_config(seed=args.seed)
log = []
model = train_needle(cfg, steps=args.steps, seed=args.seed, log=log)
write_rows(f"{args.out}/needle_loss.csv", ["step", "loss"], log)

rows = []
for factor in (2, 4, 8):
    n = factor * cfg.local_window
    rows.append((n, "landmarks", needle_accuracy(model, length_factor=factor)))
    # spacing beyond the sequence length leaves only column 0 as a landmark
    rows.append((n, "window_only", needle_accuracy(model, length_factor=factor, interval=10 * n)))
write_rows(f"{args.out}/needle_accuracy.csv", ["length", "attention", "accuracy"], rows)
