"""Hallucination rate through reflective distillation and RL, plus recovery with and without the MCH.

    python3 scripts/distill_curve.py --out results/distill
"""
import argparse

from csvout import write_rows
from sagelab.distill import DistillConfig, StudentAgent, ToolCallPolicy, distill_epoch, rl_refine
from sagelab.tools import Fault, ToolEnv, generate_task_suite, irr, load_schemas, run_episode

p = argparse.ArgumentParser()
p.add_argument("--out", default="results/distill")
p.add_argument("--epochs", type=int, default=3)
p.add_argument("--rl-episodes", type=int, default=640)
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

schemas = load_schemas()
train = generate_task_suite(400, args.seed + 1, schemas, refusal_fraction=0.05)
evals = generate_task_suite(200, args.seed + 2, schemas)
base = ToolCallPolicy.base(schemas, 0.145, evals)
reference, pol = base.copy(), base
cfg = DistillConfig(epochs=args.epochs, seed=args.seed)
curve = [("base", 0, base.hallucination_rate(evals))]
for e in range(cfg.epochs):
    pol, _ = distill_epoch(pol, reference, train, cfg, e)
    curve.append(("distill", e + 1, pol.hallucination_rate(evals)))
rl_log = []
refined = rl_refine(pol, train, args.rl_episodes, args.seed, log=rl_log)
curve.append(("rl", args.rl_episodes, refined.hallucination_rate(evals)))
write_rows(f"{args.out}/hallucination.csv", ["stage", "step", "hallucination_rate"], curve)
write_rows(f"{args.out}/rl_reward.csv", ["episodes", "mean_reward", "baseline"],
           [(r["episodes"], r["mean_reward"], r["baseline"]) for r in rl_log])

rows = []
for stage, policy in (("base", base), ("distilled", pol), ("rl", refined)):
    for mch in (False, True):
        res = [run_episode(StudentAgent(policy, seed=i, use_mch=mch),
                           ToolEnv(t, schemas, seed=i).inject_error(
                               Fault.PARAMETER_MISMATCH if i % 2 else Fault.TIMEOUT, 1), 6)
               for i, t in enumerate(evals)]
        rows.append((stage, int(mch), irr(res), sum(r.success for r in res) / len(res)))
write_rows(f"{args.out}/recovery.csv", ["stage", "mch", "irr", "success"], rows)
