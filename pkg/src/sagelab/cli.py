"""Command-line entry point: ``sage <subcommand> [flags]``.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
Every run writes ``manifest.json`` next to its outputs; rerunning with the same
manifest reproduces every output file byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("sage")

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def kv_load(cls, path):
    """Populate dataclass ``cls`` from a key=value file (missing keys keep defaults)."""
    if path is None:
        return cls()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    kinds = {f.name: f.type if isinstance(f.type, str) else f.type.__name__ for f in dataclasses.fields(cls)}
    values = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in kinds:
            raise UsageError(f"{path}: bad config line {raw!r}")
        conv = {"int": int, "float": float, "str": str, "bool": lambda v: v.lower() in ("1", "true", "yes")}
        try:
            values[key] = conv[kinds[key].split(" ")[0]](value)
        except (KeyError, ValueError) as exc:
            raise UsageError(f"{path}: cannot parse {key}={value!r} ({exc})") from None
    try:
        return cls(**values)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def write_manifest(args, out: Path) -> None:
    write_json(out / "manifest.json", {
        "subcommand": args.command,
        "config": args.config,
        "seed": args.seed,
        "out": str(args.out),
        "version": f"v{__version__}",
        "flags": {k: v for k, v in sorted(vars(args).items())
                  if k not in ("command", "config", "seed", "out", "func") and v is not None},
    })


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class TrainSettings:
    steps: int = 200
    batch: int = 64
    lr: float = 3e-3
    corpus_size: int = 4096


def cmd_train(args, out: Path) -> int:
    from .autodiff import Adam
    from .model import ModelConfig, SageModel
    from .synthetic import arith_batch, arith_model_config, read_corpus, write_corpus

    cfg = arith_model_config(args.seed)
    if args.config:
        try:
            cfg = ModelConfig.load(args.config)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"bad model config {args.config}: {exc}") from None
    settings = TrainSettings(**{k: v for k, v in (("steps", args.steps), ("batch", args.batch)) if v is not None})
    if args.corpus:
        try:
            ids, mask = read_corpus(args.corpus)
        except (OSError, ValueError) as exc:
            raise UsageError(f"unreadable corpus {args.corpus}: {exc}") from None
    else:
        seq, mask, _ = arith_batch(np.random.default_rng(args.seed), settings.corpus_size)
        write_corpus(out / "corpus.jsonl", seq, mask)
        ids = seq
    if ids.max() >= cfg.vocab_size or ids.min() < 0:
        raise UsageError(f"corpus token ids exceed vocabulary size {cfg.vocab_size}")

    model = SageModel(cfg)
    opt = Adam(model.parameters(), lr=settings.lr)
    rng = np.random.default_rng(args.seed)
    rows = []
    for step in range(settings.steps):
        idx = rng.integers(0, ids.shape[0], min(settings.batch, ids.shape[0]))
        total, fwd, inv = model.dual_loss(ids[idx], mask[idx])
        opt.zero_grad()
        total.backward()
        opt.step()
        rows.append((step, float(fwd.data), float(inv.data)))
        log.info("step %d fwd %.4f inv %.4f", step, rows[-1][1], rows[-1][2])
    write_csv(out / "loss.csv", ["step", "loss_fwd", "loss_inv"], rows)
    cfg.save(out / "config.txt")
    model.save(out / "model.ckpt")
    return EXIT_OK


def _load_checkpoint(path):
    from .model import ModelConfig, SageModel

    d = Path(path)
    try:
        cfg = ModelConfig.load(d / "config.txt")
        return SageModel.load(cfg, d / "model.ckpt")
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load checkpoint from {d}: {exc}") from None


def cmd_rank(args, out: Path) -> int:
    from .inverse import VoteSample, compute_ics_batch, ir_guided_vote, majority_vote
    from .synthetic import arith_prompts, calibrate_ics_floor, rerank_eval

    k = 32 if args.k is None else args.k
    lam = 0.5 if args.lam is None else args.lam
    if k < 1:
        raise UsageError("--k must be >= 1")
    if lam < 0:
        raise UsageError("--lambda must be >= 0")
    if not args.checkpoint:
        raise UsageError("rank needs --checkpoint")
    model = _load_checkpoint(args.checkpoint)
    n = args.prompts or 50
    prompts, truth = arith_prompts(n, args.seed)
    winners, pools = rerank_eval(model, prompts, k, lam, args.seed)
    floor = calibrate_ics_floor(model, seed=args.seed + 99)
    correct = {"rerank": 0, "vanilla_vote": 0, "ir_vote": 0}
    with open(out / "rank.jsonl", "w") as fh:
        for p, (win, pool) in enumerate(zip(winners, pools)):
            toks = np.array([c.tokens for c in pool])
            ics = compute_ics_batch(model, toks[:, :2], np.repeat(prompts[p:p + 1, 1:3], len(pool), 0))
            samples = [VoteSample(int(c.tokens[3]), float(s)) for c, s in zip(pool, ics)]
            van = majority_vote(samples).winner
            irv = ir_guided_vote(samples, floor).winner
            correct["rerank"] += int(win.tokens[3] == truth[p])
            correct["vanilla_vote"] += int(van == truth[p])
            correct["ir_vote"] += int(irv == truth[p])
            fh.write(json.dumps({
                "prompt": prompts[p].tolist(),
                "truth": int(truth[p]),
                "candidates": [{"tokens": list(c.tokens), "logp": c.logp, "ics": c.ics, "energy": c.energy}
                               for c in pool],
                "winner": list(win.tokens),
                "vanilla_vote": int(van),
                "ir_vote": int(irv),
            }, sort_keys=True) + "\n")
    write_json(out / "summary.json", {"k": k, "lambda": lam, "ics_floor": floor, "prompts": n,
                                      "accuracy": {m: c / n for m, c in correct.items()}})
    return EXIT_OK


def cmd_reliability(args, out: Path) -> int:
    from . import reliability as rl
    from .controller import GateDecision, Mode, cost_account

    try:
        params = rl.ReliabilityParams.load(args.config) if args.config else rl.ReliabilityParams()
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad scenario: {exc}") from None
    trials = args.trials or 10**6
    seed = args.seed
    checks = {}

    eps_p = rl.effective_error(params.eps, params.alpha, params.eps_retry)
    mc = rl.mc_effective_error(params.eps, params.alpha, params.eps_retry, trials, seed)
    checks["effective_error_mc"] = {"analytic": eps_p, "mc": mc.mean, "stderr": mc.stderr,
                                    "passed": mc.agrees(eps_p)}
    if params.beta_spec < 1:
        fa = rl.mc_effective_error(params.eps, params.alpha, params.eps_retry, trials, seed, params.beta_spec)
        checks["effective_error_false_alarms"] = {"mc": fa.mean, "stderr": fa.stderr, "reported_only": True}

    cs = rl.chain_success(params.eps, params.n_steps)
    mc = rl.mc_chain_success(params.eps, params.n_steps, trials, seed + 1)
    checks["chain_success_mc"] = {"analytic": cs, "mc": mc.mean, "stderr": mc.stderr, "passed": mc.agrees(cs)}

    p = 1.0 - params.eps
    ph = rl.hybrid_success_step(p, params.s_engage, params.alpha, params.p_recovered)
    mc = rl.mc_hybrid_success_step(p, params.s_engage, params.alpha, params.p_recovered, trials, seed + 2)
    checks["hybrid_step_mc"] = {"analytic": ph, "mc": mc.mean, "stderr": mc.stderr, "passed": mc.agrees(ph)}

    n_max = max(params.n_steps, 100)
    std_curve, hyb_curve = rl.survival_curve(p, n_max), rl.survival_curve(ph, n_max)
    recovery_positive = params.eps > 0 and params.s_engage * params.alpha * params.p_recovered > 0
    dominated = bool(np.all(hyb_curve[1:] >= std_curve[1:]))
    strict = bool(np.all(hyb_curve[1:] > std_curve[1:]))
    checks["survival_dominance"] = {"strict": strict, "passed": dominated and (strict or not recovery_positive)}
    write_csv(out / "survival.csv", ["n", "standard", "hybrid"],
              [(n, std_curve[n], hyb_curve[n]) for n in range(n_max + 1)])

    rng = np.random.default_rng(seed + 3)
    worst_gap, monotone_violations = 0.0, 0
    for _ in range(200):
        shape = tuple(int(s) for s in rng.integers(1, 5, 4))
        rep = rl.entropy_suite(rl.random_joint(rng, shape))
        worst_gap = max(worst_gap, rep.identity_gap)
        monotone_violations += not rep.monotone
    checks["entropy_identity"] = {"max_gap": worst_gap, "monotone_violations": monotone_violations,
                                  "passed": worst_gap < 1e-12 and monotone_violations == 0}

    n_sat, n_bound = 0, 100
    for _ in range(n_bound):
        shape = tuple(int(s) for s in rng.integers(2, 5, 3))
        n_sat += rl.info_bound_check(rl.random_joint(rng, shape)).satisfied
    checks["info_bound"] = {"satisfied_fraction": n_sat / n_bound, "reported_only": True}

    ledgers = []
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        slow = rng.random(n) < rng.random()
        trace = [GateDecision(1.0 if s else 0.0, Mode.REASONING if s else Mode.NORMAL, 0.5) for s in slow]
        ledgers.append(cost_account(trace, params.c_base, params.c_mch, rng.random(n) * params.c_mch))
    rep = rl.cost_bound_check(ledgers)
    n20 = 10
    two_slow = cost_account([GateDecision(1.0, Mode.REASONING, 0.5)] * 2 + [GateDecision(0.0, Mode.NORMAL, 0.5)] * (n20 - 2),
                         params.c_base, params.c_mch)
    checks["cost_bound"] = {"violations": rep.violations, "max_slack": rep.max_slack,
                            "ratio_at_mu_0.2": two_slow.ratio, "passed": rep.violations == 0}
    checks["recovery_condition"] = {"alpha_gt_eps_over_1_plus_eps": params.recovery_condition, "reported_only": True}

    write_json(out / "report.json", {"params": dataclasses.asdict(params), "trials": trials, "checks": checks})
    failed = [k for k, v in checks.items() if v.get("passed") is False]
    for k in failed:
        log.error("check failed: %s", k)
    return EXIT_CHECK if failed else EXIT_OK


@dataclasses.dataclass
class DistillSettings:
    train_tasks: int = 400
    eval_tasks: int = 200
    base_hallucination: float = 0.145
    epochs: int = 3
    batch_size: int = 64
    beta: float = 0.1
    lr: float = 0.05
    inner_steps: int = 20
    rl_episodes: int = 640
    rl_lr: float = 0.5
    refusal_fraction: float = 0.05


def cmd_distill(args, out: Path) -> int:
    from . import distill as ds
    from .tools import generate_task_suite, load_schemas

    s = kv_load(DistillSettings, args.config)
    schemas = load_schemas()
    train = generate_task_suite(s.train_tasks, args.seed + 1, schemas, refusal_fraction=s.refusal_fraction)
    evals = generate_task_suite(s.eval_tasks, args.seed + 2, schemas)
    base = ds.ToolCallPolicy.base(schemas, s.base_hallucination, evals)
    reference = base.copy()
    cfg = ds.DistillConfig(epochs=s.epochs, batch_size=s.batch_size, beta=s.beta, lr=s.lr,
                           inner_steps=s.inner_steps, seed=args.seed)
    curve, pol, last_buf = [], base, None
    for e in range(cfg.epochs):
        pol, last_buf = ds.distill_epoch(pol, reference, train, cfg, e)
        curve.append((e, len(last_buf.pairs), len(last_buf.positives), pol.hallucination_rate(evals)))
    distilled = pol
    rl_log = []
    refined = ds.rl_refine(distilled, train, s.rl_episodes, args.seed, ds.RLConfig(lr=s.rl_lr), log=rl_log)
    rates = {"base": base.hallucination_rate(evals), "distilled": distilled.hallucination_rate(evals),
             "rl": refined.hallucination_rate(evals)}
    write_csv(out / "distill_curve.csv", ["epoch", "pairs", "positives", "hallucination_rate"], curve)
    write_csv(out / "rl_curve.csv", ["episodes", "mean_reward", "baseline"],
              [(r["episodes"], r["mean_reward"], r["baseline"]) for r in rl_log])
    if last_buf is not None:
        last_buf.to_jsonl(out / "buffer.jsonl")
    ds.save_policy(out / "policy_distilled.json", distilled)
    ds.save_policy(out / "policy_rl.json", refined)
    ordered = rates["base"] >= rates["distilled"] >= rates["rl"]
    write_json(out / "hallucination.json", {"rates": rates, "ordered": ordered})
    return EXIT_OK if ordered else EXIT_CHECK


@dataclasses.dataclass
class GateSettings:
    tasks: int = 200
    steps: int = 10
    hard_fraction: float = 0.2
    alpha: float = 0.9
    eps_retry: float = 0.05
    c_base: float = 1.0
    c_mch: float = 2.8
    target_mu: float = 0.2


def cmd_gate_bench(args, out: Path) -> int:
    from . import controller as ct
    from .reliability import cost_bound_check

    s = kv_load(GateSettings, args.config)
    suite = ct.chain_suite(s.tasks, s.steps, hard_frac=s.hard_fraction, alpha=s.alpha, eps_retry=s.eps_retry,
                           seed=args.seed)
    h = suite.entropies
    taus = sorted(set(np.round(np.linspace(0.0, float(h.max()) + 0.05, 60), 6).tolist()))
    rows = ct.gate_sweep(suite, taus, s.c_base, s.c_mch)
    slow = ct.evaluate_gate(suite, -1.0, s.c_base, s.c_mch)
    fast = ct.evaluate_gate(suite, float("inf"), s.c_base, s.c_mch)
    calib = ct.calibrate_tau(ct.chain_suite(s.tasks, s.steps, hard_frac=s.hard_fraction, seed=args.seed + 1000).entropies,
                             s.target_mu)
    tau = calib if args.tau is None else args.tau
    chosen = ct.evaluate_gate(suite, tau, s.c_base, s.c_mch)
    best = ct.best_tradeoff(rows, slow)
    write_csv(out / "pareto.csv", ["tau", "accuracy", "cost", "mu", "accuracy_ratio", "cost_ratio"],
              [(r.tau, r.accuracy, r.cost, r.mu, r.accuracy / slow.accuracy, r.cost / slow.cost) for r in rows])
    step_rows, ledgers = [], []
    for t, hs in enumerate(h):
        trace = ct.gate_trace(hs, tau)
        ledgers.append(ct.cost_account(trace, s.c_base, s.c_mch))
        for i, d in enumerate(trace):
            step_rows.append((t, i, d.entropy, d.mode.value, s.c_base + (s.c_mch if d.mode is ct.Mode.REASONING else 0.0)))
    write_csv(out / "steps.csv", ["task", "step", "entropy", "mode", "cost"], step_rows)
    bound = cost_bound_check(ledgers)
    summary = {
        "always_slow": dataclasses.asdict(slow),
        "always_fast": {**dataclasses.asdict(fast), "tau": "inf"},
        "tau": tau,
        "at_tau": dataclasses.asdict(chosen),
        "best_tradeoff": dataclasses.asdict(best) if best else None,
        "cost_bound_violations": bound.violations,
    }
    write_json(out / "summary.json", summary)
    return EXIT_OK if bound.violations == 0 else EXIT_CHECK


@dataclasses.dataclass
class ToolEvalSettings:
    tasks: int = 200
    max_turns: int = 6
    base_hallucination: float = 0.145


def cmd_eval_tools(args, out: Path) -> int:
    from .distill import StudentAgent, ToolCallPolicy
    from .tools import Fault, ToolEnv, generate_task_suite, irr, load_schemas, run_episode, save_tasks, write_transcripts

    s = kv_load(ToolEvalSettings, args.config)
    schemas = load_schemas()
    tasks = generate_task_suite(s.tasks, args.seed, schemas)
    save_tasks(out / "tasks.json", tasks)
    policy = ToolCallPolicy.base(schemas, s.base_hallucination, tasks)
    summary = {}
    for label, mch in (("mch_on", True), ("mch_off", False)):
        results = []
        for i, t in enumerate(tasks):
            kind = Fault.PARAMETER_MISMATCH if i % 2 else Fault.TIMEOUT
            env = ToolEnv(t, schemas, seed=args.seed * 100003 + i).inject_error(kind, 1)
            results.append(run_episode(StudentAgent(policy, seed=args.seed * 100003 + i, use_mch=mch), env, s.max_turns))
        write_transcripts(out / f"transcripts_{label}.jsonl", results)
        summary[label] = {"irr": irr(results), "success": float(np.mean([r.success for r in results]))}
    summary["irr_gap"] = summary["mch_on"]["irr"] - summary["mch_off"]["irr"]
    write_json(out / "summary.json", summary)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "rank": cmd_rank,
    "reliability": cmd_reliability,
    "distill": cmd_distill,
    "gate-bench": cmd_gate_bench,
    "eval-tools": cmd_eval_tools,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sage", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sage v{__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config or scenario file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--lambda", dest="lam", type=float, default=None)
        p.add_argument("--tau", type=float, default=None)
        if name == "train":
            p.add_argument("--corpus", default=None, help="JSONL with prompt/reasoning/conclusion token lists")
            p.add_argument("--steps", type=int, default=None)
            p.add_argument("--batch", type=int, default=None)
        if name == "rank":
            p.add_argument("--checkpoint", default=None, help="directory written by 'sage train'")
            p.add_argument("--prompts", type=int, default=None)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("SAGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(args, out)
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"sage {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
