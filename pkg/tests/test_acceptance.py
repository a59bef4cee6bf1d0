"""Acceptance suite: one PASS/FAIL line per criterion, then the assertion.

Run alone with ``pytest tests/test_acceptance.py -s -v``; the verdict lines are
printed even without ``-s``.
"""

import json
import math
import random
import time

import numpy as np
import pytest
from scipy import stats

from sagelab import autodiff as ad
from sagelab.cli import main
from sagelab.controller import (
    best_tradeoff,
    chain_suite,
    cost_account,
    evaluate_gate,
    gate_sweep,
    gate_trace,
)
from sagelab.distill import (
    DistillConfig,
    StudentAgent,
    ToolCallPolicy,
    build_buffer,
    dpo_loss,
    dpo_margin_loss,
    reflective_distillation,
    rl_refine,
    rollout,
)
from sagelab.inverse import (
    CategoricalSequencePolicy,
    exact_policy_gradient,
    inverse_gradient_estimate,
    score_function_terms,
)
from sagelab.model import landmark_attention
from sagelab.reliability import (
    ReliabilityParams,
    cmi_by_definition,
    conditional_entropy_by_definition,
    cost_bound_check,
    effective_error,
    entropy_suite,
    hybrid_success_step,
    mc_effective_error,
    random_joint,
    survival_curve,
)
from sagelab.synthetic import needle_accuracy, needle_config, train_needle, vote_eval
from sagelab.tools import (
    Fault,
    ParamSpec,
    ToolCall,
    ToolEnv,
    ToolSchema,
    Violation,
    generate_task_suite,
    irr,
    load_schemas,
    negative_constraint_samples,
    run_episode,
    validate_call,
)

from conftest import finite_difference, rel_error
from test_autodiff import UNARY, _shapes
from test_model import batch_for, np_attention, small_model


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail

    return report


# 1 -------------------------------------------------------------------------------------------


def primitive_errors():
    rng = np.random.default_rng(11)
    worst = 0.0
    for name, (op, make) in sorted(UNARY.items()):
        for shape in _shapes():
            x = make(shape)
            w = rng.normal(size=op(ad.Tensor(x)).shape)
            t = ad.Tensor(x, requires_grad=True)
            ad.sum_(op(t) * w).backward()
            num = finite_difference(lambda: float((op(ad.Tensor(x)).data * w).sum()), x)
            worst = max(worst, rel_error(t.grad, num))
    binary = [ad.add, ad.sub, ad.mul, ad.div, ad.matmul,
              lambda a, b: ad.where(np.arange(a.size).reshape(a.shape) % 3 == 0, a, b)]
    for op in binary:
        a = rng.normal(size=(3, 4))
        b = rng.uniform(0.5, 2.0, size=(4, 4) if op is ad.matmul else (1, 4))
        w = rng.normal(size=op(ad.Tensor(a), ad.Tensor(b)).shape)
        ta, tb = ad.Tensor(a, requires_grad=True), ad.Tensor(b, requires_grad=True)
        ad.sum_(op(ta, tb) * w).backward()
        f = lambda: float((op(ad.Tensor(a), ad.Tensor(b)).data * w).sum())
        worst = max(worst, rel_error(ta.grad, finite_difference(f, a)), rel_error(tb.grad, finite_difference(f, b)))
    logits = rng.normal(size=(5, 7))
    targets = rng.integers(0, 7, 5)
    t = ad.Tensor(logits, requires_grad=True)
    ad.cross_entropy(t, targets).backward()
    num = finite_difference(lambda: float(ad.cross_entropy(ad.Tensor(logits), targets).data), logits)
    return max(worst, rel_error(t.grad, num))


def dual_loss_error():
    m = small_model(L=2, d=16)
    ids, mask = batch_for(m, B=2, T=7)
    m.dual_loss(ids, mask)[0].backward()
    worst, checked = 0.0, 0
    for name, t in m.params.items():
        rows = np.unique(ids) if name.startswith("embed") else None
        g = np.zeros_like(t.data) if t.grad is None else t.grad
        analytic = g if rows is None else g[rows]
        arr = t.data if rows is None else t.data[rows]

        def f():
            if rows is not None:
                t.data[rows] = arr
            return float(m.dual_loss(ids, mask)[0].data)

        num = finite_difference(f, arr)
        if rows is not None:
            t.data[rows] = arr
        worst = max(worst, rel_error(analytic, num))
        checked += arr.size
    return worst, checked


def test_criterion_01_gradients(verdict):
    t0 = time.perf_counter()
    prim = primitive_errors()
    full, checked = dual_loss_error()
    dt = time.perf_counter() - t0
    ok = prim < 1e-4 and full < 1e-4 and dt < 60
    verdict(1, ok, f"primitive rel err {prim:.2e}, dual_loss rel err {full:.2e} over {checked} coords, {dt:.1f}s")


# 2 -------------------------------------------------------------------------------------------


def test_criterion_02_init_scale(verdict):
    sigma = ad.init_std(64)
    w = ad.init_weights(1000, 1000, 64, seed=0).data
    exact = abs(sigma - 0.02 / math.sqrt(128)) < 1e-9 and abs(sigma - 0.0017678) < 1e-7
    bounded = float(np.abs(w).max()) <= 2 * sigma
    ok = exact and bounded
    verdict(2, ok, f"sigma={sigma:.10f}, max|w|/sigma={np.abs(w).max() / sigma:.4f}")


# 3 -------------------------------------------------------------------------------------------


def test_criterion_03_effective_error(verdict):
    t0 = time.perf_counter()
    analytic = effective_error(0.1, 0.8, 0.05)
    mc = mc_effective_error(0.1, 0.8, 0.05, 1_000_000, seed=0)
    dt = time.perf_counter() - t0
    ok = abs(analytic - 0.024) < 1e-15 and mc.agrees(analytic, 3.0) and dt < 10
    verdict(3, ok, f"analytic={analytic}, MC={mc.mean:.5f} (se {mc.stderr:.2e}, "
                   f"{abs(mc.mean - analytic) / mc.stderr:.2f} se), {dt:.2f}s")


# 4 -------------------------------------------------------------------------------------------


def test_criterion_04_survival_dominance(verdict):
    scenarios = [ReliabilityParams()]
    rng = np.random.default_rng(4)
    for _ in range(200):
        eps, alpha, s, pr = rng.uniform(0.001, 0.5), rng.uniform(0.01, 1), rng.uniform(0.01, 1), rng.uniform(0.01, 1)
        scenarios.append(ReliabilityParams(eps=eps, alpha=alpha, s_engage=s, p_recovered=pr))
    bad = 0
    for p in scenarios:
        std = survival_curve(1 - p.eps, 100)
        hyb = survival_curve(hybrid_success_step(1 - p.eps, p.s_engage, p.alpha, p.p_recovered), 100)
        bad += int(not np.all(hyb[1:] > std[1:]))
    verdict(4, bad == 0, f"{len(scenarios)} scenarios, N=1..100, {bad} without strict dominance")


# 5 -------------------------------------------------------------------------------------------


def test_criterion_05_cost_bound(verdict):
    two_slow = cost_account(gate_trace([1, 0, 0, 0, 0, 1, 0, 0, 0, 0], 0.5), 1.0, 1.0)
    rng = np.random.default_rng(5)
    ledgers = []
    for _ in range(10_000):
        n = int(rng.integers(1, 40))
        ledgers.append(cost_account(gate_trace(rng.exponential(size=n), rng.exponential()), 1.0,
                                    float(rng.uniform(0, 3)), mch_costs=rng.uniform(0, 3, n)))
    rep = cost_bound_check(ledgers)
    ok = two_slow.mu == 0.2 and two_slow.ratio == 1.2 and rep.violations == 0
    verdict(5, ok, f"ratio at mu=0.2: {two_slow.ratio!r}, {rep.violations} violations in {rep.n_ledgers} traces")


# 6 -------------------------------------------------------------------------------------------


def test_criterion_06_score_function(verdict):
    t0 = time.perf_counter()
    pol = CategoricalSequencePolicy(3, 2, seed=0)
    table = np.random.default_rng(1).uniform(0, 1, size=(3, 3))
    R = lambda z: table[tuple(np.asarray(z).T)]
    exact = exact_policy_gradient(pol, R)
    est = inverse_gradient_estimate(pol, R, 100_000, baseline=0.0, rng=1)
    rel = np.linalg.norm(est - exact) / np.linalg.norm(exact)
    z = pol.all_sequences()
    b = float(np.sum(pol.probability_of(z) * R(z)))
    samples = pol.sample(np.random.default_rng(3), 100_000)
    t_none, t_base = score_function_terms(pol, R, samples, 0.0), score_function_terms(pol, R, samples, b)
    diff = t_none - t_base
    sd = diff.std(axis=0, ddof=1)
    live = sd > 0
    zstat = diff.mean(axis=0)[live] / (sd[live] / math.sqrt(len(diff)))
    p = min(1.0, 2 * stats.norm.sf(np.abs(zstat)).min() * live.sum())
    v0, v1 = t_none.var(axis=0).sum(), t_base.var(axis=0).sum()
    dt = time.perf_counter() - t0
    ok = rel < 0.02 and p > 0.01 and v1 < v0 and dt < 120
    verdict(6, ok, f"rel err {rel:.4f}, paired p={p:.3f}, variance {v0:.4f} -> {v1:.4f}, {dt:.1f}s")


# 7 -------------------------------------------------------------------------------------------


def test_criterion_07_conditioning(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    gap, violations = 0.0, 0
    for _ in range(1000):
        joint = random_joint(rng, tuple(rng.integers(1, 5, size=4)), sparsity=rng.uniform(0, 0.6))
        rep = entropy_suite(joint)
        h_k = conditional_entropy_by_definition(joint, 0, (1, 2))
        h_k1 = conditional_entropy_by_definition(joint, 0, (1, 2, 3))
        i = cmi_by_definition(joint, 0, 3, (1, 2))
        gap = max(gap, rep.identity_gap, abs(h_k1 - (h_k - i)), abs(rep.h_x_given_y_zk1 - h_k1))
        violations += int(not rep.monotone or h_k1 > h_k + 1e-12)
    dt = time.perf_counter() - t0
    ok = gap < 1e-12 and violations == 0 and dt < 60
    verdict(7, ok, f"max identity gap {gap:.1e}, {violations} monotonicity violations, {dt:.1f}s")


# 8 -------------------------------------------------------------------------------------------


def test_criterion_08_landmark(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    gap = 0.0
    for n in [1, 5, 16, 32]:
        x = rng.normal(size=(n, 8))
        ws = [rng.normal(size=(8, 8)) for _ in range(4)]
        sparse = landmark_attention(x, 16, 32, *map(ad.Tensor, ws), n_heads=2).data
        full = np_attention(x, *ws, 2, np.tril(np.ones((n, n), bool)))
        gap = max(gap, float(np.abs(sparse - full).max()))
    cfg = needle_config()
    model = train_needle(cfg, steps=300)
    acc = needle_accuracy(model, length_factor=4)
    dt = time.perf_counter() - t0
    ok = gap <= 1e-12 and acc >= 0.9 and dt < 600
    verdict(8, ok, f"max |landmark-full| {gap:.1e}, needle acc {acc:.3f} at N={4 * cfg.local_window}, {dt:.0f}s")


# 9 -------------------------------------------------------------------------------------------


def random_schema_call(rng: random.Random):
    names = rng.sample(["alpha", "beta", "gamma", "delta", "eps", "zeta"], rng.randint(1, 5))
    params, args = {}, {}
    for idx, name in enumerate(names):
        kind = rng.choice(["int", "float", "string", "bool", "enum", "date", "int_dom"])
        required = idx == 0 or rng.random() < 0.5
        if kind == "enum":
            values = rng.sample("abcdefg", rng.randint(1, 4))
            spec, value = ParamSpec("enum", required, {"values": values}), rng.choice(values)
        elif kind == "date":
            spec = ParamSpec("string", required, {"min_date": "2026-01-01"})
            value = f"{rng.randint(2026, 2028)}-0{rng.randint(1, 9)}-1{rng.randint(0, 9)}"
        elif kind == "int_dom":
            spec, value = ParamSpec("int", required, {"min": 0, "max": 9}), rng.randint(0, 9)
        elif kind == "int":
            spec, value = ParamSpec("int", required), rng.randint(-100, 100)
        elif kind == "float":
            spec, value = ParamSpec("float", required, {"min": -1.0, "max": 1.0}), rng.uniform(-1, 1)
        elif kind == "bool":
            spec, value = ParamSpec("bool", required), rng.random() < 0.5
        else:
            spec, value = ParamSpec("string", required), "".join(rng.choices("xyz ", k=rng.randint(0, 6)))
        params[name] = spec
        if required or rng.random() < 0.5:
            args[name] = value
    return ToolSchema("tool", params), ToolCall("tool", args)


def test_criterion_09_hard_negatives(verdict):
    rng = random.Random(9)
    intended = [Violation.TYPE_ERROR, Violation.HALLUCINATED_KEY, Violation.LOGIC_ERROR]
    total = exact = 0
    for _ in range(1000):
        schema, call = random_schema_call(rng)
        assert validate_call(call, schema) == []
        for neg, want in zip(negative_constraint_samples(call, schema, rng.randrange(10**6)), intended):
            total += 1
            kinds = [v.kind for v in validate_call(neg.call, schema)]
            target = Violation.MISSING_REQUIRED if neg.substituted else want
            exact += int(kinds == [target] and neg.kind is target)
    verdict(9, exact == total == 3000, f"{exact}/{total} negatives fail with exactly the intended class")


# 10 ------------------------------------------------------------------------------------------


def test_criterion_10_dpo(verdict):
    schemas = load_schemas()
    tasks = generate_task_suite(20, seed=10, schemas=schemas)
    pol = ToolCallPolicy.base(schemas, 0.145, tasks)
    trajs = [rollout(pol, t, seed=i) for i, t in enumerate(tasks)]
    pairs = build_buffer(trajs, {t.id: t for t in tasks}, schemas).pairs
    same = dpo_loss(pol, pol, pairs, 0.1) if pairs else float("nan")
    fixture = dpo_margin_loss([1.0], 0.1)
    closed = math.log1p(math.exp(-0.1))
    ok = len(pairs) > 0 and abs(same - math.log(2)) < 1e-12 and abs(fixture - closed) < 1e-6 \
        and round(fixture, 4) == 0.6444
    verdict(10, ok, f"policy==reference loss - ln2 = {same - math.log(2):.1e} over {len(pairs)} pairs, "
                    f"fixture {fixture:.10f}")


# 11 ------------------------------------------------------------------------------------------


def test_criterion_11a_ir_vote(verdict, arith_model):
    t0 = time.perf_counter()
    van, ir, records = vote_eval(arith_model, n_prompts=200)
    dt = time.perf_counter() - t0
    verdict("11a", ir >= van + 0.02 and len(records) >= 200,
            f"IR vote {ir:.3f} vs vanilla {van:.3f} on {len(records)} prompts, {dt:.0f}s")


def test_criterion_11b_irr(verdict):
    schemas = load_schemas()
    tasks = generate_task_suite(200, 0, schemas)
    policy = ToolCallPolicy.base(schemas, 0.145, tasks)
    rates = {}
    for mch in (True, False):
        results = []
        for i, t in enumerate(tasks):
            kind = Fault.PARAMETER_MISMATCH if i % 2 else Fault.TIMEOUT
            env = ToolEnv(t, schemas, seed=i).inject_error(kind, 1)
            results.append(run_episode(StudentAgent(policy, seed=i, use_mch=mch), env, 6))
        rates[mch] = irr(results)
    verdict("11b", rates[True] > rates[False], f"IRR with MCH {rates[True]:.3f} vs without {rates[False]:.3f}")


def test_criterion_11c_hallucination(verdict):
    schemas = load_schemas()
    train = generate_task_suite(400, 1, schemas, refusal_fraction=0.05)
    evals = generate_task_suite(200, 2, schemas)
    base = ToolCallPolicy.base(schemas, 0.145, evals)
    distilled = reflective_distillation(base, train, DistillConfig(seed=0))
    refined = rl_refine(distilled, train, 640, seed=0)
    r = [p.hallucination_rate(evals) for p in (base, distilled, refined)]
    verdict("11c", r[0] >= r[1] >= r[2], f"hallucination base {r[0]:.4f} >= distilled {r[1]:.4f} >= RL {r[2]:.4f}")


def test_criterion_11d_gate_tradeoff(verdict):
    suite = chain_suite(n_tasks=200, seed=0)
    slow = evaluate_gate(suite, -1.0)
    rows = gate_sweep(suite, np.linspace(0.0, float(suite.entropies.max()) + 0.05, 60))
    best = best_tradeoff(rows, slow)
    detail = "no tau meets both targets" if best is None else (
        f"tau={best.tau:.3f}: accuracy {best.accuracy / slow.accuracy:.3f}x, cost {best.cost / slow.cost:.3f}x of always-slow")
    verdict("11d", best is not None, detail)


# 12 ------------------------------------------------------------------------------------------


def rerun_from_manifest(src, dst):
    """Rebuild argv from a run's manifest, pointing only the output directory elsewhere."""
    man = json.loads((src / "manifest.json").read_text())
    argv = [man["subcommand"], "--out", str(dst), "--seed", str(man["seed"])]
    if man["config"] is not None:
        argv += ["--config", man["config"]]
    names = {"lam": "--lambda"}
    for k, v in man["flags"].items():
        argv += [names.get(k, "--" + k.replace("_", "-")), str(v)]
    return main(argv)


def outputs(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def test_criterion_12_determinism(verdict, tmp_path):
    dcfg = tmp_path / "distill.txt"
    dcfg.write_text("train_tasks=120\neval_tasks=60\nepochs=2\nbatch_size=32\nrl_episodes=64\n")
    tcfg = tmp_path / "tools.txt"
    tcfg.write_text("tasks=40\n")
    runs = {
        "train": ["train", "--steps", "3", "--batch", "8", "--seed", "1"],
        "reliability": ["reliability", "--trials", "20000", "--seed", "3"],
        "gate-bench": ["gate-bench", "--seed", "2"],
        "distill": ["distill", "--config", str(dcfg)],
        "eval-tools": ["eval-tools", "--config", str(tcfg), "--seed", "4"],
    }
    same, codes = {}, {}
    for name, argv in runs.items():
        a = tmp_path / f"{name}_a"
        codes[name] = main(argv + ["--out", str(a)])
        if name == "train":
            codes["rank"] = main(["rank", "--checkpoint", str(a), "--k", "4", "--prompts", "5",
                                  "--out", str(tmp_path / "rank_a")])
    for name in list(runs) + ["rank"]:
        a, b = tmp_path / f"{name}_a", tmp_path / f"{name}_b"
        rerun_from_manifest(a, b)
        ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
        ma.pop("out"), mb.pop("out")
        same[name] = outputs(a) == outputs(b) and ma == mb and len(outputs(a)) > 0
    ok = all(same.values()) and all(c == 0 for c in codes.values())
    verdict(12, ok, ", ".join(f"{k}:{'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
