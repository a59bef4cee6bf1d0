"""Reflective distillation for a tool-calling student.

The student is a slot-categorical policy: for each intended call it decides the
output format, the treatment of every argument (correct, wrong type, out of
domain, omitted) and whether to add an undeclared key. Its parameters are one
flat vector so preference and policy-gradient updates stay exact and cheap.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_softmax as np_log_softmax

from . import autodiff as ad
from .inverse import MovingAverageBaseline, score_function_terms
from .tools import (
    DECOY_KEYS,
    Fault,
    OraclePolicy,
    Refusal,
    Task,
    ToolCall,
    ToolEnv,
    ToolSchema,
    Violation,
    logic_mutation,
    repair_for_fault,
    run_episode,
    type_mutation,
)

SEP = "<sep>"
FMT_OPTIONS = ("ok", "malformed", "refuse")
ARG_OPTIONS = ("ok", "type", "logic", "omit")
EXTRA_OPTIONS = ("none", "decoy")


class CorrectionUnavailable(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# policy
# ---------------------------------------------------------------------------


def _arg_options(spec) -> tuple[str, ...]:
    opts = ["ok", "type"]
    if spec.domain:
        opts.append("logic")
    if spec.required:
        opts.append("omit")
    return tuple(opts)


class ToolCallPolicy:
    """Slot-categorical student over a fixed tool registry."""

    def __init__(self, schemas: dict[str, ToolSchema], theta: np.ndarray | None = None):
        self.schemas = schemas
        self.slots: dict[str, tuple[int, tuple[str, ...]]] = {}
        offset = 0

        def add(key, opts):
            nonlocal offset
            self.slots[key] = (offset, tuple(opts))
            offset += len(opts)

        add("fmt|safe", FMT_OPTIONS)
        add("fmt|risky", FMT_OPTIONS)
        for name in sorted(schemas):
            for pname in sorted(schemas[name].params):
                add(f"arg|{name}|{pname}", _arg_options(schemas[name].params[pname]))
            add(f"extra|{name}", EXTRA_OPTIONS)
        self.size = offset
        self.index = {f"{k}={o}": off + i for k, (off, opts) in self.slots.items() for i, o in enumerate(opts)}
        self.segments = np.empty(self.size, dtype=np.int64)
        for s, (off, opts) in enumerate(self.slots.values()):
            self.segments[off:off + len(opts)] = s
        self.theta = np.zeros(self.size) if theta is None else np.array(theta, dtype=np.float64)
        if self.theta.shape != (self.size,):
            raise ValueError(f"theta must have shape ({self.size},)")

    @classmethod
    def base(cls, schemas, hallucination: float = 0.145, tasks=None, malformed: float = 0.02,
             refuse_risky: float = 0.5) -> "ToolCallPolicy":
        """Initial student whose exact hallucination rate on ``tasks`` matches the target."""
        pol = cls(schemas)
        for key, (off, opts) in pol.slots.items():
            if key.startswith("fmt"):
                p_ref = refuse_risky if key == "fmt|risky" else 1e-3
                probs = np.array([1 - malformed - p_ref, malformed, p_ref])
                pol.theta[off:off + 3] = np.log(probs)

        def rate_at(gap):
            for key, (off, opts) in pol.slots.items():
                if not key.startswith("fmt"):
                    pol.theta[off:off + len(opts)] = [gap if o in ("ok", "none") else 0.0 for o in opts]
            return pol.hallucination_rate(tasks) if tasks else pol._mean_call_rate()

        lo, hi = 0.0, 30.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if rate_at(mid) > hallucination:
                lo = mid
            else:
                hi = mid
        rate_at(hi)
        return pol

    def copy(self) -> "ToolCallPolicy":
        return ToolCallPolicy(self.schemas, self.theta.copy())

    # -- probabilities -------------------------------------------------------
    def log_table(self, theta=None) -> np.ndarray:
        theta = self.theta if theta is None else theta
        out = np.empty(self.size)
        for off, opts in self.slots.values():
            out[off:off + len(opts)] = np_log_softmax(theta[off:off + len(opts)])
        return out

    def log_table_tensor(self, theta: ad.Tensor) -> ad.Tensor:
        parts = [ad.log_softmax(theta[off:off + len(opts)], axis=-1) for off, opts in self.slots.values()]
        return ad.concat(parts, axis=0)

    def slot_probs(self, key: str) -> dict[str, float]:
        off, opts = self.slots[key]
        p = np.exp(np_log_softmax(self.theta[off:off + len(opts)]))
        return dict(zip(opts, p))

    def clean_call_prob(self, call: ToolCall) -> float:
        """Probability that every argument slot is 'ok' and no key is added."""
        p = self.slot_probs(f"extra|{call.name}")["none"]
        for pname in call.arguments:
            p *= self.slot_probs(f"arg|{call.name}|{pname}")["ok"]
        return p

    def _mean_call_rate(self) -> float:
        rates = [1 - self.clean_call_prob(ToolCall(n, {k: None for k, s in sch.params.items() if s.required}))
                 for n, sch in self.schemas.items()]
        return float(np.mean(rates))

    def hallucination_rate(self, tasks: list[Task]) -> float:
        """Exact expected fraction of calls with an invalid or invented argument."""
        rates = [1 - self.clean_call_prob(call) for t in tasks if not t.expect_refusal for _, call in t.plan.steps]
        if not rates:
            raise ValueError("no tool calls in the evaluation tasks")
        return float(np.mean(rates))

    # -- token sequences -----------------------------------------------------
    def counts(self, sequences: list[list[str]]) -> np.ndarray:
        """Occurrence counts of policy-controlled tokens; anything after SEP is ignored."""
        c = np.zeros((len(sequences), self.size))
        for i, seq in enumerate(sequences):
            for tok in seq:
                if tok == SEP:
                    break
                j = self.index.get(tok)
                if j is not None:
                    c[i, j] += 1
        return c

    def log_prob(self, sequences) -> np.ndarray:
        c = sequences if isinstance(sequences, np.ndarray) else self.counts(sequences)
        return c @ self.log_table()

    def log_prob_tensor(self, theta: ad.Tensor, counts: np.ndarray) -> ad.Tensor:
        return ad.matmul(ad.Tensor(counts), self.log_table_tensor(theta))

    def grad_log_prob(self, counts: np.ndarray) -> np.ndarray:
        """Per-sequence gradient of log-probability with respect to theta, shape (n, size)."""
        counts = np.atleast_2d(counts)
        probs = np.exp(self.log_table())
        n_seg = int(self.segments.max()) + 1
        seg_tot = np.zeros((counts.shape[0], n_seg))
        np.add.at(seg_tot.T, self.segments, counts.T)
        return counts - seg_tot[:, self.segments] * probs

    # -- acting --------------------------------------------------------------
    def sample_action(self, call: ToolCall, risky: bool, rng: random.Random):
        """Sample slot decisions for ``call`` and materialize the emitted action."""

        def draw(key):
            off, opts = self.slots[key]
            p = np.exp(np_log_softmax(self.theta[off:off + len(opts)]))
            u = rng.random()
            i = min(int(np.searchsorted(np.cumsum(p), u, side="right")), len(opts) - 1)
            return opts[i]

        fmt = draw("fmt|risky" if risky else "fmt|safe")
        tokens = [f"call:{call.name}", f"fmt|{'risky' if risky else 'safe'}={fmt}"]
        if fmt == "refuse":
            return Refusal(), tokens
        schema = self.schemas[call.name]
        args = {}
        for pname in sorted(call.arguments):
            choice = draw(f"arg|{call.name}|{pname}")
            tokens.append(f"arg|{call.name}|{pname}={choice}")
            value, spec = call.arguments[pname], schema.params[pname]
            if choice == "ok":
                args[pname] = value
            elif choice == "type":
                args[pname] = type_mutation(value, spec)
            elif choice == "logic":
                args[pname] = logic_mutation(value, spec, rng)
        extra = draw(f"extra|{call.name}")
        tokens.append(f"extra|{call.name}={extra}")
        if extra == "decoy":
            args[rng.choice([k for k in DECOY_KEYS if k not in schema.params])] = True
        out = ToolCall(call.name, args)
        if fmt == "malformed":
            return out.to_wire()[:-1], tokens
        return out, tokens


def clean_tokens(call, risky: bool) -> list[str]:
    """Tokens of the teacher's action: every slot correct."""
    ctx = "risky" if risky else "safe"
    if isinstance(call, Refusal):
        return ["call:refusal", f"fmt|{ctx}=refuse"]
    toks = [f"call:{call.name}", f"fmt|{ctx}=ok"]
    toks += [f"arg|{call.name}|{p}=ok" for p in sorted(call.arguments)]
    toks.append(f"extra|{call.name}=none")
    return toks


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


def response_tokens(resp: dict) -> list[str]:
    status = resp.get("status", "error")
    if status == "fault":
        return [f"obs:fault:{resp['fault']['kind']}"]
    if status == "error":
        kinds = [v["kind"] for v in resp.get("violations", [])] or ["rejected"]
        return [f"obs:error:{k}" for k in kinds]
    if status == "ok":
        return ["obs:ok" if resp.get("step_done") else "obs:wrong_result"]
    return [f"obs:{status}"]


@dataclass
class TrajStep:
    observation: list[str]
    action: list[str]
    reward: float
    call: object = None
    response: dict = field(default_factory=dict)


@dataclass
class Trajectory:
    context: list[str]
    steps: list[TrajStep]
    conclusion: list[str]
    reasoning: list[str]
    success: bool
    task_id: str = ""

    def __post_init__(self):
        if self.success and self.steps and not self.steps[-1].reward > 0:
            raise ValueError("successful trajectory must end with positive reward")

    def tokens(self) -> list[str]:
        out = list(self.context)
        for s in self.steps:
            out += s.action + s.observation
        return out + list(self.conclusion)

    def first_failure(self) -> int | None:
        for i, s in enumerate(self.steps):
            if not (s.response.get("status") in ("ok", "refused_ok") and s.response.get("step_done", True)):
                return i
        return None

    def n_hallucinated(self) -> int:
        return sum(v["kind"] == Violation.HALLUCINATED_KEY.value
                   for s in self.steps for v in s.response.get("violations", []))


def step_reward(resp: dict) -> float:
    status = resp.get("status")
    if status == "refused_ok" or (status == "ok" and resp.get("step_done")):
        return 1.0
    if status == "error":
        return -1.0
    return 0.0


class StudentAgent:
    """Acts with a ToolCallPolicy; ``use_mch`` enables confidence-gated self-repair.

    With the meta-cognitive check on, the agent verifies each sampled call
    against the schema before emitting it (resampling up to ``retries`` times)
    and reads fault messages to repair drifted arguments. With it off the agent
    simply resamples after any failure.
    """

    def __init__(self, policy: ToolCallPolicy, seed: int = 0, use_mch: bool = False, retries: int = 3):
        self.policy = policy
        self.rng = random.Random(seed)
        self.use_mch = use_mch
        self.retries = retries
        self.drifts: dict[str, dict] = {}
        self.last_tokens: list[str] = []

    def act(self, obs: dict):
        call = obs["intended"]
        last = obs["last_response"]
        if self.use_mch and last and last.get("status") == "fault" and last["fault"]["kind"] == Fault.PARAMETER_MISMATCH.value:
            self.drifts[obs["step_id"]] = last["fault"]
        action, tokens = self.policy.sample_action(call, obs["expect_refusal"], self.rng)
        if self.use_mch:
            from .tools import validate_call

            for _ in range(self.retries):
                if isinstance(action, ToolCall) and not validate_call(action, self.policy.schemas):
                    break
                if isinstance(action, Refusal) and obs["expect_refusal"]:
                    break
                action, tokens = self.policy.sample_action(call, obs["expect_refusal"], self.rng)
            if isinstance(action, ToolCall) and obs["step_id"] in self.drifts:
                action = repair_for_fault(action, self.drifts[obs["step_id"]])
        self.last_tokens = tokens
        return action


def _to_trajectory(task: Task, result, actions_tokens: list[list[str]]) -> Trajectory:
    steps = []
    for entry, toks in zip(result.transcript, actions_tokens):
        resp = entry["response"]
        steps.append(TrajStep(response_tokens(resp), toks, step_reward(resp), entry["action"], resp))
    conclusion = ["<done>"] if result.success else ["<fail>"]
    reasoning = [t for s in steps for t in s.action]
    return Trajectory(task.context_tokens(), steps, conclusion, reasoning, result.success, task.id)


class _Recorder:
    def __init__(self, agent):
        self.agent = agent
        self.tokens: list[list[str]] = []

    def act(self, obs):
        action = self.agent.act(obs)
        self.tokens.append(getattr(self.agent, "last_tokens", []))
        return action


def rollout(policy: ToolCallPolicy, task: Task, seed: int, max_turns: int | None = None,
            fault: tuple[str, int] | None = None) -> Trajectory:
    """One student episode; by default one attempt per plan step."""
    env = ToolEnv(task, policy.schemas, seed=seed)
    if fault is not None:
        env.inject_error(*fault)
    rec = _Recorder(StudentAgent(policy, seed=seed))
    result = run_episode(rec, env, max_turns or len(task.plan.steps))
    return _to_trajectory(task, result, rec.tokens)


# ---------------------------------------------------------------------------
# teacher
# ---------------------------------------------------------------------------


@dataclass
class Critique:
    text: list[str]
    violation_class: str


CRITIQUE_TEMPLATES = {
    Violation.TYPE_ERROR.value: "argument {param} has the wrong type ; send a {expected} value",
    Violation.HALLUCINATED_KEY.value: "argument {param} is not in the schema ; remove it",
    Violation.MISSING_REQUIRED.value: "required argument {param} is missing ; include it",
    Violation.LOGIC_ERROR.value: "argument {param} is outside its allowed domain ; use a permitted value",
    Violation.MALFORMED.value: "output is not valid tool_call json ; emit a complete object",
    Violation.UNKNOWN_TOOL.value: "tool {param} does not exist ; call a declared tool",
    "timeout": "the tool timed out ; retry with backoff",
    "parameter_mismatch": "the api changed parameter {param} ; adapt the call to the new signature",
    "destructive": "the request is destructive ; refuse instead of executing",
    "wrong_result": "the call ran but did not achieve the goal ; follow the plan arguments",
    "unneeded_refusal": "the request was safe ; execute it instead of refusing",
}


def teacher_critique(failed: Trajectory, schemas: dict[str, ToolSchema] | None = None) -> Critique:
    """Template critique of the first failed turn."""
    if failed.success:
        raise ValueError("critique requested for a successful trajectory")
    i = failed.first_failure()
    if i is None:
        cls, param = "wrong_result", None  # ran out of turns
    else:
        resp = failed.steps[i].response
        if resp.get("status") == "fault":
            cls, param = resp["fault"]["kind"], resp["fault"].get("param")
        elif resp.get("violations"):
            cls, param = resp["violations"][0]["kind"], resp["violations"][0]["param"]
        elif "destructive" in resp.get("message", "") or "expected a refusal" in resp.get("message", ""):
            cls, param = "destructive", None
        elif "refused" in resp.get("message", ""):
            cls, param = "unneeded_refusal", None
        else:
            cls, param = "wrong_result", None
    expected = "correct"
    if cls == Violation.TYPE_ERROR.value and schemas and i is not None:
        call = failed.steps[i].call.get("tool_call", {})
        spec = schemas.get(call.get("name"), None)
        if spec and param in spec.params:
            expected = spec.params[param].type
    text = CRITIQUE_TEMPLATES[cls].format(param=param, expected=expected)
    return Critique(["<critique>"] + text.split(), cls)


class _ReplayThenOracle:
    def __init__(self, actions, risky):
        self.actions = list(actions)
        self.oracle = OraclePolicy(repair=True)
        self.risky = risky
        self.tokens: list[list[str]] = []

    def act(self, obs):
        if self.actions:
            action, toks = self.actions.pop(0)
        else:
            action = self.oracle.act(obs)
            toks = clean_tokens(action, self.risky)
        if obs["last_response"] and obs["last_response"].get("status") == "fault":
            self.oracle.act(obs)  # let the oracle see fault messages during replay
        self.tokens.append(toks)
        return action


def _action_from_json(obj):
    if "tool_call" in obj:
        return ToolCall(obj["tool_call"]["name"], dict(obj["tool_call"]["arguments"]))
    if "refusal" in obj:
        return Refusal(obj["refusal"])
    if "raw" in obj:
        return obj["raw"]
    raise CorrectionUnavailable("unreplayable action")


def teacher_correct(failed: Trajectory, critique: Critique, task: Task, schemas: dict[str, ToolSchema],
                    seed: int = 0, fault: tuple[str, int] | None = None) -> Trajectory:
    """Replay the student's successful prefix, then finish with oracle actions."""
    if failed.success:
        raise ValueError("correction requested for a successful trajectory")
    if task.id != failed.task_id:
        raise ValueError("task does not match trajectory")
    if not task.plan.steps:
        raise CorrectionUnavailable(f"task {task.id} has no oracle plan")
    i = failed.first_failure()
    cut = len(failed.steps) if i is None else i
    prefix = [(_action_from_json(s.call), s.action) for s in failed.steps[:cut]]
    env = ToolEnv(task, schemas, seed=seed)
    if fault is not None:
        env.inject_error(*fault)
    agent = _ReplayThenOracle(prefix, task.expect_refusal)
    result = run_episode(agent, env, cut + 2 * len(task.plan.steps) + 2)
    if not result.success:
        raise CorrectionUnavailable(f"oracle could not complete task {task.id}")
    return _to_trajectory(task, result, agent.tokens)


# ---------------------------------------------------------------------------
# buffer and objectives
# ---------------------------------------------------------------------------


@dataclass
class PreferencePair:
    prompt: list[str]
    chosen: list[str]
    rejected: list[str]
    critique: Critique | None = None

    def __post_init__(self):
        if self.chosen == self.rejected:
            raise ValueError("chosen and rejected must differ")


@dataclass
class Buffer:
    positives: list[Trajectory] = field(default_factory=list)
    pairs: list[PreferencePair] = field(default_factory=list)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for t in self.positives:
                fh.write(json.dumps({"tokens": t.tokens(), "label": 1, "critique": None}) + "\n")
            for p in self.pairs:
                fh.write(json.dumps({"tokens": p.rejected, "label": 0,
                                     "critique": p.critique.violation_class if p.critique else None}) + "\n")


def build_buffer(batch: list[Trajectory], tasks: dict[str, Task], schemas: dict[str, ToolSchema],
                 seed: int = 0, faults: dict[str, tuple[str, int]] | None = None) -> Buffer:
    """Successes become positives; each failure yields its correction and a critique-tagged negative."""
    buf = Buffer()
    faults = faults or {}
    for traj in batch:
        if traj.success:
            buf.positives.append(traj)
            continue
        crit = teacher_critique(traj, schemas)
        fixed = teacher_correct(traj, crit, tasks[traj.task_id], schemas, seed, faults.get(traj.task_id))
        buf.positives.append(fixed)
        buf.pairs.append(PreferencePair(traj.context, fixed.tokens(), traj.tokens() + [SEP] + crit.text, crit))
    return buf


def dpo_margin_loss(margins, beta: float) -> float:
    """Mean of -log sigmoid(beta * margin) for already computed log-ratio margins."""
    m = np.asarray(margins, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, -beta * m)))


def dpo_loss(policy: ToolCallPolicy, reference: ToolCallPolicy, pairs: list[PreferencePair], beta: float,
             theta: ad.Tensor | None = None):
    """Mean DPO loss; returns a Tensor when ``theta`` is given so it can be differentiated."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if not pairs:
        raise ValueError("dpo_loss needs at least one pair")
    cc = policy.counts([p.chosen for p in pairs])
    cr = policy.counts([p.rejected for p in pairs])
    ref = reference.log_prob(cc) - reference.log_prob(cr)
    if theta is None:
        return dpo_margin_loss(policy.log_prob(cc) - policy.log_prob(cr) - ref, beta)
    lp = policy.log_prob_tensor(theta, cc - cr)
    z = (lp - ad.Tensor(ref)) * beta
    return ad.mean(ad.neg(ad.log_sigmoid(z)))


def reflective_nll(policy: ToolCallPolicy, positives: list[Trajectory], theta: ad.Tensor) -> ad.Tensor:
    c = policy.counts([t.tokens() for t in positives])
    return ad.neg(ad.mean(policy.log_prob_tensor(theta, c)))


@dataclass
class DistillConfig:
    epochs: int = 3
    batch_size: int = 64
    beta: float = 0.1
    lr: float = 0.05
    inner_steps: int = 20
    nll_weight: float = 0.0
    max_turns: int | None = None
    seed: int = 0


def distill_epoch(policy: ToolCallPolicy, reference: ToolCallPolicy, tasks: list[Task], cfg: DistillConfig,
                  epoch: int, log=None) -> tuple[ToolCallPolicy, Buffer]:
    """Rollout a batch, build the buffer, take DPO (plus optional NLL) steps."""
    rng = random.Random(cfg.seed * 7919 + epoch)
    by_id = {t.id: t for t in tasks}
    batch_tasks = rng.sample(tasks, min(cfg.batch_size, len(tasks)))
    batch = [rollout(policy, t, seed=rng.randrange(2**31), max_turns=cfg.max_turns) for t in batch_tasks]
    buf = build_buffer(batch, by_id, policy.schemas, seed=0)
    new = policy.copy()
    if not buf.pairs and cfg.nll_weight == 0:
        return new, buf
    theta = ad.Tensor(new.theta.copy(), requires_grad=True)
    opt = ad.Adam([theta], lr=cfg.lr)
    for _ in range(cfg.inner_steps):
        opt.zero_grad()
        loss = dpo_loss(new, reference, buf.pairs, cfg.beta, theta) if buf.pairs else ad.Tensor(0.0)
        if cfg.nll_weight:
            loss = loss + reflective_nll(new, buf.positives, theta) * cfg.nll_weight
        if loss.requires_grad:
            loss.backward()
            opt.step()
    new.theta = theta.data.copy()
    if log is not None:
        log.append({"epoch": epoch, "pairs": len(buf.pairs), "positives": len(buf.positives),
                    "success": sum(t.success for t in batch) / len(batch)})
    return new, buf


def reflective_distillation(policy: ToolCallPolicy, tasks: list[Task], cfg: DistillConfig,
                            log=None) -> ToolCallPolicy:
    reference = policy.copy()
    for e in range(cfg.epochs):
        policy, _ = distill_epoch(policy, reference, tasks, cfg, e, log)
    return policy


# ---------------------------------------------------------------------------
# RL refinement
# ---------------------------------------------------------------------------


def trajectory_reward(traj: Trajectory) -> float:
    """+1 on success, -1 if any call failed validation or serialization, -0.5 per invented key."""
    r = 1.0 if traj.success else 0.0
    if any(s.response.get("status") == "error" and s.response.get("violations") for s in traj.steps):
        r -= 1.0
    return r - 0.5 * traj.n_hallucinated()


@dataclass
class RLConfig:
    lr: float = 0.5
    batch_size: int = 32
    momentum: float = 0.9
    max_turns: int | None = None


def rl_refine(policy: ToolCallPolicy, tasks: list[Task], episodes: int, seed: int,
              cfg: RLConfig | None = None, reward_fn=trajectory_reward, log=None) -> ToolCallPolicy:
    """Batched score-function ascent on the trajectory reward with a moving-average baseline."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    cfg = cfg or RLConfig()
    pol = policy.copy()
    rng = random.Random(seed)
    baseline = MovingAverageBaseline(cfg.momentum)
    done = 0
    while done < episodes:
        n = min(cfg.batch_size, episodes - done)
        trajs = [rollout(pol, rng.choice(tasks), rng.randrange(2**31), cfg.max_turns) for _ in range(n)]
        rewards = np.array([reward_fn(t) for t in trajs])
        counts = pol.counts([t.tokens() for t in trajs])
        grad = score_function_terms(pol, lambda _: rewards, counts, baseline.value).mean(axis=0)
        pol.theta = pol.theta + cfg.lr * grad
        baseline.update(rewards)
        done += n
        if log is not None:
            log.append({"episodes": done, "mean_reward": float(rewards.mean()), "baseline": baseline.value})
    return pol


def save_policy(path, policy: ToolCallPolicy) -> None:
    Path(path).write_text(json.dumps({"theta": policy.theta.tolist()}) + "\n")


def load_policy(path, schemas) -> ToolCallPolicy:
    return ToolCallPolicy(schemas, np.array(json.loads(Path(path).read_text())["theta"]))


def exact_valid_call_probability(policy: ToolCallPolicy, call: ToolCall, risky: bool = False) -> float:
    return policy.slot_probs("fmt|risky" if risky else "fmt|safe")["ok"] * policy.clean_call_prob(call)


