"""Entropy-gated fast/slow decoding, look-ahead simulation and cost accounting."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy.special import log_softmax

from .reliability import effective_error


class Mode(str, enum.Enum):
    NORMAL = "normal"
    REASONING = "reasoning"


@dataclass(frozen=True)
class GateDecision:
    entropy: float
    mode: Mode
    threshold: float

    def __post_init__(self):
        if (self.mode is Mode.REASONING) != (self.entropy > self.threshold):
            raise ValueError("mode must be REASONING exactly when entropy > threshold")


@dataclass(frozen=True)
class CostLedger:
    n_steps: int
    n_slow: int
    c_base: float
    c_mch: float
    c_total: float

    @property
    def mu(self) -> float:
        return self.n_slow / self.n_steps

    @property
    def bound(self) -> float:
        return self.n_steps * (self.c_base + self.mu * self.c_mch)

    @property
    def ratio(self) -> float:
        """Cost relative to an all-fast run."""
        return self.c_total / (self.n_steps * self.c_base)

    def within_bound(self, tol: float = 1e-9) -> bool:
        return self.c_total <= self.bound + tol


def step_entropy(logits) -> float:
    """Shannon entropy (nats) of softmax(logits)."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    if z.size == 0 or not np.isfinite(z).any():
        raise ValueError("need at least one finite logit")
    finite = z[np.isfinite(z)]
    logp = log_softmax(finite)
    p = np.exp(logp)
    return float(max(0.0, -(p * logp).sum()))


def gate(entropy: float, tau: float) -> GateDecision:
    if math.isnan(tau) or tau == -math.inf:
        raise ValueError("tau must be a number or +inf")
    mode = Mode.REASONING if entropy > tau else Mode.NORMAL
    return GateDecision(float(entropy), mode, float(tau))


def gate_trace(entropies, tau: float) -> list[GateDecision]:
    return [gate(h, tau) for h in entropies]


def cost_account(trace: Sequence[GateDecision], c_base: float, c_mch: float,
                 mch_costs: Sequence[float] | None = None) -> CostLedger:
    """Sum per-step costs. ``mch_costs`` lets slow steps pay less than the full c_mch."""
    if not trace:
        raise ValueError("empty gate trace")
    if c_base < 0 or c_mch < 0:
        raise ValueError("costs must be non-negative")
    total = 0.0
    n_slow = 0
    for i, d in enumerate(trace):
        total += c_base
        if d.mode is Mode.REASONING:
            n_slow += 1
            extra = c_mch if mch_costs is None else min(float(mch_costs[i]), c_mch)
            total += extra
    return CostLedger(len(trace), n_slow, c_base, c_mch, total)


def switching_rate(entropies, tau: float) -> float:
    h = np.asarray(entropies, dtype=np.float64)
    return float(np.mean(h > tau))


def calibrate_tau(entropies, target_mu: float) -> float:
    """Smallest observed-entropy threshold whose switching rate is at most ``target_mu``."""
    if not 0.0 <= target_mu <= 1.0:
        raise ValueError("target_mu must be in [0, 1]")
    h = np.sort(np.asarray(entropies, dtype=np.float64).ravel())
    if h.size == 0:
        raise ValueError("no entropies to calibrate on")
    if target_mu >= 1.0:
        return float(np.nextafter(h[0], -np.inf))
    k = int(math.ceil((1.0 - target_mu) * h.size)) - 1
    return float(h[max(k, 0)])


# ---------------------------------------------------------------------------
# look-ahead simulation
# ---------------------------------------------------------------------------


class Simulator(Protocol):
    def propose(self, state, k: int, attempt: int) -> list: ...

    def advance(self, state, step): ...

    def greedy(self, state): ...

    def score(self, state) -> float: ...


@dataclass
class LookAheadResult:
    step: object
    score: float
    scores: list[float]
    stds: list[float]
    resampled: bool


def look_ahead_simulate(state, k_candidates: int, depth: int, sim: Simulator,
                        stability: float = 0.1) -> LookAheadResult:
    """Roll each candidate out ``depth`` greedy steps and commit the most coherent stable one.

    A candidate's score is the mean of ``sim.score`` over the states reached by
    the candidate and its continuation; it is stable when the standard deviation
    of those per-step scores is below ``stability``. If no candidate is stable a
    second batch is proposed once and the best candidate seen is committed.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if k_candidates < 1:
        raise ValueError("need at least one candidate")

    def evaluate(cands):
        means, stds = [], []
        for c in cands:
            s = sim.advance(state, c)
            per_step = [sim.score(s)]
            for _ in range(depth):
                s = sim.advance(s, sim.greedy(s))
                per_step.append(sim.score(s))
            means.append(float(np.mean(per_step)))
            stds.append(float(np.std(per_step)))
        return means, stds

    def pick(means, stds, stable_only):
        idx = [i for i in range(len(means)) if not stable_only or stds[i] < stability]
        if not idx:
            return None
        return max(idx, key=lambda i: (means[i], -i))

    cands = list(sim.propose(state, k_candidates, 0))
    if not cands:
        raise ValueError("simulator proposed zero candidates")
    means, stds = evaluate(cands)
    best = pick(means, stds, True)
    resampled = False
    if best is None:
        extra = list(sim.propose(state, k_candidates, 1))
        m2, s2 = evaluate(extra)
        cands, means, stds = cands + extra, means + m2, stds + s2
        resampled = True
        best = pick(means, stds, True)
        if best is None:
            best = pick(means, stds, False)
    return LookAheadResult(cands[best], means[best], means, stds, resampled)


class ModelSimulator:
    """Look-ahead over a trained model: candidates are the top-k next tokens."""

    def __init__(self, model, prompt):
        from .inverse import compute_ics

        self.model = model
        self.prompt = np.asarray(prompt, dtype=np.int64)
        self._ics = compute_ics

    def propose(self, state, k, attempt):
        logits = self.model.forward(np.asarray(state)[None]).logits.data[0, -1]
        order = np.argsort(-logits, kind="stable")
        return [int(t) for t in order[attempt * k:(attempt + 1) * k]]

    def advance(self, state, step):
        return tuple(state) + (int(step),)

    def greedy(self, state):
        return int(np.argmax(self.model.forward(np.asarray(state)[None]).logits.data[0, -1]))

    def score(self, state):
        ids = np.asarray(state)[None]
        conf = float(self.model.forward(ids).confidence.data[0, -1].mean())
        trace = np.asarray(state[len(self.prompt):])
        ics = self._ics(self.model, trace, self.prompt) if trace.size else 0.0
        return conf + ics


class ToyMDP:
    """Nine-state deterministic MDP with one trap branch.

    From the start state the greedy choice (highest immediate score) enters a
    branch whose second step raises a contradiction flag; the other branch is
    slightly worse at first and stays coherent.
    """

    # state -> list of (next_state, logit)
    EDGES = {
        0: [(1, 2.0), (2, 1.0), (7, -1.0)],
        1: [(3, 1.0)],
        2: [(4, 1.0)],
        3: [(5, 1.0)],
        4: [(6, 1.0)],
        5: [(5, 1.0)],
        6: [(6, 1.0)],
        7: [(8, 1.0)],
        8: [(8, 1.0)],
    }
    SCORE = {0: 0.0, 1: 0.95, 2: 0.8, 3: 0.9, 4: 0.8, 5: -1.0, 6: 0.8, 7: 0.3, 8: 0.3}
    CONTRADICTION = {5}

    def propose(self, state, k, attempt):
        ranked = sorted(self.EDGES[state], key=lambda e: -e[1])
        return [s for s, _ in ranked[attempt * k:(attempt + 1) * k]]

    def advance(self, state, step):
        return step

    def greedy(self, state):
        return max(self.EDGES[state], key=lambda e: e[1])[0]

    def score(self, state):
        return self.SCORE[state]

    def reachable(self, start, depth):
        frontier = {start}
        for _ in range(depth):
            frontier = {n for s in frontier for n, _ in self.EDGES[s]}
        return frontier


# ---------------------------------------------------------------------------
# synthetic chain benchmark
# ---------------------------------------------------------------------------


@dataclass
class ChainSuite:
    """Per-step logits and correct-step probabilities for a batch of reasoning chains."""

    entropies: np.ndarray  # (tasks, steps)
    p_fast: np.ndarray
    p_slow: np.ndarray
    mch_cost: np.ndarray  # fraction of c_mch actually used on each step


def chain_suite(n_tasks: int = 200, n_steps: int = 10, vocab: int = 8, hard_frac: float = 0.2,
                alpha: float = 0.9, eps_retry: float = 0.05, seed: int = 0) -> ChainSuite:
    """Chains mixing peaked (easy) and flat (hard) next-step distributions.

    Fast mode succeeds with the probability the model assigns the correct step.
    Slow mode adds a verifier that catches an error with probability ``alpha``
    and retries with error ``eps_retry``.
    """
    rng = np.random.default_rng(seed)
    hard = rng.random((n_tasks, n_steps)) < hard_frac
    margin = np.where(hard, rng.uniform(0.0, 3.0, hard.shape), rng.uniform(5.0, 10.0, hard.shape))
    logits = rng.normal(0.0, 0.3, (n_tasks, n_steps, vocab))
    logits[..., 0] += margin
    logp = log_softmax(logits, axis=-1)
    p = np.exp(logp)
    entropies = -(p * logp).sum(axis=-1)
    p_fast = p[..., 0]
    p_slow = 1.0 - effective_error(1.0 - p_fast, alpha, eps_retry)
    mch_cost = np.ones_like(p_fast)
    return ChainSuite(entropies, p_fast, p_slow, mch_cost)


@dataclass
class GateBenchRow:
    tau: float
    accuracy: float
    cost: float
    mu: float


def evaluate_gate(suite: ChainSuite, tau: float, c_base: float = 1.0, c_mch: float = 2.8) -> GateBenchRow:
    """Exact expected chain accuracy and mean per-chain cost under threshold ``tau``."""
    slow = suite.entropies > tau
    p = np.where(slow, suite.p_slow, suite.p_fast)
    accuracy = float(np.prod(p, axis=1).mean())
    costs = []
    for row, h in zip(slow, suite.entropies):
        ledger = cost_account(gate_trace(h, tau), c_base, c_mch)
        costs.append(ledger.c_total)
    return GateBenchRow(float(tau), accuracy, float(np.mean(costs)), float(slow.mean()))


def gate_sweep(suite: ChainSuite, taus, c_base: float = 1.0, c_mch: float = 2.8) -> list[GateBenchRow]:
    return [evaluate_gate(suite, t, c_base, c_mch) for t in taus]


def best_tradeoff(rows: list[GateBenchRow], slow: GateBenchRow, min_acc_ratio: float = 0.95,
                  max_cost_ratio: float = 0.5) -> GateBenchRow | None:
    """Cheapest row meeting both the accuracy and cost targets relative to always-slow."""
    ok = [r for r in rows if r.accuracy >= min_acc_ratio * slow.accuracy and r.cost <= max_cost_ratio * slow.cost]
    return min(ok, key=lambda r: (r.cost, -r.accuracy)) if ok else None
