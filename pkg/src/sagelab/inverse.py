"""Inverse-consistency scoring, energy reranking, filtered voting, and the
score-function gradient estimator for sequence policies."""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np
from scipy.special import log_softmax

from . import autodiff as ad
from .model import SageModel


@dataclass
class Candidate:
    tokens: tuple
    logp: float
    ics: float = math.nan
    energy: float = math.nan

    def __post_init__(self):
        self.tokens = tuple(self.tokens)
        if self.logp > 1e-12:
            raise ValueError(f"logp must be <= 0, got {self.logp}")
        if not math.isnan(self.ics) and self.ics > 1e-12:
            raise ValueError(f"ICS must be <= 0, got {self.ics}")


@dataclass
class VoteSample:
    answer: Hashable
    ics: float = 0.0
    trace: tuple = ()
    logp: float = 0.0


@dataclass
class VoteResult:
    winner: Hashable
    tally: dict
    filtered_out: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# inverse consistency
# ---------------------------------------------------------------------------


def ics_from_logits(recon_logits, prompt) -> float:
    """Mean log-probability of the prompt tokens under the reconstruction distribution."""
    prompt = np.asarray(prompt, dtype=np.int64).reshape(-1)
    if prompt.size == 0:
        raise ValueError("empty prompt")
    logq = log_softmax(np.asarray(recon_logits, dtype=np.float64), axis=-1)
    return float(logq[prompt].mean())


def compute_ics_batch(model: SageModel, traces, prompts) -> np.ndarray:
    """ICS for each row: encode the trace alone, mean-pool, reconstruct the prompt."""
    traces = np.atleast_2d(np.asarray(traces, dtype=np.int64))
    prompts = np.atleast_2d(np.asarray(prompts, dtype=np.int64))
    if traces.shape[1] == 0 or prompts.shape[1] == 0:
        raise ValueError("empty reasoning trace or prompt")
    h = model.encode(traces).data.mean(axis=1)
    logits = model.inverse_logits(ad.Tensor(h)).data
    logq = log_softmax(logits, axis=-1)
    rows = np.arange(prompts.shape[0])[:, None]
    return logq[rows, prompts].mean(axis=1)


def compute_ics(model: SageModel, reasoning_trace, prompt) -> float:
    trace = np.asarray(reasoning_trace, dtype=np.int64).reshape(-1)
    prompt = np.asarray(prompt, dtype=np.int64).reshape(-1)
    if trace.size == 0 or prompt.size == 0:
        raise ValueError("empty reasoning trace or prompt")
    return float(compute_ics_batch(model, trace[None], prompt[None])[0])


# ---------------------------------------------------------------------------
# energy reranking
# ---------------------------------------------------------------------------


def energy(candidate: Candidate, lam: float) -> float:
    """E(z) = -log P(z|x) - lam * ICS(z); lower is better."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if math.isnan(candidate.logp) or math.isnan(candidate.ics):
        raise ValueError("candidate needs logp and ics")
    if lam == 0:
        return -candidate.logp
    return -candidate.logp - lam * candidate.ics


def rerank_candidates(candidates: Sequence[Candidate], lam: float) -> Candidate:
    """Lowest energy wins; ties go to higher logp, then lexicographically smaller tokens."""
    if not candidates:
        raise ValueError("no candidates to rerank")
    for c in candidates:
        c.energy = energy(c, lam)
    return min(candidates, key=lambda c: (c.energy, -c.logp, c.tokens))


# ---------------------------------------------------------------------------
# voting
# ---------------------------------------------------------------------------


def _tally(samples: Sequence[VoteSample]) -> VoteResult:
    counts: Counter = Counter()
    ics_sum: dict = {}
    first: dict = {}
    for i, s in enumerate(samples):
        counts[s.answer] += 1
        ics_sum[s.answer] = ics_sum.get(s.answer, 0.0) + s.ics
        first.setdefault(s.answer, i)
    winner = max(counts, key=lambda a: (counts[a], ics_sum[a], -first[a]))
    return VoteResult(winner=winner, tally=dict(counts))


def majority_vote(samples: Sequence[VoteSample]) -> VoteResult:
    """Plain plurality; ties go to the larger summed ICS, then first appearance."""
    if not samples:
        raise ValueError("no samples to vote on")
    return _tally(samples)


def ir_guided_vote(samples: Sequence[VoteSample], ics_floor: float) -> VoteResult:
    """Drop samples whose ICS is below the floor, then plurality-vote the rest.

    If the floor removes everything the unfiltered vote is returned.
    """
    if not samples:
        raise ValueError("no samples to vote on")
    kept = [s for s in samples if not s.ics < ics_floor]
    dropped = [s for s in samples if s.ics < ics_floor]
    if not kept:
        return _tally(samples)
    result = _tally(kept)
    result.filtered_out = dropped
    return result


# ---------------------------------------------------------------------------
# score-function gradient estimation
# ---------------------------------------------------------------------------


class CategoricalSequencePolicy:
    """Autoregressive categorical policy over fixed-length token sequences.

    ``theta[t, c, v]`` is the logit of token v at position t given context c,
    where c is the previous token (or ``vocab`` for the start position).
    """

    def __init__(self, vocab: int, length: int, theta: np.ndarray | None = None, seed: int | None = None):
        self.vocab = vocab
        self.length = length
        shape = (length, vocab + 1, vocab)
        if theta is None:
            rng = np.random.default_rng(seed)
            theta = rng.normal(0.0, 1.0, size=shape) if seed is not None else np.zeros(shape)
        self.theta = np.array(theta, dtype=np.float64).reshape(shape)

    @property
    def num_params(self) -> int:
        return self.theta.size

    def _contexts(self, z: np.ndarray) -> np.ndarray:
        ctx = np.empty_like(z)
        ctx[:, 0] = self.vocab
        ctx[:, 1:] = z[:, :-1]
        return ctx

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = np.empty((n, self.length), dtype=np.int64)
        ctx = np.full(n, self.vocab)
        for t in range(self.length):
            probs = np.exp(log_softmax(self.theta[t, ctx], axis=-1))
            u = rng.random((n, 1))
            z[:, t] = np.minimum((probs.cumsum(axis=-1) < u).sum(axis=-1), self.vocab - 1)
            ctx = z[:, t]
        return z

    def log_prob(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.int64))
        ctx = self._contexts(z)
        t = np.arange(self.length)[None, :]
        logp = log_softmax(self.theta[t, ctx], axis=-1)
        return np.take_along_axis(logp, z[..., None], axis=-1)[..., 0].sum(axis=1)

    def grad_log_prob(self, z) -> np.ndarray:
        """Per-sample gradient of log P(z) w.r.t. theta, flattened: (n, num_params)."""
        z = np.atleast_2d(np.asarray(z, dtype=np.int64))
        n = z.shape[0]
        ctx = self._contexts(z)
        grads = np.zeros((n,) + self.theta.shape)
        rows = np.arange(n)
        for t in range(self.length):
            probs = np.exp(log_softmax(self.theta[t, ctx[:, t]], axis=-1))
            g = -probs
            g[rows, z[:, t]] += 1.0
            grads[rows, t, ctx[:, t]] += g
        return grads.reshape(n, -1)

    def probability_of(self, z) -> np.ndarray:
        return np.exp(self.log_prob(z))

    def all_sequences(self) -> np.ndarray:
        return np.array(list(itertools.product(range(self.vocab), repeat=self.length)), dtype=np.int64)


def score_function_terms(policy, reward: Callable[[np.ndarray], np.ndarray], samples: np.ndarray,
                         baseline: float) -> np.ndarray:
    """Per-sample terms grad log P(z) * (R(z) - b), shape (n, num_params)."""
    r = np.asarray(reward(samples), dtype=np.float64).reshape(-1)
    return policy.grad_log_prob(samples) * (r - baseline)[:, None]


def inverse_gradient_estimate(policy, reward: Callable[[np.ndarray], np.ndarray], num_samples: int,
                              baseline: float, rng: np.random.Generator | int = 0,
                              chunk: int = 20000) -> np.ndarray:
    """Monte Carlo mean of grad log P(z) * (R(z) - b) over ``num_samples`` draws."""
    if num_samples <= 0:
        raise ValueError("num_samples must be >= 1")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    total = np.zeros(policy.num_params)
    done = 0
    while done < num_samples:
        n = min(chunk, num_samples - done)
        z = policy.sample(rng, n)
        total += score_function_terms(policy, reward, z, baseline).sum(axis=0)
        done += n
    return total / num_samples


def exact_policy_gradient(policy: CategoricalSequencePolicy, reward: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """d/dtheta sum_z P(z) R(z) by enumeration, differentiated with the autodiff engine."""
    z = policy.all_sequences()
    r = np.asarray(reward(z), dtype=np.float64)
    theta = ad.Tensor(policy.theta.copy(), requires_grad=True)
    ctx = policy._contexts(z)
    logp_total = None
    for t in range(policy.length):
        rows = ad.take(theta, (t, ctx[:, t]))  # (n, V)
        lp = ad.log_softmax(rows, axis=-1)
        picked = ad.take(lp, (np.arange(z.shape[0]), z[:, t]))
        logp_total = picked if logp_total is None else logp_total + picked
    objective = ad.sum_(ad.exp(logp_total) * r)
    objective.backward()
    return theta.grad.reshape(-1)


class MovingAverageBaseline:
    def __init__(self, momentum: float = 0.9, value: float = 0.0):
        self.momentum = momentum
        self.value = value

    def update(self, rewards) -> float:
        mean_r = float(np.mean(rewards))
        self.value = self.momentum * self.value + (1.0 - self.momentum) * mean_r
        return self.value
