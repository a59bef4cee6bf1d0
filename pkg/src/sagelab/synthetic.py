"""Synthetic tasks and small training loops used by the benchmarks and CLI."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .inverse import Candidate, VoteSample, compute_ics_batch, ir_guided_vote, majority_vote, rerank_candidates
from .model import ModelConfig, SageModel

# ---------------------------------------------------------------------------
# needle retrieval
# ---------------------------------------------------------------------------

QUERY = 0
N_NEEDLES = 8
N_NOISE = 8
NEEDLE_VOCAB = 1 + N_NEEDLES + N_NOISE


def needle_batch(rng: np.random.Generator, batch: int, length: int, window: int, interval: int):
    """Noise sequences with one needle on a landmark position outside the final window.

    The last token is the query; the target is the needle token.
    """
    if length <= window:
        raise ValueError("needle task needs length > window")
    ids = rng.integers(1 + N_NEEDLES, NEEDLE_VOCAB, (batch, length))
    slots = np.arange(0, length - window, interval)
    pos = rng.choice(slots, batch)
    needle = rng.integers(1, 1 + N_NEEDLES, batch)
    ids[np.arange(batch), pos] = needle
    ids[:, -1] = QUERY
    return ids, needle


def needle_config(window: int = 32, interval: int = 16, seed: int = 0) -> ModelConfig:
    return ModelConfig(L=2, d_model=32, n_heads=2, vocab_nl=NEEDLE_VOCAB, vocab_code=NEEDLE_VOCAB,
                       k_landmark=interval, local_window=window, seed=seed)


def train_needle(config: ModelConfig, steps: int = 300, batch: int = 32, lr: float = 3e-3, seed: int = 0,
                 length_factor: int = 4, log=None) -> SageModel:
    model = SageModel(config)
    opt = ad.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    n = length_factor * config.local_window
    for step in range(steps):
        ids, target = needle_batch(rng, batch, n, config.local_window, config.k_landmark)
        loss = ad.cross_entropy(model.forward(ids).logits[:, -1], target)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log is not None:
            log.append((step, float(loss.data)))
    return model


def needle_accuracy(model: SageModel, n_eval: int = 256, seed: int = 1, length_factor: int = 4,
                    interval: int | None = None) -> float:
    """Retrieval accuracy; ``interval`` overrides the landmark spacing at evaluation time."""
    c = model.config
    ids, target = needle_batch(np.random.default_rng(seed), n_eval, length_factor * c.local_window,
                               c.local_window, c.k_landmark)
    kw = {} if interval is None else {"interval": interval}
    pred = model.forward(ids, **kw).logits.data[:, -1].argmax(axis=-1)
    return float((pred == target).mean())


# ---------------------------------------------------------------------------
# arithmetic vote task
# ---------------------------------------------------------------------------
# sequence: Q a b R a' b' A y with y = (a' + b') mod 10. The reasoning copies the
# operands; on "trap" digits it often misreads a, producing a confident wrong answer.

Q_TOK, R_TOK, A_TOK = 10, 11, 12
ARITH_VOCAB = 16
MISREAD = {3: 8, 6: 9, 8: 3}


@dataclass
class ArithConfig:
    misread_prob: float = 0.6
    noise_prob: float = 0.1
    steps: int = 1500
    batch: int = 64
    lr: float = 3e-3
    seed: int = 0


def arith_batch(rng: np.random.Generator, n: int, misread_prob: float = 0.6, noise_prob: float = 0.1):
    """Sequences, reasoning masks (only on faithful traces) and faithful flags."""
    a = rng.integers(0, 10, n)
    b = rng.integers(0, 10, n)
    u = rng.random(n)
    noise = rng.integers(0, 10, n)
    a_read = a.copy()
    trap = np.isin(a, list(MISREAD))
    mis = trap & (u < misread_prob)
    a_read[mis] = [MISREAD[int(x)] for x in a[mis]]
    rnd = ~mis & (u > 1.0 - noise_prob)
    a_read[rnd] = noise[rnd]
    y = (a_read + b) % 10
    seq = np.stack([np.full(n, Q_TOK), a, b, np.full(n, R_TOK), a_read, b, np.full(n, A_TOK), y], axis=1)
    faithful = a_read == a
    mask = np.zeros_like(seq, dtype=bool)
    mask[faithful, 4:6] = True
    return seq, mask, faithful


def arith_model_config(seed: int = 0) -> ModelConfig:
    return ModelConfig(L=2, d_model=32, n_heads=2, vocab_nl=ARITH_VOCAB, vocab_code=ARITH_VOCAB,
                       k_landmark=16, local_window=32, seed=seed)


def fit_dual(model: SageModel, batches, lr: float = 3e-3, log=None) -> SageModel:
    """Adam on the dual objective over an iterable of (ids, reasoning_mask)."""
    opt = ad.Adam(model.parameters(), lr=lr)
    for step, (ids, mask) in enumerate(batches):
        total, fwd, inv = model.dual_loss(ids, mask)
        opt.zero_grad()
        total.backward()
        opt.step()
        if log is not None:
            log.append((step, float(fwd.data), float(inv.data)))
    return model


def train_arith(cfg: ArithConfig | None = None, log=None) -> SageModel:
    cfg = cfg or ArithConfig()
    rng = np.random.default_rng(cfg.seed)
    model = SageModel(arith_model_config(cfg.seed))
    batches = (arith_batch(rng, cfg.batch, cfg.misread_prob, cfg.noise_prob)[:2] for _ in range(cfg.steps))
    return fit_dual(model, batches, cfg.lr, log)


def arith_prompts(n: int, seed: int):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 10, n)
    b = rng.integers(0, 10, n)
    prompts = np.stack([np.full(n, Q_TOK), a, b, np.full(n, R_TOK)], axis=1)
    return prompts, (a + b) % 10


def calibrate_ics_floor(model: SageModel, n: int = 2000, quantile: float = 0.01, seed: int = 99) -> float:
    """Low quantile of ICS over faithful traces: a floor that rejects few correct ones."""
    seq, _, faithful = arith_batch(np.random.default_rng(seed), n)
    seq = seq[faithful]
    ics = compute_ics_batch(model, seq[:, 4:6], seq[:, 1:3])
    return float(np.quantile(ics, quantile))


@dataclass
class VoteRecord:
    prompt: int
    truth: int
    vanilla: int
    ir: int
    n_filtered: int


def sample_votes(model: SageModel, prompts: np.ndarray, k: int, seed: int):
    """k sampled traces per prompt with answers, log-probabilities and ICS."""
    rng = np.random.default_rng(seed)
    rep = np.repeat(prompts, k, axis=0)
    toks, logp = model.generate(rep, 4, rng)
    traces = toks[:, :2]
    answers = toks[:, 3]
    ics = compute_ics_batch(model, traces, rep[:, 1:3])
    return traces, answers, logp, ics


def vote_eval(model: SageModel, n_prompts: int = 200, k: int = 32, ics_floor: float | None = None,
              seed: int = 5) -> tuple[float, float, list[VoteRecord]]:
    """Vanilla majority vs ICS-filtered vote accuracy on fresh prompts."""
    if ics_floor is None:
        ics_floor = calibrate_ics_floor(model)
    prompts, truth = arith_prompts(n_prompts, seed)
    _, answers, logp, ics = sample_votes(model, prompts, k, seed + 1)
    records = []
    for p in range(n_prompts):
        sl = slice(p * k, (p + 1) * k)
        samples = [VoteSample(int(a), float(s), (), float(lp)) for a, s, lp in zip(answers[sl], ics[sl], logp[sl])]
        van = majority_vote(samples).winner
        res = ir_guided_vote(samples, ics_floor)
        records.append(VoteRecord(p, int(truth[p]), int(van), int(res.winner), len(res.filtered_out)))
    van_acc = float(np.mean([r.vanilla == r.truth for r in records]))
    ir_acc = float(np.mean([r.ir == r.truth for r in records]))
    return van_acc, ir_acc, records


def rerank_eval(model: SageModel, prompts: np.ndarray, k: int, lam: float, seed: int, steps: int = 4):
    """Best-of-k by energy for each prompt; returns the winning candidates and all candidates."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    rep = np.repeat(prompts, k, axis=0)
    toks, logp = model.generate(rep, steps, rng)
    n_trace = 2
    ics = compute_ics_batch(model, toks[:, :n_trace], rep[:, 1:3]) if lam > 0 else np.zeros(len(toks))
    winners, pools = [], []
    for p in range(prompts.shape[0]):
        pool = [Candidate(tuple(int(t) for t in toks[i]), min(float(logp[i]), 0.0), min(float(ics[i]), 0.0))
                for i in range(p * k, (p + 1) * k)]
        winners.append(rerank_candidates(pool, lam))
        pools.append(pool)
    return winners, pools


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------


def write_corpus(path, seq: np.ndarray, mask: np.ndarray, prompt_len: int = 4, reasoning_len: int = 2) -> None:
    with open(path, "w") as fh:
        for row, m in zip(seq, mask):
            rec = {
                "prompt": row[:prompt_len].tolist(),
                "reasoning": row[prompt_len:prompt_len + reasoning_len].tolist(),
                "conclusion": row[prompt_len + reasoning_len:].tolist(),
                "verified": bool(m.any()),
            }
            fh.write(json.dumps(rec) + "\n")


def read_corpus(path) -> tuple[np.ndarray, np.ndarray]:
    """Load a JSONL corpus into (ids, reasoning_mask); all records must have one length."""
    rows, masks = [], []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            p, r, c = rec["prompt"], rec["reasoning"], rec["conclusion"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"line {n}: bad corpus record ({exc})") from None
        rows.append(list(p) + list(r) + list(c))
        flag = bool(rec.get("verified", True))
        masks.append([False] * len(p) + [flag] * len(r) + [False] * len(c))
    if not rows:
        raise ValueError("corpus is empty")
    if len({len(r) for r in rows}) != 1:
        raise ValueError("corpus records must all have the same total length")
    return np.asarray(rows, dtype=np.int64), np.asarray(masks, dtype=bool)


# ---------------------------------------------------------------------------
# mode-classifier vocabulary
# ---------------------------------------------------------------------------

NL_WORDS = ("the", "file", "move", "yesterday", "report", "please", "list", "all", "of", "and",
            "check", "if", "it", "exists", "then", "archive", "find", "every", "pdf", "folder")
CODE_TOKENS = ("{", "}", "(", ")", ";", "=", "==", "->", "def", "return", "mv", "-mtime",
               "x_1", "idx", "self", "args", "[", "]", "import", "0x1f")


def mode_vocab(vocab_size: int = 64) -> tuple[list[str], np.ndarray]:
    """Toy vocabulary: NL words fill the lower half of the id space, code tokens the upper half.

    Returns the token strings and labels (1 = code). Padding tokens repeat the
    half's word list with a numeric suffix.
    """
    half = vocab_size // 2
    nl = [NL_WORDS[i % len(NL_WORDS)] + ("" if i < len(NL_WORDS) else f"#{i}") for i in range(half)]
    code = [CODE_TOKENS[i % len(CODE_TOKENS)] + ("" if i < len(CODE_TOKENS) else f"#{i}")
            for i in range(vocab_size - half)]
    labels = np.array([0] * half + [1] * (vocab_size - half), dtype=np.float64)
    return nl + code, labels


def fit_mode_classifier(model: SageModel, ids, labels, steps: int = 300, lr: float = 0.1) -> SageModel:
    """Supervised logistic fit of the NL/code gate (alpha = P(NL), so target is 1 - label)."""
    w, b = model.params["mode_w"], model.params["mode_b"]
    opt = ad.Adam([w, b], lr=lr)
    target = 1.0 - np.asarray(labels, dtype=np.float64)
    ids = np.asarray(ids)
    for _ in range(steps):
        alpha = model.mode_alpha(ids)
        eps = 1e-12
        loss = -ad.mean(ad.log(alpha + eps) * target + ad.log(1.0 - alpha + eps) * (1.0 - target))
        opt.zero_grad()
        loss.backward()
        opt.step()
    return model
