"""Toy dual-head transformer.

Decoder-only stack with split NL/code embeddings gated by a per-token mode
classifier, landmark attention (dense trailing window plus every ``k``-th
position), pre-RMSNorm residual blocks with SwiGLU feed-forwards, and three
heads on the final states: next-token logits, the inverse reconstruction head
over prompt tokens, and the meta-cognitive confidence head.

No positional encoding is used: causal masking alone carries order, which is
enough for the synthetic tasks this package trains on.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class ModelConfig:
    L: int = 2
    d_model: int = 32
    n_heads: int = 2
    vocab_nl: int = 64
    vocab_code: int = 64
    k_landmark: int = 16
    local_window: int = 32
    eps_rms: float = 1e-6
    beta_swish: float = 1.0
    lambda_skepticism: float = 0.5
    tau_uncertainty: float = 1.0
    d_critic: int = 8
    inv_loss_weight: float = 0.5
    d_ff: int = 0  # 0 -> 2 * d_model
    seed: int = 0
    # "isolated": the inverse head pools states from encoding the reasoning tokens
    # alone (the same view compute_ics uses); "shared": pools the joint-pass states
    inverse_encoding: str = "isolated"

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.k_landmark < 1:
            raise ValueError("k_landmark must be >= 1")
        if self.local_window < 1:
            raise ValueError("local_window must be >= 1")
        if self.eps_rms <= 0:
            raise ValueError("eps_rms must be > 0")
        if self.inv_loss_weight < 0:
            raise ValueError("inv_loss_weight must be >= 0")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.d_model < 2:
            raise ValueError("d_model must be >= 2")
        if self.inverse_encoding not in ("isolated", "shared"):
            raise ValueError(f"unknown inverse_encoding {self.inverse_encoding!r}")

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        """Depth, landmark interval and window of the full-size architecture."""
        base = dict(L=64, k_landmark=64, local_window=4096)
        base.update(overrides)
        return cls(**base)

    @property
    def vocab_size(self) -> int:
        # ids must be valid rows of both embedding tables
        return min(self.vocab_nl, self.vocab_code)

    @property
    def ffn_width(self) -> int:
        return self.d_ff or 2 * self.d_model

    @property
    def mode_bits(self) -> int:
        return max(1, int(math.ceil(math.log2(max(self.vocab_size, 2)))))

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in types:
                raise ValueError(f"bad config line: {raw!r}")
            kind = types[key] if isinstance(types[key], str) else types[key].__name__
            values[key] = {"float": float, "int": int, "str": str}[kind](value)
        return cls(**values)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text())


@dataclass
class ForwardOutput:
    logits: Tensor  # (B, T, V)
    hidden_last: Tensor  # (B, T, D), after the final norm
    confidence: Tensor  # (B, T, d_critic)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def rmsnorm(x, gamma, eps: float) -> Tensor:
    x, gamma = ad.as_tensor(x), ad.as_tensor(gamma)
    if x.shape[-1] != gamma.shape[-1]:
        raise ValueError(f"rmsnorm length mismatch: {x.shape[-1]} vs {gamma.shape[-1]}")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    ms = ad.mean(x * x, axis=-1, keepdims=True)
    return x * ad.power(ms + eps, -0.5) * gamma


def swish(z, beta: float) -> Tensor:
    z = ad.as_tensor(z)
    return z * ad.sigmoid(z * beta)


def swiglu_ffn(x, w_gate, w_up, w_down, beta: float) -> Tensor:
    x, w_gate, w_up, w_down = map(ad.as_tensor, (x, w_gate, w_up, w_down))
    d = x.shape[-1]
    if w_gate.shape[0] != d or w_up.shape[0] != d or w_gate.shape != w_up.shape or w_down.shape[0] != w_up.shape[1]:
        raise ValueError(
            f"swiglu shape mismatch: x[..,{d}], W_G{w_gate.shape}, W_1{w_up.shape}, W_2{w_down.shape}"
        )
    return (swish(x @ w_gate, beta) * (x @ w_up)) @ w_down


def mode_features(token_ids, n_bits: int) -> np.ndarray:
    """Binary expansion of raw token ids, LSB first, as {0,1} floats."""
    ids = np.asarray(token_ids, dtype=np.int64)
    return ((ids[..., None] >> np.arange(n_bits)) & 1).astype(np.float64)


def classify_mode(token_ids, w, b, vocab_size: int | None = None) -> Tensor:
    """NL-vs-code gate: sigmoid of a linear score on the id's bit features."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if vocab_size is not None and (ids.min(initial=0) < 0 or ids.max(initial=0) >= vocab_size):
        raise ValueError("token id out of range")
    w, b = ad.as_tensor(w), ad.as_tensor(b)
    feats = mode_features(ids, w.shape[0])
    return ad.sigmoid(feats @ w + b)


def split_embed(token_ids, alpha, e_nl, e_code) -> Tensor:
    ids = np.asarray(token_ids, dtype=np.int64)
    e_nl, e_code = ad.as_tensor(e_nl), ad.as_tensor(e_code)
    if ids.size and (ids.min() < 0 or ids.max() >= min(e_nl.shape[0], e_code.shape[0])):
        raise ValueError("token id out of range for an embedding table")
    alpha = ad.as_tensor(alpha)
    if np.any(alpha.data < 0) or np.any(alpha.data > 1):
        raise ValueError("alpha must lie in [0, 1]")
    a = ad.reshape(alpha, alpha.shape + (1,))
    return a * ad.take(e_nl, ids) + (1.0 - a) * ad.take(e_code, ids)


def landmark_mask(n: int, interval: int, window: int) -> np.ndarray:
    """Boolean (n, n) mask: row i may attend column j."""
    if n < 1:
        raise ValueError("empty sequence")
    if interval < 1 or window < 1:
        raise ValueError("interval and window must be >= 1")
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    causal = j <= i
    return causal & ((i - j < window) | (j % interval == 0))


def attended_pairs(n: int, interval: int, window: int) -> np.ndarray:
    return landmark_mask(n, interval, window).sum(axis=1)


def masked_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray) -> Tensor:
    dh = q.shape[-1]
    scores = (q @ ad.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))) * (1.0 / math.sqrt(dh))
    scores = ad.where(mask, scores, -1e30)
    return ad.softmax(scores, axis=-1) @ v


def landmark_attention(states, interval: int, window: int, wq=None, wk=None, wv=None, wo=None,
                       n_heads: int = 1) -> Tensor:
    """Causal attention restricted to a trailing window plus landmark columns.

    ``states`` is (T, D) or (B, T, D). Without projections the states are used
    directly as queries, keys and values.
    """
    x = ad.as_tensor(states)
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ValueError("empty sequence")
    squeeze = x.ndim == 2
    if squeeze:
        x = ad.reshape(x, (1,) + x.shape)
    B, T, D = x.shape
    mask = landmark_mask(T, interval, window)
    q = x if wq is None else x @ wq
    k = x if wk is None else x @ wk
    v = x if wv is None else x @ wv
    dh = q.shape[-1] // n_heads

    def heads(t):
        return ad.transpose(ad.reshape(t, (B, T, n_heads, dh)), (0, 2, 1, 3))

    out = masked_attention(heads(q), heads(k), heads(v), mask)
    out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (B, T, n_heads * dh))
    if wo is not None:
        out = out @ wo
    return ad.reshape(out, (T, out.shape[-1])) if squeeze else out


def mch_confidence(h_last, w_mch) -> Tensor:
    h_last, w_mch = ad.as_tensor(h_last), ad.as_tensor(w_mch)
    if h_last.shape[-1] != w_mch.shape[0]:
        raise ValueError(f"MCH shape mismatch: h[..,{h_last.shape[-1]}] vs W{w_mch.shape}")
    return ad.sigmoid(h_last @ w_mch)


def prompt_distribution(prompt_ids, vocab_size: int) -> np.ndarray:
    ids = np.asarray(prompt_ids, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        raise ValueError("empty prompt")
    return np.bincount(ids, minlength=vocab_size).astype(np.float64) / ids.size


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------


class SageModel:
    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params: dict[str, Tensor] = {}
        if params is None:
            self._init_params()
        else:
            for name, shape in self.param_shapes().items():
                arr = np.asarray(params[name], dtype=np.float64)
                if arr.shape != shape:
                    raise ValueError(f"{name}: expected {shape}, got {arr.shape}")
                self.params[name] = Tensor(arr.copy(), requires_grad=True, name=name)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        c = self.config
        D, V, F = c.d_model, c.vocab_size, c.ffn_width
        shapes = {
            "embed_nl": (c.vocab_nl, D),
            "embed_code": (c.vocab_code, D),
            "mode_w": (c.mode_bits,),
            "mode_b": (),
        }
        for i in range(c.L):
            shapes.update({
                f"l{i}.attn_norm": (D,),
                f"l{i}.wq": (D, D),
                f"l{i}.wk": (D, D),
                f"l{i}.wv": (D, D),
                f"l{i}.wo": (D, D),
                f"l{i}.ffn_norm": (D,),
                f"l{i}.w_gate": (D, F),
                f"l{i}.w_up": (D, F),
                f"l{i}.w_down": (F, D),
            })
        shapes.update({
            "final_norm": (D,),
            "lm_head": (D, V),
            "mch": (D, c.d_critic),
            "inv_w1": (D, D // 2),
            "inv_w2": (D // 2, V),
        })
        return shapes

    def _init_params(self) -> None:
        c = self.config
        rng = np.random.default_rng(c.seed)
        std = ad.init_std(c.L)
        for name, shape in self.param_shapes().items():
            if name.endswith("norm"):
                arr = np.ones(shape)
            elif name.startswith("mode_"):
                arr = np.zeros(shape)
            elif name.startswith("embed"):
                # unit-scale rows so attention logits are informative from step 0
                arr = ad.truncated_normal(rng, shape, 1.0)
            else:
                arr = ad.truncated_normal(rng, shape, std)
            self.params[name] = Tensor(arr, requires_grad=True, name=name)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def save(self, path) -> None:
        ad.save_checkpoint(path, self.params)

    @classmethod
    def load(cls, config: ModelConfig, path) -> "SageModel":
        return cls(config, ad.load_checkpoint(path))

    # -- forward -----------------------------------------------------------
    def mode_alpha(self, token_ids) -> Tensor:
        return classify_mode(token_ids, self.params["mode_w"], self.params["mode_b"], self.config.vocab_size)

    def embed(self, token_ids) -> Tensor:
        p = self.params
        return split_embed(token_ids, self.mode_alpha(token_ids), p["embed_nl"], p["embed_code"])

    def encode(self, token_ids, *, interval: int | None = None, window: int | None = None) -> Tensor:
        """Final-layer hidden states (B, T, D) after the last RMSNorm."""
        c, p = self.config, self.params
        ids = np.atleast_2d(np.asarray(token_ids, dtype=np.int64))
        interval = c.k_landmark if interval is None else interval
        window = c.local_window if window is None else window
        x = self.embed(ids)
        for i in range(c.L):
            h = rmsnorm(x, p[f"l{i}.attn_norm"], c.eps_rms)
            x = x + landmark_attention(h, interval, window, p[f"l{i}.wq"], p[f"l{i}.wk"], p[f"l{i}.wv"],
                                       p[f"l{i}.wo"], n_heads=c.n_heads)
            h = rmsnorm(x, p[f"l{i}.ffn_norm"], c.eps_rms)
            x = x + swiglu_ffn(h, p[f"l{i}.w_gate"], p[f"l{i}.w_up"], p[f"l{i}.w_down"], c.beta_swish)
        return rmsnorm(x, p["final_norm"], c.eps_rms)

    def forward(self, token_ids, **kw) -> ForwardOutput:
        h = self.encode(token_ids, **kw)
        return ForwardOutput(
            logits=h @ self.params["lm_head"],
            hidden_last=h,
            confidence=mch_confidence(h, self.params["mch"]),
        )

    def inverse_logits(self, summary: Tensor) -> Tensor:
        p = self.params
        return ad.gelu(summary @ p["inv_w1"]) @ p["inv_w2"]

    # -- losses ------------------------------------------------------------
    def dual_loss(self, token_ids, reasoning_mask, prompt_ids=None, target_mask=None):
        """Return (total, loss_fwd, loss_inv) as tensors.

        The reconstruction target for each sequence is the empirical unigram
        distribution of its prompt: ``prompt_ids[b]`` when given, otherwise the
        tokens before the first reasoning position. Sequences without reasoning
        tokens contribute nothing to the inverse term; a batch with none at all
        has ``loss_inv == 0`` and ``total is loss_fwd``.
        """
        ids = np.atleast_2d(np.asarray(token_ids, dtype=np.int64))
        mask = np.atleast_2d(np.asarray(reasoning_mask, dtype=bool))
        if mask.shape != ids.shape:
            raise ValueError(f"reasoning_mask shape {mask.shape} != tokens shape {ids.shape}")
        out = self.forward(ids)
        tmask = None if target_mask is None else np.atleast_2d(np.asarray(target_mask))[:, 1:]
        loss_fwd = ad.cross_entropy(out.logits[:, :-1], ids[:, 1:], tmask)

        rows = np.flatnonzero(mask.any(axis=1))
        if rows.size == 0:
            zero = Tensor(0.0)
            return loss_fwd, loss_fwd, zero
        V = self.config.vocab_size
        targets = np.zeros((rows.size, V))
        for r, b in enumerate(rows):
            if prompt_ids is not None:
                prompt = np.asarray(prompt_ids[b])
            else:
                prompt = ids[b, : int(np.argmax(mask[b]))]
            targets[r] = prompt_distribution(prompt, V)
        summary = self._reasoning_summary(ids, mask, rows, out.hidden_last)
        logq = ad.log_softmax(self.inverse_logits(summary), axis=-1)
        plogp = np.where(targets > 0, targets * np.log(np.where(targets > 0, targets, 1.0)), 0.0)
        kl = plogp.sum() - ad.sum_(logq * targets)
        loss_inv = kl * (1.0 / rows.size)
        total = loss_fwd + loss_inv * self.config.inv_loss_weight
        return total, loss_fwd, loss_inv

    def _reasoning_summary(self, ids, mask, rows, hidden) -> Tensor:
        if self.config.inverse_encoding == "shared":
            weights = mask[rows] / mask[rows].sum(axis=1, keepdims=True)
            return ad.sum_(hidden[rows] * weights[..., None], axis=1)
        # isolated: re-encode each row's reasoning tokens in one right-padded batch;
        # attention is causal, so trailing pads never reach the real positions
        lengths = mask[rows].sum(axis=1)
        toks = np.zeros((rows.size, int(lengths.max())), dtype=np.int64)
        valid = np.arange(toks.shape[1])[None, :] < lengths[:, None]
        for r, b in enumerate(rows):
            toks[r, : lengths[r]] = ids[b][mask[b]]
        weights = valid / lengths[:, None]
        return ad.sum_(self.encode(toks) * weights[..., None], axis=1)

    def mch_loss(self, token_ids, labels, positions=None) -> Tensor:
        """Binary cross-entropy of mean MCH confidence against step-correctness labels.

        ``positions`` picks the state per sequence that closes the step (default: last).
        """
        ids = np.atleast_2d(np.asarray(token_ids, dtype=np.int64))
        y = np.asarray(labels, dtype=np.float64).reshape(-1)
        h = self.encode(ids)
        pos = np.full(ids.shape[0], ids.shape[1] - 1) if positions is None else np.asarray(positions)
        h_last = h[np.arange(ids.shape[0]), pos]
        score = ad.mean(h_last @ self.params["mch"], axis=-1)
        # -[y log s + (1-y) log(1-s)] with s = sigmoid(score)
        return -ad.mean(ad.log_sigmoid(score) * y + ad.log_sigmoid(-score) * (1.0 - y))

    # -- inference helpers --------------------------------------------------
    def step_confidence(self, token_ids) -> np.ndarray:
        """Mean MCH confidence at the final position of each sequence."""
        out = self.forward(token_ids)
        return out.confidence.data[:, -1].mean(axis=-1)

    def continuation_logprob(self, prompt_ids, continuation_ids) -> np.ndarray:
        """log P(continuation | prompt) for each row, in nats."""
        prompt = np.atleast_2d(np.asarray(prompt_ids, dtype=np.int64))
        cont = np.atleast_2d(np.asarray(continuation_ids, dtype=np.int64))
        full = np.concatenate([prompt, cont], axis=1)
        logits = self.forward(full).logits.data
        start = prompt.shape[1]
        from scipy.special import log_softmax

        logp = log_softmax(logits[:, start - 1:-1], axis=-1)
        rows = np.arange(full.shape[0])[:, None]
        cols = np.arange(cont.shape[1])[None, :]
        return logp[rows, cols, cont].sum(axis=1)

    def generate(self, prompt_ids, steps: int, rng: np.random.Generator | None = None,
                 temperature: float = 1.0, greedy: bool = False):
        """Sample ``steps`` tokens after each prompt row; returns (tokens, logp)."""
        from scipy.special import log_softmax

        seq = np.atleast_2d(np.asarray(prompt_ids, dtype=np.int64)).copy()
        total = np.zeros(seq.shape[0])
        out = []
        for _ in range(steps):
            logits = self.forward(seq).logits.data[:, -1]
            logp = log_softmax(logits, axis=-1)
            if greedy:
                nxt = logp.argmax(axis=-1)
            else:
                scaled = log_softmax(logits / temperature, axis=-1)
                u = rng.random((seq.shape[0], 1))
                nxt = (np.exp(scaled).cumsum(axis=-1) < u).sum(axis=-1)
                nxt = np.minimum(nxt, logits.shape[-1] - 1)
            total += logp[np.arange(seq.shape[0]), nxt]
            out.append(nxt)
            seq = np.concatenate([seq, nxt[:, None]], axis=1)
        return np.stack(out, axis=1), total
