"""Closed-form chain reliability, Monte Carlo cross-checks and discrete information measures."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np


def _check_prob(name, x):
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0) or np.any(arr > 1) or np.any(np.isnan(arr)):
        raise ValueError(f"{name} must lie in [0, 1]")


@dataclass
class ReliabilityParams:
    eps: float = 0.1
    alpha: float = 0.8
    beta_spec: float = 1.0
    eps_retry: float = 0.05
    s_engage: float = 1.0
    p_recovered: float = 0.7
    n_steps: int = 20
    c_base: float = 1.0
    c_mch: float = 1.0

    def __post_init__(self):
        for f in ("eps", "alpha", "beta_spec", "eps_retry", "s_engage", "p_recovered"):
            _check_prob(f, getattr(self, f))
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.c_base < 0 or self.c_mch < 0:
            raise ValueError("costs must be non-negative")

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ReliabilityParams":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in types:
                raise ValueError(f"unknown parameter {key!r}")
            kw[key] = int(value) if types[key] in (int, "int") else float(value)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ReliabilityParams":
        return cls.from_text(Path(path).read_text())

    @property
    def recovery_condition(self) -> bool:
        """The stated sufficient condition alpha > eps / (1 + eps), reported as a flag."""
        return self.alpha > self.eps / (1.0 + self.eps)


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def chain_success(eps, n):
    _check_prob("eps", eps)
    if np.any(np.asarray(n) < 0):
        raise ValueError("n must be >= 0")
    return (1.0 - np.asarray(eps, dtype=np.float64)) ** np.asarray(n) if np.ndim(eps) or np.ndim(n) \
        else float((1.0 - eps) ** n)


def effective_error(eps, alpha, eps_retry):
    """Residual per-step error after detection with rate alpha and one retry."""
    for name, v in (("eps", eps), ("alpha", alpha), ("eps_retry", eps_retry)):
        _check_prob(name, v)
    out = np.asarray(eps) * (1.0 - np.asarray(alpha)) + np.asarray(eps) * np.asarray(alpha) * np.asarray(eps_retry)
    return float(out) if out.ndim == 0 else out


def hybrid_success_step(p, s_engage, alpha, p_recovered):
    for name, v in (("p", p), ("s_engage", s_engage), ("alpha", alpha), ("p_recovered", p_recovered)):
        _check_prob(name, v)
    out = np.asarray(s_engage) * (np.asarray(p) + (1.0 - np.asarray(p)) * np.asarray(alpha) * np.asarray(p_recovered)) \
        + (1.0 - np.asarray(s_engage)) * np.asarray(p)
    return float(out) if out.ndim == 0 else out


def survival_curve(p_step: float, n_max: int) -> np.ndarray:
    """Phi(N) = p_step ** N for N = 0..n_max."""
    _check_prob("p_step", p_step)
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    return float(p_step) ** np.arange(n_max + 1, dtype=np.float64)


def survival_dominates(params: ReliabilityParams, n_max: int = 100) -> bool:
    """True when the hybrid curve is strictly above the standard one for every 1 <= N <= n_max."""
    p = 1.0 - params.eps
    ph = hybrid_success_step(p, params.s_engage, params.alpha, params.p_recovered)
    std, hyb = survival_curve(p, n_max), survival_curve(ph, n_max)
    return bool(np.all(hyb[1:] > std[1:]))


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@dataclass
class MCEstimate:
    mean: float
    stderr: float
    trials: int

    def agrees(self, value: float, n_se: float = 3.0) -> bool:
        return abs(self.mean - value) <= n_se * max(self.stderr, 1e-15)


def _bernoulli_estimate(x: np.ndarray) -> MCEstimate:
    m = float(x.mean())
    return MCEstimate(m, float(np.sqrt(m * (1 - m) / x.size)), int(x.size))


def mc_chain_success(eps: float, n: int, trials: int, seed: int) -> MCEstimate:
    rng = np.random.default_rng(seed)
    errors = rng.binomial(n, eps, size=trials)
    return _bernoulli_estimate(errors == 0)


def mc_effective_error(eps: float, alpha: float, eps_retry: float, trials: int, seed: int,
                       beta_spec: float = 1.0) -> MCEstimate:
    """Simulate step error, detection and one retry.

    ``beta_spec`` < 1 adds false alarms: correct steps are flagged with
    probability 1 - beta_spec and re-sampled, failing with ``eps_retry``.
    With beta_spec = 1 this matches ``effective_error`` in expectation.
    """
    rng = np.random.default_rng(seed)
    u = rng.random((3, trials))
    err = u[0] < eps
    flagged = np.where(err, u[1] < alpha, u[1] < 1.0 - beta_spec)
    retry_err = u[2] < eps_retry
    final = np.where(flagged, retry_err, err)
    return _bernoulli_estimate(final)


def mc_hybrid_success_step(p: float, s_engage: float, alpha: float, p_recovered: float, trials: int,
                           seed: int) -> MCEstimate:
    rng = np.random.default_rng(seed)
    u = rng.random((4, trials))
    ok = u[0] < p
    recovered = (u[1] < s_engage) & (u[2] < alpha) & (u[3] < p_recovered)
    return _bernoulli_estimate(ok | recovered)


def mc_survival(p_step: float, n_max: int, trials: int, seed: int) -> np.ndarray:
    """Empirical Phi(N) from the first-failure time of simulated chains."""
    rng = np.random.default_rng(seed)
    first_fail = rng.geometric(1.0 - p_step, size=trials) if p_step < 1 else np.full(trials, np.iinfo(np.int64).max)
    n = np.arange(n_max + 1)
    return (first_fail[None, :] > n[:, None]).mean(axis=1)


def variance_scaling(eps: float, n: int, trials: int, seed: int) -> float:
    """Sample variance of the error count over ``trials`` simulated N-step chains."""
    if trials < 1000:
        raise ValueError("trials must be >= 1000")
    _check_prob("eps", eps)
    rng = np.random.default_rng(seed)
    counts = (rng.random((trials, n)) < eps).sum(axis=1)
    return float(counts.var(ddof=1))


def variance_slope(eps: float, ns=(5, 10, 20, 40), trials: int = 20000, seed: int = 0) -> float:
    """Least-squares slope of error-count variance against N."""
    v = [variance_scaling(eps, n, trials, seed + i) for i, n in enumerate(ns)]
    return float(np.polyfit(np.asarray(ns, dtype=float), v, 1)[0])


# ---------------------------------------------------------------------------
# information measures (bits)
# ---------------------------------------------------------------------------


def _validate_joint(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("negative probability")
    if abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"joint sums to {p.sum()!r}, not 1")
    return p


def entropy(p) -> float:
    """H(p) in bits with 0 log 0 = 0."""
    q = np.asarray(p, dtype=np.float64).ravel()
    q = q[q > 0]
    return float(-(q * np.log2(q)).sum())


def marginal(p: np.ndarray, keep: tuple[int, ...]) -> np.ndarray:
    drop = tuple(i for i in range(p.ndim) if i not in keep)
    return p.sum(axis=drop)


def joint_entropy(p: np.ndarray, axes: tuple[int, ...]) -> float:
    return entropy(marginal(p, axes)) if axes else 0.0


def conditional_entropy(p: np.ndarray, target: tuple[int, ...], given: tuple[int, ...]) -> float:
    return joint_entropy(p, tuple(sorted(set(target) | set(given)))) - joint_entropy(p, tuple(sorted(given)))


def conditional_mutual_information(p: np.ndarray, a: tuple[int, ...], b: tuple[int, ...], given: tuple[int, ...]) -> float:
    """I(A;B|C) = H(A,C) + H(B,C) - H(A,B,C) - H(C)."""
    u = lambda *s: tuple(sorted(set().union(*s)))
    return (joint_entropy(p, u(a, given)) + joint_entropy(p, u(b, given))
            - joint_entropy(p, u(a, b, given)) - joint_entropy(p, u(given)))


def cmi_by_definition(p: np.ndarray, a: int, b: int, given: tuple[int, ...]) -> float:
    """I(A;B|C) = sum p(a,b,c) log p(a,b,c) p(c) / (p(a,c) p(b,c)), summed cell by cell."""
    keep = tuple(sorted({a, b, *given}))
    pabc = marginal(p, keep)
    pos = {ax: i for i, ax in enumerate(keep)}
    pc = pabc.sum(axis=(pos[a], pos[b]), keepdims=True)
    pac = pabc.sum(axis=pos[b], keepdims=True)
    pbc = pabc.sum(axis=pos[a], keepdims=True)
    num = pabc * pc
    den = pac * pbc
    mask = pabc > 0
    return float((pabc[mask] * np.log2(num[mask] / den[mask])).sum())


def conditional_entropy_by_definition(p: np.ndarray, target: int, given: tuple[int, ...]) -> float:
    """H(T|C) = -sum p(t,c) log p(t|c), summed cell by cell."""
    keep = tuple(sorted({target, *given}))
    ptc = marginal(p, keep)
    pc = ptc.sum(axis=keep.index(target), keepdims=True)
    mask = ptc > 0
    ratio = ptc / np.where(pc > 0, pc, 1.0)
    return float(-(ptc[mask] * np.log2(ratio[mask])).sum())


X, Y, ZK, ZK1 = 0, 1, 2, 3


@dataclass(frozen=True)
class EntropyReport:
    h_x_given_y_zk: float
    h_x_given_y_zk1: float
    i_x_zk1_given_y_zk: float

    @property
    def identity_gap(self) -> float:
        return abs(self.h_x_given_y_zk1 - (self.h_x_given_y_zk - self.i_x_zk1_given_y_zk))

    @property
    def monotone(self) -> bool:
        return self.h_x_given_y_zk1 <= self.h_x_given_y_zk + 1e-12


def entropy_suite(joint) -> EntropyReport:
    """Information quantities for a joint over (X, Y, Z_k, Z_k+1).

    The "k+1" conditioning set accumulates both trace prefixes, so
    H(X | Y, Z_k+1) means H(X | Y, Z_k, Z_k+1).
    """
    p = _validate_joint(joint)
    if p.ndim != 4:
        raise ValueError("joint must be 4-dimensional: (X, Y, Z_k, Z_k+1)")
    h_k = conditional_entropy(p, (X,), (Y, ZK))
    h_k1 = conditional_entropy(p, (X,), (Y, ZK, ZK1))
    i = conditional_mutual_information(p, (X,), (ZK1,), (Y, ZK))
    return EntropyReport(h_k, h_k1, i)


def random_joint(rng: np.random.Generator, shape, sparsity: float = 0.3) -> np.ndarray:
    """Dirichlet-like random joint with some exact zeros."""
    w = rng.exponential(1.0, size=shape)
    w[rng.random(shape) < sparsity] = 0.0
    if w.sum() == 0:
        w.flat[0] = 1.0
    return w / w.sum()


@dataclass(frozen=True)
class InfoBoundReport:
    lhs: float
    rhs: float
    satisfied: bool


def bayes_error(p: np.ndarray, target: int, observed: tuple[int, ...]) -> float:
    """Error of the MAP predictor of ``target`` from ``observed`` by enumeration."""
    keep = tuple(sorted({target, *observed}))
    m = marginal(p, keep)
    best = m.max(axis=keep.index(target))
    return float(1.0 - best.sum())


def info_bound_check(joint) -> InfoBoundReport:
    """Compare the Bayes error for Y from (X, Z) against 1 - 2^-(H(Y|X) - I(X;Z)).

    ``joint`` is indexed (X, Y, Z). Reports the comparison; nothing is assumed.
    """
    p = _validate_joint(joint)
    if p.ndim != 3:
        raise ValueError("joint must be 3-dimensional: (X, Y, Z)")
    lhs = bayes_error(p, 1, (0, 2))
    h_y_x = conditional_entropy(p, (1,), (0,))
    i_xz = conditional_mutual_information(p, (0,), (2,), ())
    rhs = 1.0 - 2.0 ** (-(h_y_x - i_xz))
    return InfoBoundReport(lhs, rhs, bool(lhs <= rhs + 1e-12))


@dataclass(frozen=True)
class CostBoundReport:
    n_ledgers: int
    violations: int
    max_slack: float
    min_slack: float
    mean_ratio: float


def cost_bound_check(ledgers) -> CostBoundReport:
    ledgers = list(ledgers)
    if not ledgers:
        raise ValueError("no ledgers to check")
    slack = np.array([lg.bound - lg.c_total for lg in ledgers])
    violations = int(sum(not lg.within_bound() for lg in ledgers))
    ratios = np.array([lg.ratio for lg in ledgers])
    return CostBoundReport(len(ledgers), violations, float(slack.max()), float(slack.min()), float(ratios.mean()))
