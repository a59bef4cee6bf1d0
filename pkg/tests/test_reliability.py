import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sagelab.controller import CostLedger, cost_account, gate_trace
from sagelab.reliability import (
    ReliabilityParams,
    bayes_error,
    chain_success,
    cmi_by_definition,
    conditional_entropy_by_definition,
    cost_bound_check,
    effective_error,
    entropy,
    entropy_suite,
    hybrid_success_step,
    info_bound_check,
    mc_chain_success,
    mc_effective_error,
    mc_hybrid_success_step,
    mc_survival,
    random_joint,
    survival_curve,
    survival_dominates,
    variance_scaling,
    variance_slope,
)

MC = 1_000_000
prob = st.floats(0, 1)


# -- closed forms with Monte Carlo oracles ----------------------------------------------------


def test_chain_success():
    assert chain_success(0.3, 0) == 1.0
    assert chain_success(0.0, 50) == 1.0
    assert chain_success(0.1, 20) == pytest.approx(0.12158, abs=1e-5)
    assert mc_chain_success(0.1, 20, MC, seed=0).agrees(chain_success(0.1, 20))
    with pytest.raises(ValueError):
        chain_success(1.2, 3)
    with pytest.raises(ValueError):
        chain_success(0.1, -1)


def test_effective_error():
    assert effective_error(0.1, 0.0, 0.5) == 0.1
    assert effective_error(0.1, 1.0, 0.0) == 0.0
    assert effective_error(0.1, 0.8, 0.05) == pytest.approx(0.024, abs=1e-15)
    assert mc_effective_error(0.1, 0.8, 0.05, MC, seed=1).agrees(0.024)
    # false alarms only matter when the detector is not perfectly specific
    assert mc_effective_error(0.1, 0.8, 0.05, MC, seed=1, beta_spec=0.5).mean > 0.024


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 1), st.floats(1e-6, 1), st.floats(0, 1 - 1e-6))
def test_effective_error_strictly_smaller(eps, alpha, eps_retry):
    assert effective_error(eps, alpha, eps_retry) < eps


def test_hybrid_step():
    assert hybrid_success_step(0.7, 0.0, 0.9, 0.9) == 0.7
    assert hybrid_success_step(0.3, 1.0, 1.0, 1.0) == 1.0
    assert hybrid_success_step(0.9, 1.0, 0.8, 0.7) == pytest.approx(0.956, abs=1e-12)
    assert mc_hybrid_success_step(0.9, 1.0, 0.8, 0.7, MC, seed=2).agrees(0.956)
    assert mc_hybrid_success_step(0.6, 0.5, 0.8, 0.7, MC, seed=3).agrees(hybrid_success_step(0.6, 0.5, 0.8, 0.7))


def test_survival_curves():
    assert survival_curve(0.4, 0)[0] == 1.0
    assert np.all(survival_curve(1.0, 30) == 1.0)
    hyb, std = survival_curve(0.976, 20), survival_curve(0.9, 20)
    assert hyb[20] == pytest.approx(0.6151, abs=1e-4)
    assert std[20] == pytest.approx(0.1216, abs=1e-4)
    assert np.all(hyb[1:] > std[1:])
    sim = mc_survival(0.976, 20, 200_000, seed=4)
    se = np.sqrt(hyb * (1 - hyb) / 200_000)
    assert np.all(np.abs(sim - hyb) <= 3 * se + 1e-12)
    assert survival_dominates(ReliabilityParams())


@settings(max_examples=200, deadline=None)
@given(prob, prob, st.integers(0, 60))
def test_survival_dominance_is_monotone(p, q, n):
    lo, hi = sorted([p, q])
    assert survival_curve(hi, n)[n] >= survival_curve(lo, n)[n]


def test_variance_scaling():
    assert variance_scaling(0.0, 10, 1000, 0) == 0.0
    v = variance_scaling(0.5, 10, 100_000, 0)
    se = 2.5 * math.sqrt(2 / 100_000)  # near-normal counts
    assert abs(v - 2.5) < 4 * se
    slope = variance_slope(0.3)
    assert abs(slope - 0.21) / 0.21 < 0.10
    with pytest.raises(ValueError):
        variance_scaling(0.5, 10, 999, 0)


def test_params_text_round_trip(tmp_path):
    p = ReliabilityParams(eps=0.2, n_steps=7, c_mch=0.5)
    (tmp_path / "r.txt").write_text(p.to_text() + "# comment\n\n")
    assert ReliabilityParams.load(tmp_path / "r.txt") == p
    with pytest.raises(ValueError):
        ReliabilityParams.from_text("gamma=1\n")
    with pytest.raises(ValueError):
        ReliabilityParams(alpha=1.5)
    with pytest.raises(ValueError):
        ReliabilityParams(n_steps=-1)
    assert ReliabilityParams(eps=0.1, alpha=0.05).recovery_condition is False
    assert ReliabilityParams().recovery_condition is True


# -- information measures ---------------------------------------------------------------------------


def test_entropy_basics():
    assert entropy([0.5, 0.5]) == 1.0
    assert entropy([1.0, 0.0]) == 0.0
    assert entropy(np.full(8, 1 / 8)) == pytest.approx(3.0)


def test_independent_next_step_adds_nothing():
    rng = np.random.default_rng(0)
    pxyz = random_joint(rng, (3, 2, 4))
    pz1 = np.array([0.3, 0.7])
    joint = pxyz[..., None] * pz1
    rep = entropy_suite(joint)
    assert abs(rep.i_x_zk1_given_y_zk) < 1e-12
    assert abs(rep.h_x_given_y_zk1 - rep.h_x_given_y_zk) < 1e-12


def test_next_step_revealing_x_zeroes_entropy():
    rng = np.random.default_rng(1)
    pxyz = random_joint(rng, (4, 3, 2))
    joint = np.zeros((4, 3, 2, 4))
    for x in range(4):
        joint[x, :, :, x] = pxyz[x]
    rep = entropy_suite(joint)
    assert abs(rep.h_x_given_y_zk1) < 1e-12
    assert rep.identity_gap < 1e-12


def test_identity_and_monotonicity_on_random_joints():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        shape = tuple(rng.integers(1, 5, size=4))
        joint = random_joint(rng, shape, sparsity=rng.uniform(0, 0.6))
        rep = entropy_suite(joint)
        # definition-level oracle, independent of the chain-rule implementation
        h_k = conditional_entropy_by_definition(joint, 0, (1, 2))
        h_k1 = conditional_entropy_by_definition(joint, 0, (1, 2, 3))
        i = cmi_by_definition(joint, 0, 3, (1, 2))
        assert abs(rep.h_x_given_y_zk - h_k) < 1e-12
        assert abs(rep.h_x_given_y_zk1 - h_k1) < 1e-12
        assert abs(rep.i_x_zk1_given_y_zk - i) < 1e-12
        assert abs(h_k1 - (h_k - i)) < 1e-12
        assert rep.monotone and i >= -1e-12


def test_entropy_suite_validation():
    with pytest.raises(ValueError):
        entropy_suite(np.full((2, 2, 2), 1 / 8))
    with pytest.raises(ValueError):
        entropy_suite(np.full((2, 2, 2, 2), 1 / 15))
    bad = np.full((2, 2, 2, 2), 1 / 16)
    bad[0, 0, 0, 0], bad[0, 0, 0, 1] = -1 / 16, 3 / 16
    with pytest.raises(ValueError):
        entropy_suite(bad)


def test_info_bound_deterministic_y():
    joint = np.zeros((3, 3, 2))
    for x in range(3):
        joint[x, (x + 1) % 3, :] = 1 / 6
    rep = info_bound_check(joint)
    assert rep.rhs <= 0 and rep.lhs == pytest.approx(0.0) and rep.satisfied


def test_info_bound_z_equals_x_uniform():
    joint = np.zeros((4, 2, 4))
    for x in range(4):
        joint[x, :, x] = 1 / 8  # Y uniform and independent of X
    rep = info_bound_check(joint)
    assert rep.lhs == pytest.approx(0.5)
    # H(Y|X) = 1, I(X;Z) = 2 bits
    assert rep.rhs == pytest.approx(1 - 2 ** 1)
    assert not rep.satisfied


def test_bayes_error_by_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(50):
        joint = random_joint(rng, (3, 4, 2))
        err = 0.0
        for x in range(3):
            for z in range(2):
                col = joint[x, :, z]
                err += col.sum() - col.max()
        assert bayes_error(joint, 1, (0, 2)) == pytest.approx(err, abs=1e-12)


def test_info_bound_batch_report_runs():
    rng = np.random.default_rng(4)
    reports = [info_bound_check(random_joint(rng, tuple(rng.integers(2, 5, 3)))) for _ in range(500)]
    rate = np.mean([r.satisfied for r in reports])
    assert 0.0 <= rate <= 1.0
    assert all(0 <= r.lhs <= 1 for r in reports)


# -- cost bound -------------------------------------------------------------------------------------


def test_cost_bound_check():
    fast = cost_account(gate_trace(np.zeros(10), 1.0), 1.0, 1.0)
    rep = cost_bound_check([fast])
    assert rep.max_slack == 0.0 and rep.violations == 0
    two_slow = cost_account(gate_trace([1, 1, 0, 0, 0, 0, 0, 0, 0, 0], 0.5), 1.0, 1.0)
    assert cost_bound_check([two_slow]).mean_ratio == pytest.approx(1.2)
    rng = np.random.default_rng(5)
    ledgers = []
    for _ in range(10_000):
        n = int(rng.integers(1, 40))
        ledgers.append(cost_account(gate_trace(rng.exponential(size=n), rng.exponential()), 1.0,
                                    float(rng.uniform(0, 3)), mch_costs=rng.uniform(0, 3, n)))
    rep = cost_bound_check(ledgers)
    assert rep.n_ledgers == 10_000 and rep.violations == 0 and rep.min_slack >= -1e-9
    assert cost_bound_check([CostLedger(2, 0, 1.0, 1.0, 3.0)]).violations == 1
    with pytest.raises(ValueError):
        cost_bound_check([])
