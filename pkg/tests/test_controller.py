"""Control-law arithmetic, windowed-average oracle, link contracts."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masksim.controller import (ComplianceController, ControllerParams,
                                LOGISTIC, compliance_probability,
                                decode_cost_vector, encode_cost_vector,
                                make_link, scaled_logistic,
                                simulate_compliance, stake_amount,
                                update_global_cost, update_individual_cost,
                                update_windowed_average)


def direct_windowed_average(bits, gamma):
    """Independent oracle: the explicit discounted sum over the history."""
    k = len(bits)
    return (1 - gamma) * sum(gamma ** (k - j) * bits[j - 1]
                             for j in range(1, k + 1))


# =============================================================================
# Global and individual cost updates
# =============================================================================

def test_global_update_frozen_value():
    # C=2.0, alpha=0.5, Q*=0.8, mean=0.6 -> 2.0 + 0.5*(0.8-0.6) = 2.1
    assert update_global_cost(2.0, 0.6, alpha=0.5, q_star=0.8) == pytest.approx(2.1)


def test_global_update_equilibrium():
    assert update_global_cost(1.7, 0.8, alpha=0.5, q_star=0.8) == 1.7


def test_global_update_can_go_negative():
    # C=0, alpha=1, Q*=0.9, mean=1.0 -> -0.1
    assert update_global_cost(0.0, 1.0, alpha=1.0, q_star=0.9) == pytest.approx(-0.1)


def test_global_update_rejects_bad_mean():
    with pytest.raises(ValueError):
        update_global_cost(0.0, 1.2, alpha=1.0, q_star=0.9)


def test_individual_update_fixed_point():
    assert update_individual_cost(0.0, 0.9, beta=1.0, q_star=0.9) == 0.0


def test_individual_update_frozen_value():
    # c=1.0, beta=2, Q*=0.9, avg=0.4 -> 1 + 2*0.5 = 2.0
    assert update_individual_cost(1.0, 0.4, beta=2.0, q_star=0.9) == pytest.approx(2.0)


def test_zero_beta_leaves_cost_constant():
    for avg in (0.0, 0.3, 1.0):
        assert update_individual_cost(1.5, avg, beta=0.0, q_star=0.9) == 1.5


# =============================================================================
# Windowed average (Eq. 5 recursive form vs direct sum)
# =============================================================================

def test_windowed_average_frozen_sequence():
    # gamma=0.5, M=[1,0,1] -> [0.5, 0.25, 0.625]
    avg = 0.0
    got = []
    for m in [1, 0, 1]:
        avg = update_windowed_average(avg, m, gamma=0.5)
        got.append(avg)
    assert got == pytest.approx([0.5, 0.25, 0.625], abs=1e-15)
    assert direct_windowed_average([1, 0, 1], 0.5) == pytest.approx(0.625)


def test_windowed_average_all_zero():
    avg = 0.0
    for _ in range(50):
        avg = update_windowed_average(avg, 0, gamma=0.7)
    assert avg == 0.0


def test_windowed_average_all_ones_geometric():
    gamma = 0.9
    avg = 0.0
    for k in range(1, 80):
        avg = update_windowed_average(avg, 1, gamma)
        assert avg == pytest.approx(1 - gamma ** k, abs=1e-12)


@given(bits=st.lists(st.integers(0, 1), min_size=1, max_size=64),
       gamma=st.sampled_from([0.1, 0.5, 0.9]))
@settings(max_examples=300, deadline=None)
def test_recursive_matches_direct_sum(bits, gamma):
    avg = 0.0
    for m in bits:
        avg = update_windowed_average(avg, m, gamma)
    assert abs(avg - direct_windowed_average(bits, gamma)) < 1e-12


# =============================================================================
# Link and stake
# =============================================================================

def test_logistic_at_zero():
    assert compliance_probability(0.0, 0.0, 0.0) == pytest.approx(0.5)


def test_logistic_frozen_value():
    # q=1, C=1, c=0 -> 1/(1+e^-2)
    assert compliance_probability(1.0, 1.0, 0.0) == \
        pytest.approx(1.0 / (1.0 + math.exp(-2.0)), abs=1e-15)
    assert compliance_probability(1.0, 1.0, 0.0) == pytest.approx(0.880797, abs=1e-6)


@pytest.mark.parametrize("link", [LOGISTIC, scaled_logistic(2.0, 1.0),
                                  make_link({"name": "scaled_logistic",
                                             "scale": 0.5, "shift": -2.0})])
def test_link_monotone_and_bounded_on_grid(link):
    xs = np.linspace(-60, 60, 1000)
    ys = link(xs)
    assert np.all(np.diff(ys) >= 0)
    assert np.all((ys >= 0) & (ys <= 1))
    assert link(-1e6) == pytest.approx(0.0, abs=1e-12)
    assert link(1e6) == pytest.approx(1.0, abs=1e-12)


def test_scaled_logistic_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        scaled_logistic(0.0, 0.0)


def test_stake_amount_clamps_at_zero():
    assert stake_amount(3.0, 1.0) == 4.0
    assert stake_amount(-2.0, 1.0) == 0.0
    assert stake_amount(0.0, 0.0) == 0.0


# =============================================================================
# Controller stepper
# =============================================================================

def test_params_validation():
    with pytest.raises(ValueError):
        ControllerParams(alpha=0.0)
    with pytest.raises(ValueError):
        ControllerParams(gamma=1.0)
    with pytest.raises(ValueError):
        ControllerParams(q_star=1.5)
    with pytest.raises(ValueError):
        ControllerParams(delay=-1)


def test_equilibrium_step_leaves_costs_unchanged():
    # when the delayed measurements sit exactly at Q*, one step is a no-op
    params = ControllerParams(alpha=0.4, beta=0.3, gamma=0.5, q_star=0.5, delay=1)
    ctrl = ComplianceController(params, ["a", "b"])
    ctrl.windowed_avgs[:] = 0.5
    ctrl._mean_history.append(0.5)
    ctrl._avg_history.append(np.array([0.5, 0.5]))
    ctrl.step(1, {"a": 1, "b": 0})   # update consumes the primed k-m values
    assert ctrl.global_cost == 0.0
    assert np.all(ctrl.individual_costs == 0.0)


def test_identical_agents_get_identical_costs():
    params = ControllerParams()
    ctrl = ComplianceController(params, ["x", "y", "z"])
    rng = np.random.default_rng(4)
    for k in range(1, 200):
        m = int(rng.random() < 0.7)
        other = int(rng.random() < 0.5)
        ctrl.step(k, {"x": m, "y": m, "z": other})
    assert ctrl.cost_of("x") == ctrl.cost_of("y")          # bit-exact
    assert ctrl.windowed_avg_of("x") == ctrl.windowed_avg_of("y")


def test_gap_records_hold_value_and_log_event():
    params = ControllerParams(delay=0)
    ctrl = ComplianceController(params, ["a", "b"])
    ctrl.step(1, {"a": 1, "b": 1})
    avg_b = ctrl.windowed_avg_of("b")
    ctrl.step(2, {"a": 1})
    assert ctrl.windowed_avg_of("b") == avg_b
    assert (2, "b") in ctrl.gap_events


def test_unregistered_agent_is_usage_error():
    ctrl = ComplianceController(ControllerParams(), ["a"])
    with pytest.raises(KeyError):
        ctrl.step(1, {"intruder": 1})


def test_full_compliance_from_start_memoryless_window():
    # gamma=0: the windowed average is the last bit, so with Q*=1 and full
    # compliance every error term is zero and stakes never increase
    params = ControllerParams(alpha=0.3, beta=0.3, gamma=0.0, q_star=1.0)
    ctrl = ComplianceController(params, ["solo"])
    stakes = []
    for k in range(1, 60):
        res = ctrl.step(k, {"solo": 1})
        stakes.append(res.stakes["solo"])
    assert all(b <= a + 1e-12 for a, b in zip(stakes, stakes[1:]))


def test_full_compliance_from_start_bounded_discounted_window():
    # with gamma>0 the average warms up from 0, so the individual cost grows
    # by the geometric tail and converges to beta*(m + gamma/(1-gamma))
    alpha, beta, gamma, m = 0.3, 0.3, 0.8, 1
    params = ControllerParams(alpha=alpha, beta=beta, gamma=gamma,
                              q_star=1.0, delay=m)
    ctrl = ComplianceController(params, ["solo"])
    stakes = []
    for k in range(1, 400):
        res = ctrl.step(k, {"solo": 1})
        stakes.append(res.stakes["solo"])
    assert all(b >= a - 1e-12 for a, b in zip(stakes, stakes[1:]))
    # error terms: gamma at steps 1 and 2 (hold), then gamma^(k-1)
    limit = beta * (gamma + gamma / (1 - gamma))
    assert stakes[-1] == pytest.approx(limit, abs=1e-6)


def test_delay_buffer_holds_oldest_measurement():
    params = ControllerParams(alpha=1.0, beta=1.0, gamma=0.0, q_star=1.0, delay=2)
    ctrl = ComplianceController(params, ["a"])
    # with delay 2, the first two steps both see the oldest mean (step 1's)
    ctrl.step(1, {"a": 0})
    assert ctrl.global_cost == pytest.approx(1.0)   # uses mean(1)=0
    ctrl.step(2, {"a": 1})
    assert ctrl.global_cost == pytest.approx(2.0)   # still mean(1)=0
    ctrl.step(3, {"a": 1})
    assert ctrl.global_cost == pytest.approx(3.0)   # buffer full: mean(1)=0
    ctrl.step(4, {"a": 1})
    assert ctrl.global_cost == pytest.approx(3.0)   # now sees mean(2)=1


def test_determinism_identical_runs():
    params = ControllerParams()
    q = np.random.default_rng(1).normal(0, 1, 40)
    r1 = simulate_compliance(params, q, 300, seed=9)
    r2 = simulate_compliance(params, q, 300, seed=9)
    assert np.array_equal(r1.mean_compliance, r2.mean_compliance)
    assert np.array_equal(r1.global_cost, r2.global_cost)
    assert np.array_equal(r1.windowed_avgs, r2.windowed_avgs)


def test_cost_vector_codec_round_trip():
    costs = np.array([0.5, -1.25, 3.0])
    payload = encode_cost_vector(17, 2.5, costs)
    doc = decode_cost_vector(payload)
    assert doc["step"] == 17 and doc["C"] == 2.5
    assert doc["c"] == pytest.approx(costs, abs=1e-6)
    # oversize vectors degrade to a summary record that still fits the ledger
    big = np.ones(5000)
    doc2 = decode_cost_vector(encode_cost_vector(3, 1.0, big))
    assert doc2["c"] is None and doc2["mean_c"] == pytest.approx(1.0)
    assert len(encode_cost_vector(3, 1.0, big)) < 4096
