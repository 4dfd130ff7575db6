import numpy as np
import pytest
from hypothesis import given, strategies as st

from picard_sim.core import make_uniform_time_partition, picard_simulate, sequential_simulate
from picard_sim.fo_env import capacity_trajectory
from picard_sim.instgen import generate_instance, make_product_partition
from picard_sim.policies import CapacityPenalizedPolicy, DualNetworkPolicy, GreedyPolicy
from picard_sim.theory import evaluation_speedup_proxy
from picard_sim.timewarp import is_product_partition, safe_window, time_warp_simulate


def oracle(inst, policy):
    return sequential_simulate(inst.env(), policy, inst.orders, keep_states=False).actions


def test_safe_window_rules():
    c = np.array([0, 5, 3])
    assert safe_window(c, 100) == 1
    assert safe_window(c, 100, "live") == 3
    assert safe_window(c, 2, "live") == 2
    assert safe_window(np.array([0, 0]), 7, "live") == 7
    with pytest.raises(ValueError):
        safe_window(c, 5, "other")


def test_ample_capacity_gives_few_windows():
    inst = generate_instance(4, 10, 200, 0.0, 1.0, 0).with_unconstrained_inventory()
    inst.c1[:] = inst.T
    res = time_warp_simulate(inst, GreedyPolicy(), 4)
    assert res.sync_rounds <= int(np.ceil(inst.T / inst.c1.min()))
    assert np.array_equal(res.actions, oracle(inst, GreedyPolicy()))


@given(seed=st.integers(0, 5000), M=st.integers(1, 16), rule=st.sampled_from(["all", "live"]),
       beta=st.sampled_from([0.0, -0.8]))
def test_no_rollbacks_and_oracle_equal(seed, M, rule, beta):
    inst = generate_instance(5, 30, 300, beta, 0.8, seed)
    res = time_warp_simulate(inst, GreedyPolicy(), M, seed, window_rule=rule,
                             assumption_trials=16, record_trace=True)
    seq = oracle(inst, GreedyPolicy())
    assert res.rollbacks == 0
    assert np.array_equal(res.actions, seq)
    assert sum(res.window_lengths) == inst.T
    assert len(res.trace) == res.sync_rounds
    # capacity sign pattern is constant over the states entering each window's steps
    positive = capacity_trajectory(inst.c1, seq)[:-1] > 0
    start = 0
    for n in res.window_lengths:
        block = positive[start:start + n]
        assert (block == block[0]).all()
        start += n


def test_zero_dual_network_is_accepted():
    inst = generate_instance(5, 30, 300, 0.0, 0.8, 1)
    pol = DualNetworkPolicy.zeros(inst.x1, inst.c1, inst.T)
    res = time_warp_simulate(inst, pol, 8, 1)
    assert res.rollbacks == 0 and np.array_equal(res.actions, oracle(inst, pol))


def test_preconditions_enforced():
    inst = generate_instance(5, 30, 300, 0.0, 0.8, 2)
    with pytest.raises(ValueError, match="product"):
        time_warp_simulate(inst, GreedyPolicy(), 4, plan=make_uniform_time_partition(inst.T, 4, 0))
    with pytest.raises(ValueError, match="assumptions"):
        time_warp_simulate(inst, CapacityPenalizedPolicy(1.0), 4)
    with pytest.raises(ValueError):
        time_warp_simulate(inst, GreedyPolicy(), 4, plan=make_product_partition(inst, 3))


def test_rollback_keeps_result_correct():
    # a capacity-aware policy with checks disabled: conflicts are repaired serially
    rollbacks = 0
    for seed in range(6):
        inst = generate_instance(4, 6, 200, 0.0, 0.8, seed).with_unconstrained_inventory()
        pol = CapacityPenalizedPolicy(1.0)
        res = time_warp_simulate(inst, pol, 6, seed, check_preconditions=False,
                                 plan=make_uniform_time_partition(inst.T, 6, seed))
        assert np.array_equal(res.actions, oracle(inst, pol))
        assert res.policy_eval_count_sequential_equivalent >= inst.T
        rollbacks += res.rollbacks
    assert rollbacks > 0


def test_product_partition_check():
    inst = generate_instance(3, 10, 100, 0.0, 0.8, 0)
    assert is_product_partition(make_product_partition(inst, 4), inst.orders.products)


def test_picard_beats_time_warp_on_small_instance():
    inst = generate_instance(30, 1000, 3000, 0.0, 0.8, 3)
    pol = GreedyPolicy()
    plan = make_product_partition(inst, 64, 3)
    pic = picard_simulate(inst.env(), pol, inst.orders, plan)
    tw = time_warp_simulate(inst, pol, 64, 3, plan=plan)
    assert evaluation_speedup_proxy(pic, inst.T) > evaluation_speedup_proxy(tw, inst.T)
