import numpy as np
import pytest
from hypothesis import given, strategies as st

from picard_sim.core import PartitionPlan, PicardConfig, picard_iterate_once, picard_simulate, sequential_simulate
from picard_sim.toy_linear import (LinearSystemSpec, iterations_needed, linear_env,
                                   load_linear_spec, make_linear_spec, picard_convergence_curve,
                                   relative_rmse, rollout, save_linear_spec, sequential_states)


def scalar_spec(T=20, a=0.5, b=0.0, g=0.0, seed=0):
    w = np.random.default_rng(seed).standard_normal((T, 1))
    return LinearSystemSpec([[a]], [[b]], [[g]], w, [1.0])


def test_uncoupled_system_follows_disturbances():
    rng = np.random.default_rng(1)
    T, n = 30, 3
    spec = LinearSystemSpec(np.zeros((n, n)), np.zeros((n, n)), rng.standard_normal((n, n)),
                            rng.standard_normal((T, n)), rng.standard_normal(n))
    _, states = sequential_states(spec)
    assert np.array_equal(states[1:], spec.w)
    env, pol = linear_env(spec)
    oracle = sequential_simulate(env, pol, spec.disturbances(), keep_states=False).actions
    res = picard_simulate(env, pol, spec.disturbances(), PartitionPlan(np.arange(T), T),
                          oracle_actions=oracle)
    assert res.iterations_to_correct == 1


def test_scalar_recursion_closed_form():
    spec = scalar_spec()
    want = [1.0]
    for t in range(spec.T):
        want.append(0.5 * want[-1] + float(spec.w[t, 0]))
    env, pol = linear_env(spec)
    run = sequential_simulate(env, pol, spec.disturbances())
    assert np.allclose([s[0] for s in run.states], want, rtol=0, atol=1e-12)


def test_contractive_flag():
    assert make_linear_spec(4, 10, 0.6, 0).contractive
    assert not scalar_spec(a=0.7, b=0.4, g=1.0).contractive
    assert scalar_spec(a=0.7, b=0.4, g=1.0).rho == pytest.approx(1.1)


@pytest.mark.parametrize("rho", [0.0, 0.3, 0.9])
def test_generator_hits_target_norm(rho):
    spec = make_linear_spec(5, 40, rho, 3)
    closed = spec.A + spec.B @ spec.G
    norms = [np.linalg.svd(m, compute_uv=False)[0] for m in closed]
    assert np.allclose(norms, rho, atol=1e-12)
    with pytest.raises(ValueError):
        make_linear_spec(3, 5, 1.0, 0)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        LinearSystemSpec(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((2, 2)), np.zeros((4, 2)), [0, 0])


def test_relative_rmse_examples():
    ref = np.array([1.0, 1.0])
    assert relative_rmse(ref, ref) == 0
    base = np.array([0.0, 3.0])
    assert relative_rmse(base, ref, base) == 1
    assert relative_rmse([0.0, 1.0], ref, [0.0, 0.0]) == 0.5
    assert relative_rmse([0.0, 1.0], ref) == 0.5
    with pytest.raises(ValueError):
        relative_rmse(ref, ref, ref)
    with pytest.raises(ValueError):
        relative_rmse([0.0, 0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        relative_rmse([1.0], ref)


@given(seed=st.integers(0, 10_000))
def test_relative_rmse_nonnegative_and_zero_iff_equal(seed):
    rng = np.random.default_rng(seed)
    ref = rng.standard_normal((6, 2)) + 0.1
    cand = ref.copy()
    assert relative_rmse(cand, ref) == 0
    cand[rng.integers(6), rng.integers(2)] += 1e-3
    assert relative_rmse(cand, ref) > 0


def test_zero_rho_has_no_error_to_propagate():
    # rho = 0 here means A = 0 and BG = 0, so every cache induces the reference trajectory
    curve = picard_convergence_curve(make_linear_spec(4, 50, 0.0, 1), normalize="reference")
    assert curve.rmse[-1] == 0 and curve.iterations <= 1


def test_feedback_cancelling_dynamics_still_needs_passes():
    # A = -BG gives a zero closed loop, yet the first pass still inherits draft error
    rng = np.random.default_rng(3)
    n, T = 3, 40
    G = rng.standard_normal((n, n))
    spec = LinearSystemSpec(-0.5 * G, 0.5 * np.eye(n), G, rng.standard_normal((T, n)),
                            rng.standard_normal(n))
    assert spec.rho == pytest.approx(0, abs=1e-12)
    curve = picard_convergence_curve(spec, normalize="reference", tol=1e-12)
    assert curve.rmse[1] > 0 and curve.reached_tolerance


@pytest.mark.parametrize("seed", range(3))
def test_half_contraction_envelope(seed):
    spec = make_linear_spec(4, 200, 0.5, seed)
    curve = picard_convergence_curve(spec)
    assert curve.reached_tolerance
    assert max(curve.ratios()[1:]) <= 0.5 + 0.1
    assert curve.iterations <= iterations_needed(0.5) + 2


def test_reference_normalisation_also_decays():
    spec = make_linear_spec(4, 100, 0.6, 2)
    curve = picard_convergence_curve(spec, normalize="reference", tol=1e-6)
    assert curve.reached_tolerance
    with pytest.raises(ValueError):
        picard_convergence_curve(spec, normalize="other")


def test_warm_start_from_perturbed_gain():
    spec = make_linear_spec(4, 200, 0.9, 5)
    G2 = spec.G + 0.01 * np.random.default_rng(0).standard_normal(spec.G.shape)
    warm_actions, _ = sequential_states(spec, G2)
    # same reference normalisation for both runs
    cold = picard_convergence_curve(spec, normalize="reference", tol=1e-6)
    warm = picard_convergence_curve(spec, warm_actions, normalize="reference", tol=1e-6)
    assert warm.iterations < cold.iterations


@pytest.mark.parametrize("rho", [0.3, 0.9])
def test_picard_reaches_tolerance_agreement(rho):
    spec = make_linear_spec(4, 120, rho, 7)
    env, pol = linear_env(spec)
    oracle = sequential_simulate(env, pol, spec.disturbances(), keep_states=False).actions
    res = picard_simulate(env, pol, spec.disturbances(), PartitionPlan(np.arange(120), 120),
                          oracle_actions=oracle)
    assert res.iterations_to_correct is not None and res.iterations_to_correct <= spec.T
    assert env.actions_match(res.actions, oracle)


def test_vectorised_pass_matches_generic_pass():
    spec = make_linear_spec(3, 60, 0.7, 4)
    env, pol = linear_env(spec)
    rng = np.random.default_rng(0)
    plan = PartitionPlan(rng.integers(0, 7, 60), 7)
    cache = env.new_cache(rng.standard_normal((60, 3)))
    fast = picard_iterate_once(env, pol, spec.disturbances(), plan, cache, (10, 50), spec.s1.copy())
    slow = picard_iterate_once(env, pol, spec.disturbances(), plan, cache, (10, 50), spec.s1.copy(),
                               snapshot_stride=1000)
    assert np.allclose(fast.cache, slow.cache, rtol=1e-12, atol=1e-12)
    assert fast.evals.tolist() == slow.evals.tolist()


def test_rollout_replays_actions():
    spec = make_linear_spec(2, 15, 0.4, 0)
    actions, states = sequential_states(spec)
    assert np.allclose(rollout(spec, actions), states, rtol=0, atol=1e-12)


def test_spec_roundtrip(tmp_path):
    spec = make_linear_spec(3, 12, 0.8, 9)
    save_linear_spec(spec, tmp_path)
    back = load_linear_spec(tmp_path)
    for name in ("A", "B", "G", "w", "s1"):
        assert np.array_equal(getattr(back, name), getattr(spec, name))
    assert back.rho == spec.rho and back.seed == 9
    (tmp_path / "G.csv").write_text("t,row,c0\n0,0,1.0\n")
    with pytest.raises(ValueError, match="checksum"):
        load_linear_spec(tmp_path)


def test_iterations_needed():
    assert iterations_needed(0.9) == 66
    assert iterations_needed(0.0) == 1


@given(seed=st.integers(0, 10_000), rho=st.floats(0.0, 0.95), M=st.integers(1, 40))
def test_picard_agreement_property(seed, rho, M):
    spec = make_linear_spec(3, 40, rho, seed)
    env, pol = linear_env(spec)
    oracle = sequential_simulate(env, pol, spec.disturbances(), keep_states=False).actions
    plan = PartitionPlan(np.random.default_rng(seed).integers(0, M, 40), M)
    res = picard_simulate(env, pol, spec.disturbances(), plan, PicardConfig(max_steps=0),
                          oracle_actions=oracle)
    assert res.iterations_to_converged <= spec.T
    assert env.actions_match(res.actions, oracle)
