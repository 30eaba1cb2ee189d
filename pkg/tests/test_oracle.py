import numpy as np
import pytest

from arsq.action_codec import ActionSpec
from arsq.envs import OneStepEnv, MOTIVATING_LANDSCAPE, ERROR_LANDSCAPE, generate_demos
from arsq.oracle import (ConvergenceError, one_step_mdp, q_landscape_error, random_mdp, soft_value_iteration,
                         tabular_arsq_fit, tabular_arsq_fit_mdp, tabular_independent_fit)
from arsq.replay import OfflineDataset


def one_step_data(actions, rewards, bins=2):
    spec = ActionSpec.box(2, bins_per_level=bins, levels=1)
    n = len(rewards)
    return OfflineDataset.from_arrays(spec, np.zeros((n, 2)), actions, rewards, np.zeros((n, 2)), np.ones(n, bool),
                                      np.arange(n))


def test_value_iteration_closed_forms():
    m = soft_value_iteration(one_step_mdp([1.0, 0.0], 1, 2), alpha=1.0, gamma=0.9)
    assert m.value[0] == pytest.approx(np.log(np.e + 1), abs=1e-5)
    assert m.policy[0] == pytest.approx([0.7311, 0.2689], abs=1e-4)
    cold = soft_value_iteration(one_step_mdp([1.0, 0.0], 1, 2), alpha=0.001, gamma=0.9)
    assert cold.value[0] == pytest.approx(1.0, abs=1e-6) and cold.policy[0, 0] > 1 - 1e-9
    flat = soft_value_iteration(one_step_mdp([0.3] * 4, 2, 2), alpha=0.2, gamma=0.9)
    assert flat.value[0] == pytest.approx(0.3 + 0.2 * np.log(4))
    assert flat.policy[0] == pytest.approx([0.25] * 4)


def test_value_iteration_contraction_and_policy_normalization():
    m = soft_value_iteration(random_mdp(seed=0), alpha=0.05, gamma=0.9)
    res = np.array(m.residuals[1:])
    assert np.all(np.diff(res) <= 1e-15)
    assert np.abs(m.policy.sum(axis=1) - 1.0).max() < 1e-9


def test_value_iteration_reports_residual():
    with pytest.raises(ConvergenceError) as exc:
        soft_value_iteration(random_mdp(seed=0), alpha=0.05, gamma=0.9, max_iter=3)
    assert exc.value.residual > 0


def test_tabular_arsq_matches_value_iteration():
    mdp = random_mdp(3, 2, 3, seed=0)
    vi = soft_value_iteration(mdp, alpha=0.05, gamma=0.9)
    fit = tabular_arsq_fit_mdp(mdp, alpha=0.05, gamma=0.9)
    assert np.abs(fit.advantage_sum() - vi.advantage).max() < 1e-3
    assert np.abs(fit.joint_q() - vi.joint_q).max() < 1e-3
    assert fit.max_norm_error < 1e-6


def test_tabular_arsq_regresses_rewards_on_support():
    data = generate_demos(OneStepEnv(MOTIVATING_LANDSCAPE, "motivating", 2, 1), "mode_mix", 500, seed=0)
    fit = tabular_arsq_fit(data, alpha=0.1)
    cells = data.digits[:, 0, 0] * 2 + data.digits[:, 1, 0]
    q = fit.joint_q()[0]
    for c in np.unique(cells):
        assert abs(q[c] - data.rewards[cells == c].mean()) < 0.05
    assert fit.normalization_error() < 1e-6


def test_independent_recovers_separable_reward():
    rng = np.random.default_rng(0)
    actions = rng.uniform(-1, 1, (400, 2))
    rewards = np.where(actions[:, 0] > 0, 1.0, -0.5)
    data = one_step_data(actions, rewards)
    fit = tabular_independent_fit(data, target="joint")
    cells = data.digits[:, 0, 0] * 2 + data.digits[:, 1, 0]
    assert np.abs(fit.joint_q()[0][cells] - rewards).max() < 0.05


def test_independent_constant_reward_is_flat():
    rng = np.random.default_rng(1)
    fit = tabular_independent_fit(one_step_data(rng.uniform(-1, 1, (100, 2)), np.full(100, 0.7)))
    assert np.allclose(fit.joint_q(), 0.7, atol=1e-6)


def test_independent_misses_optimal_mode_on_mode_mix():
    env = OneStepEnv(MOTIVATING_LANDSCAPE, "motivating", 2, 1)
    data = generate_demos(env, "mode_mix", 1000, seed=0)
    q = tabular_independent_fit(data).joint_q()[0]
    assert np.argmax(q) != 3  # cell (1, 1) holds the optimal mode


def test_independent_rejects_unknown_target():
    with pytest.raises(ValueError):
        tabular_independent_fit(one_step_data(np.zeros((1, 2)), [0.0]), target="sum")


def test_landscape_error_of_ground_truth_is_zero():
    assert q_landscape_error(ERROR_LANDSCAPE.reward, ERROR_LANDSCAPE, 500, seed=0) == 0.0
