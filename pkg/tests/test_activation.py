import numpy as np
import pytest

from difflearn.activation import (ActivationError, ActivationModel, combine_matrix,
                                  effective_matrix, expected_matrix,
                                  expected_step_product, expected_step_sizes,
                                  step_sizes)
from difflearn.streams import derive_rng
from difflearn.topology import build_metropolis, path, ring


def test_inactive_agent_column_becomes_identity():
    # 3-ring is complete on 3 agents, all weights 1/3; drop agent 2
    weights = build_metropolis(ring(3))
    mixed = combine_matrix(weights, np.array([True, True, False]))
    expected = np.array([
        [2.0 / 3.0, 1.0 / 3.0, 0.0],
        [1.0 / 3.0, 2.0 / 3.0, 0.0],
        [0.0, 0.0, 1.0],
    ])
    assert np.abs(mixed - expected).max() < 1e-15


def test_all_active_reproduces_the_base_matrix_bitwise():
    weights = build_metropolis(ring(6))
    mixed = combine_matrix(weights, np.ones(6, dtype=bool))
    assert np.array_equal(mixed, weights)


def test_nobody_active_gives_identity():
    weights = build_metropolis(ring(5))
    assert np.array_equal(combine_matrix(weights, np.zeros(5, dtype=bool)), np.eye(5))


def test_mixed_matrix_keeps_doubly_stochastic_invariants():
    weights = build_metropolis(ring(8))
    rng = derive_rng(0, 50)
    for _ in range(200):
        mixed = combine_matrix(weights, rng.random(8) < 0.5)
        assert np.abs(mixed - mixed.T).max() == 0.0
        assert np.abs(mixed.sum(axis=0) - 1.0).max() < 1e-12
        assert mixed.min() >= 0.0


def test_effective_matrix_is_identity_before_the_last_local_step():
    weights = build_metropolis(ring(4))
    active = np.array([True, False, True, True])
    for t in (1, 2, 3):
        assert np.array_equal(effective_matrix(weights, active, t, 4), np.eye(4))
    assert np.array_equal(effective_matrix(weights, active, 4, 4),
                          combine_matrix(weights, active))


def test_effective_matrix_rejects_out_of_range_steps():
    weights = build_metropolis(ring(3))
    active = np.ones(3, dtype=bool)
    with pytest.raises(ActivationError):
        effective_matrix(weights, active, 0, 3)
    with pytest.raises(ActivationError):
        effective_matrix(weights, active, 4, 3)


def test_combine_preserves_the_network_average():
    # doubly stochastic exchange cannot move mass, whatever the pattern
    weights = build_metropolis(ring(7))
    rng = derive_rng(1, 50)
    state = rng.standard_normal((7, 3))
    for _ in range(50):
        mixed = combine_matrix(weights, rng.random(7) < 0.6)
        assert np.abs((mixed.T @ state).mean(axis=0) - state.mean(axis=0)).max() < 1e-12


def test_expected_matrix_hand_value_on_two_agents():
    # q = 1/2 both sides: off-diagonal (1/2)(1/2)(1/2) = 1/8
    weights = build_metropolis(path(2))
    model = ActivationModel.uniform(2, 0.5)
    assert np.array_equal(expected_matrix(weights, model),
                          np.array([[0.875, 0.125], [0.125, 0.875]]))


def test_expected_matrix_limits():
    weights = build_metropolis(ring(5))
    assert np.array_equal(expected_matrix(weights, ActivationModel.uniform(5, 1.0)), weights)
    assert np.array_equal(expected_matrix(weights, ActivationModel.uniform(5, 0.0)), np.eye(5))


def test_expected_matrix_matches_monte_carlo():
    weights = build_metropolis(ring(5))
    q = np.array([0.15, 0.4, 0.9, 0.65, 1.0])
    model = ActivationModel(q)
    rng = derive_rng(2, 50)
    n = 40_000
    total = np.zeros((5, 5))
    for pattern in model.sample_batch(rng, n):
        total += combine_matrix(weights, pattern)
    assert np.abs(total / n - expected_matrix(weights, model)).max() < 4.0 / np.sqrt(n)


def test_step_sizes_plain_zeroes_inactive_agents():
    out = step_sizes(np.array([True, False, True]), 0.02)
    assert np.array_equal(out, np.array([0.02, 0.0, 0.02]))


def test_step_sizes_drift_corrected_divides_by_q():
    out = step_sizes(np.array([True, False]), 0.01, "drift-corrected",
                     probabilities=np.array([0.5, 0.9]))
    assert np.array_equal(out, np.array([0.02, 0.0]))


def test_step_sizes_all_inactive_is_zero():
    assert np.array_equal(step_sizes(np.zeros(4, dtype=bool), 0.1), np.zeros(4))
    # mu = 0 is the pure-mixing degenerate case, not an error
    assert np.array_equal(step_sizes(np.ones(4, dtype=bool), 0.0), np.zeros(4))


def test_step_sizes_rejects_bad_arguments():
    active = np.ones(2, dtype=bool)
    with pytest.raises(ActivationError):
        step_sizes(active, -0.01)
    with pytest.raises(ActivationError):
        step_sizes(active, 0.01, "drift-corrected")
    with pytest.raises(ActivationError):
        step_sizes(active, 0.01, "drift-corrected", probabilities=np.array([0.5, 0.0]))
    with pytest.raises(ActivationError):
        step_sizes(active, 0.01, "momentum")


def test_expected_step_product_limits():
    weights = build_metropolis(ring(4))
    mu = 0.03
    always = expected_step_product(weights, ActivationModel.uniform(4, 1.0), mu)
    assert np.abs(always - mu * weights).max() < 1e-16
    never = expected_step_product(weights, ActivationModel.uniform(4, 0.0), mu)
    assert np.array_equal(never, np.zeros((4, 4)))


def test_expected_step_product_matches_monte_carlo():
    # large mu so the 4/sqrt(n) gate is binding relative to the entries
    weights = build_metropolis(ring(5))
    model = ActivationModel(np.array([0.3, 0.8, 0.55, 0.95, 0.2]))
    mu = 0.5
    rng = derive_rng(3, 50)
    n = 40_000
    total = np.zeros((5, 5))
    for pattern in model.sample_batch(rng, n):
        total += combine_matrix(weights, pattern) * step_sizes(pattern, mu)[None, :]
    gap = np.abs(total / n - expected_step_product(weights, model, mu)).max()
    assert gap < 4.0 / np.sqrt(n)


def test_expected_step_sizes_is_mu_q():
    model = ActivationModel(np.array([0.25, 1.0]))
    assert np.array_equal(expected_step_sizes(model, 0.04), np.array([0.01, 0.04]))


def test_probabilities_outside_unit_interval_are_rejected():
    with pytest.raises(ActivationError):
        ActivationModel([0.5, 1.2])
    with pytest.raises(ActivationError):
        ActivationModel([-0.1])


def test_sampling_is_reproducible_and_respects_degenerate_probabilities():
    model = ActivationModel(np.array([0.0, 1.0, 0.5]))
    first = model.sample_batch(derive_rng(4, 50), 1000)
    second = model.sample_batch(derive_rng(4, 50), 1000)
    assert np.array_equal(first, second)
    assert not first[:, 0].any()
    assert first[:, 1].all()
    assert 300 < first[:, 2].sum() < 700
