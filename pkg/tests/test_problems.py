import numpy as np
import pytest

from difflearn.problems import (ProblemError, QuadraticProblem, RegressionDataset,
                                generate_synthetic, load_dataset, save_dataset)
from difflearn.streams import derive_rng


def tiny_problem():
    # one agent, scalar model, two identical samples: H = 2, r = 4, w* = 2
    dataset = RegressionDataset([[[1.0], [1.0]]], [[2.0, 2.0]])
    return QuadraticProblem(dataset, rho=0.0)


def random_problem(agents=4, dim=3, samples=25, rho=0.1, tag=0):
    return generate_synthetic(agents, dim, samples, rho, derive_rng(tag, 77))


def test_hand_problem_oracles():
    problem = tiny_problem()
    assert problem.hessian(0) == np.array([[2.0]])
    assert problem.linear_terms[0] == np.array([4.0])
    assert problem.minimizer(0) == np.array([2.0])
    assert problem.local_gradient(0, np.array([0.0])) == np.array([-4.0])
    assert problem.local_risk(0, np.array([2.0])) == 0.0


def test_gradient_matches_finite_differences():
    problem = random_problem()
    rng = derive_rng(1, 77)
    w = rng.standard_normal(3)
    eps = 1e-6
    for agent in range(problem.agent_count):
        grad = problem.local_gradient(agent, w)
        for j in range(3):
            shift = np.zeros(3)
            shift[j] = eps
            numeric = (problem.local_risk(agent, w + shift)
                       - problem.local_risk(agent, w - shift)) / (2 * eps)
            assert abs(grad[j] - numeric) < 1e-5


def test_stochastic_gradient_is_unbiased_over_the_dataset():
    problem = random_problem()
    rng = derive_rng(2, 77)
    w = rng.standard_normal(3)
    for agent in range(problem.agent_count):
        mean = np.mean([problem.stochastic_gradient(agent, w, n)
                        for n in range(problem.sample_counts[agent])], axis=0)
        assert np.abs(mean - problem.local_gradient(agent, w)).max() < 1e-12


def test_batched_stochastic_gradients_match_the_scalar_form():
    problem = random_problem()
    rng = derive_rng(3, 77)
    iterates = rng.standard_normal((4, 3))
    indices = rng.integers(0, problem.sample_counts)
    batched = problem.stochastic_gradients(iterates, indices)
    for k in range(4):
        scalar = problem.stochastic_gradient(k, iterates[k], indices[k])
        assert np.abs(batched[k] - scalar).max() < 1e-14


def test_batched_gradients_fall_back_when_sample_counts_differ():
    dataset = RegressionDataset(
        [[[1.0], [2.0], [3.0]], [[1.0], [-1.0]]],
        [[1.0, 2.0, 3.0], [0.5, -0.5]])
    problem = QuadraticProblem(dataset, rho=0.05)
    iterates = np.array([[0.4], [-0.3]])
    indices = np.array([2, 1])
    batched = problem.stochastic_gradients(iterates, indices)
    for k in range(2):
        assert np.array_equal(batched[k],
                              problem.stochastic_gradient(k, iterates[k], indices[k]))


def test_batched_full_gradients_match_the_scalar_form():
    problem = random_problem()
    rng = derive_rng(4, 77)
    iterates = rng.standard_normal((4, 3))
    grads = problem.local_gradients(iterates)
    for k in range(4):
        assert np.abs(grads[k] - problem.local_gradient(k, iterates[k])).max() < 1e-14


def test_drifted_optimum_matches_gradient_descent():
    problem = random_problem()
    q = np.array([0.2, 0.9, 0.5, 0.7])
    w = np.zeros(3)
    for _ in range(20_000):
        grad = sum(q[k] * problem.local_gradient(k, w) for k in range(4)) / 4.0
        w = w - 0.02 * grad
    assert np.abs(problem.drifted_optimum(q) - w).max() < 1e-10


def test_drifted_optimum_special_cases():
    problem = random_problem()
    uniform = problem.drifted_optimum(np.full(4, 0.37))
    unweighted = problem.drifted_optimum(np.ones(4))
    assert np.abs(uniform - unweighted).max() < 1e-12
    lone = np.zeros(4)
    lone[2] = 1.0
    assert np.abs(problem.drifted_optimum(lone) - problem.minimizer(2)).max() < 1e-12
    with pytest.raises(ProblemError):
        problem.drifted_optimum(np.zeros(4))
    with pytest.raises(ProblemError):
        problem.drifted_optimum(np.array([0.5, -0.1, 0.5, 0.5]))


def test_bias_vectors_cancel_at_the_weighted_optimum():
    problem = random_problem()
    q = np.array([0.3, 0.6, 0.95, 0.45])
    bias = problem.bias_vector(problem.drifted_optimum(q)).reshape(4, 3)
    assert np.abs((q[:, None] * bias).sum(axis=0)).max() < 1e-12
    # and generically they do not cancel agentwise
    assert np.abs(bias).max() > 1e-3


def test_noise_is_zero_mean_and_ridge_free():
    problem = random_problem(rho=0.3)
    w = derive_rng(5, 77).standard_normal(3)
    g = problem._noise_vectors(0, w)
    assert np.abs(g.mean(axis=0)).max() < 1e-12
    # rho enters every sample identically, so the centered noise ignores it
    bare = QuadraticProblem(problem.dataset, rho=0.0)
    assert np.array_equal(g, bare._noise_vectors(0, w))


def test_single_sample_agent_has_no_gradient_noise():
    dataset = RegressionDataset([[[1.0, 2.0]]], [[0.5]])
    problem = QuadraticProblem(dataset, rho=0.1)
    w = np.array([0.3, -0.2])
    assert np.abs(problem.noise_covariance(0, w)).max() == 0.0
    second, fourth = problem.noise_moments(0, w)
    assert second == 0.0 and fourth == 0.0


def test_noise_moments_match_covariance_trace_and_jensen():
    problem = random_problem()
    w = problem.drifted_optimum(np.ones(4))
    for agent in range(4):
        second, fourth = problem.noise_moments(agent, w)
        trace = np.trace(problem.noise_covariance(agent, w))
        assert abs(second - trace) < 1e-12 * max(1.0, trace)
        assert fourth >= second ** 2


def test_noise_covariance_matches_monte_carlo_sampling():
    problem = random_problem(agents=2, dim=2, samples=30)
    w = problem.drifted_optimum(np.ones(2))
    rng = derive_rng(6, 77)
    n = 200_000
    for agent in range(2):
        draws = rng.integers(0, problem.sample_counts[agent], size=n)
        noises = (np.stack([problem.stochastic_gradient(agent, w, d) for d in draws])
                  - problem.local_gradient(agent, w))
        empirical = noises.T @ noises / n
        exact = problem.noise_covariance(agent, w)
        spread = np.abs(noises[:, :, None] * noises[:, None, :] - exact).std(axis=0)
        assert np.abs(empirical - exact).max() < (4.0 * spread / np.sqrt(n)).max()


def test_save_load_round_trip_is_exact(tmp_path):
    problem = random_problem(agents=3, dim=2, samples=7)
    path = tmp_path / "data.csv"
    save_dataset(problem.dataset, path)
    loaded = load_dataset(path)
    for k in range(3):
        assert np.array_equal(loaded.inputs[k], problem.dataset.inputs[k])
        assert np.array_equal(loaded.outputs[k], problem.dataset.outputs[k])


def test_load_rejects_foreign_headers(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("agent,step,u0,d\n0,0,1.0,2.0\n")
    with pytest.raises(ProblemError, match="header"):
        load_dataset(path)


def test_load_rejects_agent_gaps(tmp_path):
    path = tmp_path / "gap.csv"
    path.write_text("agent,sample,u0,d\n0,0,1.0,2.0\n2,0,1.0,2.0\n")
    with pytest.raises(ProblemError, match="gaps"):
        load_dataset(path)


def test_generation_validates_input_covariance():
    rng = derive_rng(7, 77)
    with pytest.raises(ProblemError, match="semidefinite"):
        generate_synthetic(2, 2, 10, 0.1, rng, input_covariance=np.array([[1.0, 2.0],
                                                                          [2.0, 1.0]]))
    with pytest.raises(ProblemError, match="symmetric"):
        generate_synthetic(2, 2, 10, 0.1, rng, input_covariance=np.array([[1.0, 0.5],
                                                                          [0.1, 1.0]]))


def test_generation_is_deterministic_in_the_seed():
    first = random_problem(tag=9)
    second = random_problem(tag=9)
    other = random_problem(tag=10)
    assert np.array_equal(first.hessians, second.hessians)
    assert np.array_equal(first.linear_terms, second.linear_terms)
    assert not np.array_equal(first.hessians, other.hessians)


def test_generation_honours_ranges():
    problem = generate_synthetic(6, 2, 400, 0.05, derive_rng(8, 77),
                                 mean_range=(2.0, 3.0), noise_variance_range=(0.2, 0.3))
    assert np.all(problem.dataset.noise_variances >= 0.2)
    assert np.all(problem.dataset.noise_variances <= 0.3)
    for u in problem.dataset.inputs:
        assert np.all(u.mean(axis=0) > 1.5) and np.all(u.mean(axis=0) < 3.5)


def test_dataset_shape_validation():
    with pytest.raises(ProblemError):
        RegressionDataset([], [])
    with pytest.raises(ProblemError):
        RegressionDataset([[[1.0, 2.0]], [[1.0]]], [[1.0], [1.0]])
    with pytest.raises(ProblemError):
        RegressionDataset([[[1.0]]], [[1.0, 2.0]])
    with pytest.raises(ProblemError):
        QuadraticProblem(RegressionDataset([[[1.0]]], [[1.0]]), rho=-0.1)
