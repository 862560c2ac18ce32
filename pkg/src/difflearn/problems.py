"""Ridge-regression problem family with exact gradient, Hessian and noise oracles.

Each agent k holds a local dataset (u_{k,n}, d_k(n)) and the regularized risk

    J_k(w) = (1/N_k) sum_n |d_k(n) - u_{k,n}^T w|^2 + rho ||w||^2,

which is exactly quadratic: the Hessian H_k = (2/N_k) sum_n u u^T + 2 rho I is
constant and the gradient is affine. That makes every oracle here exact, not
estimated: minimizers come from normal equations, gradient-noise covariances
from averaging over the finite dataset.
"""

import csv

import numpy as np


class ProblemError(ValueError):
    pass


class RegressionDataset:
    """Per-agent regression samples; inputs share the model dimension M.

    noise_variances and generative_model are generation metadata: descriptive
    only, absent for imported datasets.
    """

    def __init__(self, inputs, outputs, noise_variances=None, generative_model=None):
        if len(inputs) != len(outputs) or not inputs:
            raise ProblemError("need matching, nonempty per-agent input/output lists")
        self.inputs = [np.atleast_2d(np.asarray(u, dtype=float)) for u in inputs]
        self.outputs = [np.atleast_1d(np.asarray(d, dtype=float)) for d in outputs]
        m = self.inputs[0].shape[1]
        for k, (u, d) in enumerate(zip(self.inputs, self.outputs)):
            if u.shape[1] != m:
                raise ProblemError("agent %d input dimension %d != %d" % (k, u.shape[1], m))
            if u.shape[0] != d.shape[0] or u.shape[0] < 1:
                raise ProblemError("agent %d needs N_k >= 1 matching samples" % k)
        self.noise_variances = (
            None if noise_variances is None else np.asarray(noise_variances, dtype=float)
        )
        self.generative_model = (
            None if generative_model is None else np.asarray(generative_model, dtype=float)
        )

    @property
    def agent_count(self):
        return len(self.inputs)

    @property
    def dimension(self):
        return self.inputs[0].shape[1]

    @property
    def sample_counts(self):
        return np.array([u.shape[0] for u in self.inputs])


class QuadraticProblem:
    """Dataset plus ridge parameter, with cached Hessians and linear terms."""

    def __init__(self, dataset, rho):
        if rho < 0:
            raise ProblemError("rho must be nonnegative")
        self.dataset = dataset
        self.rho = float(rho)
        m = dataset.dimension
        k = dataset.agent_count
        self.hessians = np.empty((k, m, m))
        self.linear_terms = np.empty((k, m))
        for a, (u, d) in enumerate(zip(dataset.inputs, dataset.outputs)):
            n = u.shape[0]
            self.hessians[a] = (2.0 / n) * (u.T @ u) + 2.0 * self.rho * np.eye(m)
            self.linear_terms[a] = (2.0 / n) * (u.T @ d)
        counts = dataset.sample_counts
        self._uniform = bool((counts == counts[0]).all())
        if self._uniform:
            self._stacked_inputs = np.stack(dataset.inputs)    # (K, N, M)
            self._stacked_outputs = np.stack(dataset.outputs)  # (K, N)

    @property
    def agent_count(self):
        return self.dataset.agent_count

    @property
    def dimension(self):
        return self.dataset.dimension

    @property
    def sample_counts(self):
        return self.dataset.sample_counts

    def hessian(self, agent):
        return self.hessians[agent]

    def local_risk(self, agent, w):
        u = self.dataset.inputs[agent]
        d = self.dataset.outputs[agent]
        residual = d - u @ w
        return (residual @ residual) / u.shape[0] + self.rho * (w @ w)

    def local_gradient(self, agent, w):
        return self.hessians[agent] @ w - self.linear_terms[agent]

    def local_gradients(self, iterates):
        """Full gradients for all agents at their own iterates, (K, M) in and out."""
        return np.einsum("kij,kj->ki", self.hessians, iterates) - self.linear_terms

    def stochastic_gradient(self, agent, w, sample_index):
        u = self.dataset.inputs[agent][sample_index]
        d = self.dataset.outputs[agent][sample_index]
        return 2.0 * u * (u @ w - d) + 2.0 * self.rho * w

    def stochastic_gradients(self, iterates, sample_indices):
        """Single-sample gradients for all agents at once.

        iterates is (K, M), sample_indices is (K,); this is the simulator's hot
        path. It agrees with the scalar form above to rounding (the residual
        contraction may sum in a different order).
        """
        if self._uniform:
            rows = np.arange(self.agent_count)
            u = self._stacked_inputs[rows, sample_indices]   # (K, M)
            d = self._stacked_outputs[rows, sample_indices]  # (K,)
            residual = np.einsum("km,km->k", u, iterates) - d
            return 2.0 * u * residual[:, None] + 2.0 * self.rho * iterates
        out = np.empty_like(iterates)
        for k in range(self.agent_count):
            out[k] = self.stochastic_gradient(k, iterates[k], sample_indices[k])
        return out

    def minimizer(self, agent):
        """Exact minimizer of the local risk (normal equations)."""
        return np.linalg.solve(self.hessians[agent], self.linear_terms[agent])

    def drifted_optimum(self, weights_q):
        """Minimizer of the participation-weighted average risk.

        Solves sum_k q_k H_k w = sum_k q_k r_k; with every H_k positive
        definite the system is nonsingular as soon as any q_k > 0. The
        stationarity residual (1/K) sum_k q_k grad J_k(w) is checked to 1e-10.
        """
        q = np.asarray(weights_q, dtype=float)
        if q.shape != (self.agent_count,):
            raise ProblemError("weights_q must have one entry per agent")
        if (q < 0).any():
            raise ProblemError("weights_q must be nonnegative")
        if not (q > 0).any():
            raise ProblemError("all weights are zero; the weighted objective is degenerate")
        lhs = np.einsum("k,kij->ij", q, self.hessians)
        rhs = np.einsum("k,ki->i", q, self.linear_terms)
        w = np.linalg.solve(lhs, rhs)
        residual = np.abs(np.einsum("k,ki->i", q, self.local_gradients(
            np.broadcast_to(w, (self.agent_count, self.dimension))))).max() / self.agent_count
        if residual > 1e-10:
            raise ProblemError("stationarity residual %.3e exceeds 1e-10" % residual)
        return w

    def bias_vector(self, w_ref):
        """Stacked negative local gradients at the reference point, length K*M."""
        grads = self.local_gradients(np.broadcast_to(w_ref, (self.agent_count, self.dimension)))
        return (-grads).reshape(-1)

    def _noise_vectors(self, agent, w_ref):
        u = self.dataset.inputs[agent]
        d = self.dataset.outputs[agent]
        per_sample = 2.0 * u * (u @ w_ref - d)[:, None]
        # the ridge term is common to every sample, so it cancels in the noise
        return per_sample - per_sample.mean(axis=0)

    def noise_covariance(self, agent, w_ref):
        """Exact covariance of the single-sample gradient noise at w_ref."""
        g = self._noise_vectors(agent, w_ref)
        return (g.T @ g) / g.shape[0]

    def noise_moments(self, agent, w_ref):
        """Exact second and fourth moments of the gradient-noise norm at w_ref."""
        g = self._noise_vectors(agent, w_ref)
        squared = (g ** 2).sum(axis=1)
        return float(squared.mean()), float((squared ** 2).mean())


def generate_synthetic(agent_count, dimension, samples, rho, rng,
                       generative_model=None, mean_range=(-1.0, 1.0),
                       noise_variance_range=(0.05, 0.5), input_covariance=None):
    """Seeded non-IID linear-regression network.

    Inputs are Gaussian with a shared covariance and a per-agent mean drawn
    uniformly from mean_range in every coordinate; outputs follow the linear
    model with per-agent Gaussian noise whose variance is drawn uniformly from
    noise_variance_range. Differing means and noise levels across agents are
    what make the network non-IID.
    """
    if agent_count < 1 or samples < 1 or dimension < 1:
        raise ProblemError("agent_count, samples and dimension must be positive")
    if input_covariance is None:
        cov = np.eye(dimension)
    else:
        cov = np.asarray(input_covariance, dtype=float)
        if cov.shape != (dimension, dimension) or np.abs(cov - cov.T).max() > 1e-12:
            raise ProblemError("input covariance must be symmetric %dx%d" % (dimension, dimension))
        eigenvalues = np.linalg.eigvalsh(cov)
        if eigenvalues.min() < -1e-12:
            raise ProblemError("input covariance is not positive semidefinite")
    if generative_model is None:
        generative_model = rng.standard_normal(dimension)
    else:
        generative_model = np.asarray(generative_model, dtype=float)
        if generative_model.shape != (dimension,):
            raise ProblemError("generative model must have length %d" % dimension)
    chol = np.linalg.cholesky(cov + 1e-15 * np.eye(dimension))
    means = rng.uniform(mean_range[0], mean_range[1], size=(agent_count, dimension))
    lo, hi = noise_variance_range
    noise_variances = rng.uniform(lo, hi, size=agent_count)
    inputs, outputs = [], []
    for k in range(agent_count):
        u = means[k] + rng.standard_normal((samples, dimension)) @ chol.T
        v = np.sqrt(noise_variances[k]) * rng.standard_normal(samples)
        inputs.append(u)
        outputs.append(u @ generative_model + v)
    dataset = RegressionDataset(inputs, outputs, noise_variances, generative_model)
    return QuadraticProblem(dataset, rho)


def save_dataset(dataset, path):
    """Columnar export: agent id, sample id, input components, output."""
    m = dataset.dimension
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["agent", "sample"] + ["u%d" % j for j in range(m)] + ["d"])
        for k, (u, d) in enumerate(zip(dataset.inputs, dataset.outputs)):
            for n in range(u.shape[0]):
                writer.writerow([k, n] + ["%.17g" % x for x in u[n]] + ["%.17g" % d[n]])


def load_dataset(path):
    """Inverse of save_dataset; round-trips values exactly via 17-digit text."""
    per_agent = {}
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        m = len(header) - 3
        if m < 1 or header[:2] != ["agent", "sample"] or header[-1] != "d":
            raise ProblemError("unrecognized dataset header: %r" % (header,))
        for row in reader:
            agent = int(row[0])
            per_agent.setdefault(agent, []).append(
                ([float(x) for x in row[2:2 + m]], float(row[-1]))
            )
    if not per_agent or sorted(per_agent) != list(range(len(per_agent))):
        raise ProblemError("dataset must cover agents 0..K-1 without gaps")
    inputs = [np.array([u for u, _ in per_agent[k]]) for k in sorted(per_agent)]
    outputs = [np.array([d for _, d in per_agent[k]]) for k in sorted(per_agent)]
    return RegressionDataset(inputs, outputs)
