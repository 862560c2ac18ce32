"""Closed-form steady-state mean-square deviation of the block recursion.

Works on the constant-Hessian companion model: quadratic local risks make the
per-step contraction exact, and the gradient-noise covariances are frozen at
the reference point. Writing w~ for the stacked deviation from the reference,
one block does

    w~' = F(pattern) w~ - u(pattern) + injected noise,

where F applies T local contractions and one combine step, u collects the
bias forcing, and the noise injected at each local step passes through the
remaining contractions and the combine step. Stationarity of the second
moment then gives a linear equation: with G = E[F (x) F] (Kronecker square)
and y the expected forcing of the covariance recursion,

    z = (I - G)^{-1} y,    MSD = (1/K) z . bvec(I).

Expectations over activation patterns are computed exactly by enumeration
when few agents have uncertain participation, or by Monte Carlo with
deduplicated patterns and reported standard errors otherwise.
"""

from dataclasses import dataclass

import numpy as np

from .activation import combine_matrix, step_sizes
from .streams import THEORY_STREAM, derive_rng


class StabilityError(RuntimeError):
    """Step size outside the mean-square stability range (or a solve failed)."""

    def __init__(self, message, spectral_radius=None):
        super().__init__(message)
        self.spectral_radius = spectral_radius


def bvec(matrix):
    """Column-stacking vectorization: bvec(E X F^T) = block_kron(F, E) bvec(X)."""
    x = np.asarray(matrix)
    if x.ndim != 2:
        raise ValueError("bvec expects a matrix")
    return x.ravel(order="F")


def unbvec(vector, rows):
    v = np.asarray(vector)
    if v.ndim != 1 or v.size % rows != 0:
        raise ValueError("vector length is not a multiple of the row count")
    return v.reshape((rows, v.size // rows), order="F")


def block_kron(left, right):
    a = np.asarray(left)
    b = np.asarray(right)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("block_kron expects matrices")
    return np.kron(a, b)


def _block_diagonal(blocks):
    k, m, _ = blocks.shape
    out = np.zeros((k * m, k * m))
    for i in range(k):
        out[i * m:(i + 1) * m, i * m:(i + 1) * m] = blocks[i]
    return out


@dataclass
class MsdInputs:
    """Frozen ingredients of the steady-state analysis at a reference point."""

    hessians: np.ndarray            # (K, M, M), SPD blocks
    noise_covariances: np.ndarray   # (K, M, M), PSD blocks
    bias: np.ndarray                # (K*M,), stacked -grad J_k at the reference
    combination: np.ndarray         # (K, K)
    probabilities: np.ndarray       # (K,), all > 0
    mu: float
    local_steps: int = 1
    mode: str = "plain"
    reference: np.ndarray = None

    def __post_init__(self):
        self.hessians = np.asarray(self.hessians, dtype=float)
        self.noise_covariances = np.asarray(self.noise_covariances, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        self.combination = np.asarray(self.combination, dtype=float)
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        k, m = self.agent_count, self.dimension
        if self.hessians.shape != (k, m, m) or self.noise_covariances.shape != (k, m, m):
            raise ValueError("hessians and noise covariances must be (K, M, M)")
        if self.bias.shape != (k * m,):
            raise ValueError("bias must be a stacked K*M vector")
        if self.combination.shape != (k, k):
            raise ValueError("combination matrix must be K x K")
        if self.probabilities.shape != (k,) or (self.probabilities <= 0).any() \
                or (self.probabilities > 1).any():
            raise ValueError("steady-state analysis needs 0 < q_k <= 1 for every agent "
                             "(an agent that never participates never forgets its start)")
        if self.mu <= 0 or self.local_steps < 1:
            raise ValueError("mu must be positive and local_steps >= 1")
        if self.mode not in ("plain", "drift-corrected"):
            raise ValueError("mode must be 'plain' or 'drift-corrected'")

    @property
    def agent_count(self):
        return self.hessians.shape[0]

    @property
    def dimension(self):
        return self.hessians.shape[1]

    @classmethod
    def from_problem(cls, problem, combination, activation, mu, local_steps=1, mode="plain"):
        """Evaluate Hessians, noise covariances and bias at the mode's fixed point."""
        q = getattr(activation, "probabilities", None)
        if q is None:
            q = np.asarray(activation, dtype=float)
        if mode == "drift-corrected":
            w_ref = problem.drifted_optimum(np.ones(problem.agent_count))
        else:
            w_ref = problem.drifted_optimum(q)
        covariances = np.stack([
            problem.noise_covariance(k, w_ref) for k in range(problem.agent_count)
        ])
        return cls(problem.hessians.copy(), covariances, problem.bias_vector(w_ref),
                   combination, q, mu, local_steps, mode, w_ref)


@dataclass
class PatternTerms:
    """Deterministic pieces of one block conditioned on an activation pattern."""

    transition: np.ndarray   # (KM, KM): combine after T local contractions
    forcing: np.ndarray      # (KM,): bias pushed through the block
    noise: np.ndarray        # (KM, KM): covariance injected by the block's noise

    def g_term(self):
        return np.kron(self.transition, self.transition)


def sample_operator_terms(inputs, active):
    """Build the per-pattern transition, forcing and injected-noise terms.

    Inactive agents get identity local maps and zero step sizes, so their
    blocks contribute nothing to forcing or noise and pass straight through.
    """
    K, M = inputs.agent_count, inputs.dimension
    act = np.asarray(active, dtype=bool)
    mixer = combine_matrix(inputs.combination, act)
    mu_vec = step_sizes(act, inputs.mu, inputs.mode, inputs.probabilities)
    steppers = np.eye(M) - mu_vec[:, None, None] * inputs.hessians
    scaled_noise = (mu_vec ** 2)[:, None, None] * inputs.noise_covariances
    scaled_bias = mu_vec[:, None] * inputs.bias.reshape(K, M)
    current = np.broadcast_to(np.eye(M), (K, M, M)).copy()
    geometric = np.zeros((K, M))
    injected = np.zeros((K, M, M))
    for _ in range(inputs.local_steps):
        geometric += np.einsum("kab,kb->ka", current, scaled_bias)
        injected += current @ scaled_noise @ current.transpose(0, 2, 1)
        current = steppers @ current
    transition = np.einsum("lk,lab->kalb", mixer, current).reshape(K * M, K * M)
    forcing = np.einsum("lk,la->ka", mixer, geometric).reshape(K * M)
    noise = np.einsum("lk,lab,lj->kajb", mixer, injected, mixer).reshape(K * M, K * M)
    return PatternTerms(transition, forcing, noise)


def _pattern_table(inputs, mode, samples, rng, exact_budget):
    """Activation patterns and probability weights for the expectation.

    Exact mode enumerates only agents with uncertain participation (0 < q < 1);
    agents with q = 1 are pinned active. Monte Carlo deduplicates the sampled
    patterns, so repeated masks cost one evaluation with a multinomial weight.
    """
    q = inputs.probabilities
    uncertain = np.nonzero(q < 1.0)[0]
    if mode == "auto":
        mode = "exact" if uncertain.size <= exact_budget else "mc"
    if mode == "exact":
        n = uncertain.size
        if n > exact_budget:
            raise ValueError(
                "exact enumeration over %d uncertain agents exceeds the budget of %d; "
                "use mode='mc'" % (n, exact_budget))
        codes = np.arange(2 ** n)[:, None]
        toggles = ((codes >> np.arange(n)) & 1).astype(bool)
        masks = np.ones((2 ** n, q.size), dtype=bool)
        masks[:, uncertain] = toggles
        weights = np.where(toggles, q[uncertain], 1.0 - q[uncertain]).prod(axis=1)
        return masks, weights, "exact", None
    if mode != "mc":
        raise ValueError("mode must be 'auto', 'exact' or 'mc'")
    if samples < 1:
        raise ValueError("Monte Carlo needs a positive sample count")
    if rng is None:
        rng = derive_rng(0, THEORY_STREAM)
    draws = rng.random((samples, q.size)) < q
    masks, counts = np.unique(draws, axis=0, return_counts=True)
    return masks, counts / samples, "mc", samples


@dataclass
class ExpectationEstimate:
    g_op: np.ndarray             # ((KM)^2, (KM)^2): E[transition (x) transition]
    y: np.ndarray                # ((KM)^2,): forcing of the covariance recursion
    b_bar: np.ndarray            # (KM, KM): E[transition]
    u_bar: np.ndarray            # (KM,): E[forcing]
    mean_fixed_point: np.ndarray  # (KM,): stationary mean deviation
    mode: str
    sample_count: int            # None for exact enumeration
    pattern_count: int
    g_identity_gap: float        # ||G - I||_F, O(mu) diagnostic
    g_se: np.ndarray = None      # entrywise standard errors (Monte Carlo only)


def estimate_expectations(inputs, mode="auto", samples=200_000, rng=None,
                          exact_budget=12, chunk_size=1024):
    """Expected operators of the covariance recursion over activation patterns.

    The Kronecker square E[F (x) F] is accumulated through a weighted Gram
    matrix of flattened transitions and an index shuffle, which keeps the work
    in matrix products. The forcing y combines the squared bias term, the
    injected noise (independent across local steps, so only same-step products
    survive), and the cross term with the stationary mean, with both orderings
    of the cross product kept so y is the vectorization of a symmetric matrix.
    """
    masks, weights, mode_used, draw_count = _pattern_table(
        inputs, mode, samples, rng, exact_budget)
    D = inputs.agent_count * inputs.dimension
    b_bar = np.zeros((D, D))
    u_bar = np.zeros(D)
    squared_bias = np.zeros((D, D))
    noise_mean = np.zeros((D, D))
    trans_by_forcing = np.zeros((D * D, D))
    gram = np.zeros((D * D, D * D))
    gram_sq = np.zeros((D * D, D * D)) if mode_used == "mc" else None
    for start in range(0, weights.size, chunk_size):
        w = weights[start:start + chunk_size]
        terms = [sample_operator_terms(inputs, m) for m in masks[start:start + chunk_size]]
        trans = np.stack([t.transition for t in terms])
        force = np.stack([t.forcing for t in terms])
        b_bar += np.einsum("p,pab->ab", w, trans)
        u_bar += w @ force
        squared_bias += np.einsum("p,pa,pb->ab", w, force, force)
        noise_mean += np.einsum("p,pab->ab", w, np.stack([t.noise for t in terms]))
        flat = trans.reshape(w.size, D * D)
        weighted = w[:, None] * flat
        gram += flat.T @ weighted
        trans_by_forcing += weighted.T @ force
        if gram_sq is not None:
            sq = flat ** 2
            gram_sq += sq.T @ (w[:, None] * sq)

    def unshuffle(matrix):
        return matrix.reshape(D, D, D, D).transpose(0, 2, 1, 3).reshape(D * D, D * D)

    g_op = unshuffle(gram)
    try:
        mean = np.linalg.solve(np.eye(D) - b_bar, -u_bar)
    except np.linalg.LinAlgError:
        raise StabilityError("mean recursion has no fixed point: I - E[transition] "
                             "is singular")
    cross = np.einsum("abc,b->ac", trans_by_forcing.reshape(D, D, D), mean)
    y = bvec(squared_bias - cross - cross.T + noise_mean)
    g_se = None
    if gram_sq is not None:
        variance = np.maximum(unshuffle(gram_sq) - g_op ** 2, 0.0)
        g_se = np.sqrt(variance / draw_count)
    gap = float(np.linalg.norm(g_op - np.eye(D * D)))
    return ExpectationEstimate(g_op, y, b_bar, u_bar, mean, mode_used, draw_count,
                               int(weights.size), gap, g_se)


@dataclass
class MsdReport:
    msd: float
    z: np.ndarray
    spectral_radius: float
    solve_residual: float
    expectations: ExpectationEstimate


def msd_value(inputs, expectations=None, mode="auto", samples=200_000, rng=None,
              exact_budget=12):
    """Steady-state MSD of the companion model, (1/K) z . bvec(I).

    Raises StabilityError when the expected Kronecker-square operator has
    spectral radius at or above one (step size outside the stability range)
    or when the linear solve cannot reach a 1e-10 relative residual.
    """
    if expectations is None:
        expectations = estimate_expectations(inputs, mode, samples, rng, exact_budget)
    g_op, y = expectations.g_op, expectations.y
    radius = float(np.abs(np.linalg.eigvals(g_op)).max())
    if radius >= 1.0:
        raise StabilityError(
            "covariance operator has spectral radius %.6f >= 1; the step size is "
            "outside the mean-square stability range" % radius, radius)
    lhs = np.eye(g_op.shape[0]) - g_op
    try:
        z = np.linalg.solve(lhs, y)
    except np.linalg.LinAlgError:
        raise StabilityError("I - G is singular at spectral radius %.6f" % radius, radius)
    scale = max(float(np.linalg.norm(y)), np.finfo(float).tiny)
    residual = float(np.linalg.norm(lhs @ z - y)) / scale
    if residual > 1e-10:
        raise StabilityError(
            "covariance solve residual %.2e exceeds 1e-10 (spectral radius %.6f)"
            % (residual, radius), radius)
    identity = np.eye(inputs.agent_count * inputs.dimension)
    msd = float(z @ bvec(identity)) / inputs.agent_count
    return MsdReport(msd, z, radius, residual, expectations)


@dataclass
class TrendEstimate:
    """Coarse proportional form for trend checks, never an absolute prediction."""

    value: float
    remainder_scale: float


def approx_local_updates(inputs):
    """Leading mu*T scaling of z for the local-update trend.

    Evaluates (mu T / K) (||P b||^2 + tr(P diag(R_k) P^T)) with
    P = (I - mu H)^(T-1); the dropped remainder is O(mu) times the reported
    (2T-1) power scale.
    """
    K, M, T = inputs.agent_count, inputs.dimension, inputs.local_steps
    mu = inputs.mu
    bias = inputs.bias.reshape(K, M)
    value = 0.0
    remainder = 0.0
    for k in range(K):
        stepper = np.eye(M) - mu * inputs.hessians[k]
        shrink = np.linalg.matrix_power(stepper, T - 1)
        value += shrink @ bias[k] @ (shrink @ bias[k])
        value += np.trace(shrink @ inputs.noise_covariances[k] @ shrink.T)
        tail = np.linalg.matrix_power(stepper, 2 * T - 1)
        remainder = max(remainder, mu * np.linalg.norm(tail, 2))
    return TrendEstimate(float(mu * T / K * value), float(remainder))


def approx_activation(inputs, mode="auto", samples=200_000, rng=None, exact_budget=12):
    """Activation-probability trend of the MSD for single-local-step runs.

    Freezes the local contraction at the scalar 1 - mu * mean Hessian
    eigenvalue and keeps the pattern dependence only through the expected
    Kronecker square of the combine operator, so the value tracks how
    participation probabilities move the steady state, not its absolute size.
    """
    if inputs.local_steps != 1:
        raise ValueError("the activation-probability trend assumes one local step")
    K, M = inputs.agent_count, inputs.dimension
    D = K * M
    masks, weights, _, _ = _pattern_table(inputs, mode, samples, rng, exact_budget)
    gram = np.zeros((D * D, D * D))
    small = np.eye(M)
    for start in range(0, weights.size, 1024):
        w = weights[start:start + 1024]
        ops = np.stack([
            np.kron(combine_matrix(inputs.combination, m).T, small)
            for m in masks[start:start + 1024]
        ]).reshape(w.size, D * D)
        gram += ops.T @ (w[:, None] * ops)
    expected_square = gram.reshape(D, D, D, D).transpose(0, 2, 1, 3).reshape(D * D, D * D)
    contraction = 1.0 - inputs.mu * np.trace(_block_diagonal(inputs.hessians)) / D
    forcing = inputs.mu ** 2 * (expected_square @ (
        np.kron(inputs.bias, inputs.bias) + bvec(_block_diagonal(inputs.noise_covariances))
    ))
    value = bvec(np.eye(D)) @ np.linalg.solve(
        np.eye(D * D) - contraction ** 2 * expected_square, forcing) / K
    return TrendEstimate(float(value), float(inputs.mu))
