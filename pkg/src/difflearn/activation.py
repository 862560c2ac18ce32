"""Random per-block agent activation and the induced time-varying matrices."""

import numpy as np


class ActivationError(ValueError):
    pass


class ActivationModel:
    """Independent Bernoulli participation, one draw per agent per block."""

    def __init__(self, probabilities):
        q = np.atleast_1d(np.asarray(probabilities, dtype=float))
        if q.ndim != 1:
            raise ActivationError("probabilities must be a vector")
        if (q < 0).any() or (q > 1).any():
            raise ActivationError("probabilities must lie in [0, 1]")
        self.probabilities = q

    @classmethod
    def uniform(cls, agent_count, q):
        return cls(np.full(agent_count, float(q)))

    @property
    def agent_count(self):
        return self.probabilities.size

    def sample(self, rng):
        return sample_pattern(self, rng)

    def sample_batch(self, rng, draws):
        """Stack of independent patterns, (draws, agent_count) boolean."""
        return rng.random((draws, self.agent_count)) < self.probabilities


def sample_pattern(model, rng):
    """One activation pattern: independent Bernoulli(q_k) draws.

    rng.random() lies in [0, 1), so q_k = 1 is always active and q_k = 0 never.
    """
    return rng.random(model.agent_count) < model.probabilities


def combine_matrix(weights, active):
    """Mixing matrix for the combine step given the block's activation pattern.

    Off-diagonal weights survive only between pairs of active agents; an
    active agent's self-weight is raised to keep its column summing to one,
    and an inactive agent keeps its state (identity column). The result is
    symmetric and doubly stochastic whenever `weights` is. When everyone is
    active this reproduces `weights` bitwise, because the diagonal is rebuilt
    with the same expression the builders use.
    """
    act = np.asarray(active, dtype=bool)
    both = act[:, None] & act[None, :]
    out = np.where(both, weights, 0.0)
    np.fill_diagonal(out, 0.0)
    out[np.diag_indices_from(out)] = 1.0 - out.sum(axis=0)
    return out


def effective_matrix(weights, active, local_step, local_steps):
    """Combination matrix at local step t of a block with T local steps.

    Identity during the block (no communication), the pattern-adjusted matrix
    at t == T.
    """
    if not 1 <= local_step <= local_steps:
        raise ActivationError(
            "local_step must lie in [1, %d], got %d" % (local_steps, local_step)
        )
    if local_step != local_steps:
        return np.eye(np.asarray(weights).shape[0])
    return combine_matrix(weights, active)


def step_sizes(active, mu, mode="plain", probabilities=None):
    """Diagonal of the per-block step-size matrix.

    Plain mode gives every active agent the constant mu. Drift-corrected mode
    scales by 1/q_k, which requires every participation probability to be
    strictly positive.
    """
    act = np.asarray(active, dtype=bool)
    if mu < 0:
        raise ActivationError("mu must be nonnegative")
    if mode == "plain":
        return mu * act
    if mode == "drift-corrected":
        if probabilities is None:
            raise ActivationError("drift-corrected mode needs the participation probabilities")
        q = np.asarray(probabilities, dtype=float)
        if (q <= 0).any():
            raise ActivationError("drift-corrected mode requires q_k > 0 for every agent")
        return (mu / q) * act
    raise ActivationError("unknown step-size mode %r" % (mode,))


def expected_matrix(weights, model):
    """Expectation of the combine-step matrix over activation patterns.

    Off-diagonal entries become q_l q_k a_{lk}; the diagonal absorbs the rest.
    (During the block the matrix is deterministically the identity.)
    """
    w = np.asarray(weights, dtype=float)
    q = model.probabilities
    off = np.outer(q, q) * w
    np.fill_diagonal(off, 0.0)
    out = off
    out[np.diag_indices_from(out)] = 1.0 - off.sum(axis=0)
    return out


def expected_step_sizes(model, mu):
    """Diagonal of the expected step-size matrix, mu * q_k."""
    return mu * model.probabilities


def expected_step_product(weights, model, mu):
    """Exact expectation of (combine matrix) @ diag(step sizes).

    The same pattern drives both factors; the closed form is
    mu * (expected_matrix - I) + diag(mu * q).
    """
    abar = expected_matrix(weights, model)
    out = mu * (abar - np.eye(abar.shape[0]))
    out[np.diag_indices_from(out)] += expected_step_sizes(model, mu)
    return out
