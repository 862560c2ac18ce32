"""Independently coded special-case recursions used as bitwise regression targets.

These are written directly from the textbook forms of the two classical
algorithms, without the pattern machinery: no activation sampling, no
time-varying matrices. They share only the stream helpers, the problem
oracles and the column-combination matmul convention (new iterates are
columns' worth of weighted sums, i.e. `matrix.T @ stack`), so agreement with
the general engine is a real check, not a tautology.
"""

import numpy as np

from .streams import sample_rng


def standard_diffusion(problem, combination, mu, blocks, repetitions=1, seed=0):
    """Adapt-then-combine diffusion, every agent active, one step per block.

    Each step: psi_k = w_k - mu * grad_k(w_k); w_k = sum_l a_{lk} psi_l.
    Returns the iterate history, (repetitions, blocks, agents, dim).
    """
    K = problem.agent_count
    counts = problem.sample_counts
    A = np.asarray(combination, dtype=float)
    history = np.empty((repetitions, blocks, K, problem.dimension))
    for r in range(repetitions):
        W = np.zeros((K, problem.dimension))
        rng = sample_rng(seed, r)
        for i in range(blocks):
            indices = rng.integers(0, counts)
            psi = W - mu * problem.stochastic_gradients(W, indices)
            W = A.T @ psi
            history[r, i] = W
    return history


def fedavg_full(problem, mu, local_steps, blocks, repetitions=1, seed=0):
    """Federated averaging with full participation.

    Every agent runs local_steps stochastic-gradient steps from the shared
    model, then the server replaces all models with their plain average.
    Returns the iterate history, (repetitions, blocks, agents, dim).
    """
    K = problem.agent_count
    counts = problem.sample_counts
    averaging = np.full((K, K), 1.0 / K)
    history = np.empty((repetitions, blocks, K, problem.dimension))
    for r in range(repetitions):
        W = np.zeros((K, problem.dimension))
        rng = sample_rng(seed, r)
        for i in range(blocks):
            for _ in range(local_steps):
                indices = rng.integers(0, counts)
                W = W - mu * problem.stochastic_gradients(W, indices)
            W = averaging.T @ W
            history[r, i] = W
    return history
