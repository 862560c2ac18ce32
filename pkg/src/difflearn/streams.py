"""Deterministic derivation of the random streams shared across the package.

Every source of randomness (activation patterns, gradient sample indices,
problem generation, Monte-Carlo pattern estimates) gets its own stream keyed
by the master seed plus a fixed integer tag, so runs are replayable and the
streams never interleave. Pattern streams are additionally keyed by
(repetition, block) which gives random access: block i of repetition r can be
re-drawn without replaying blocks 0..i-1.
"""

import numpy as np

PATTERN_STREAM = 1
SAMPLE_STREAM = 2
PROBLEM_STREAM = 3
THEORY_STREAM = 4
BATCH_STREAM = 5
SWEEP_STREAM = 6


def derive_rng(seed, *key):
    """Independent generator for (seed, *key); equal arguments, equal stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def pattern_rng(seed, rep, block):
    """Fresh generator for one block's activation pattern."""
    return derive_rng(seed, PATTERN_STREAM, rep, block)


def sample_rng(seed, rep):
    """Per-repetition stream for gradient sample indices.

    The simulator draws indices for all K agents at every local step from this
    stream and discards the draws of inactive agents, so the stream position
    never depends on the activation pattern. Reference implementations reuse
    this helper, which is what makes shared-seed trajectory comparisons
    meaningful.
    """
    return derive_rng(seed, SAMPLE_STREAM, rep)


def point_seed(seed, index):
    """Independent integer master seed for sweep point `index`."""
    sequence = np.random.SeedSequence([int(seed), SWEEP_STREAM, int(index)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
