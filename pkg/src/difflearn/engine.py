"""Block simulator: local adaptation steps with partial participation, then combine.

One block = local_steps stochastic-gradient updates at every active agent
followed by one exchange through the pattern-restricted combination matrix.
Inactive agents keep their iterates frozen for the whole block and pass them
through the exchange unchanged.

Random-number discipline: activation patterns and data samples come from
separate seeded streams (see streams.py), and sample indices are drawn for all
agents every local step whether or not they are active. The stream position
therefore never depends on the realized pattern, which is what makes reduced
special cases reproducible bit for bit against independent implementations.
"""

from dataclasses import dataclass, field

import numpy as np

from .activation import ActivationModel, combine_matrix, step_sizes
from .streams import BATCH_STREAM, derive_rng, pattern_rng, sample_rng


class DivergenceError(RuntimeError):
    def __init__(self, block, value):
        super().__init__(
            "iterates reached magnitude %.3e at block %d; reduce the step size" % (value, block)
        )
        self.block = block
        self.value = value


@dataclass
class SimulationConfig:
    mu: float
    blocks: int
    local_steps: int = 1
    repetitions: int = 1
    seed: int = 0
    mode: str = "plain"
    deterministic_gradient: bool = False
    init: object = "zeros"
    record_iterates: bool = False
    divergence_limit: float = 1e9

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.blocks < 1 or self.local_steps < 1 or self.repetitions < 1:
            raise ValueError("blocks, local_steps and repetitions must be >= 1")
        if self.mode not in ("plain", "drift-corrected"):
            raise ValueError("mode must be 'plain' or 'drift-corrected'")
        if isinstance(self.init, str) and self.init not in ("zeros", "w_ref"):
            raise ValueError("init must be 'zeros', 'w_ref' or an array")


@dataclass
class TrajectoryRecord:
    deviations: np.ndarray          # (repetitions, blocks, agents) squared deviations
    patterns: np.ndarray            # (repetitions, blocks) activation bitmasks
    w_ref: np.ndarray
    config: SimulationConfig
    iterates: np.ndarray = None     # (repetitions, blocks, agents, dim) if recorded

    def network_deviation(self):
        """Per-repetition network-average squared deviation, (repetitions, blocks)."""
        return self.deviations.mean(axis=2)

    def average_curve(self):
        """Learning curve averaged over repetitions and agents, (blocks,)."""
        return self.deviations.mean(axis=(0, 2))


@dataclass
class Measurement:
    value: float
    first_half: float
    second_half: float
    stationary: bool
    window_start: int


def _reference_point(problem, activation, config, w_ref):
    if w_ref is not None:
        return np.asarray(w_ref, dtype=float)
    if config.mode == "drift-corrected":
        return problem.drifted_optimum(np.ones(problem.agent_count))
    return problem.drifted_optimum(activation.probabilities)


def _initial_state(config, w_ref, agent_count, dimension):
    if isinstance(config.init, str):
        if config.init == "zeros":
            return np.zeros((agent_count, dimension))
        return np.tile(w_ref, (agent_count, 1))
    start = np.asarray(config.init, dtype=float)
    if start.shape == (dimension,):
        return np.tile(start, (agent_count, 1))
    if start.shape == (agent_count, dimension):
        return start.copy()
    raise ValueError("init array must have shape (dim,) or (agents, dim)")


def run(problem, combination, activation, config, w_ref=None):
    """Simulate the block recursion and record squared deviations from w_ref.

    w_ref defaults to the fixed point the chosen mode targets: the
    participation-weighted minimizer in plain mode, the unweighted network
    minimizer under drift correction.
    """
    K = problem.agent_count
    M = problem.dimension
    if activation.agent_count != K or combination.shape != (K, K):
        raise ValueError("problem, combination and activation sizes disagree")
    if K > 64:
        raise ValueError("at most 64 agents are supported")
    w_ref = _reference_point(problem, activation, config, w_ref)
    counts = problem.sample_counts
    R, B, T = config.repetitions, config.blocks, config.local_steps
    deviations = np.empty((R, B, K))
    patterns = np.empty((R, B), dtype=np.uint64)
    iterates = np.empty((R, B, K, M)) if config.record_iterates else None
    bits = np.left_shift(np.uint64(1), np.arange(K, dtype=np.uint64))
    for r in range(R):
        W = _initial_state(config, w_ref, K, M)
        srng = sample_rng(config.seed, r)
        for i in range(B):
            active = activation.sample(pattern_rng(config.seed, r, i))
            mu_vec = step_sizes(active, config.mu, config.mode, activation.probabilities)
            for _ in range(T):
                if config.deterministic_gradient:
                    grads = problem.local_gradients(W)
                else:
                    indices = srng.integers(0, counts)
                    grads = problem.stochastic_gradients(W, indices)
                W = W - mu_vec[:, None] * grads
            W = combine_matrix(combination, active).T @ W
            peak = np.abs(W).max()
            if not np.isfinite(peak) or peak > config.divergence_limit:
                raise DivergenceError(i, peak)
            diff = W - w_ref
            deviations[r, i] = np.einsum("km,km->k", diff, diff)
            patterns[r, i] = (bits * active).sum(dtype=np.uint64)
            if iterates is not None:
                iterates[r, i] = W
    return TrajectoryRecord(deviations, patterns, w_ref, config, iterates)


def measure_moment(record, power, window_fraction=0.2):
    """Average of (squared deviation)^power over the trailing window.

    The window is split in half and the two half-means compared; they should
    agree within 10% once the chain has reached steady state.
    """
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must lie in (0, 1]")
    blocks = record.deviations.shape[1]
    start = blocks - max(2, int(round(blocks * window_fraction)))
    start = max(start, 0)
    window = record.deviations[:, start:, :] ** power
    mid = (blocks - start) // 2
    first = float(window[:, :mid, :].mean())
    second = float(window[:, mid:, :].mean())
    value = float(window.mean())
    stationary = abs(first - second) <= 0.1 * max(abs(first), abs(second))
    return Measurement(value, first, second, stationary, start)


def measure_msd(record, window_fraction=0.2):
    """Steady-state mean-square deviation estimate from the trailing window."""
    return measure_moment(record, 1, window_fraction)


def convergence_time(record, steady=None, factor=1.1, smooth=None):
    """First block whose smoothed learning curve enters factor * steady.

    Returns the block index (0-based, position of the window's last element),
    or None if the curve never gets there.
    """
    curve = record.average_curve()
    if steady is None:
        steady = measure_msd(record).value
    if smooth is None:
        smooth = max(1, curve.size // 50)
    kernel = np.full(smooth, 1.0 / smooth)
    smoothed = np.convolve(curve, kernel, mode="valid")
    hits = np.nonzero(smoothed <= factor * steady)[0]
    if hits.size == 0:
        return None
    return int(hits[0]) + smooth - 1


def mean_trajectory(problem, combination, activation, config, draws, w_ref=None):
    """Monte Carlo estimate of the expected network-average iterate per block.

    Runs `draws` pattern realizations in parallel with deterministic (full)
    gradients, so the only randomness is the activation process. Returns a
    (blocks, dim) array of E[(1/K) sum_k w_k] estimates.
    """
    K = problem.agent_count
    M = problem.dimension
    w_ref = _reference_point(problem, activation, config, w_ref)
    W = np.broadcast_to(_initial_state(config, w_ref, K, M), (draws, K, M)).copy()
    rng = derive_rng(config.seed, BATCH_STREAM)
    q = activation.probabilities
    rows = np.arange(K)
    means = np.empty((config.blocks, M))
    for i in range(config.blocks):
        active = activation.sample_batch(rng, draws)
        if config.mode == "drift-corrected":
            mu_vec = np.where(active, config.mu / q, 0.0)
        else:
            mu_vec = config.mu * active
        for _ in range(config.local_steps):
            grads = np.einsum("kab,dkb->dka", problem.hessians, W) - problem.linear_terms
            W = W - mu_vec[:, :, None] * grads
        both = active[:, :, None] & active[:, None, :]
        mixers = np.where(both, combination, 0.0)
        mixers[:, rows, rows] = 0.0
        mixers[:, rows, rows] = 1.0 - mixers.sum(axis=1)
        W = np.einsum("dlk,dlm->dkm", mixers, W)
        means[i] = W.mean(axis=(0, 1))
    return means


class SubsetActivation:
    """Uniformly random fixed-size subset of agents participates each block.

    Marginal participation probabilities are size/agents for every agent,
    which is what the drifted optimum and the theory inputs consume; the
    joint law differs from independent Bernoulli draws.
    """

    def __init__(self, agent_count, size):
        if not 1 <= size <= agent_count:
            raise ValueError("subset size must lie in [1, agent_count]")
        self.agent_count = agent_count
        self.size = size
        self.probabilities = np.full(agent_count, size / agent_count)

    def sample(self, rng):
        active = np.zeros(self.agent_count, dtype=bool)
        active[rng.choice(self.agent_count, size=self.size, replace=False)] = True
        return active

    def sample_batch(self, rng, draws):
        order = rng.random((draws, self.agent_count)).argsort(axis=1)
        return order < self.size


@dataclass
class PresetSpec:
    name: str
    combination: np.ndarray
    activation: object
    local_steps: int
    description: str = field(default="", repr=False)


def apply_preset(name, agent_count, combination=None, probabilities=None,
                 local_steps=None, subset_size=None):
    """Named special cases of the block recursion.

    general             any combination matrix, Bernoulli pattern, any local_steps
    fedavg-full         uniform averaging, everyone active, local_steps >= 1
    fedavg-partial      uniform averaging over a random subset_size-agent subset
    standard-diffusion  combination matrix, everyone active, one local step
    async-diffusion     combination matrix, Bernoulli pattern, one local step
    decentralized-fl    combination matrix, everyone active, local_steps >= 1
    """
    K = agent_count

    def need(value, label):
        if value is None:
            raise ValueError("preset %r requires %s" % (name, label))
        return value

    def bernoulli(q):
        return ActivationModel(np.asarray(q, dtype=float))

    always = ActivationModel(np.ones(K))
    if name == "general":
        return PresetSpec(name, np.asarray(need(combination, "combination"), dtype=float),
                          bernoulli(need(probabilities, "probabilities")),
                          need(local_steps, "local_steps"))
    if name == "fedavg-full":
        return PresetSpec(name, np.full((K, K), 1.0 / K), always,
                          need(local_steps, "local_steps"),
                          "server averaging of all agents after each local round")
    if name == "fedavg-partial":
        S = need(subset_size, "subset_size")
        return PresetSpec(name, np.full((K, K), 1.0 / S), SubsetActivation(K, S),
                          need(local_steps, "local_steps"),
                          "server averaging of a uniformly sampled agent subset")
    if name == "standard-diffusion":
        return PresetSpec(name, np.asarray(need(combination, "combination"), dtype=float),
                          always, 1, "adapt-then-combine with full participation")
    if name == "async-diffusion":
        return PresetSpec(name, np.asarray(need(combination, "combination"), dtype=float),
                          bernoulli(need(probabilities, "probabilities")), 1,
                          "adapt-then-combine with Bernoulli participation")
    if name == "decentralized-fl":
        return PresetSpec(name, np.asarray(need(combination, "combination"), dtype=float),
                          always, need(local_steps, "local_steps"),
                          "local rounds with neighborhood combination, full participation")
    raise ValueError("unknown preset %r" % (name,))
