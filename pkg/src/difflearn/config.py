"""Run configuration: a single JSON document with one section per concern.

Parsing is fail-closed: any key the schema does not know is an error naming
the offending path, because a silently ignored typo in an experiment config
is worse than a crash. parse(serialize(config)) is the identity.
"""

import json
from dataclasses import asdict, dataclass, field

from . import topology as topo
from .activation import ActivationModel
from .engine import SimulationConfig, SubsetActivation
from .problems import generate_synthetic
from .streams import PROBLEM_STREAM, derive_rng

TOPOLOGY_KINDS = ("ring", "path", "complete", "random-geometric", "edges")
ACTIVATION_KINDS = ("bernoulli", "uniform-random", "subset")
SWEEP_AXES = ("mu", "local-steps", "activation")


class ConfigError(ValueError):
    pass


def _take(data, path, allowed):
    if not isinstance(data, dict):
        raise ConfigError("%s must be an object" % path)
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError("unknown key %r under %s (allowed: %s)"
                          % (unknown[0], path, ", ".join(sorted(allowed))))
    return data


@dataclass
class TopologySpec:
    kind: str = "random-geometric"
    agents: int = 8
    radius: float = 0.7
    edges: list = None

    def validate(self, path):
        if self.kind not in TOPOLOGY_KINDS:
            raise ConfigError("%s.kind must be one of %s" % (path, ", ".join(TOPOLOGY_KINDS)))
        if not isinstance(self.agents, int) or self.agents < 1:
            raise ConfigError("%s.agents must be a positive integer" % path)
        if self.kind == "random-geometric" and not self.radius > 0:
            raise ConfigError("%s.radius must be positive" % path)
        if self.kind == "edges":
            if not self.edges:
                raise ConfigError("%s.edges must be a nonempty list of [a, b] pairs" % path)
            for e in self.edges:
                if not (isinstance(e, (list, tuple)) and len(e) == 2):
                    raise ConfigError("%s.edges entries must be [a, b] pairs" % path)


@dataclass
class ActivationSpec:
    kind: str = "bernoulli"
    q: object = 1.0          # scalar or per-agent list (bernoulli)
    low: float = 0.2         # uniform-random draw range
    high: float = 0.9
    size: int = 1            # subset cardinality

    def validate(self, path):
        if self.kind not in ACTIVATION_KINDS:
            raise ConfigError("%s.kind must be one of %s" % (path, ", ".join(ACTIVATION_KINDS)))
        if self.kind == "bernoulli":
            values = self.q if isinstance(self.q, list) else [self.q]
            if not all(isinstance(v, (int, float)) and 0 <= v <= 1 for v in values):
                raise ConfigError("%s.q entries must lie in [0, 1]" % path)
        if self.kind == "uniform-random" and not 0 < self.low <= self.high <= 1:
            raise ConfigError("%s needs 0 < low <= high <= 1" % path)
        if self.kind == "subset" and (not isinstance(self.size, int) or self.size < 1):
            raise ConfigError("%s.size must be a positive integer" % path)


@dataclass
class ProblemSpec:
    dimension: int = 2
    samples: int = 100
    rho: float = 0.1
    mean_range: list = field(default_factory=lambda: [-1.0, 1.0])
    noise_variance_range: list = field(default_factory=lambda: [0.05, 0.5])

    def validate(self, path):
        if not isinstance(self.dimension, int) or self.dimension < 1:
            raise ConfigError("%s.dimension must be a positive integer" % path)
        if not isinstance(self.samples, int) or self.samples < 1:
            raise ConfigError("%s.samples must be a positive integer" % path)
        if self.rho < 0:
            raise ConfigError("%s.rho must be nonnegative" % path)
        for name in ("mean_range", "noise_variance_range"):
            pair = getattr(self, name)
            if not (isinstance(pair, list) and len(pair) == 2 and pair[0] <= pair[1]):
                raise ConfigError("%s.%s must be [low, high] with low <= high" % (path, name))
        if self.noise_variance_range[0] < 0:
            raise ConfigError("%s.noise_variance_range must be nonnegative" % path)


@dataclass
class SimulationSpec:
    mu: float = 0.01
    blocks: int = 2000
    local_steps: int = 5
    repetitions: int = 5
    mode: str = "plain"
    init: str = "zeros"
    window_fraction: float = 0.2

    def validate(self, path):
        if not self.mu > 0:
            raise ConfigError("%s.mu must be positive" % path)
        for name in ("blocks", "local_steps", "repetitions"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigError("%s.%s must be a positive integer" % (path, name))
        if self.mode not in ("plain", "drift-corrected"):
            raise ConfigError("%s.mode must be 'plain' or 'drift-corrected'" % path)
        if self.init not in ("zeros", "w_ref"):
            raise ConfigError("%s.init must be 'zeros' or 'w_ref'" % path)
        if not 0 < self.window_fraction <= 1:
            raise ConfigError("%s.window_fraction must lie in (0, 1]" % path)


@dataclass
class TheorySpec:
    mode: str = "auto"
    samples: int = 200_000
    exact_budget: int = 12

    def validate(self, path):
        if self.mode not in ("auto", "exact", "mc"):
            raise ConfigError("%s.mode must be 'auto', 'exact' or 'mc'" % path)
        if not isinstance(self.samples, int) or self.samples < 1:
            raise ConfigError("%s.samples must be a positive integer" % path)
        if not isinstance(self.exact_budget, int) or self.exact_budget < 0:
            raise ConfigError("%s.exact_budget must be a nonnegative integer" % path)


@dataclass
class SweepSpec:
    axis: str = "mu"
    values: list = field(default_factory=list)

    def validate(self, path):
        if self.axis not in SWEEP_AXES:
            raise ConfigError("%s.axis must be one of %s" % (path, ", ".join(SWEEP_AXES)))
        if not self.values:
            raise ConfigError("%s.values must be a nonempty list" % path)


@dataclass
class RunConfig:
    seed: int = 0
    topology: TopologySpec = field(default_factory=TopologySpec)
    activation: ActivationSpec = field(default_factory=ActivationSpec)
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    simulation: SimulationSpec = field(default_factory=SimulationSpec)
    theory: TheorySpec = field(default_factory=TheorySpec)
    sweep: SweepSpec = None

    def validate(self):
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        self.topology.validate("topology")
        self.activation.validate("activation")
        self.problem.validate("problem")
        self.simulation.validate("simulation")
        self.theory.validate("theory")
        if self.sweep is not None:
            self.sweep.validate("sweep")
        return self


_SECTIONS = {
    "topology": TopologySpec,
    "activation": ActivationSpec,
    "problem": ProblemSpec,
    "simulation": SimulationSpec,
    "theory": TheorySpec,
    "sweep": SweepSpec,
}


def from_dict(data):
    top = _take(data, "configuration", ["seed"] + list(_SECTIONS))
    kwargs = {"seed": top.get("seed", 0)}
    for name, cls in _SECTIONS.items():
        if name not in top:
            continue
        section = _take(top[name], name, [f for f in cls.__dataclass_fields__])
        kwargs[name] = cls(**section)
    return RunConfig(**kwargs).validate()


def to_dict(config):
    out = {"seed": config.seed}
    for name in _SECTIONS:
        value = getattr(config, name)
        if value is not None:
            out[name] = asdict(value)
    return out


def loads(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError("configuration is not valid JSON: %s" % err)
    return from_dict(data)


def dumps(config):
    return json.dumps(to_dict(config), indent=2, sort_keys=True)


def load_file(path):
    try:
        with open(path) as handle:
            text = handle.read()
    except OSError as err:
        raise ConfigError("cannot read configuration %s: %s" % (path, err))
    return loads(text)


def build_topology(config):
    """Topology object from the spec; random draws derive from the master seed."""
    spec = config.topology
    if spec.kind == "ring":
        return topo.ring(spec.agents)
    if spec.kind == "path":
        return topo.path(spec.agents)
    if spec.kind == "complete":
        return topo.complete(spec.agents)
    if spec.kind == "edges":
        return topo.from_edges(spec.agents, spec.edges)
    return topo.random_geometric(spec.agents, spec.radius,
                                 derive_rng(config.seed, PROBLEM_STREAM, 0))


def build_activation(config, agent_count):
    spec = config.activation
    if spec.kind == "bernoulli":
        if isinstance(spec.q, list):
            if len(spec.q) != agent_count:
                raise ConfigError("activation.q has %d entries for %d agents"
                                  % (len(spec.q), agent_count))
            return ActivationModel(spec.q)
        return ActivationModel.uniform(agent_count, spec.q)
    if spec.kind == "uniform-random":
        rng = derive_rng(config.seed, PROBLEM_STREAM, 2)
        return ActivationModel(rng.uniform(spec.low, spec.high, size=agent_count))
    if spec.size > agent_count:
        raise ConfigError("activation.size %d exceeds %d agents" % (spec.size, agent_count))
    return SubsetActivation(agent_count, spec.size)


def build_problem(config, agent_count):
    spec = config.problem
    return generate_synthetic(
        agent_count, spec.dimension, spec.samples, spec.rho,
        derive_rng(config.seed, PROBLEM_STREAM, 1),
        mean_range=tuple(spec.mean_range),
        noise_variance_range=tuple(spec.noise_variance_range))


def build_simulation(config):
    spec = config.simulation
    return SimulationConfig(mu=spec.mu, blocks=spec.blocks, local_steps=spec.local_steps,
                            repetitions=spec.repetitions, seed=config.seed, mode=spec.mode,
                            init=spec.init)
