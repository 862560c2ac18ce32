"""Network topologies and static doubly-stochastic combination matrices."""

import numpy as np

STOCHASTIC_TOL = 1e-12
PERRON_TOL = 1e-10


class TopologyError(ValueError):
    pass


class PerronConvergenceError(RuntimeError):
    """Raised when the eigenvector iteration does not settle within budget."""

    def __init__(self, residual, iterations):
        super().__init__(
            "Perron iteration did not converge: residual %.3e after %d iterations"
            % (residual, iterations)
        )
        self.residual = residual
        self.iterations = iterations


class Topology:
    """Undirected connected graph over K agents.

    The adjacency relation always includes the self-loop: every agent is a
    member of its own neighborhood. The constructor enforces symmetry and
    connectivity and forces the diagonal to true.
    """

    def __init__(self, adjacency):
        adj = np.array(adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise TopologyError("adjacency must be a square matrix, got shape %s" % (adj.shape,))
        if not np.array_equal(adj, adj.T):
            raise TopologyError("adjacency must be symmetric")
        np.fill_diagonal(adj, True)
        self.adjacency = adj
        unreachable = _first_unreachable_pair(adj)
        if unreachable is not None:
            raise TopologyError(
                "graph is disconnected: no path between agents %d and %d" % unreachable
            )

    @property
    def agent_count(self):
        return self.adjacency.shape[0]

    @property
    def degrees(self):
        """Neighbor counts excluding the self-loop."""
        return self.adjacency.sum(axis=0) - 1

    def __eq__(self, other):
        return isinstance(other, Topology) and np.array_equal(self.adjacency, other.adjacency)


def _first_unreachable_pair(adj):
    # Reachability by boolean power doubling; K-1 hops suffice, doubling overshoots.
    k = adj.shape[0]
    reach = adj.copy()
    hops = 1
    while hops < k - 1:
        reach = reach | (reach @ reach)
        hops *= 2
    if reach.all():
        return None
    i, j = np.argwhere(~reach)[0]
    return int(i), int(j)


def ring(agent_count):
    """Cycle over agent_count agents (a single edge for agent_count == 2)."""
    if agent_count < 1:
        raise TopologyError("agent_count must be positive")
    adj = np.eye(agent_count, dtype=bool)
    for k in range(agent_count):
        adj[k, (k + 1) % agent_count] = True
        adj[(k + 1) % agent_count, k] = True
    return Topology(adj)


def path(agent_count):
    if agent_count < 1:
        raise TopologyError("agent_count must be positive")
    adj = np.eye(agent_count, dtype=bool)
    for k in range(agent_count - 1):
        adj[k, k + 1] = True
        adj[k + 1, k] = True
    return Topology(adj)


def complete(agent_count):
    if agent_count < 1:
        raise TopologyError("agent_count must be positive")
    return Topology(np.ones((agent_count, agent_count), dtype=bool))


def from_edges(agent_count, edges):
    """Topology from an explicit undirected edge list (self-loops implied)."""
    adj = np.eye(agent_count, dtype=bool)
    for a, b in edges:
        if not (0 <= a < agent_count and 0 <= b < agent_count):
            raise TopologyError("edge (%s, %s) out of range for %d agents" % (a, b, agent_count))
        adj[a, b] = True
        adj[b, a] = True
    return Topology(adj)


def random_geometric(agent_count, radius, rng, max_tries=50):
    """Random geometric graph on the unit square, retried until connected.

    Draws agent positions uniformly and connects pairs closer than `radius`.
    If the draw is disconnected it is retried, growing the radius by 25% every
    `max_tries` attempts, so the call always terminates with a connected graph
    (in the worst case the radius covers the whole square).
    """
    if agent_count < 1:
        raise TopologyError("agent_count must be positive")
    r = float(radius)
    if r <= 0:
        raise TopologyError("radius must be positive")
    while True:
        for _ in range(max_tries):
            points = rng.random((agent_count, 2))
            delta = points[:, None, :] - points[None, :, :]
            close = (delta ** 2).sum(axis=2) <= r * r
            np.fill_diagonal(close, True)
            if _first_unreachable_pair(close) is None:
                return Topology(close)
        r *= 1.25


def build_metropolis(topology):
    """Metropolis weights on the topology: symmetric and doubly stochastic.

    Off-diagonal neighbor weights are 1/(1 + max(deg_l, deg_k)) with degrees
    excluding the self-loop; the diagonal absorbs whatever is left so every
    column sums to one.
    """
    adj = topology.adjacency
    deg = topology.degrees
    off = np.where(adj & ~np.eye(adj.shape[0], dtype=bool),
                   1.0 / (1.0 + np.maximum.outer(deg, deg)), 0.0)
    weights = off
    weights[np.diag_indices_from(weights)] = 1.0 - off.sum(axis=0)
    return weights


def is_primitive(weights):
    """True when some power of the support pattern is strictly positive.

    Boolean powers are doubled until the exponent passes K^2, which is beyond
    the Wielandt bound (K-1)^2 + 1, so the test is exact.
    """
    support = weights > 0
    k = support.shape[0]
    power = support.copy()
    exponent = 1
    while True:
        if power.all():
            return True
        if exponent >= k * k:
            return False
        power = power @ power
        exponent *= 2


def perron_vector(weights, tol=1e-13, max_iterations=10_000):
    """Normalized left eigenvector of `weights` for eigenvalue 1.

    Plain power iteration on the transpose; for any doubly-stochastic matrix
    the result is the uniform vector. Raises PerronConvergenceError with the
    final residual when the iteration budget runs out.
    """
    w = np.asarray(weights, dtype=float)
    k = w.shape[0]
    p = np.full(k, 1.0 / k)
    residual = np.inf
    for _ in range(max_iterations):
        nxt = w.T @ p
        nxt = nxt / nxt.sum()
        residual = np.abs(nxt - p).max()
        p = nxt
        if residual <= tol:
            return p
    raise PerronConvergenceError(residual, max_iterations)


class ValidationReport:
    """Pass/fail per invariant with the worst violation magnitude for each."""

    def __init__(self, checks):
        self.checks = checks  # name -> (passed, violation)

    @property
    def ok(self):
        return all(passed for passed, _ in self.checks.values())

    def violation(self, name):
        return self.checks[name][1]

    def failed(self):
        return [name for name, (passed, _) in self.checks.items() if not passed]

    def __repr__(self):
        parts = ", ".join(
            "%s=%s(%.2e)" % (name, "ok" if passed else "FAIL", violation)
            for name, (passed, violation) in self.checks.items()
        )
        return "ValidationReport(%s)" % parts


def validate_combination(weights, topology):
    """Check a combination matrix against all of its invariants.

    Stochasticity checks use absolute tolerance 1e-12; the construction is
    exact up to rounding, so anything looser would mask bugs.
    """
    w = np.asarray(weights, dtype=float)
    adj = topology.adjacency
    if w.shape != adj.shape:
        raise TopologyError("weights shape %s does not match topology %s" % (w.shape, adj.shape))
    checks = {}
    sym = np.abs(w - w.T).max() if w.size else 0.0
    checks["symmetric"] = (sym <= STOCHASTIC_TOL, float(sym))
    neg = max(0.0, float((-w).max())) if w.size else 0.0
    checks["nonnegative"] = (neg <= 0.0, neg)
    col = np.abs(w.sum(axis=0) - 1.0).max()
    checks["column_sums"] = (col <= STOCHASTIC_TOL, float(col))
    row = np.abs(w.sum(axis=1) - 1.0).max()
    checks["row_sums"] = (row <= STOCHASTIC_TOL, float(row))
    outside = float(np.abs(np.where(adj, 0.0, w)).max())
    checks["support_within_adjacency"] = (outside == 0.0, outside)
    primitive = is_primitive(w)
    checks["primitive"] = (primitive, 0.0 if primitive else 1.0)
    return ValidationReport(checks)
