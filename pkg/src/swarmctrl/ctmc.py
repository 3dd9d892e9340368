"""Finite-state transfer machinery: per-edge control matrices, strong
connectivity certificates, exact local and global simplex transfers with
piecewise-constant non-negative rates, and stationary-rate synthesis.

Vertices are labeled 1..N (matching the edge-list file format); matrices
and probability vectors are indexed 0-based.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from collections import deque
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import (
    CertificateError,
    GraphError,
    InfeasibleVariationError,
    InputError,
    InteriorityError,
    StepSizeError,
    SynthesisError,
)

__all__ = [
    "TransitionGraph",
    "PiecewiseConstantControl",
    "LocalStepCertificate",
    "MonotoneCertificate",
    "SpectrumReport",
    "build_rate_matrix",
    "edge_matrices",
    "generator",
    "strongly_connected_components",
    "is_strongly_connected",
    "monotone_certificate",
    "find_covering_closed_walk",
    "validate_covering_closed_walk",
    "local_step_control",
    "breakpoint_states",
    "propagate",
    "global_transfer_plan",
    "interior_entry_control",
    "transfer_control",
    "synthesize_stationary_rates",
    "spectrum_check",
    "validate_distribution",
    "is_interior",
    "read_edge_list",
    "control_to_csv",
]

Edge = tuple[int, int]


@dataclasses.dataclass(frozen=True)
class TransitionGraph:
    """Directed graph on vertices 1..n_vertices with no self-loops."""

    n_vertices: int
    edges: tuple[Edge, ...]

    def __post_init__(self):
        if self.n_vertices < 1:
            raise GraphError(f"need at least one vertex, got {self.n_vertices}")
        seen = set()
        for e in self.edges:
            i, j = e
            if not (1 <= i <= self.n_vertices and 1 <= j <= self.n_vertices):
                raise GraphError(f"edge {e} out of vertex range 1..{self.n_vertices}")
            if i == j:
                raise GraphError(f"self-loop {e} not allowed")
            if e in seen:
                raise GraphError(f"duplicate edge {e}")
            seen.add(e)
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @functools.cached_property
    def edge_index(self) -> dict[Edge, int]:
        return {e: k for k, e in enumerate(self.edges)}

    @functools.cached_property
    def successors(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {v: [] for v in range(1, self.n_vertices + 1)}
        for i, j in self.edges:
            out[i].append(j)
        return out

    @functools.cached_property
    def predecessors(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {v: [] for v in range(1, self.n_vertices + 1)}
        for i, j in self.edges:
            out[j].append(i)
        return out

    def is_bidirected(self) -> bool:
        edge_set = set(self.edges)
        return all((j, i) in edge_set for i, j in self.edges)


def build_rate_matrix(edge: Edge, n: int) -> np.ndarray:
    """Control matrix for one edge: -1 at (S,S), +1 at (T,S), zeros else."""
    i, j = edge
    if i == j:
        raise GraphError(f"self-loop {edge} not allowed")
    if not (1 <= i <= n and 1 <= j <= n):
        raise GraphError(f"edge {edge} out of vertex range 1..{n}")
    if n < 2:
        raise GraphError("need at least two vertices")
    q = np.zeros((n, n))
    q[i - 1, i - 1] = -1.0
    q[j - 1, i - 1] = 1.0
    return q


def edge_matrices(graph: TransitionGraph) -> list[np.ndarray]:
    return [build_rate_matrix(e, graph.n_vertices) for e in graph.edges]


def generator(graph: TransitionGraph, rates: Sequence[float]) -> np.ndarray:
    """Sum of per-edge matrices weighted by the given rates."""
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (graph.n_edges,):
        raise InputError(
            f"expected {graph.n_edges} rates, got shape {rates.shape}"
        )
    if np.any(rates < 0) or not np.all(np.isfinite(rates)):
        raise InputError("rates must be finite and non-negative")
    q = np.zeros((graph.n_vertices, graph.n_vertices))
    for rate, (i, j) in zip(rates, graph.edges):
        q[i - 1, i - 1] -= rate
        q[j - 1, i - 1] += rate
    return q


def validate_distribution(mu: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1:
        raise InputError("distribution must be a 1D vector")
    if np.any(mu < -tol):
        raise InputError(f"distribution has negative entries, min = {np.min(mu):.3e}")
    if abs(float(np.sum(mu)) - 1.0) > max(tol, 1e-12):
        raise InputError(f"distribution must sum to 1, got {np.sum(mu)!r}")
    return mu


def is_interior(mu: np.ndarray, tol: float = 0.0) -> bool:
    return bool(np.min(np.asarray(mu, dtype=float)) > tol)


# ---------------------------------------------------------------------------
# connectivity


def strongly_connected_components(graph: TransitionGraph) -> list[list[int]]:
    """Tarjan's algorithm, iterative to avoid recursion limits."""
    n = graph.n_vertices
    index = {}
    low = {}
    on_stack = set()
    stack: list[int] = []
    components: list[list[int]] = []
    counter = 0
    succ = graph.successors
    for root in range(1, n + 1):
        if root in index:
            continue
        work = [(root, iter(succ[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ[w])))
                    advanced = True
                    break
                elif w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                components.append(sorted(comp))
    return components


def is_strongly_connected(graph: TransitionGraph) -> bool:
    return len(strongly_connected_components(graph)) == 1


@dataclasses.dataclass(frozen=True)
class MonotoneCertificate:
    """Obstruction to controllability on a non-strongly-connected graph.

    ``sink_set`` is forward invariant (no edge leaves it) and
    ``source_set`` backward invariant (no edge enters it), so the output
    ``sum(mu over sink_set) - sum(mu over source_set)`` is nondecreasing
    along every trajectory with non-negative rates.
    """

    source_set: frozenset[int]
    sink_set: frozenset[int]

    def value(self, mu: np.ndarray) -> float:
        mu = np.asarray(mu, dtype=float)
        return float(
            sum(mu[v - 1] for v in self.sink_set)
            - sum(mu[v - 1] for v in self.source_set)
        )


def _reachable(graph: TransitionGraph, start: int, reverse: bool = False) -> set[int]:
    adj = graph.predecessors if reverse else graph.successors
    seen = {start}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return seen


def monotone_certificate(graph: TransitionGraph) -> MonotoneCertificate:
    """Produce the nondecreasing output functional for a non-SC graph."""
    comps = strongly_connected_components(graph)
    if len(comps) == 1:
        raise CertificateError("graph is strongly connected; no obstruction exists")
    # condensation is a DAG: order components topologically and pick a
    # vertex from the first (no path into it from the last) and the last
    comp_of = {}
    for ci, comp in enumerate(comps):
        for v in comp:
            comp_of[v] = ci
    indeg = [0] * len(comps)
    comp_succ: list[set[int]] = [set() for _ in comps]
    for i, j in graph.edges:
        a, b = comp_of[i], comp_of[j]
        if a != b and b not in comp_succ[a]:
            comp_succ[a].add(b)
            indeg[b] += 1
    order = []
    queue = deque(ci for ci in range(len(comps)) if indeg[ci] == 0)
    while queue:
        c = queue.popleft()
        order.append(c)
        for d in comp_succ[c]:
            indeg[d] -= 1
            if indeg[d] == 0:
                queue.append(d)
    v1 = comps[order[0]][0]   # no directed path from v2 can reach v1
    v2 = comps[order[-1]][0]
    source_set = _reachable(graph, v1, reverse=True)   # can reach v1
    sink_set = _reachable(graph, v2, reverse=False)    # reachable from v2
    assert not (source_set & sink_set)
    return MonotoneCertificate(frozenset(source_set), frozenset(sink_set))


def _shortest_path_edges(graph: TransitionGraph, start: int, goal: int) -> list[Edge]:
    """BFS directed path as an edge list; GraphError if none exists."""
    if start == goal:
        return []
    prev: dict[int, int] = {start: 0}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for w in graph.successors[v]:
            if w not in prev:
                prev[w] = v
                if w == goal:
                    queue.clear()
                    break
                queue.append(w)
    if goal not in prev:
        raise GraphError(f"no directed path from {start} to {goal}")
    path = []
    v = goal
    while v != start:
        path.append((prev[v], v))
        v = prev[v]
    return list(reversed(path))


def find_covering_closed_walk(graph: TransitionGraph, v0: int) -> list[Edge]:
    """Closed walk from v0 visiting every vertex; length at most N(N-1).

    Greedy construction: repeatedly stitch in a shortest path to the
    nearest unvisited vertex, then return to v0.
    """
    if not (1 <= v0 <= graph.n_vertices):
        raise GraphError(f"vertex {v0} out of range")
    if not is_strongly_connected(graph):
        raise GraphError("covering closed walk requires a strongly connected graph")
    if graph.n_vertices == 1:
        raise GraphError("single-vertex graph admits no closed walk without self-loops")
    walk: list[Edge] = []
    current = v0
    unvisited = set(range(1, graph.n_vertices + 1)) - {v0}
    while unvisited:
        # BFS tree from current; take the nearest unvisited vertex
        prev: dict[int, int] = {current: 0}
        queue = deque([current])
        found = None
        while queue and found is None:
            v = queue.popleft()
            for w in graph.successors[v]:
                if w not in prev:
                    prev[w] = v
                    if w in unvisited:
                        found = w
                        break
                    queue.append(w)
        if found is None:
            raise GraphError("graph is not strongly connected")
        path = []
        v = found
        while v != current:
            path.append((prev[v], v))
            v = prev[v]
        path.reverse()
        for e in path:
            walk.append(e)
            unvisited.discard(e[1])
        current = found
    walk.extend(_shortest_path_edges(graph, current, v0))
    validate_covering_closed_walk(graph, v0, walk)
    return walk


def validate_covering_closed_walk(
    graph: TransitionGraph, v0: int, walk: Sequence[Edge]
) -> None:
    if not walk:
        raise GraphError("walk is empty")
    edge_set = set(graph.edges)
    for e in walk:
        if e not in edge_set:
            raise GraphError(f"walk uses edge {e} not in the graph")
    if walk[0][0] != v0 or walk[-1][1] != v0:
        raise GraphError(f"walk must start and end at {v0}")
    for a, b in zip(walk, walk[1:]):
        if a[1] != b[0]:
            raise GraphError(f"walk breaks between {a} and {b}")
    visited = {v0} | {e[1] for e in walk}
    if visited != set(range(1, graph.n_vertices + 1)):
        raise GraphError(f"walk misses vertices {set(range(1, graph.n_vertices + 1)) - visited}")
    bound = graph.n_vertices * (graph.n_vertices - 1)
    if len(walk) > bound:
        raise GraphError(f"walk length {len(walk)} exceeds bound {bound}")


# ---------------------------------------------------------------------------
# piecewise-constant controls


@dataclasses.dataclass(eq=False)
class PiecewiseConstantControl:
    """Per-edge rates, constant on each interval between breakpoints."""

    graph: TransitionGraph
    breakpoints: np.ndarray  # shape (K+1,), increasing, starts at 0
    rates: np.ndarray        # shape (K, n_edges), non-negative

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float).reshape(
            -1, self.graph.n_edges
        )
        if self.breakpoints.ndim != 1 or self.breakpoints.size != self.rates.shape[0] + 1:
            raise InputError("breakpoints must have one more entry than rate rows")
        if np.any(np.diff(self.breakpoints) <= 0) and self.rates.shape[0] > 0:
            raise InputError("breakpoints must be strictly increasing")
        if np.any(self.rates < 0) or not np.all(np.isfinite(self.rates)):
            raise InputError("rates must be finite and non-negative")

    @property
    def n_intervals(self) -> int:
        return self.rates.shape[0]

    @property
    def total_duration(self) -> float:
        return float(self.breakpoints[-1] - self.breakpoints[0])

    @classmethod
    def empty(cls, graph: TransitionGraph) -> "PiecewiseConstantControl":
        return cls(graph, np.zeros(1), np.zeros((0, graph.n_edges)))

    @classmethod
    def concatenate(
        cls, pieces: Sequence["PiecewiseConstantControl"]
    ) -> "PiecewiseConstantControl":
        pieces = [p for p in pieces if p.n_intervals > 0]
        if not pieces:
            raise InputError("nothing to concatenate")
        graph = pieces[0].graph
        bps = [np.zeros(1)]
        rates = []
        offset = 0.0
        for p in pieces:
            if p.graph is not graph and p.graph != graph:
                raise InputError("controls live on different graphs")
            bps.append(offset + (p.breakpoints[1:] - p.breakpoints[0]))
            rates.append(p.rates)
            offset += p.total_duration
        return cls(graph, np.concatenate(bps), np.vstack(rates))

    def max_rate(self) -> float:
        return float(np.max(self.rates)) if self.rates.size else 0.0


def propagate(mu0: np.ndarray, control: PiecewiseConstantControl) -> np.ndarray:
    """States at every breakpoint: left-ordered product of interval
    matrix exponentials applied to mu0."""
    mu0 = validate_distribution(mu0)
    if mu0.size != control.graph.n_vertices:
        raise InputError("distribution size does not match the graph")
    states = [mu0.copy()]
    mu = mu0.copy()
    for k in range(control.n_intervals):
        dt = control.breakpoints[k + 1] - control.breakpoints[k]
        q = generator(control.graph, control.rates[k])
        mu = scipy.linalg.expm(dt * q) @ mu
        states.append(mu.copy())
    return np.asarray(states)


@dataclasses.dataclass(eq=False)
class LocalStepCertificate:
    """Bookkeeping behind one exact local transfer along a covering walk.

    ``acc[i]`` accumulates the gated per-vertex increments through
    interval i; the residual carried mass on interval i is
    ``rho - acc[i]``.  ``gate[i-1]`` is 1 exactly when edge i is the last
    of the walk leaving its source vertex.
    """

    walk: tuple[Edge, ...]
    gate: np.ndarray    # shape (s,), 0/1
    acc: np.ndarray     # shape (s+1,), acc[0] = 0
    rho: float
    delta_mu: np.ndarray
    dt: float
    base: np.ndarray    # mu0 with rho removed at the walk's start vertex


def local_step_control(
    graph: TransitionGraph,
    mu0: np.ndarray,
    delta_mu: np.ndarray,
    duration: float,
    walk: Sequence[Edge] | None = None,
    start_vertex: int = 1,
    rho: float | None = None,
) -> tuple[PiecewiseConstantControl, LocalStepCertificate]:
    """Steer mu0 to mu0 + delta_mu exactly in the given duration.

    One edge of the covering closed walk is active per interval: a probe
    mass rho circulates from the start vertex around the walk and back,
    and the requested increment of each vertex is deposited on the last
    interval leaving it.  Rates are finite and non-negative whenever
    min(mu0) > 2*rho and |delta_mu|_1 <= rho.
    """
    mu0 = validate_distribution(mu0)
    n = graph.n_vertices
    if mu0.size != n:
        raise InputError("distribution size does not match the graph")
    delta_mu = np.asarray(delta_mu, dtype=float)
    if delta_mu.shape != (n,):
        raise InputError(f"increment must have shape ({n},)")
    if abs(float(np.sum(delta_mu))) > 1e-12:
        raise InputError(f"increment must sum to zero, got {np.sum(delta_mu)!r}")
    if duration <= 0:
        raise InputError(f"duration must be positive, got {duration}")
    if not is_interior(mu0):
        raise InteriorityError(f"need an interior point, min coordinate {np.min(mu0)!r}")
    if rho is None:
        rho = 0.5 * float(np.min(mu0)) - 1e-9
    if rho <= 0 or float(np.min(mu0)) < 2 * rho - 1e-12:
        raise InteriorityError(
            f"carried mass {rho!r} infeasible for min coordinate {np.min(mu0)!r}"
        )
    if float(np.sum(np.abs(delta_mu))) > rho * (1 + 1e-12):
        raise StepSizeError(
            f"increment 1-norm {np.sum(np.abs(delta_mu)):.3e} exceeds carried mass {rho:.3e}"
        )
    if walk is None:
        walk = find_covering_closed_walk(graph, start_vertex)
    else:
        walk = list(walk)
        validate_covering_closed_walk(graph, walk[0][0], walk)
    v0 = walk[0][0]
    s = len(walk)
    dt = duration / s

    last_exit: dict[int, int] = {}
    for idx, (src, _) in enumerate(walk, start=1):
        last_exit[src] = idx
    gate = np.array(
        [1.0 if last_exit[src] == idx else 0.0 for idx, (src, _) in enumerate(walk, start=1)]
    )
    acc = np.zeros(s + 1)
    for idx, (src, _) in enumerate(walk, start=1):
        acc[idx] = acc[idx - 1] + gate[idx - 1] * delta_mu[src - 1]

    base = mu0.copy()
    base[v0 - 1] -= rho

    rates = np.zeros((s, graph.n_edges))
    for idx, edge in enumerate(walk, start=1):
        src = edge[0]
        denom = base[src - 1] + rho - acc[idx - 1]
        if denom <= 0:
            raise InfeasibleVariationError(
                f"interval {idx}: non-positive state {denom!r} at vertex {src}"
            )
        arg = 1.0 - (rho - acc[idx]) / denom
        if arg <= 0:
            raise InfeasibleVariationError(
                f"interval {idx}: logarithm argument {arg!r} not positive"
            )
        u = -math.log(arg) / dt
        if u < 0:
            if u < -1e-12:
                raise InfeasibleVariationError(
                    f"interval {idx}: negative rate {u!r}"
                )
            u = 0.0
        rates[idx - 1, graph.edge_index[edge]] = u

    control = PiecewiseConstantControl(
        graph, np.linspace(0.0, duration, s + 1), rates
    )
    cert = LocalStepCertificate(
        walk=tuple(walk),
        gate=gate,
        acc=acc,
        rho=rho,
        delta_mu=delta_mu.copy(),
        dt=dt,
        base=base,
    )
    return control, cert


def breakpoint_states(mu0: np.ndarray, cert: LocalStepCertificate) -> np.ndarray:
    """Closed-form state at every interval breakpoint of a local step.

    At breakpoint i the walk's carried mass sits on the head vertex and
    every vertex whose last exit has passed holds its final value:
    value(v, i) = base_v + delta_v*[last_exit(v) <= i] + (rho - acc_i)*[v = head_i].
    """
    mu0 = np.asarray(mu0, dtype=float)
    walk = cert.walk
    s = len(walk)
    n = mu0.size
    last_exit: dict[int, int] = {}
    for idx, (src, _) in enumerate(walk, start=1):
        last_exit[src] = idx
    states = np.empty((s + 1, n))
    for i in range(s + 1):
        head = walk[0][0] if i == 0 else walk[i - 1][1]
        vals = cert.base.copy()
        for v in range(1, n + 1):
            if last_exit.get(v, s + 1) <= i:
                vals[v - 1] += cert.delta_mu[v - 1]
        vals[head - 1] += cert.rho - cert.acc[i]
        states[i] = vals
    return states


def global_transfer_plan(
    graph: TransitionGraph,
    mu0: np.ndarray,
    mu_target: np.ndarray,
    duration: float,
) -> PiecewiseConstantControl:
    """Concatenated local steps along the straight segment mu0 -> target.

    The carried mass is half the smallest coordinate of either endpoint;
    the segment count ceil(|target - mu0|_1 / rho) keeps every waypoint
    increment feasible.
    """
    mu0 = validate_distribution(mu0)
    mu_target = validate_distribution(mu_target)
    if not is_strongly_connected(graph):
        raise GraphError(
            "global transfer requires a strongly connected graph",
            certificate=monotone_certificate(graph),
        )
    if duration <= 0:
        raise InputError(f"duration must be positive, got {duration}")
    if not (is_interior(mu0) and is_interior(mu_target)):
        raise InteriorityError(
            "both endpoints must be interior simplex points; "
            "precondition boundary states with interior_entry_control"
        )
    rho = 0.5 * float(min(np.min(mu0), np.min(mu_target)))
    if rho <= 0:
        raise InteriorityError("endpoints too close to the boundary")
    l1 = float(np.sum(np.abs(mu_target - mu0)))
    if l1 == 0.0:
        return PiecewiseConstantControl.empty(graph)
    n_segments = int(math.ceil(l1 / rho))
    walk = find_covering_closed_walk(graph, 1)
    step = (mu_target - mu0) / n_segments
    # every waypoint on the segment has min coordinate >= 2*rho and the
    # per-segment increment has 1-norm l1/n_segments <= rho, so each local
    # step is feasible with the shared carried mass
    pieces = []
    for k in range(n_segments):
        waypoint = mu0 + k * step
        ctrl, _ = local_step_control(
            graph, waypoint, step, duration / n_segments, walk=walk, rho=rho
        )
        pieces.append(ctrl)
    return PiecewiseConstantControl.concatenate(pieces)


def interior_entry_control(
    graph: TransitionGraph,
    mu0: np.ndarray,
    max_duration: float,
    floor: float = 1e-6,
) -> PiecewiseConstantControl:
    """Short uniform-rate stage driving a boundary state into the interior.

    Strong connectivity makes every coordinate positive under uniform
    rates; the duration is grown geometrically until min(mu) >= floor.
    """
    mu0 = validate_distribution(mu0)
    if not is_strongly_connected(graph):
        raise GraphError("interior entry requires a strongly connected graph")
    q = generator(graph, np.ones(graph.n_edges))
    duration = max_duration / 64.0
    while duration <= max_duration * (1 + 1e-12):
        mu = scipy.linalg.expm(duration * q) @ mu0
        if float(np.min(mu)) >= floor:
            return PiecewiseConstantControl(
                graph, np.array([0.0, duration]), np.ones((1, graph.n_edges))
            )
        duration *= 2.0
    raise SynthesisError(
        f"could not reach min coordinate {floor} within {max_duration} time units"
    )


def transfer_control(
    graph: TransitionGraph,
    mu0: np.ndarray,
    mu_target: np.ndarray,
    duration: float,
    floor: float = 1e-6,
) -> PiecewiseConstantControl:
    """Global transfer with automatic preconditioning of boundary starts."""
    mu0 = validate_distribution(mu0)
    mu_target = validate_distribution(mu_target)
    if not is_interior(mu_target, tol=0.0):
        raise InteriorityError("target must be an interior simplex point")
    if is_interior(mu0, tol=floor / 2):
        return global_transfer_plan(graph, mu0, mu_target, duration)
    entry = interior_entry_control(graph, mu0, max_duration=0.5 * duration, floor=floor)
    mu_entry = propagate(mu0, entry)[-1]
    remaining = duration - entry.total_duration
    rest = global_transfer_plan(graph, mu_entry, mu_target, remaining)
    if rest.n_intervals == 0:
        return entry
    return PiecewiseConstantControl.concatenate([entry, rest])


# ---------------------------------------------------------------------------
# stationary rates and spectra


def _positive_circulation(graph: TransitionGraph) -> np.ndarray:
    """Strictly positive edge weights with zero divergence at each vertex.

    Every edge of a strongly connected graph lies on a directed cycle;
    summing one unit of flow around a cycle through each edge gives a
    positive integer circulation.
    """
    flow = np.zeros(graph.n_edges)
    for k, (i, j) in enumerate(graph.edges):
        path = _shortest_path_edges(graph, j, i)
        flow[k] += 1.0
        for e in path:
            flow[graph.edge_index[e]] += 1.0
    return flow


def synthesize_stationary_rates(
    graph: TransitionGraph,
    mu_eq: np.ndarray,
    min_rate: float = 1e-3,
) -> np.ndarray:
    """Positive rates whose generator has mu_eq as a stationary state.

    Bidirected graphs get detailed-balance rates q_e = mu[T(e)]/min(mu);
    otherwise the minimum-norm-to-1 solution of the stationarity
    constraint is blended with a strictly positive circulation until
    every rate clears ``min_rate``.  The returned rates satisfy
    |generator(q) @ mu_eq|_inf <= 1e-12 and make 0 a simple dominant
    eigenvalue.
    """
    mu_eq = validate_distribution(mu_eq)
    if mu_eq.size != graph.n_vertices:
        raise InputError("distribution size does not match the graph")
    if not is_interior(mu_eq):
        raise InteriorityError("stationary synthesis needs an interior target")
    if not is_strongly_connected(graph):
        raise GraphError(
            "stationary synthesis requires a strongly connected graph",
            certificate=monotone_certificate(graph),
        )

    if graph.is_bidirected():
        scale = float(np.min(mu_eq))
        rates = np.array([mu_eq[j - 1] / scale for (_, j) in graph.edges])
    else:
        # constraint matrix: column e is mu_S(e) * (e_T - e_S)
        n, m = graph.n_vertices, graph.n_edges
        a = np.zeros((n, m))
        for k, (i, j) in enumerate(graph.edges):
            a[i - 1, k] -= mu_eq[i - 1]
            a[j - 1, k] += mu_eq[i - 1]
        ones = np.ones(m)
        # min ||q - 1|| subject to a q = 0: project 1 onto the nullspace
        z, *_ = np.linalg.lstsq(a @ a.T, a @ ones, rcond=None)
        rates = ones - a.T @ z
        if float(np.min(rates)) < min_rate:
            circ = _positive_circulation(graph) / mu_eq[
                np.array([i - 1 for (i, _) in graph.edges])
            ]
            circ *= (1.0 + float(np.max(np.abs(rates)))) / float(np.min(circ))
            # affine blend stays inside the stationarity constraint space;
            # the small margin absorbs the final rounding
            lift = min_rate * (1.0 + 1e-9)
            theta = 0.0
            for qe, ce in zip(rates, circ):
                if qe < lift:
                    theta = max(theta, (lift - qe) / (ce - qe))
            rates = (1.0 - theta) * rates + theta * circ

    residual = float(np.max(np.abs(generator(graph, rates) @ mu_eq)))
    if residual > 1e-12:
        raise SynthesisError(
            f"stationarity residual {residual:.3e} above tolerance", residual=residual
        )
    report = spectrum_check(graph, rates)
    if report.max_real_part > 1e-10 or report.gap <= 0:
        raise SynthesisError(
            f"synthesized rates fail the spectral check (max Re = {report.max_real_part:.3e})",
            residual=residual,
        )
    return rates


@dataclasses.dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    max_real_part: float
    gap: float  # negated second-largest real part


def spectrum_check(graph: TransitionGraph, rates: Sequence[float]) -> SpectrumReport:
    """Eigenvalues of the rate-weighted generator; all real parts <= 0."""
    q = generator(graph, rates)
    vals = np.linalg.eigvals(q)
    reals = np.sort(vals.real)[::-1]
    gap = float(-reals[1]) if reals.size > 1 else 0.0
    return SpectrumReport(
        eigenvalues=vals, max_real_part=float(reals[0]), gap=gap
    )


# ---------------------------------------------------------------------------
# text interfaces


def read_edge_list(source) -> TransitionGraph:
    """Graph from 'i j' pairs, one per line, 1-based; '#' starts a comment."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", encoding="utf-8") as handle:
            text = handle.read()
    edges = []
    max_vertex = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"line {lineno}: expected 'i j', got {line!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise GraphError(f"line {lineno}: non-integer vertex in {line!r}") from exc
        edges.append((i, j))
        max_vertex = max(max_vertex, i, j)
    if not edges:
        raise GraphError("edge list is empty")
    return TransitionGraph(max_vertex, tuple(edges))


def control_to_csv(control: PiecewiseConstantControl, handle) -> None:
    """Rows (t_start, t_end, edge, rate); full round-trip float precision."""
    own = False
    if not hasattr(handle, "write"):
        handle = open(handle, "w", encoding="utf-8")
        own = True
    try:
        handle.write("t_start,t_end,edge,rate\n")
        for k in range(control.n_intervals):
            t0 = control.breakpoints[k]
            t1 = control.breakpoints[k + 1]
            for e_idx, (i, j) in enumerate(control.graph.edges):
                handle.write(f"{t0!r},{t1!r},{i}->{j},{control.rates[k, e_idx]!r}\n")
    finally:
        if own:
            handle.close()
