"""Feedforward DAGs over token positions and their walk/diffusion matrices.

Vertices are indexed 1..n and every edge (j -> i) moves forward (j <= i);
vertex n is the unique sink. Walk matrices are column-stochastic and push
probability mass toward the sink; diffusion matrices are row-stochastic and
average incoming signal at each receiver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .numerics import assert_finite, require

WALK = "walk"
DIFFUSION = "diffusion"


@dataclass(frozen=True)
class FeedforwardGraph:
    """Explicit DAG on ordered vertices 1..n with unique sink n.

    The sink always carries a self-loop; interior self-loops are usual but
    optional so that pure-chain walk fixtures stay constructible. Diffusion
    matrices additionally need positive in-degree everywhere, which only
    full self-loop coverage guarantees.
    """

    n: int
    edges: frozenset

    def __post_init__(self):
        require(self.n >= 1, "graph needs at least one vertex")
        for j, i in self.edges:
            require(1 <= j <= i <= self.n,
                    f"edge ({j}->{i}) is not feedforward on 1..{self.n}")
        require((self.n, self.n) in self.edges, "sink must have a self-loop")
        out = self.out_degrees()
        require(bool(np.all(out >= 1)),
                "every vertex needs at least one outgoing edge")

    def out_degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for j, _ in self.edges:
            deg[j - 1] += 1
        return deg

    def in_degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for _, i in self.edges:
            deg[i - 1] += 1
        return deg

    def has_all_self_loops(self) -> bool:
        return all((v, v) in self.edges for v in range(1, self.n + 1))

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "edges": sorted(map(list, self.edges))})

    @staticmethod
    def from_json(text: str) -> "FeedforwardGraph":
        doc = json.loads(text)
        return FeedforwardGraph(int(doc["n"]),
                                frozenset((int(j), int(i)) for j, i in doc["edges"]))


def feedforward_graph(n: int, edges: Iterable = (),
                      self_loops: bool = True) -> FeedforwardGraph:
    """Build a graph from forward edges; self-loops are added by default.

    With self_loops=False only the sink's structurally required self-loop is
    forced, which permits chain fixtures such as 1->2->...->n.
    """
    es = {(int(j), int(i)) for j, i in edges}
    if self_loops:
        es.update((v, v) for v in range(1, n + 1))
    es.add((n, n))
    return FeedforwardGraph(n, frozenset(es))


def random_feedforward_graph(n: int, q: float,
                             rng: np.random.Generator) -> FeedforwardGraph:
    """Random instance: each forward edge (j -> i), j < i, kept with prob q.

    Self-loops are forced everywhere and every non-sink vertex gets at least
    one strictly forward edge (adding (j -> j+1) if missing) so that mass
    leaks toward the sink from every start.
    """
    edges = set()
    for j in range(1, n):
        forward = [(j, i) for i in range(j + 1, n + 1)
                   if rng.random() < q]
        if not forward:
            forward = [(j, j + 1)]
        edges.update(forward)
    return feedforward_graph(n, edges, self_loops=True)


# ---------------------------------------------------------------------------
# Transition matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransitionMatrix:
    """Stochastic matrix with a declared orientation.

    walk: columns sum to 1, column j is the next-state distribution from j.
    diffusion: rows sum to 1, row i averages the signal arriving at i.

    Matrices derived from a FeedforwardGraph have causal (lower-triangular)
    support; the class itself only enforces stochasticity because the 4-node
    worked example's second head carries a backward edge.
    """

    matrix: np.ndarray
    orientation: str

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        require(m.ndim == 2 and m.shape[0] == m.shape[1],
                "transition matrix must be square")
        assert_finite(m, "transition matrix")
        require(bool(np.all(m >= 0)), "transition matrix has negative entries")
        require(self.orientation in (WALK, DIFFUSION),
                f"unknown orientation {self.orientation!r}")
        axis = 0 if self.orientation == WALK else 1
        sums = m.sum(axis=axis)
        require(bool(np.all(np.abs(sums - 1.0) <= 1e-9)),
                f"{self.orientation} matrix is not stochastic: sums {sums}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def is_causal(self) -> bool:
        return bool(np.all(np.triu(self.matrix, k=1) == 0.0))


@dataclass(frozen=True)
class HeadSystem:
    """Per-head transition matrices over shared vertices plus convex weights."""

    heads: tuple
    weights: np.ndarray

    def __post_init__(self):
        require(len(self.heads) >= 1, "head system needs at least one head")
        n = self.heads[0].n
        orientation = self.heads[0].orientation
        for h in self.heads:
            require(h.n == n, "heads must share the vertex count")
            require(h.orientation == orientation,
                    "heads must share the orientation")
        w = np.array(self.weights, dtype=np.float64)
        require(w.ndim == 1 and w.size == len(self.heads),
                "one weight per head required")
        require(bool(np.all(w >= 0)), "weights must be non-negative")
        require(abs(float(w.sum()) - 1.0) <= 1e-9,
                f"weights sum to {float(w.sum())}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "heads", tuple(self.heads))
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.heads[0].n

    @property
    def orientation(self) -> str:
        return self.heads[0].orientation


def walk_matrix_fractions(g: FeedforwardGraph) -> list:
    """Exact rational walk matrix, entry 1/outdegree(j) per edge (j -> i)."""
    out = g.out_degrees()
    rows = [[Fraction(0)] * g.n for _ in range(g.n)]
    for j, i in g.edges:
        rows[i - 1][j - 1] = Fraction(1, int(out[j - 1]))
    return rows


def walk_matrix(g: FeedforwardGraph) -> TransitionMatrix:
    """Column-stochastic random-walk matrix of the graph."""
    exact = walk_matrix_fractions(g)
    m = np.array([[float(x) for x in row] for row in exact], dtype=np.float64)
    return TransitionMatrix(m, WALK)


def _diffusion_from_edges(n: int, edges: Iterable) -> np.ndarray:
    """In-degree-normalized matrix for an arbitrary edge set.

    Kept separate from the graph type so worked examples with a backward
    edge can still be materialized exactly.
    """
    edges = list(edges)
    indeg = np.zeros(n, dtype=np.int64)
    for _, i in edges:
        indeg[i - 1] += 1
    require(bool(np.all(indeg >= 1)),
            "diffusion needs positive in-degree at every vertex "
            "(missing self-loops?)")
    m = np.zeros((n, n), dtype=np.float64)
    for j, i in edges:
        m[i - 1, j - 1] = float(Fraction(1, int(indeg[i - 1])))
    return m


def diffusion_matrix(g: FeedforwardGraph) -> TransitionMatrix:
    """Row-stochastic diffusion matrix, entry 1/indegree(i) per edge (j -> i)."""
    return TransitionMatrix(_diffusion_from_edges(g.n, g.edges), DIFFUSION)


def combine_heads(hs: HeadSystem) -> TransitionMatrix:
    """Convex combination of the heads; stochasticity is preserved."""
    m = np.zeros((hs.n, hs.n), dtype=np.float64)
    for w, head in zip(hs.weights, hs.heads):
        m += w * head.matrix
    return TransitionMatrix(m, hs.orientation)


def stationary_residual(t: TransitionMatrix, pi: np.ndarray) -> float:
    """L1 residual of the stationarity equation W pi = pi."""
    require(t.orientation == WALK,
            "stationary residual is defined for walk matrices")
    pi = np.asarray(pi, dtype=np.float64)
    require(pi.shape == (t.n,), "distribution length mismatch")
    return float(np.abs(t.matrix @ pi - pi).sum())


@dataclass(frozen=True)
class StationarityReport:
    """Per-start convergence of W^t e_j toward the sink point mass."""

    converged: bool
    steps_to_converge: tuple  # -1 where the start never met tol by t_max
    worst_start: int          # 1-indexed start with the largest time
    worst_steps: int
    t_max: int
    tol: float


def verify_sink_stationarity(t: TransitionMatrix, t_max: int = 4096,
                             tol: float = 1e-9) -> StationarityReport:
    """Check that every start's walk distribution collapses onto the sink.

    Non-convergence within t_max is reported, not raised.
    """
    require(t.orientation == WALK, "sink stationarity applies to walk matrices")
    n = t.n
    target = np.zeros((n, 1))
    target[n - 1, 0] = 1.0
    powers = np.eye(n)
    steps = np.full(n, -1, dtype=np.int64)
    for step in range(t_max + 1):
        tv = 0.5 * np.abs(powers - target).sum(axis=0)
        steps[(steps < 0) & (tv <= tol)] = step
        if np.all(steps >= 0):
            break
        powers = t.matrix @ powers
    converged = bool(np.all(steps >= 0))
    worst = int(np.argmax(np.where(steps < 0, t_max + 1, steps)))
    return StationarityReport(
        converged=converged,
        steps_to_converge=tuple(int(s) for s in steps),
        worst_start=worst + 1,
        worst_steps=int(steps[worst]),
        t_max=t_max,
        tol=tol,
    )


# ---------------------------------------------------------------------------
# Worked 3-node and 4-node head systems
# ---------------------------------------------------------------------------


def example_one(beta: Sequence = (0.5, 0.5)) -> HeadSystem:
    """Three nodes (u, v, sink). Head 1 bridges u->v, head 2 bridges v->sink.

    Neither head alone connects u to the sink; their composition does.
    """
    head1 = diffusion_matrix(feedforward_graph(3, [(1, 2)]))
    head2 = diffusion_matrix(feedforward_graph(3, [(2, 3)]))
    return HeadSystem((head1, head2), np.asarray(beta, dtype=np.float64))


def example_two() -> HeadSystem:
    """Four nodes (u, v, w, sink) where each head reaches the sink alone.

    Head 2 carries the backward edge v->u, so it is materialized from its
    raw edge set rather than through the feedforward constructor.
    """
    head1 = diffusion_matrix(feedforward_graph(4, [(1, 2), (2, 3), (3, 4)]))
    edges2 = [(2, 1), (1, 3), (3, 4)] + [(v, v) for v in range(1, 5)]
    head2 = TransitionMatrix(_diffusion_from_edges(4, edges2), DIFFUSION)
    return HeadSystem((head1, head2), np.array([0.5, 0.5]))
