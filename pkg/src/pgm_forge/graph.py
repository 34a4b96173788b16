"""Cluster graphs and their construction.

Two constructions are provided: the trivial Bethe topology (per-variable
hub clusters, star-like univariate sepsets) and the layered-trees
construction, which builds a maximum spanning tree per variable and
superimposes the layers into multivariate sepsets.  Both satisfy the
running intersection property; ``validate_rip`` checks it for arbitrary
graphs.

All tie-breaking is pinned so identical inputs produce identical graphs:
spanning trees are seeded at the lowest cluster index and break weight
ties on the lexicographically smallest edge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .errors import GraphError
from .factors import SparseFactor, vacuous

WeightFn = Callable[[Sequence["Cluster"]], Mapping[tuple[int, int], float]]


@dataclass(frozen=True)
class Cluster:
    """A factor-bearing node of a cluster graph."""

    id: int
    scope: frozenset[int]
    factor: SparseFactor


@dataclass(frozen=True)
class Sepset:
    """Variables carried by one edge between two clusters."""

    i: int
    j: int
    variables: frozenset[int]


@dataclass
class LayerWeights:
    """Connection weights for one variable's layer.

    ``initial`` holds the raw pairwise intersection sizes, ``weights``
    the emphasised values (intersection + t_i + t_j), and
    ``maximal_count`` the per-cluster number of maximal-weight edges.
    """

    variable: int | None
    initial: dict[tuple[int, int], int]
    maximal_count: dict[int, int]
    weights: dict[tuple[int, int], int] = field(default_factory=dict)


class ClusterGraph:
    """Clusters plus sepset-labelled edges; adjacency is derived."""

    def __init__(self, clusters: Sequence[Cluster], sepsets: Iterable[Sepset]):
        self.clusters: list[Cluster] = list(clusters)
        for pos, c in enumerate(self.clusters):
            if c.id != pos:
                raise GraphError("cluster ids must be consecutive from zero")
        by_edge: dict[tuple[int, int], Sepset] = {}
        for s in sepsets:
            a, b = (s.i, s.j) if s.i < s.j else (s.j, s.i)
            if a == b:
                raise GraphError(f"self edge on cluster {a}")
            if (a, b) in by_edge:
                raise GraphError(f"duplicate edge ({a}, {b})")
            by_edge[(a, b)] = Sepset(a, b, frozenset(s.variables))
        self.sepsets: list[Sepset] = [by_edge[k] for k in sorted(by_edge)]
        self._adj: dict[int, list[int]] = {c.id: [] for c in self.clusters}
        self._sep_by_edge = {(s.i, s.j): s.variables for s in self.sepsets}
        for s in self.sepsets:
            self._adj[s.i].append(s.j)
            self._adj[s.j].append(s.i)
        for neighbours in self._adj.values():
            neighbours.sort()

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(s.i, s.j) for s in self.sepsets]

    def neighbours(self, i: int) -> list[int]:
        return self._adj[i]

    def sepset(self, i: int, j: int) -> frozenset[int]:
        key = (i, j) if i < j else (j, i)
        try:
            return self._sep_by_edge[key]
        except KeyError:
            raise GraphError(f"no edge between clusters {i} and {j}") from None

    def cluster(self, i: int) -> Cluster:
        return self.clusters[i]

    def to_json(self, labels: Mapping[int, str] | None = None) -> dict:
        def name(v):
            return labels[v] if labels else v

        return {
            "clusters": [
                {"id": c.id, "scope": sorted(name(v) for v in c.scope)} for c in self.clusters
            ],
            "sepsets": [
                {"i": s.i, "j": s.j, "vars": sorted(name(v) for v in s.variables)}
                for s in self.sepsets
            ],
        }

    def dump(self, labels=None) -> str:
        return json.dumps(self.to_json(labels), sort_keys=True)


def absorb_subsets(factors: Sequence[SparseFactor], *, capacity: int | None = None) -> list[SparseFactor]:
    """Multiply every scope-subset factor into its lowest-index superset.

    The output has pairwise non-nested scopes and preserves the product
    of the inputs.  Equal scopes collapse into the earlier factor.
    """
    items: list[SparseFactor | None] = list(factors)
    scopes = [set(f.scope) for f in factors]
    for i in range(len(items)):
        if items[i] is None:
            continue
        target = None
        for j in range(len(items)):
            if j == i or items[j] is None:
                continue
            if scopes[i] < scopes[j] or (scopes[i] == scopes[j] and j < i):
                target = j
                break  # ascending j, so the first hit is the lowest index
        if target is not None:
            items[target] = items[target].multiply(items[i], capacity=capacity)
            items[i] = None
    return [f for f in items if f is not None]


def connection_weights(clusters: Sequence[Cluster], variable: int | None = None) -> LayerWeights:
    """Alg-style edge weights for one layer.

    Starts from pairwise scope-intersection sizes, then emphasises
    clusters that touch many maximal-weight edges: with m the global
    maximum and t_i the number of maximal edges at cluster i, every edge
    (i, j) becomes |C_i n C_j| + t_i + t_j.
    """
    if len(clusters) < 2:
        raise GraphError("connection weights need at least two clusters")
    ids = [c.id for c in clusters]
    scope = {c.id: c.scope for c in clusters}
    initial: dict[tuple[int, int], int] = {}
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            i, j = ids[a], ids[b]
            initial[(i, j)] = len(scope[i] & scope[j])
    m = max(initial.values())
    counts = {
        i: sum(1 for (a, b), w in initial.items() if w == m and i in (a, b))
        for i in ids
    }
    weights = {(a, b): w + counts[a] + counts[b] for (a, b), w in initial.items()}
    return LayerWeights(variable=variable, initial=initial, maximal_count=counts, weights=weights)


def max_spanning_tree(nodes: Sequence[int], weights: Mapping[tuple[int, int], float]) -> list[tuple[int, int]]:
    """Maximum spanning tree over ``nodes`` (Prim-style growth).

    Seeded at the lowest node id; weight ties pick the lexicographically
    smallest (i, j) pair.  Missing pairs count as weight zero, so the
    graph is treated as complete.
    """
    nodes = sorted(nodes)
    if len(nodes) < 2:
        return []

    def w(a, b):
        return weights.get((a, b) if a < b else (b, a), 0)

    in_tree = {nodes[0]}
    rest = set(nodes[1:])
    edges: list[tuple[int, int]] = []
    while rest:
        best = None
        for a in sorted(in_tree):
            for b in sorted(rest):
                cand = (w(a, b), (a, b) if a < b else (b, a))
                if best is None or cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
                    best = cand
        edges.append(best[1])
        a, b = best[1]
        grown = b if b in rest else a
        in_tree.add(grown)
        rest.remove(grown)
    return edges


def _check_absorbed(scopes: Sequence[frozenset[int]]):
    for i in range(len(scopes)):
        for j in range(len(scopes)):
            if i != j and scopes[i] <= scopes[j]:
                raise GraphError(
                    f"factor {i} scope is contained in factor {j}; absorb subsets first")


def ltrip(factors: Sequence[SparseFactor], weights_fn: WeightFn | None = None) -> ClusterGraph:
    """Layered-trees construction.

    For each variable, the clusters containing it are joined into a
    maximum spanning tree (connection weights favour large sepsets); the
    layers are superimposed so each final sepset is the union of its
    per-variable contributions.  The result satisfies the running
    intersection property by construction.

    ``weights_fn`` may replace the default connection-weight criterion;
    it receives the layer's clusters and returns pairwise weights.
    """
    clusters = [Cluster(i, frozenset(f.scope), f) for i, f in enumerate(factors)]
    _check_absorbed([c.scope for c in clusters])
    sepsets: dict[tuple[int, int], set[int]] = {}
    variables = sorted({v for c in clusters for v in c.scope})
    for x in variables:
        layer = [c for c in clusters if x in c.scope]
        if len(layer) < 2:
            continue
        if weights_fn is None:
            weights = connection_weights(layer, variable=x).weights
        else:
            weights = dict(weights_fn(layer))
        tree = max_spanning_tree([c.id for c in layer], weights)
        for edge in tree:
            sepsets.setdefault(edge, set()).add(x)
    return ClusterGraph(
        clusters,
        [Sepset(i, j, frozenset(vars_)) for (i, j), vars_ in sorted(sepsets.items())],
    )


def bethe(factors: Sequence[SparseFactor]) -> ClusterGraph:
    """Factor-graph (Bethe) topology.

    Adds one vacuous univariate hub cluster per variable and links every
    factor containing that variable to the hub with a singleton sepset.
    """
    clusters = [Cluster(i, frozenset(f.scope), f) for i, f in enumerate(factors)]
    domains = {}
    for f in factors:
        for v in f.scope:
            domains.setdefault(v, f.domains[v])
    sepsets = []
    next_id = len(clusters)
    for v in sorted(domains):
        members = [c.id for c in clusters if v in c.scope]
        hub = Cluster(next_id, frozenset([v]), vacuous([v], {v: domains[v]}))
        clusters.append(hub)
        for cid in members:
            sepsets.append(Sepset(cid, next_id, frozenset([v])))
        next_id += 1
    return ClusterGraph(clusters, sepsets)


def validate_rip(graph: ClusterGraph) -> list[tuple[int, str]]:
    """Check the running intersection property.

    Returns one ``(variable, reason)`` tuple per violation; an empty
    list means that for every variable the sepset-labelled edges form a
    spanning tree over the clusters containing it.
    """
    violations: list[tuple[int, str]] = []
    variables = sorted({v for c in graph.clusters for v in c.scope})
    containing = {x: [c.id for c in graph.clusters if x in c.scope] for x in variables}
    for s in graph.sepsets:
        for v in s.variables:
            if v not in graph.clusters[s.i].scope or v not in graph.clusters[s.j].scope:
                violations.append((v, f"sepset ({s.i},{s.j}) carries a variable outside a cluster scope"))
    for x in variables:
        nodes = containing[x]
        edges = [(s.i, s.j) for s in graph.sepsets if x in s.variables]
        if len(nodes) <= 1:
            if edges:
                violations.append((x, "sepset edges for a variable in fewer than two clusters"))
            continue
        parent = {n: n for n in nodes}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        components = len(nodes)
        cycle = False
        for i, j in edges:
            ri, rj = find(i), find(j)
            if ri == rj:
                cycle = True
            else:
                parent[ri] = rj
                components -= 1
        if cycle:
            violations.append((x, "cycle in the sepset-induced subgraph"))
        if components > 1:
            violations.append((x, "sepset-induced subgraph is disconnected"))
    return violations


def is_tree(graph: ClusterGraph) -> bool:
    """True when the graph is a forest (each component a tree)."""
    parent = {c.id: c.id for c in graph.clusters}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in graph.edges:
        ri, rj = find(i), find(j)
        if ri == rj:
            return False
        parent[ri] = rj
    return True
