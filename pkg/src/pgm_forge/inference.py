"""Belief propagation on cluster graphs.

``tree_propagate`` runs the exact two-pass schedule on tree-structured
graphs.  ``loopy_propagate`` runs iterative message passing with a
residual schedule: messages живут on a priority queue keyed by how much
they changed (KL divergence between the old and the new table), so the
least-converged parts of the graph are serviced first.

In MAX mode the update loop keeps a per-cluster running product of the
prior with all incoming messages and divides out the stale message
instead of re-multiplying all-but-one neighbour; this is the
belief-update formulation and is observably equivalent (exactly so for
0/1 potentials, where every stored value is 1).
"""

from __future__ import annotations

import heapq
import json
import math
import time
from dataclasses import dataclass
from typing import Callable, Mapping

from .errors import EmptySupport, NotATree, TimeoutExceeded
from .factors import NormMode, SparseFactor, divergence, vacuous
from .graph import ClusterGraph, is_tree

#: Priority assigned to a support-shrinking update (infinite divergence);
#: large so support changes propagate before everything else.
INFINITE_DEVIATION = 1e9


@dataclass(frozen=True)
class Message:
    source: int
    target: int
    table: SparseFactor


@dataclass(frozen=True)
class Belief:
    cluster: int
    table: SparseFactor


@dataclass(frozen=True)
class ScheduleEntry:
    edge: tuple[int, int]
    priority: float


@dataclass
class ConvergenceConfig:
    """Knobs for loopy propagation.

    ``max_updates`` defaults to 200 times the edge count.  ``deadline``
    is an optional ``time.monotonic`` timestamp for cooperative
    timeouts.
    """

    threshold: float = 1e-6
    lam: float = 1.0
    max_updates: int | None = None
    mode: NormMode = NormMode.MAX
    deadline: float | None = None


def stats_json(stats: Mapping) -> str:
    return json.dumps(
        {
            "updates": stats["updates"],
            "converged": stats["converged"],
            "final_max_deviation": stats["final_max_deviation"],
        }
    )


def compute_message(
    graph: ClusterGraph,
    messages: Mapping[tuple[int, int], Message],
    i: int,
    j: int,
    mode: NormMode,
) -> Message:
    """Fresh message along (i, j): prior times all-but-j incoming,
    marginalised onto the sepset and normalised."""
    sepset = graph.sepset(i, j)
    prod = graph.cluster(i).factor
    for k in graph.neighbours(i):
        if k == j:
            continue
        incoming = messages.get((k, i))
        if incoming is not None:
            prod = prod.multiply(incoming.table)
    marg = prod.marginalize(sepset, mode)
    if marg.size == 0:
        raise EmptySupport(f"message ({i} -> {j}) annihilated", edge=(i, j))
    return Message(i, j, marg.normalize(mode))


def tree_propagate(graph: ClusterGraph, mode: NormMode = NormMode.SUM) -> list[Belief]:
    """Exact two-pass belief propagation on a tree (or forest).

    Leaves send inward first, then the order reverses to propagate
    consensus back out; in SUM mode each belief is the true marginal of
    the joint product over its cluster, up to normalisation.
    """
    if not is_tree(graph):
        raise NotATree("tree propagation needs a tree-structured graph")
    messages: dict[tuple[int, int], Message] = {}
    seen: set[int] = set()
    for root in [c.id for c in graph.clusters]:
        if root in seen:
            continue
        order = [root]
        parent: dict[int, int | None] = {root: None}
        seen.add(root)
        for node in order:
            for k in graph.neighbours(node):
                if k not in seen:
                    seen.add(k)
                    parent[k] = node
                    order.append(k)
        for node in reversed(order):
            if parent[node] is not None:
                messages[(node, parent[node])] = compute_message(
                    graph, messages, node, parent[node], mode)
        for node in order:
            for k in graph.neighbours(node):
                if parent.get(k) == node:
                    messages[(node, k)] = compute_message(graph, messages, node, k, mode)
    return _beliefs(graph, messages, mode)


def _beliefs(graph, messages, mode) -> list[Belief]:
    out = []
    for c in graph.clusters:
        table = c.factor
        for k in graph.neighbours(c.id):
            msg = messages.get((k, c.id))
            if msg is not None:
                table = table.multiply(msg.table)
        if table.size == 0:
            raise EmptySupport(f"belief of cluster {c.id} annihilated", cluster=c.id)
        out.append(Belief(c.id, table.normalize(mode)))
    return out


class _Queue:
    """Max-priority queue with lazy deletion and FIFO tie-breaking."""

    def __init__(self):
        self._heap: list[tuple[float, int, tuple[int, int]]] = []
        self._live: dict[tuple[int, int], int] = {}
        self._seq = 0

    def push(self, edge, priority):
        self._live[edge] = self._seq
        heapq.heappush(self._heap, (-priority, self._seq, edge))
        self._seq += 1

    def discard(self, edge):
        self._live.pop(edge, None)

    def __contains__(self, edge):
        return edge in self._live

    def pop(self):
        while self._heap:
            neg, seq, edge = heapq.heappop(self._heap)
            if self._live.get(edge) == seq:
                del self._live[edge]
                return edge, -neg
        return None

    def max_priority(self):
        while self._heap:
            neg, seq, edge = self._heap[0]
            if self._live.get(edge) == seq:
                return -neg
            heapq.heappop(self._heap)
        return 0.0

    def __len__(self):
        return len(self._live)


def loopy_propagate(
    graph: ClusterGraph,
    config: ConvergenceConfig | None = None,
    on_message: Callable[[tuple[int, int], SparseFactor, SparseFactor], None] | None = None,
) -> tuple[list[Belief], dict]:
    """Residual-scheduled loopy belief update.

    The queue starts with every directed edge at a miniscule priority
    biased towards leaf-ish nodes.  Each pop recomputes one message,
    measures its deviation from the previous value, and requeues the
    downstream messages whenever the deviation exceeds the threshold.
    Returns the posterior beliefs plus run stats.
    """
    config = config or ConvergenceConfig()
    mode = config.mode
    edges = graph.edges
    max_updates = config.max_updates
    if max_updates is None:
        max_updates = 200 * len(edges)

    messages: dict[tuple[int, int], Message] = {}
    queue = _Queue()
    for i, j in edges:
        priority = 1e-10 / (len(graph.neighbours(i)) + len(graph.neighbours(j)))
        queue.push((i, j), priority)
        queue.push((j, i), priority)
        sep = graph.sepset(i, j)
        doms = {v: graph.cluster(i).factor.domains[v] for v in sep}
        blank = vacuous(sep, doms).normalize(mode)
        messages[(i, j)] = Message(i, j, blank)
        messages[(j, i)] = Message(j, i, blank)

    # Belief-update cache: prior times all current incoming messages.
    use_cache = mode is NormMode.MAX
    beliefs_cache: dict[int, SparseFactor] = {}
    if use_cache:
        for c in graph.clusters:
            table = c.factor
            for k in graph.neighbours(c.id):
                table = table.multiply(messages[(k, c.id)].table)
            if table.size == 0:
                raise EmptySupport(f"belief of cluster {c.id} annihilated", cluster=c.id)
            beliefs_cache[c.id] = table.normalize(mode)

    updates = 0
    while True:
        if config.deadline is not None and time.monotonic() > config.deadline:
            raise TimeoutExceeded("propagation deadline expired")
        if updates >= max_updates:
            converged = False
            break
        item = queue.pop()
        if item is None:
            converged = True
            break
        (i, j), _ = item
        prev = messages[(i, j)]
        if use_cache:
            freed = beliefs_cache[i].divide(messages[(j, i)].table)
            marg = freed.marginalize(graph.sepset(i, j), mode)
            if marg.size == 0:
                raise EmptySupport(f"message ({i} -> {j}) annihilated", edge=(i, j))
            new = Message(i, j, marg.normalize(mode))
        else:
            new = compute_message(graph, messages, i, j, mode)
        if config.lam < 1.0:
            new = Message(i, j, new.table.damp(prev.table, config.lam).normalize(mode))
        deviation = divergence(prev.table, new.table)
        if math.isinf(deviation):
            deviation = INFINITE_DEVIATION
        messages[(i, j)] = new
        if use_cache:
            updated = beliefs_cache[j].divide(prev.table).multiply(new.table)
            if updated.size == 0:
                raise EmptySupport(f"belief of cluster {j} annihilated", cluster=j, edge=(i, j))
            beliefs_cache[j] = updated.normalize(mode)
        if on_message is not None:
            on_message((i, j), prev.table, new.table)
        updates += 1
        for k in graph.neighbours(j):
            if k == i:
                continue
            queue.discard((j, k))
            if deviation > config.threshold:
                queue.push((j, k), deviation)

    # Pending deviation still on the queue; zero once the queue drained.
    final_max = queue.max_priority()
    stats = {
        "updates": updates,
        "converged": converged,
        "final_max_deviation": float(final_max),
    }
    if use_cache:
        beliefs = [Belief(c.id, beliefs_cache[c.id]) for c in graph.clusters]
        return beliefs, stats
    return _beliefs(graph, messages, mode), stats
