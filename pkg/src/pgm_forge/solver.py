"""Exact constraint solving by alternating purge and merge phases.

The solver starts from small constraint factors, repeatedly

1. clusters factors whose merged scope stays under an entropy budget,
   picking the most attracted pairs first,
2. merges each cluster into a single product factor,
3. rebuilds a cluster graph and runs loopy belief update to purge
   states ruled out elsewhere (generalised arc consistency),
4. deletes globally impossible values and observes variables that have
   become uniquely determined,

raising the entropy budget every round, until the graph is a tree.  At
that point the calibrated residual factors are exact and the remaining
solution space can be enumerated without loss.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from heapq import heappop, heappush
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    CapacityExceeded,
    Contradiction,
    DisjointScopes,
    EmptySupport,
    NotATree,
    SolverError,
    TimeoutExceeded,
)
from .factors import Domain, NormMode, SparseFactor, mass, upper_bound_entropy
from .graph import absorb_subsets, is_tree, ltrip
from .inference import ConvergenceConfig, loopy_propagate

#: Default cap on entries of any merged table.
DEFAULT_TABLE_CAP = 2 ** 25

#: Hard stop against schedule bugs; normal runs take far fewer rounds.
MAX_ROUNDS = 10_000


class AttractionMetric(Enum):
    VARIABLE_OVERLAP = "overlap"
    UPPER_BOUND_SHARED_ENTROPY = "entropy"
    GRAVITY = "gravity"


@dataclass
class AttractionMatrix:
    """Pairwise attractions plus the per-cluster masses and distances
    behind them (masses/distances only populated for the gravity metric)."""

    masses: dict[int, float]
    distances: dict[tuple[int, int], float]
    attractions: dict[tuple[int, int], float]


def attraction(f_i: SparseFactor, f_j: SparseFactor, metric: AttractionMetric) -> tuple[float, float]:
    """Attraction values (a_{i<-j}, a_{j<-i}) between two factors.

    Overlap counts shared variables; shared entropy is the log2 dense
    size of the shared scope; gravity is mass over squared distance,
    where distance is the log-ratio of union to intersection upper-bound
    entropies.  Identical scopes have zero distance and attract with
    infinity, so they always merge first.
    """
    shared = set(f_i.scope) & set(f_j.scope)
    if not shared:
        raise DisjointScopes("factors share no variables")
    if metric is AttractionMetric.VARIABLE_OVERLAP:
        a = float(len(shared))
        return a, a
    if metric is AttractionMetric.UPPER_BOUND_SHARED_ENTROPY:
        a = upper_bound_entropy(shared, f_i.domains)
        return a, a
    r = _gravity_distance(set(f_i.scope), set(f_j.scope), {**f_j.domains, **f_i.domains})
    if r == 0.0:
        return math.inf, math.inf
    return mass(f_i) / r ** 2, mass(f_j) / r ** 2


def _gravity_distance(scope_i: set, scope_j: set, domains) -> float:
    union = upper_bound_entropy(scope_i | scope_j, domains)
    inter = upper_bound_entropy(scope_i & scope_j, domains)
    if union == inter:
        return 0.0
    if inter == 0.0:
        return math.inf
    return math.log2(union / inter)


class _ClusterState:
    __slots__ = ("members", "scope", "mass", "factor", "version")

    def __init__(self, members, scope, mass_, factor):
        self.members = members      # original factor indices
        self.scope = scope          # set of variable ids
        self.mass = mass_
        self.factor = factor        # merged product when merging eagerly
        self.version = 0


class _ClusteringEngine:
    """Greedy agglomeration under an upper-bound entropy budget.

    Repeatedly pops the strongest attraction; if the union scope stays
    within the budget the pair merges (mass adds, attractions around the
    survivor are recomputed), otherwise that attraction is retired.
    With ``table_cap`` set, pair products are materialised eagerly and a
    product over the cap retires the attraction instead of merging.
    """

    def __init__(self, factors, h_tau, metric, *, table_cap=None, domains=None):
        self.metric = metric
        self.h_tau = h_tau
        self.table_cap = table_cap
        self.heap: list = []
        self.seq = 0
        self.cap_failures = 0
        self.states: dict[int, _ClusterState] = {}
        self.domains = {}
        for idx, f in enumerate(factors):
            m = mass(f) if metric is AttractionMetric.GRAVITY else 0.0
            self.states[idx] = _ClusterState([idx], set(f.scope), m, f)
            self.domains.update(f.domains)
        ids = sorted(self.states)
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                i, j = ids[a], ids[b]
                if self.states[i].scope & self.states[j].scope:
                    self._push_pair(i, j)

    def _attr(self, target, source):
        st, ss = self.states[target], self.states[source]
        if self.metric is AttractionMetric.VARIABLE_OVERLAP:
            return float(len(st.scope & ss.scope))
        if self.metric is AttractionMetric.UPPER_BOUND_SHARED_ENTROPY:
            return upper_bound_entropy(st.scope & ss.scope, self.domains)
        r = _gravity_distance(st.scope, ss.scope, self.domains)
        if r == 0.0:
            return math.inf
        return st.mass / r ** 2

    def _push(self, target, source):
        a = self._attr(target, source)
        heappush(self.heap, (-a, self.seq, target, source,
                             self.states[target].version, self.states[source].version))
        self.seq += 1

    def _push_pair(self, i, j):
        self._push(i, j)
        self._push(j, i)

    def run(self) -> tuple[list[_ClusterState], int]:
        merges = 0
        while self.heap:
            neg_a, _, target, source, tver, sver = heappop(self.heap)
            st = self.states.get(target)
            ss = self.states.get(source)
            if st is None or ss is None or st.version != tver or ss.version != sver:
                continue  # stale entry
            union = st.scope | ss.scope
            if upper_bound_entropy(union, self.domains) > self.h_tau:
                continue  # retire this attraction
            if self.table_cap is not None:
                try:
                    product = st.factor.multiply(ss.factor, capacity=self.table_cap)
                except CapacityExceeded:
                    self.cap_failures += 1
                    continue  # split back: clusters stay as they were
                st.factor = product
            st.members = st.members + ss.members
            st.scope = union
            st.mass = st.mass + ss.mass
            st.version += 1
            del self.states[source]
            merges += 1
            for k in sorted(self.states):
                if k != target and self.states[k].scope & st.scope:
                    self._push_pair(target, k)
        ordered = [self.states[k] for k in sorted(self.states)]
        return ordered, merges


def attraction_matrix(factors: Sequence[SparseFactor], metric: AttractionMetric) -> AttractionMatrix:
    """Initial masses, distances, and directed attractions for a factor list."""
    masses = {}
    if metric is AttractionMetric.GRAVITY:
        masses = {i: mass(f) for i, f in enumerate(factors)}
    distances = {}
    attractions = {}
    for i in range(len(factors)):
        for j in range(i + 1, len(factors)):
            shared = set(factors[i].scope) & set(factors[j].scope)
            if not shared:
                continue
            a_ij, a_ji = attraction(factors[i], factors[j], metric)
            attractions[(i, j)] = a_ij
            attractions[(j, i)] = a_ji
            if metric is AttractionMetric.GRAVITY:
                domains = {**factors[j].domains, **factors[i].domains}
                distances[(i, j)] = _gravity_distance(
                    set(factors[i].scope), set(factors[j].scope), domains)
    return AttractionMatrix(masses=masses, distances=distances, attractions=attractions)


def cluster_factors(
    factors: Sequence[SparseFactor],
    h_tau: float,
    metric: AttractionMetric = AttractionMetric.GRAVITY,
) -> list[list[SparseFactor]]:
    """Partition factors so every cluster's scope entropy stays <= h_tau."""
    if not factors:
        return []
    engine = _ClusteringEngine(factors, h_tau, metric, table_cap=None)
    states, _ = engine.run()
    return [[factors[i] for i in st.members] for st in states]


def merge_cluster(cluster: Sequence[SparseFactor], *, capacity: int | None = None) -> SparseFactor:
    """Product of all member factors (the merged cluster potential)."""
    if not cluster:
        raise SolverError("cannot merge an empty cluster")
    out = cluster[0]
    for f in cluster[1:]:
        out = out.multiply(f, capacity=capacity)
    return out


# --- purging ----------------------------------------------------------------

def reduce_variables(
    factors: Sequence[SparseFactor],
) -> tuple[dict[int, object], list[SparseFactor]]:
    """Observe every variable that some factor pins to a single value.

    Observations are applied to all factors and iterated to a fixpoint,
    since fixing one variable can make another unique.  Returns the
    evidence (variable -> domain value) and the reduced factors.
    """
    factors = list(factors)
    evidence: dict[int, object] = {}
    while True:
        found: dict[int, object] = {}
        for f in factors:
            if f.size == 0:
                raise Contradiction("a factor has empty support")
            for v in f.scope:
                if v in found:
                    continue
                sup = f.support_of(v)
                if len(sup) == 1:
                    found[v] = f.domains[v].values[sup[0]]
        if not found:
            return evidence, factors
        evidence.update(found)
        reduced = []
        for f in factors:
            hits = {v: f.domains[v].index_of(val) for v, val in found.items() if v in f.domains}
            if hits:
                f = f.reduce(hits)
                if f.size == 0:
                    raise Contradiction("observation emptied a factor")
            reduced.append(f)
        factors = reduced


def reduce_domains(factors: Sequence[SparseFactor]) -> list[SparseFactor]:
    """Delete domain values that some factor rules out, everywhere.

    A value missing from any factor containing the variable cannot occur
    in a solution, so it is removed from the domain and from every entry
    across all factors; iterated to a fixpoint.
    """
    factors = list(factors)
    while True:
        allowed: dict[int, set[int]] = {}
        domains: dict[int, Domain] = {}
        for f in factors:
            if f.size == 0:
                raise Contradiction("a factor has empty support")
            for v in f.scope:
                sup = set(f.support_of(v))
                if v in allowed:
                    allowed[v] &= sup
                else:
                    allowed[v] = sup
                    domains[v] = f.domains[v]
        shrunk: dict[int, Domain] = {}
        for v, keep in allowed.items():
            if not keep:
                raise Contradiction(f"domain of variable {v} emptied")
            if len(keep) < domains[v].cardinality:
                values = tuple(val for k, val in enumerate(domains[v].values) if k in keep)
                shrunk[v] = Domain(v, values)
        if not shrunk:
            return factors
        factors = [_apply_domain_shrink(f, shrunk) for f in factors]


def _apply_domain_shrink(f: SparseFactor, shrunk: Mapping[int, Domain]) -> SparseFactor:
    touched = [v for v in f.scope if v in shrunk]
    if not touched:
        return f
    rows = f.rows_array()
    vals = f.values_array()
    mask = np.ones(len(vals), dtype=bool)
    remap = {}
    for v in touched:
        old = f.domains[v]
        new = shrunk[v]
        lookup = np.full(old.cardinality, -1, dtype=np.int16)
        for new_idx, value in enumerate(new.values):
            lookup[old.values.index(value)] = new_idx
        col = f.scope.index(v)
        mapped = lookup[rows[:, col]]
        mask &= mapped >= 0
        remap[col] = lookup
    rows = rows[mask].copy()
    vals = vals[mask]
    for col, lookup in remap.items():
        rows[:, col] = lookup[rows[:, col]]
    if len(vals) == 0:
        raise Contradiction("domain reduction emptied a factor")
    new_domains = {v: shrunk.get(v, f.domains[v]) for v in f.scope}
    return SparseFactor(f.scope, new_domains, rows, vals, _canonical=True)


# --- the main loop ----------------------------------------------------------

@dataclass
class PurgeMergeConfig:
    metric: AttractionMetric = AttractionMetric.GRAVITY
    threshold_schedule: Callable[[int], float] | None = None
    threshold_start: float | None = None
    threshold_step: float | None = None
    table_cap: int = DEFAULT_TABLE_CAP
    inference: ConvergenceConfig = field(default_factory=lambda: ConvergenceConfig(mode=NormMode.MAX))
    enumeration_cap: int = 10_000
    timeout_s: float | None = None


@dataclass
class SolveResult:
    solved: dict[int, object]
    residual_factors: list[SparseFactor]
    graph_is_tree: bool
    rounds: int
    max_table_entries: int
    max_upper_bound_entropy: float
    runtime_ms: float
    solutions: list[dict[int, object]] | None = None
    solutions_complete: bool | None = None

    def to_json(self, labels: Mapping[int, str] | None = None) -> dict:
        def name(v):
            return labels[v] if labels else str(v)

        out = {
            "solved": {name(v): val for v, val in sorted(self.solved.items())},
            "rounds": self.rounds,
            "max_table_entries": self.max_table_entries,
            "max_upper_bound_entropy": self.max_upper_bound_entropy,
            "runtime_ms": self.runtime_ms,
            "tree": self.graph_is_tree,
        }
        if self.solutions is not None:
            out["solutions"] = [
                {name(v): val for v, val in sorted(sol.items())} for sol in self.solutions
            ]
            out["solutions_complete"] = self.solutions_complete
        return out


def default_threshold_schedule(factors: Sequence[SparseFactor],
                               start: float | None = None,
                               step: float | None = None) -> Callable[[int], float]:
    """Entropy budget per round: start at the largest factor scope plus
    one variable's worth of states, grow by that much every round."""
    max_card = max((d.cardinality for f in factors for d in f.domains.values()), default=2)
    if step is None:
        step = max(math.log2(max_card), 1.0)
    if start is None:
        start = max((upper_bound_entropy(f.scope, f.domains) for f in factors), default=0.0) + step
    return lambda k: start + k * step


def purge_and_merge(factors: Sequence[SparseFactor], config: PurgeMergeConfig | None = None) -> SolveResult:
    """Run the merge / propagate / purge loop until the graph is a tree.

    Raises ``Contradiction`` for unsatisfiable inputs and
    ``CapacityExceeded`` when no merge can proceed under the table cap
    while the graph is still loopy.
    """
    config = config or PurgeMergeConfig()
    t0 = time.monotonic()
    deadline = t0 + config.timeout_s if config.timeout_s is not None else None

    for f in factors:
        if f.size == 0:
            raise Contradiction("input factor has empty support")
    factors = [f for f in factors if len(f.scope) > 0]

    schedule = config.threshold_schedule
    if schedule is None:
        schedule = default_threshold_schedule(
            factors, config.threshold_start, config.threshold_step)

    solved: dict[int, object] = {}
    max_entries = max((f.size for f in factors), default=0)
    rounds = 0
    previous_stable = False  # factors unchanged by the last full round

    while True:
        if rounds >= MAX_ROUNDS:
            raise SolverError("round limit exceeded; threshold schedule may be broken")
        if deadline is not None and time.monotonic() > deadline:
            raise TimeoutExceeded("solve deadline expired")
        if not factors:
            graph_tree = True
            break

        h_tau = schedule(rounds)
        rounds += 1

        engine = _ClusteringEngine(
            factors, h_tau, config.metric, table_cap=config.table_cap)
        states, merges = engine.run()

        merged = [st.factor for st in states]
        for f in merged:
            if f.size == 0:
                raise Contradiction("merged factor has empty support")
        max_entries = max(max_entries, max(f.size for f in merged))

        merged = absorb_subsets(merged, capacity=config.table_cap)
        max_entries = max(max_entries, max(f.size for f in merged))
        graph = ltrip(merged)
        graph_tree = is_tree(graph)

        if merges == 0 and not graph_tree:
            if engine.cap_failures:
                raise CapacityExceeded(
                    "no merge fits under the table cap and the graph is not a tree",
                    cap=config.table_cap)
            if previous_stable:
                # Nothing changed since the last full round: the purge
                # fixpoint is already reached, only the budget grows.
                continue

        inf_config = replace(config.inference, deadline=deadline)
        try:
            beliefs, _stats = loopy_propagate(graph, inf_config)
        except EmptySupport as exc:
            raise Contradiction(f"propagation found a contradiction ({exc})") from exc

        new_factors = [b.table for b in beliefs]
        try:
            new_factors = reduce_domains(new_factors)
            evidence, new_factors = reduce_variables(new_factors)
        except Contradiction:
            raise
        solved.update(evidence)
        new_factors = [f for f in new_factors if len(f.scope) > 0]

        previous_stable = (
            merges == 0
            and len(new_factors) == len(factors)
            and all(a.same_table(b) for a, b in zip(new_factors, factors))
        )
        factors = new_factors
        if graph_tree:
            break

    runtime_ms = (time.monotonic() - t0) * 1000.0
    return SolveResult(
        solved=solved,
        residual_factors=list(factors),
        graph_is_tree=graph_tree,
        rounds=rounds,
        max_table_entries=max_entries,
        max_upper_bound_entropy=math.log2(max_entries) if max_entries else 0.0,
        runtime_ms=runtime_ms,
    )


class EnumeratedSolutions(NamedTuple):
    assignments: list[dict[int, object]]
    complete: bool


def enumerate_solutions(result: SolveResult, cap: int | None = None) -> EnumeratedSolutions:
    """List every assignment consistent with the residual tree factors.

    Exact and complete below ``cap``; the flag reports truncation.  Each
    assignment includes the solved variables.
    """
    if not result.graph_is_tree:
        raise NotATree("solutions can only be enumerated from a tree-structured result")
    factors = [f for f in result.residual_factors if len(f.scope) > 0]
    if not factors:
        return EnumeratedSolutions([dict(result.solved)], True)
    cap = cap if cap is not None else 10_000

    domains = {}
    for f in factors:
        domains.update(f.domains)

    # Visit factors so each one overlaps the already-assigned set when
    # possible; smaller tables first keeps branching low.
    order: list[int] = []
    seen_vars: set[int] = set()
    remaining = sorted(range(len(factors)), key=lambda k: (factors[k].size, k))
    while remaining:
        pick = None
        for k in remaining:
            if not order or (set(factors[k].scope) & seen_vars):
                pick = k
                break
        if pick is None:
            pick = remaining[0]
        order.append(pick)
        seen_vars |= set(factors[pick].scope)
        remaining = [k for k in remaining if k != pick]

    solutions: list[dict[int, object]] = []
    complete = True

    def emit(partial):
        sol = dict(result.solved)
        for v, idx in partial.items():
            sol[v] = domains[v].values[idx]
        solutions.append(sol)

    def walk(k, partial):
        nonlocal complete
        if len(solutions) >= cap:
            complete = False
            return
        if k == len(order):
            emit(partial)
            return
        f = factors[order[k]]
        rows = f.rows_array()
        mask = np.ones(len(rows), dtype=bool)
        free_cols = []
        for col, v in enumerate(f.scope):
            if v in partial:
                mask &= rows[:, col] == partial[v]
            else:
                free_cols.append((col, v))
        sub = rows[mask]
        if not free_cols:
            if len(sub):
                walk(k + 1, partial)
            return
        seen_combo = set()
        for row in sub:
            combo = tuple(int(row[c]) for c, _ in free_cols)
            if combo in seen_combo:
                continue
            seen_combo.add(combo)
            ext = dict(partial)
            for (c, v), idx in zip(free_cols, combo):
                ext[v] = idx
            walk(k + 1, ext)
            if len(solutions) >= cap:
                complete = False
                return

    walk(0, {})
    return EnumeratedSolutions(solutions, complete)
