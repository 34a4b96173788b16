"""Compile puzzle specs into variables, constraints, and factor lists.

Clues are observed at compile time: a clued cell never becomes a factor
variable, and every constraint table is generated already sliced on the
clues, so large all-different tables are never materialised beyond the
entries the clues allow.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import networkx as nx
import numpy as np

from ..errors import InconsistentClue, MalformedSpec
from ..factors import Domain, SparseFactor, VariablePool
from .constraints import (
    AllDifferent,
    CageDifference,
    CageProduct,
    CageRatio,
    CageSum,
    Constraint,
    ParityXor,
)
from .spec import Cage, CageOp, PuzzleKind, PuzzleSpec


@dataclass
class CompiledPuzzle:
    """Constraint-level view of a puzzle (no factor tables)."""

    spec: PuzzleSpec
    pool: VariablePool
    variables: list[int]
    domains: dict[int, tuple]
    constraints: list[Constraint]
    clues: dict[int, object]

    def labels(self) -> dict[int, str]:
        return self.pool.labels()


@dataclass
class BuildResult:
    """Factor-level view: what the solver consumes."""

    variables: list[int]
    domains: dict[int, Domain]
    factors: list[SparseFactor]
    evidence: dict[int, object]
    pool: VariablePool

    def labels(self) -> dict[int, str]:
        return self.pool.labels()


# --- constraint-level compilation -------------------------------------------

def _grid_vars(spec, pool):
    return {(r, c): pool.intern(f"r{r + 1}c{c + 1}")
            for r in range(spec.rows) for c in range(spec.cols)}


def _sudoku_regions(size):
    box = {4: 2, 9: 3}[size]
    regions = []
    for r in range(size):
        regions.append([(r, c) for c in range(size)])
    for c in range(size):
        regions.append([(r, c) for r in range(size)])
    for br in range(0, size, box):
        for bc in range(0, size, box):
            regions.append([(br + i, bc + j) for i in range(box) for j in range(box)])
    return regions


def compile_puzzle(spec: PuzzleSpec) -> CompiledPuzzle:
    pool = VariablePool()
    kind = spec.kind

    if kind in (PuzzleKind.SUDOKU4, PuzzleKind.SUDOKU9, PuzzleKind.KILLER_SUDOKU):
        size = spec.rows
        cells = _grid_vars(spec, pool)
        domains = {v: tuple(range(1, size + 1)) for v in cells.values()}
        constraints: list[Constraint] = [
            AllDifferent([cells[p] for p in region]) for region in _sudoku_regions(size)
        ]
        if kind is PuzzleKind.KILLER_SUDOKU:
            for cage in spec.cages:
                constraints.append(CageSum([cells[p] for p in cage.cells], cage.target,
                                           distinct=True, value_range=(1, size)))
        clues = {cells[(r, c)]: v for r, c, v in spec.clues}
        return CompiledPuzzle(spec, pool, sorted(cells.values()), domains, constraints, clues)

    if kind is PuzzleKind.CALCUDOKU:
        size = spec.rows
        cells = _grid_vars(spec, pool)
        domains = {v: tuple(range(1, size + 1)) for v in cells.values()}
        constraints = [
            AllDifferent([cells[(r, c)] for c in range(size)]) for r in range(size)
        ] + [
            AllDifferent([cells[(r, c)] for r in range(size)]) for c in range(size)
        ]
        clues = {cells[(r, c)]: v for r, c, v in spec.clues}
        for cage in spec.cages:
            cage_vars = [cells[p] for p in cage.cells]
            if cage.op is CageOp.NONE:
                clues[cage_vars[0]] = cage.target
            elif cage.op in (CageOp.SUM, CageOp.ADD):
                constraints.append(CageSum(cage_vars, cage.target, distinct=False,
                                           value_range=(1, size)))
            elif cage.op is CageOp.MUL:
                constraints.append(CageProduct(cage_vars, cage.target))
            elif cage.op is CageOp.SUB:
                constraints.append(CageDifference(cage_vars, cage.target))
            else:
                constraints.append(CageRatio(cage_vars, cage.target))
        return CompiledPuzzle(spec, pool, sorted(cells.values()), domains, constraints, clues)

    if kind is PuzzleKind.KAKURO:
        used = sorted({p for cage in spec.cages for p in cage.cells})
        cells = {(r, c): pool.intern(f"r{r + 1}c{c + 1}") for r, c in used}
        domains = {v: tuple(range(1, 10)) for v in cells.values()}
        constraints = [
            CageSum([cells[p] for p in cage.cells], cage.target, distinct=True)
            for cage in spec.cages
        ]
        clues = {}
        for r, c, v in spec.clues:
            if (r, c) not in cells:
                raise MalformedSpec(f"clue at ({r},{c}) is not in any run")
            clues[cells[(r, c)]] = v
        return CompiledPuzzle(spec, pool, sorted(cells.values()), domains, constraints, clues)

    if kind is PuzzleKind.FILL_A_PIX:
        cells = _grid_vars(spec, pool)
        domains = {v: (0, 1) for v in cells.values()}
        constraints = [
            CageSum([cells[p] for p in cage.cells], cage.target, distinct=False,
                    value_range=(0, 1))
            for cage in spec.cages
        ]
        clues = {cells[(r, c)]: v for r, c, v in spec.clues}
        return CompiledPuzzle(spec, pool, sorted(cells.values()), domains, constraints, clues)

    if kind is PuzzleKind.GRAPH_COLOURING:
        names = sorted({u for e in spec.edges for u in e})
        ids = {name: pool.intern(name) for name in names}
        domains = {v: tuple(range(1, spec.colours + 1)) for v in ids.values()}
        graph = nx.Graph()
        graph.add_nodes_from(names)
        graph.add_edges_from(spec.edges)
        cliques = sorted((sorted(cl) for cl in nx.find_cliques(graph)),
                         key=lambda cl: (-len(cl), cl))
        constraints = [AllDifferent([ids[n] for n in cl]) for cl in cliques if len(cl) >= 2]
        return CompiledPuzzle(spec, pool, sorted(ids.values()), domains, constraints, {})

    if kind is PuzzleKind.HAMMING74:
        bits = [pool.intern(f"b{i}") for i in range(1, 8)]
        received = [pool.intern(f"r{i}") for i in range(1, 8)]
        domains: dict[int, tuple] = {v: (0, 1) for v in bits}
        for k, v in enumerate(received):
            domains[v] = (int(spec.received[k]),)
        constraints = [
            ParityXor(bits[4], (bits[0], bits[1], bits[2])),
            ParityXor(bits[5], (bits[1], bits[2], bits[3])),
            ParityXor(bits[6], (bits[0], bits[2], bits[3])),
        ]
        return CompiledPuzzle(spec, pool, bits + received, domains, constraints, {})

    raise MalformedSpec(f"unsupported puzzle kind {kind}")


# --- factor generation -------------------------------------------------------

def _check_clues(constraint_vars, clues, domains):
    for v in constraint_vars:
        if v in clues and clues[v] not in domains[v]:
            raise InconsistentClue(f"clue {clues[v]!r} outside the domain of variable {v}")


def _permutation_matrix(n_values: int, k: int) -> np.ndarray:
    """All k-permutations of range(n_values) as an (nPk, k) index array."""
    count = math.perm(n_values, k)
    flat = np.fromiter(
        itertools.chain.from_iterable(itertools.permutations(range(n_values), k)),
        dtype=np.int16, count=count * k)
    return flat.reshape(count, k)


def _alldiff_rows(free_vars, free_values, domains):
    """Permutation support of an all-different table over the free cells.

    ``free_values`` are the values still available after removing the
    clued ones; the table has len(free_values) P len(free_vars) rows.
    """
    k = len(free_vars)
    if k > len(free_values):
        return np.empty((0, k), dtype=np.int16)
    positions = _permutation_matrix(len(free_values), k)
    rows = np.empty_like(positions)
    for col, v in enumerate(free_vars):
        lookup = np.asarray([domains[v].index(val) for val in free_values], dtype=np.int16)
        rows[:, col] = lookup[positions[:, col]]
    return rows


def _tuple_rows(free_vars, domains, predicate):
    """Generic (small) cage support: filter the full product space."""
    rows = []
    pools = [domains[v] for v in free_vars]
    for combo in itertools.product(*pools):
        if predicate(combo):
            rows.append([domains[v].index(val) for v, val in zip(free_vars, combo)])
    return np.asarray(rows, dtype=np.int16).reshape(-1, len(free_vars))


def _arith_cage_rows(free_vars, domains, target, op):
    """Vectorised sum/product cage support over the dense value grid."""
    pools = [np.asarray(domains[v], dtype=np.int64) for v in free_vars]
    grids = np.meshgrid(*[np.arange(len(p), dtype=np.int16) for p in pools], indexing="ij")
    idx = np.stack([g.reshape(-1) for g in grids], axis=1)
    if op == "sum":
        acc = np.zeros(len(idx), dtype=np.int64)
        for col, pool in enumerate(pools):
            acc += pool[idx[:, col]]
    else:
        acc = np.ones(len(idx), dtype=np.int64)
        for col, pool in enumerate(pools):
            acc *= pool[idx[:, col]]
    return idx[acc == target]


def _sum_distinct_rows(free_vars, values, target, domains):
    """All-different-with-sum support (kakuro runs, killer cages)."""
    k = len(free_vars)
    if k > len(values):
        return np.empty((0, k), dtype=np.int16)
    perms = _permutation_matrix(k, k)
    blocks = []
    for combo in itertools.combinations(range(len(values)), k):
        if sum(values[i] for i in combo) != target:
            continue
        combo_idx = np.asarray(combo, dtype=np.int16)
        blocks.append(combo_idx[perms])
    if not blocks:
        return np.empty((0, k), dtype=np.int16)
    positions = np.vstack(blocks)
    rows = np.empty_like(positions)
    for col, v in enumerate(free_vars):
        lookup = np.asarray([domains[v].index(val) for val in values], dtype=np.int16)
        rows[:, col] = lookup[positions[:, col]]
    return rows


def _constraint_factor(constraint: Constraint, clues, domain_objs, domains) -> SparseFactor | None:
    """Build the sparse table for one constraint, sliced on the clues.

    Returns None when every variable is clued and the clues satisfy the
    constraint (the factor would be a constant 1).  A violated fully
    clued constraint yields an empty-support factor over no variables,
    which downstream reports as a contradiction.
    """
    _check_clues(constraint.vars, clues, domains)
    fixed = {v: clues[v] for v in constraint.vars if v in clues}
    free = sorted(v for v in constraint.vars if v not in clues)

    if not free:
        if constraint.satisfied(fixed):
            return None
        return SparseFactor((), {}, np.empty((0, 0), dtype=np.int16), np.empty(0))

    if isinstance(constraint, AllDifferent):
        used = list(fixed.values())
        if len(set(used)) != len(used):
            rows = np.empty((0, len(free)), dtype=np.int16)
        else:
            values = [val for val in domains[free[0]] if val not in used]
            rows = _alldiff_rows(free, values, domains)
    elif isinstance(constraint, CageSum) and constraint.distinct:
        used = list(fixed.values())
        if len(set(used)) != len(used):
            rows = np.empty((0, len(free)), dtype=np.int16)
        else:
            values = [val for val in domains[free[0]] if val not in used]
            rows = _sum_distinct_rows(free, values, constraint.target - sum(used), domains)
    elif isinstance(constraint, CageSum):
        remaining = constraint.target - sum(fixed.values())
        rows = _tuple_rows(free, domains, lambda combo: sum(combo) == remaining)
    elif isinstance(constraint, (CageProduct, CageDifference, CageRatio, ParityXor)):
        def predicate(combo):
            assign = dict(fixed)
            assign.update(zip(free, combo))
            return constraint.satisfied(assign)

        rows = _tuple_rows(free, domains, predicate)
    else:
        raise MalformedSpec(f"no factor builder for {type(constraint).__name__}")

    doms = {v: domain_objs[v] for v in free}
    return SparseFactor.from_arrays(free, doms, rows, np.ones(len(rows)))


def build_factors(spec: PuzzleSpec) -> BuildResult:
    """Compile a puzzle into its CSP factor list.

    Clued variables are observed away: they appear in the evidence map,
    not in any factor scope.  The Hamming kind additionally emits the
    seven channel factors with 0.9/0.1 potentials, with each received
    bit's domain collapsed to its observed value.
    """
    compiled = compile_puzzle(spec)
    domain_objs = {v: Domain(v, vals) for v, vals in compiled.domains.items()}

    factors: list[SparseFactor] = []
    for constraint in compiled.constraints:
        f = _constraint_factor(constraint, compiled.clues, domain_objs, compiled.domains)
        if f is not None:
            factors.append(f)

    if spec.kind is PuzzleKind.HAMMING74:
        factors.extend(_hamming_channel_factors(spec, compiled, domain_objs))

    return BuildResult(
        variables=list(compiled.variables),
        domains=domain_objs,
        factors=factors,
        evidence=dict(compiled.clues),
        pool=compiled.pool,
    )


def _hamming_channel_factors(spec, compiled, domain_objs):
    """P(R_i | B_i) sliced on the received bit, one factor per bit pair.

    The received variable keeps its (single-value) place in the scope so
    the ten factor scopes stay pairwise non-nested.
    """
    p_same = 1.0 - spec.flip_prob
    out = []
    for k in range(7):
        b = compiled.pool.id_of(f"b{k + 1}")
        r = compiled.pool.id_of(f"r{k + 1}")
        r_bit = int(spec.received[k])
        scope = sorted((b, r))
        rows = []
        vals = []
        for b_val in (0, 1):
            row = {b: b_val, r: 0}  # received domain holds a single value
            rows.append([row[v] for v in scope])
            vals.append(p_same if b_val == r_bit else spec.flip_prob)
        out.append(SparseFactor.from_arrays(
            scope, {b: domain_objs[b], r: domain_objs[r]}, np.asarray(rows), np.asarray(vals)))
    return out
