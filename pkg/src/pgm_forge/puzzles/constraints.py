"""Constraint objects evaluated directly from puzzle specs.

These are the ground truth for ``verify_solution`` and for the
exhaustive backtracking search: they never touch the factor tables, so
they stay an independent check on the whole factor pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from ..errors import IncompleteAssignment


class Constraint:
    vars: tuple[int, ...]

    def satisfied(self, assign: Mapping[int, object]) -> bool:
        raise NotImplementedError

    def feasible(self, assign: Mapping[int, object]) -> bool:
        """May this partial assignment still extend to a satisfying one?

        Sound but not necessarily tight: returning True never excludes a
        solution.
        """
        raise NotImplementedError

    def _values(self, assign):
        return [assign[v] for v in self.vars if v in assign]


@dataclass(init=False)
class AllDifferent(Constraint):
    def __init__(self, vars_):
        self.vars = tuple(vars_)

    def satisfied(self, assign):
        vals = [assign[v] for v in self.vars]
        return len(set(vals)) == len(vals)

    def feasible(self, assign):
        vals = self._values(assign)
        return len(set(vals)) == len(vals)


@dataclass(init=False)
class CageSum(Constraint):
    """Cells sum to a target; ``distinct`` additionally forbids repeats."""

    def __init__(self, vars_, target, distinct, value_range=(1, 9)):
        self.vars = tuple(vars_)
        self.target = target
        self.distinct = distinct
        self.lo, self.hi = value_range

    def satisfied(self, assign):
        vals = [assign[v] for v in self.vars]
        if self.distinct and len(set(vals)) != len(vals):
            return False
        return sum(vals) == self.target

    def feasible(self, assign):
        vals = self._values(assign)
        if self.distinct and len(set(vals)) != len(vals):
            return False
        rest = len(self.vars) - len(vals)
        partial = sum(vals)
        return partial + rest * self.lo <= self.target <= partial + rest * self.hi


@dataclass(init=False)
class CageProduct(Constraint):
    def __init__(self, vars_, target):
        self.vars = tuple(vars_)
        self.target = target

    def satisfied(self, assign):
        prod = 1
        for v in self.vars:
            prod *= assign[v]
        return prod == self.target

    def feasible(self, assign):
        prod = 1
        for x in self._values(assign):
            prod *= x
        if prod == 0:
            return self.target == 0
        if len(self._values(assign)) == len(self.vars):
            return prod == self.target
        return self.target % prod == 0


@dataclass(init=False)
class CageDifference(Constraint):
    """Two cells whose difference (either order) hits the target."""

    def __init__(self, vars_, target):
        self.vars = tuple(vars_)
        self.target = target

    def satisfied(self, assign):
        a, b = (assign[v] for v in self.vars)
        return abs(a - b) == self.target

    def feasible(self, assign):
        if len(self._values(assign)) < 2:
            return True
        return self.satisfied(assign)


@dataclass(init=False)
class CageRatio(Constraint):
    """Two cells whose ratio (either order) hits the target."""

    def __init__(self, vars_, target):
        self.vars = tuple(vars_)
        self.target = target

    def satisfied(self, assign):
        a, b = (assign[v] for v in self.vars)
        return a == b * self.target or b == a * self.target

    def feasible(self, assign):
        if len(self._values(assign)) < 2:
            return True
        return self.satisfied(assign)


@dataclass(init=False)
class ParityXor(Constraint):
    """output = xor of the inputs (all binary)."""

    def __init__(self, output, inputs):
        self.output = output
        self.inputs = tuple(inputs)
        self.vars = (output,) + self.inputs

    def satisfied(self, assign):
        acc = 0
        for v in self.inputs:
            acc ^= assign[v]
        return assign[self.output] == acc

    def feasible(self, assign):
        if any(v not in assign for v in self.vars):
            return True
        return self.satisfied(assign)


def check_solution(variables, domains, constraints, clues, assign) -> bool:
    """Full-assignment check used by verify_solution."""
    for v in variables:
        if v not in assign:
            raise IncompleteAssignment(f"variable {v} missing from the assignment")
        if assign[v] not in domains[v]:
            return False
    for v, val in clues.items():
        if assign[v] != val:
            return False
    return all(c.satisfied(assign) for c in constraints)


def backtracking_solutions(
    variables: Sequence[int],
    domains: Mapping[int, tuple],
    constraints: Sequence[Constraint],
    clues: Mapping[int, object],
    cap: int | None = None,
) -> tuple[list[dict[int, object]], bool]:
    """Exhaustive depth-first search with forward checking.

    Deterministic order (fewest-candidates variable first, domain order
    for values).  Returns solutions and a completeness flag; the flag is
    False when the cap stopped the enumeration early.
    """
    by_var: dict[int, list[Constraint]] = {v: [] for v in variables}
    for c in constraints:
        for v in c.vars:
            by_var[v].append(c)

    candidates: dict[int, list] = {}
    for v in variables:
        if v in clues:
            if clues[v] not in domains[v]:
                return [], True
            candidates[v] = [clues[v]]
        else:
            candidates[v] = list(domains[v])

    solutions: list[dict[int, object]] = []
    assign: dict[int, object] = {}
    complete = True

    def prune(var) -> tuple[dict[int, list], bool]:
        """Filter neighbour candidates after assigning ``var``."""
        saved: dict[int, list] = {}
        for c in by_var[var]:
            for u in c.vars:
                if u in assign:
                    continue
                kept = [x for x in candidates[u] if _ok(c, u, x)]
                if len(kept) != len(candidates[u]):
                    if u not in saved:
                        saved[u] = candidates[u]
                    candidates[u] = kept
                    if not kept:
                        return saved, False
        return saved, True

    def _ok(c, u, x):
        assign[u] = x
        try:
            return c.feasible(assign)
        finally:
            del assign[u]

    def walk():
        nonlocal complete
        if cap is not None and len(solutions) >= cap:
            complete = False
            return
        pending = [v for v in variables if v not in assign]
        if not pending:
            solutions.append(dict(assign))
            return
        var = min(pending, key=lambda v: (len(candidates[v]), v))
        for value in list(candidates[var]):
            assign[var] = value
            if all(c.feasible(assign) for c in by_var[var]):
                saved, ok = prune(var)
                if ok:
                    walk()
                for u, old in saved.items():
                    candidates[u] = old
            del assign[var]
            if cap is not None and len(solutions) >= cap:
                complete = False
                return

    walk()
    return solutions, complete
