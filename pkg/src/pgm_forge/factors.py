"""Sparse discrete factors and their algebra.

A factor is a non-negative potential table over a set of discrete
variables.  Only assignments with a strictly positive potential are
stored; everything absent is an implicit zero.  Factors are immutable:
every operation returns a new factor, so they are safe to share between
threads and solver rounds.

Conventions used throughout:

* variables are opaque integer ids; scopes are kept sorted by id,
* table rows hold value *indices* into each variable's domain,
* rows are kept lexicographically sorted, which makes iteration order,
  equality, and tie-breaking reproducible,
* ``divergence`` uses the natural log, ``mass`` and
  ``upper_bound_entropy`` use log2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    CapacityExceeded,
    DivisionByZero,
    DomainMismatch,
    DuplicateEntry,
    EmptySupport,
    NonPositivePotential,
    OutOfDomainValue,
    ScopeMismatch,
    ScopeNotSubset,
    UnknownVariable,
)

#: Hard ceiling on materialised table entries unless a caller lowers it.
DEFAULT_CAPACITY = 2 ** 27

_ROW_DTYPE = np.int16


class NormMode(Enum):
    """Normalisation / marginalisation flavour.

    MAX is the default for constraint solving (keeps 0/1 semantics),
    SUM for probabilistic queries.
    """

    SUM = "sum"
    MAX = "max"


@dataclass(frozen=True)
class Domain:
    """Ordered admissible values of one variable."""

    variable: int
    values: tuple

    def __post_init__(self):
        if len(self.values) == 0:
            raise OutOfDomainValue(f"variable {self.variable} has an empty domain")
        if len(set(self.values)) != len(self.values):
            raise OutOfDomainValue(f"variable {self.variable} has duplicate domain values")

    @property
    def cardinality(self) -> int:
        return len(self.values)

    def index_of(self, value) -> int:
        try:
            return self.values.index(value)
        except ValueError:
            raise OutOfDomainValue(
                f"value {value!r} not in domain of variable {self.variable}"
            ) from None


class VariablePool:
    """Bijective mapping between human-readable labels and variable ids."""

    def __init__(self):
        self._by_label: dict[str, int] = {}
        self._by_id: dict[int, str] = {}

    def intern(self, label: str) -> int:
        if label in self._by_label:
            return self._by_label[label]
        vid = len(self._by_label)
        self._by_label[label] = vid
        self._by_id[vid] = label
        return vid

    def id_of(self, label: str) -> int:
        if label not in self._by_label:
            raise UnknownVariable(f"unknown variable label {label!r}")
        return self._by_label[label]

    def label(self, vid: int) -> str:
        if vid not in self._by_id:
            raise UnknownVariable(f"unknown variable id {vid}")
        return self._by_id[vid]

    def labels(self) -> dict[int, str]:
        return dict(self._by_id)

    def __len__(self) -> int:
        return len(self._by_label)


def _lexsort_rows(rows: np.ndarray) -> np.ndarray:
    """Order that sorts rows lexicographically, leftmost column first."""
    if rows.shape[1] == 0:
        return np.arange(rows.shape[0])
    return np.lexsort(rows.T[::-1])


def _encode_rows(rows: np.ndarray, cards: Sequence[int]) -> np.ndarray:
    """Collapse each row into a single int64 key, overflow-safe.

    Keys preserve equality (and lexicographic order) of rows.  When the
    mixed-radix range would overflow int64, keys are recompressed with
    ``np.unique`` which keeps the relative order.
    """
    n = rows.shape[0]
    keys = np.zeros(n, dtype=np.int64)
    span = 1
    for col, card in enumerate(cards):
        if span * card > 2 ** 62:
            _, keys = np.unique(keys, return_inverse=True)
            keys = keys.astype(np.int64)
            span = int(keys.max()) + 1 if n else 1
            if span * card > 2 ** 62:  # can only happen if n itself is huge
                raise CapacityExceeded("row key space exceeds int64")
        keys = keys * card + rows[:, col]
        span *= card
    return keys


class SparseFactor:
    """Potential table over a sorted variable scope, implicit zeros.

    Rows are value-index tuples into the per-variable domains, stored as
    an ``(n, len(scope))`` int matrix with a parallel potential vector.
    """

    __slots__ = ("scope", "domains", "_rows", "_vals")

    def __init__(self, scope, domains, rows, vals, *, _canonical=False):
        # Internal constructor; use make_factor / vacuous / from_arrays.
        self.scope: tuple[int, ...] = tuple(scope)
        self.domains: dict[int, Domain] = dict(domains)
        rows = np.asarray(rows, dtype=_ROW_DTYPE).reshape(len(vals), len(self.scope))
        vals = np.asarray(vals, dtype=np.float64)
        if not _canonical:
            keep = vals > 0.0
            if not keep.all():
                rows, vals = rows[keep], vals[keep]
            order = _lexsort_rows(rows)
            rows, vals = rows[order], vals[order]
        rows.flags.writeable = False
        vals.flags.writeable = False
        self._rows = rows
        self._vals = vals

    # --- construction helpers --------------------------------------------

    @classmethod
    def from_arrays(cls, scope, domains, rows, vals) -> "SparseFactor":
        """Build from raw index rows (used by puzzle compilers).

        ``scope`` need not be sorted; columns are permuted to the
        canonical sorted-by-id order.  Zero potentials are dropped.
        """
        scope = tuple(scope)
        rows = np.asarray(rows, dtype=_ROW_DTYPE).reshape(-1, len(scope))
        order = sorted(range(len(scope)), key=lambda k: scope[k])
        sorted_scope = tuple(scope[k] for k in order)
        if sorted_scope != scope:
            rows = rows[:, order]
        doms = {v: domains[v] for v in sorted_scope}
        return cls(sorted_scope, doms, rows, vals)

    # --- basic accessors ---------------------------------------------------

    @property
    def size(self) -> int:
        """Number of stored (non-zero) entries."""
        return self._rows.shape[0]

    @property
    def dense_size(self) -> int:
        out = 1
        for v in self.scope:
            out *= self.domains[v].cardinality
        return out

    def cards(self) -> tuple[int, ...]:
        return tuple(self.domains[v].cardinality for v in self.scope)

    def items(self) -> Iterator[tuple[tuple[int, ...], float]]:
        for row, val in zip(self._rows, self._vals):
            yield tuple(int(x) for x in row), float(val)

    def table(self) -> dict[tuple[int, ...], float]:
        return dict(self.items())

    def rows_array(self) -> np.ndarray:
        return self._rows

    def values_array(self) -> np.ndarray:
        return self._vals

    def support_of(self, variable: int) -> tuple[int, ...]:
        """Distinct value indices of ``variable`` present in the table."""
        col = self._col(variable)
        return tuple(int(x) for x in np.unique(self._rows[:, col]))

    def _col(self, variable: int) -> int:
        try:
            return self.scope.index(variable)
        except ValueError:
            raise UnknownVariable(f"variable {variable} not in scope {self.scope}") from None

    def same_table(self, other: "SparseFactor", *, atol: float = 0.0) -> bool:
        if self.scope != other.scope or self.size != other.size:
            return False
        if not np.array_equal(self._rows, other._rows):
            return False
        if atol == 0.0:
            return bool(np.array_equal(self._vals, other._vals))
        return bool(np.allclose(self._vals, other._vals, rtol=0.0, atol=atol))

    def __repr__(self):
        return f"SparseFactor(scope={self.scope}, entries={self.size})"

    # --- operations ---------------------------------------------------------

    def multiply(self, other: "SparseFactor", *, capacity: int | None = None) -> "SparseFactor":
        """Factor product over the union scope.

        Assignments absent from either operand's projection are absent
        from the result (0 * x = 0).
        """
        cap = DEFAULT_CAPACITY if capacity is None else capacity
        shared = sorted(set(self.scope) & set(other.scope))
        for v in shared:
            if self.domains[v].values != other.domains[v].values:
                raise DomainMismatch(f"variable {v} has different domains in the operands")

        out_scope = tuple(sorted(set(self.scope) | set(other.scope)))
        out_domains = {v: (self.domains[v] if v in self.domains else other.domains[v]) for v in out_scope}

        n1, n2 = self.size, other.size
        if n1 == 0 or n2 == 0:
            return SparseFactor(out_scope, out_domains,
                                np.empty((0, len(out_scope)), dtype=_ROW_DTYPE),
                                np.empty(0), _canonical=True)

        if not shared:
            total = n1 * n2
            if total > cap:
                raise CapacityExceeded(
                    f"product would hold {total} entries (cap {cap})", required=total, cap=cap)
            left = np.repeat(np.arange(n1), n2)
            right = np.tile(np.arange(n2), n1)
        else:
            s_cards = [self.domains[v].cardinality for v in shared]
            k1 = _encode_rows(self._rows[:, [self._col(v) for v in shared]], s_cards)
            k2 = _encode_rows(other._rows[:, [other._col(v) for v in shared]], s_cards)
            order2 = np.argsort(k2, kind="stable")
            k2s = k2[order2]
            lo = np.searchsorted(k2s, k1, side="left")
            hi = np.searchsorted(k2s, k1, side="right")
            counts = hi - lo
            total = int(counts.sum())
            if total > cap:
                raise CapacityExceeded(
                    f"product would hold {total} entries (cap {cap})", required=total, cap=cap)
            left = np.repeat(np.arange(n1), counts)
            starts = np.repeat(lo, counts)
            within = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
            right = order2[starts + within]

        out = np.empty((len(left), len(out_scope)), dtype=_ROW_DTYPE)
        for j, v in enumerate(out_scope):
            if v in self.domains:
                out[:, j] = self._rows[left, self._col(v)]
            else:
                out[:, j] = other._rows[right, other._col(v)]
        vals = self._vals[left] * other._vals[right]
        return SparseFactor(out_scope, out_domains, out, vals)

    def divide(self, other: "SparseFactor") -> "SparseFactor":
        """Component-wise quotient; 0/0 is 0 (entry stays absent)."""
        if not set(other.scope) <= set(self.scope):
            raise ScopeNotSubset(f"denominator scope {other.scope} not within {self.scope}")
        for v in other.scope:
            if self.domains[v].values != other.domains[v].values:
                raise DomainMismatch(f"variable {v} has different domains in the operands")
        if self.size == 0:
            return self
        if len(other.scope) == 0:
            if other.size == 0:
                raise DivisionByZero("denominator is zero on stored entries")
            return SparseFactor(self.scope, self.domains, self._rows,
                                self._vals / other._vals[0], _canonical=True)
        cards = [other.domains[v].cardinality for v in other.scope]
        k_num = _encode_rows(self._rows[:, [self._col(v) for v in other.scope]], cards)
        k_den = _encode_rows(other._rows, cards)  # other rows are sorted -> keys sorted
        pos = np.searchsorted(k_den, k_num)
        pos_clipped = np.minimum(pos, len(k_den) - 1)
        matched = k_den[pos_clipped] == k_num
        if not matched.all():
            raise DivisionByZero("denominator is zero on stored entries of the numerator")
        vals = self._vals / other._vals[pos_clipped]
        return SparseFactor(self.scope, self.domains, self._rows, vals, _canonical=True)

    def marginalize(self, keep: Iterable[int], mode: NormMode = NormMode.SUM) -> "SparseFactor":
        """Project onto ``keep``, combining eliminated states by sum or max."""
        keep = sorted(set(keep))
        for v in keep:
            if v not in self.domains:
                raise UnknownVariable(f"variable {v} not in scope {self.scope}")
        keep_t = tuple(keep)
        if keep_t == self.scope:
            return self
        out_domains = {v: self.domains[v] for v in keep_t}
        if self.size == 0:
            return SparseFactor(keep_t, out_domains,
                                np.empty((0, len(keep_t)), dtype=_ROW_DTYPE),
                                np.empty(0), _canonical=True)
        sub = self._rows[:, [self._col(v) for v in keep_t]]
        if len(keep_t) == 0:
            agg = self._vals.sum() if mode is NormMode.SUM else self._vals.max()
            return SparseFactor((), {}, np.empty((1, 0), dtype=_ROW_DTYPE),
                                np.array([agg]), _canonical=True)
        keys = _encode_rows(sub, [self.domains[v].cardinality for v in keep_t])
        order = np.argsort(keys, kind="stable")
        keys_s = keys[order]
        vals_s = self._vals[order]
        boundaries = np.flatnonzero(np.concatenate(([True], keys_s[1:] != keys_s[:-1])))
        if mode is NormMode.SUM:
            agg = np.add.reduceat(vals_s, boundaries)
        else:
            agg = np.maximum.reduceat(vals_s, boundaries)
        return SparseFactor(keep_t, out_domains, sub[order][boundaries], agg)

    def reduce(self, evidence: Mapping[int, int]) -> "SparseFactor":
        """Slice on observed value indices; observed variables leave the scope.

        The result is deliberately not renormalised.
        """
        for v, idx in evidence.items():
            if v not in self.domains:
                raise UnknownVariable(f"variable {v} not in scope {self.scope}")
            if not 0 <= idx < self.domains[v].cardinality:
                raise OutOfDomainValue(f"index {idx} outside domain of variable {v}")
        if not evidence:
            return self
        mask = np.ones(self.size, dtype=bool)
        for v, idx in evidence.items():
            mask &= self._rows[:, self._col(v)] == idx
        rest = tuple(v for v in self.scope if v not in evidence)
        cols = [self._col(v) for v in rest]
        rows = self._rows[mask][:, cols]
        vals = self._vals[mask]
        out_domains = {v: self.domains[v] for v in rest}
        return SparseFactor(rest, out_domains, rows, vals, _canonical=True)

    def normalize(self, mode: NormMode) -> "SparseFactor":
        if self.size == 0:
            raise EmptySupport("cannot normalise an empty table")
        denom = self._vals.sum() if mode is NormMode.SUM else self._vals.max()
        if denom == 1.0:
            return self
        return SparseFactor(self.scope, self.domains, self._rows,
                            self._vals / denom, _canonical=True)

    def damp(self, prev: "SparseFactor", lam: float) -> "SparseFactor":
        """Element-wise ``lam * self + (1 - lam) * prev`` over the support union."""
        if self.scope != prev.scope:
            raise ScopeMismatch(f"damp needs identical scopes, got {self.scope} vs {prev.scope}")
        for v in self.scope:
            if self.domains[v].values != prev.domains[v].values:
                raise ScopeMismatch(f"variable {v} has different domains in the operands")
        if lam == 1.0:
            return self
        if lam == 0.0:
            return prev
        rows = np.concatenate([self._rows, prev._rows], axis=0)
        vals = np.concatenate([lam * self._vals, (1.0 - lam) * prev._vals])
        if rows.shape[1] == 0:
            return SparseFactor(self.scope, self.domains,
                                np.empty((1, 0), dtype=_ROW_DTYPE),
                                np.array([vals.sum()]), _canonical=True)
        keys = _encode_rows(rows, self.cards())
        order = np.argsort(keys, kind="stable")
        keys_s, vals_s = keys[order], vals[order]
        boundaries = np.flatnonzero(np.concatenate(([True], keys_s[1:] != keys_s[:-1])))
        agg = np.add.reduceat(vals_s, boundaries)
        return SparseFactor(self.scope, self.domains, rows[order][boundaries], agg)


# --- module-level constructors and metrics ---------------------------------

def make_factor(scope, domains, entries) -> SparseFactor:
    """Build a factor from explicit (assignment, potential) pairs.

    Assignments may be mappings ``{var: value_index}`` or sequences of
    value indices aligned with ``scope`` as given.  Potentials must be
    strictly positive; an empty entry list yields the contradiction
    factor (empty support).
    """
    scope = tuple(scope)
    doms = {v: domains[v] for v in scope}
    rows = np.empty((len(entries), len(scope)), dtype=_ROW_DTYPE)
    vals = np.empty(len(entries))
    for i, (assignment, pot) in enumerate(entries):
        if pot <= 0:
            raise NonPositivePotential(f"potential {pot} for entry {assignment}")
        if isinstance(assignment, Mapping):
            if set(assignment) != set(scope):
                raise UnknownVariable(
                    f"assignment variables {sorted(assignment)} do not match scope {sorted(scope)}")
            seq = [assignment[v] for v in scope]
        else:
            if len(assignment) != len(scope):
                raise UnknownVariable(
                    f"assignment of length {len(assignment)} for scope of {len(scope)}")
            seq = list(assignment)
        for v, idx in zip(scope, seq):
            if not 0 <= idx < doms[v].cardinality:
                raise OutOfDomainValue(f"index {idx} outside domain of variable {v}")
        rows[i] = seq
        vals[i] = pot
    if len(entries) > 1:
        keys = _encode_rows(rows, [doms[v].cardinality for v in scope])
        if len(np.unique(keys)) != len(keys):
            raise DuplicateEntry("duplicate assignment in factor entries")
    return SparseFactor.from_arrays(scope, doms, rows, vals)


def vacuous(scope, domains, *, capacity: int | None = None) -> SparseFactor:
    """The all-ones (uniform, uninformative) factor over ``scope``."""
    scope = tuple(sorted(scope))
    if not scope:
        raise UnknownVariable("vacuous factor needs a non-empty scope")
    doms = {v: domains[v] for v in scope}
    cap = DEFAULT_CAPACITY if capacity is None else capacity
    total = 1
    for v in scope:
        total *= doms[v].cardinality
    if total > cap:
        raise CapacityExceeded(
            f"vacuous table would hold {total} entries (cap {cap})", required=total, cap=cap)
    grids = np.indices([doms[v].cardinality for v in scope])
    rows = grids.reshape(len(scope), -1).T.astype(_ROW_DTYPE)
    return SparseFactor(scope, doms, rows, np.ones(total), _canonical=True)


def upper_bound_entropy(scope, domains) -> float:
    """log2 of the dense assignment-space size of ``scope`` (0 for empty)."""
    return float(sum(math.log2(domains[v].cardinality) for v in scope))


def mass(factor: SparseFactor) -> float:
    """How informed a factor is about its scope.

    Base-2 KL divergence of the sum-normalised table against the uniform
    distribution over the dense assignment space.  For a 0/1 table with
    k of N assignments this is exactly log2(N / k).
    """
    if factor.size == 0:
        raise EmptySupport("mass of an empty table")
    p = factor._vals / factor._vals.sum()
    return float(np.dot(p, np.log2(p)) + upper_bound_entropy(factor.scope, factor.domains))


def divergence(p: SparseFactor, q: SparseFactor) -> float:
    """KL divergence D(p || q), both sides sum-normalised first.

    Natural log.  Terms with p == 0 contribute nothing; any p > 0 where
    q == 0 makes the divergence infinite.
    """
    if p.scope != q.scope:
        raise ScopeMismatch(f"divergence needs identical scopes, got {p.scope} vs {q.scope}")
    for v in p.scope:
        if p.domains[v].values != q.domains[v].values:
            raise ScopeMismatch(f"variable {v} has different domains in the operands")
    if p.size == 0:
        return 0.0
    pv = p._vals / p._vals.sum()
    if q.size == 0:
        return math.inf
    qv = q._vals / q._vals.sum()
    if len(p.scope) == 0:
        return 0.0
    cards = p.cards()
    kp = _encode_rows(p._rows, cards)
    kq = _encode_rows(q._rows, cards)  # sorted, since rows are canonical
    pos = np.searchsorted(kq, kp)
    pos_c = np.minimum(pos, len(kq) - 1)
    matched = kq[pos_c] == kp
    if not matched.all():
        return math.inf
    return float(np.dot(pv, np.log(pv / qv[pos_c])))


# --- JSON literal format (tests / fixtures) --------------------------------

def factor_to_json(factor: SparseFactor, labels: Mapping[int, str]) -> dict:
    """Serialise to the fixture literal format (names, domains, entries)."""
    names = [labels[v] for v in factor.scope]
    return {
        "scope": names,
        "domains": {labels[v]: list(factor.domains[v].values) for v in factor.scope},
        "entries": [{"assign": list(row), "p": val} for row, val in factor.items()],
    }


def factor_from_json(obj: Mapping, pool: VariablePool) -> SparseFactor:
    """Parse the fixture literal format, interning labels through ``pool``."""
    scope = tuple(pool.intern(name) for name in obj["scope"])
    domains = {}
    for name in obj["scope"]:
        vid = pool.id_of(name)
        domains[vid] = Domain(vid, tuple(obj["domains"][name]))
    entries = [(tuple(e["assign"]), float(e["p"])) for e in obj["entries"]]
    return make_factor(scope, domains, entries)


def factor_to_json_str(factor: SparseFactor, labels: Mapping[int, str]) -> str:
    return json.dumps(factor_to_json(factor, labels), sort_keys=True)
