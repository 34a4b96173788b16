"""Exception hierarchy for the whole package.

Every error raised by the factor algebra, graph construction, inference,
or the solver derives from :class:`PgmForgeError`, so callers can catch
one base type at the CLI boundary.
"""


class PgmForgeError(Exception):
    """Base class for all package errors."""


# --- factor algebra -------------------------------------------------------

class FactorError(PgmForgeError):
    pass


class DuplicateEntry(FactorError):
    pass


class OutOfDomainValue(FactorError):
    pass


class NonPositivePotential(FactorError):
    pass


class DomainMismatch(FactorError):
    pass


class ScopeNotSubset(FactorError):
    pass


class ScopeMismatch(FactorError):
    pass


class DivisionByZero(FactorError):
    pass


class UnknownVariable(FactorError):
    pass


class EmptySupport(FactorError):
    """An operation required a non-empty table.

    Carries optional ``edge`` / ``cluster`` context when raised during
    message passing, so contradictions can be reported at the offending
    location.
    """

    def __init__(self, message="empty support", *, edge=None, cluster=None):
        super().__init__(message)
        self.edge = edge
        self.cluster = cluster


class CapacityExceeded(FactorError):
    """A table would materialise more entries than the configured cap."""

    def __init__(self, message, *, required=None, cap=None):
        super().__init__(message)
        self.required = required
        self.cap = cap


# --- graphs ---------------------------------------------------------------

class GraphError(PgmForgeError):
    pass


class NotATree(GraphError):
    pass


# --- solver ---------------------------------------------------------------

class SolverError(PgmForgeError):
    pass


class DisjointScopes(SolverError):
    pass


class Contradiction(SolverError):
    """The constraint system admits no consistent assignment."""


class TimeoutExceeded(SolverError):
    """A cooperative deadline expired mid-solve."""


# --- puzzles --------------------------------------------------------------

class PuzzleError(PgmForgeError):
    pass


class MalformedSpec(PuzzleError):
    pass


class InconsistentClue(PuzzleError):
    pass


class IncompleteAssignment(PuzzleError):
    pass


class ParseError(PuzzleError):
    def __init__(self, message, *, line=None, column=None):
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + where)
        self.line = line
        self.column = column
