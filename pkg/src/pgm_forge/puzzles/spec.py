"""Puzzle specifications: parsing, validation, serialisation.

Input formats:

* Sudoku: one line of 81 (or 16) characters, digits with '.' or '0' as
  blanks.
* Killer Sudoku / Calcudoku / Kakuro / Fill-a-pix: JSON with
  ``{"kind", "rows", "cols", "cages": [{"cells", "target", "op"}], "clues"}``.
* Graph colouring: a ``colours N`` header line followed by one ``u v``
  edge per line.
* Hamming(7,4): JSON ``{"received": "1110010", "flip_prob": 0.1}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from ..errors import InconsistentClue, MalformedSpec, ParseError


class PuzzleKind(Enum):
    SUDOKU4 = "sudoku4"
    SUDOKU9 = "sudoku9"
    KILLER_SUDOKU = "killer"
    CALCUDOKU = "calcudoku"
    KAKURO = "kakuro"
    FILL_A_PIX = "fillapix"
    GRAPH_COLOURING = "coloring"
    HAMMING74 = "hamming"


class CageOp(Enum):
    SUM = "sum"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    NONE = "none"


@dataclass(frozen=True)
class Cage:
    cells: tuple[tuple[int, int], ...]
    target: int
    op: CageOp = CageOp.SUM

    def __post_init__(self):
        if not self.cells:
            raise MalformedSpec("cage with no cells")
        if len(set(self.cells)) != len(self.cells):
            raise MalformedSpec("cage lists a cell twice")
        if self.op in (CageOp.SUB, CageOp.DIV) and len(self.cells) != 2:
            raise MalformedSpec(f"{self.op.value} cage must have exactly 2 cells")
        if self.op is CageOp.NONE and len(self.cells) != 1:
            raise MalformedSpec("a given-value cage must have exactly 1 cell")


@dataclass(frozen=True)
class PuzzleSpec:
    kind: PuzzleKind
    rows: int = 0
    cols: int = 0
    clues: tuple[tuple[int, int, int], ...] = ()
    cages: tuple[Cage, ...] = ()
    edges: tuple[tuple[str, str], ...] = ()
    colours: int = 0
    received: str = ""
    flip_prob: float = 0.0


_GRID_SIZES = {PuzzleKind.SUDOKU4: 4, PuzzleKind.SUDOKU9: 9, PuzzleKind.KILLER_SUDOKU: 9}


def _validate(spec: PuzzleSpec) -> PuzzleSpec:
    kind = spec.kind
    if kind in (PuzzleKind.SUDOKU4, PuzzleKind.SUDOKU9, PuzzleKind.KILLER_SUDOKU,
                PuzzleKind.CALCUDOKU, PuzzleKind.KAKURO, PuzzleKind.FILL_A_PIX):
        if spec.rows <= 0 or spec.cols <= 0:
            raise MalformedSpec("grid puzzles need positive dimensions")
        for r, c, v in spec.clues:
            if not (0 <= r < spec.rows and 0 <= c < spec.cols):
                raise MalformedSpec(f"clue at ({r},{c}) outside the {spec.rows}x{spec.cols} grid")
        for cage in spec.cages:
            for r, c in cage.cells:
                if not (0 <= r < spec.rows and 0 <= c < spec.cols):
                    raise MalformedSpec(f"cage cell ({r},{c}) outside the grid")
        if len({(r, c) for r, c, _ in spec.clues}) != len(spec.clues):
            raise MalformedSpec("two clues on the same cell")

    if kind in (PuzzleKind.SUDOKU4, PuzzleKind.SUDOKU9, PuzzleKind.KILLER_SUDOKU):
        size = _GRID_SIZES[kind]
        if (spec.rows, spec.cols) != (size, size):
            raise MalformedSpec(f"{kind.value} must be {size}x{size}")
        for r, c, v in spec.clues:
            if not 1 <= v <= size:
                raise InconsistentClue(f"clue value {v} outside 1..{size}")

    if kind is PuzzleKind.KILLER_SUDOKU or kind is PuzzleKind.CALCUDOKU:
        covered: set[tuple[int, int]] = set()
        for cage in spec.cages:
            overlap = covered & set(cage.cells)
            if overlap:
                raise MalformedSpec(f"cages overlap on {sorted(overlap)}")
            covered |= set(cage.cells)
        expected = {(r, c) for r in range(spec.rows) for c in range(spec.cols)}
        clued = {(r, c) for r, c, _ in spec.clues}
        if kind is PuzzleKind.KILLER_SUDOKU:
            if covered != expected:
                raise MalformedSpec("killer cages must partition the grid")
        else:
            if covered | clued != expected or (covered & clued):
                raise MalformedSpec("calcudoku cages plus clues must partition the grid")

    if kind is PuzzleKind.CALCUDOKU:
        if spec.rows != spec.cols:
            raise MalformedSpec("calcudoku grids are square")
        for r, c, v in spec.clues:
            if not 1 <= v <= spec.rows:
                raise InconsistentClue(f"clue value {v} outside 1..{spec.rows}")

    if kind is PuzzleKind.KAKURO:
        if any(cage.op is not CageOp.SUM for cage in spec.cages):
            raise MalformedSpec("kakuro runs are sum cages")
        for r, c, v in spec.clues:
            if not 1 <= v <= 9:
                raise InconsistentClue(f"clue value {v} outside 1..9")
        for cage in spec.cages:
            if len(cage.cells) > 9:
                raise MalformedSpec("a kakuro run cannot exceed 9 cells")

    if kind is PuzzleKind.FILL_A_PIX:
        for cage in spec.cages:
            if cage.op is not CageOp.SUM:
                raise MalformedSpec("fill-a-pix clues are count (sum) cages")
            if not 0 <= cage.target <= len(cage.cells):
                raise MalformedSpec("fill-a-pix count outside neighbourhood size")
        for r, c, v in spec.clues:
            if v not in (0, 1):
                raise InconsistentClue("fill-a-pix clues are binary")

    if kind is PuzzleKind.GRAPH_COLOURING:
        if spec.colours < 1:
            raise MalformedSpec("colour count must be at least 1")
        for u, v in spec.edges:
            if u == v:
                raise MalformedSpec(f"self-loop on node {u!r}")

    if kind is PuzzleKind.HAMMING74:
        if len(spec.received) != 7 or any(ch not in "01" for ch in spec.received):
            raise MalformedSpec("received word must be 7 bits of 0/1")
        if not 0.0 < spec.flip_prob < 0.5:
            raise MalformedSpec("flip probability must lie in (0, 0.5)")
    return spec


def _parse_sudoku_line(kind: PuzzleKind, text: str) -> PuzzleSpec:
    size = _GRID_SIZES[kind]
    line = text.strip()
    if len(line) != size * size:
        raise ParseError(
            f"expected {size * size} characters for {kind.value}, got {len(line)}", line=1)
    clues = []
    for pos, ch in enumerate(line):
        if ch in ".0":
            continue
        if not ch.isdigit() or not 1 <= int(ch) <= size:
            raise ParseError(f"bad cell character {ch!r}", line=1, column=pos + 1)
        clues.append((pos // size, pos % size, int(ch)))
    return PuzzleSpec(kind=kind, rows=size, cols=size, clues=tuple(clues))


def _parse_json(kind: PuzzleKind, text: str) -> PuzzleSpec:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno, column=exc.colno) from None
    if not isinstance(obj, dict):
        raise MalformedSpec("puzzle JSON must be an object")
    if "kind" in obj and obj["kind"] != kind.value:
        raise MalformedSpec(f"file says kind {obj['kind']!r}, expected {kind.value!r}")
    if kind is PuzzleKind.HAMMING74:
        try:
            return PuzzleSpec(kind=kind, received=str(obj["received"]),
                              flip_prob=float(obj["flip_prob"]))
        except KeyError as exc:
            raise MalformedSpec(f"missing field {exc.args[0]!r}") from None
    try:
        rows = int(obj["rows"])
        cols = int(obj["cols"])
    except KeyError as exc:
        raise MalformedSpec(f"missing field {exc.args[0]!r}") from None
    cages = []
    for raw in obj.get("cages", []):
        try:
            cells = tuple((int(r), int(c)) for r, c in raw["cells"])
            op = CageOp(str(raw.get("op", "sum")).lower())
            cages.append(Cage(cells=cells, target=int(raw["target"]), op=op))
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedSpec(f"bad cage entry: {exc}") from None
    clues = tuple((int(r), int(c), int(v)) for r, c, v in obj.get("clues", []))
    return PuzzleSpec(kind=kind, rows=rows, cols=cols, cages=tuple(cages), clues=clues)


def _parse_colouring(text: str) -> PuzzleSpec:
    colours = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0].lower() in ("colours", "colors"):
            if len(parts) != 2 or not parts[1].isdigit():
                raise ParseError("expected 'colours <n>'", line=lineno)
            colours = int(parts[1])
            continue
        if len(parts) != 2:
            raise ParseError("expected 'u v' edge", line=lineno)
        edges.append((parts[0], parts[1]))
    if colours is None:
        raise ParseError("missing 'colours <n>' header line")
    return PuzzleSpec(kind=PuzzleKind.GRAPH_COLOURING, colours=colours, edges=tuple(edges))


def parse(kind: PuzzleKind | str, text: str) -> PuzzleSpec:
    """Parse puzzle input text for the given kind into a validated spec."""
    if isinstance(kind, str):
        kind = PuzzleKind(kind)
    if kind in (PuzzleKind.SUDOKU4, PuzzleKind.SUDOKU9):
        return _validate(_parse_sudoku_line(kind, text))
    if kind is PuzzleKind.GRAPH_COLOURING:
        return _validate(_parse_colouring(text))
    return _validate(_parse_json(kind, text))


def serialize(spec: PuzzleSpec) -> str:
    """Inverse of ``parse``: text whose parse equals ``spec``."""
    if spec.kind in (PuzzleKind.SUDOKU4, PuzzleKind.SUDOKU9):
        size = spec.rows
        cells = ["."] * (size * size)
        for r, c, v in spec.clues:
            cells[r * size + c] = str(v)
        return "".join(cells)
    if spec.kind is PuzzleKind.GRAPH_COLOURING:
        lines = [f"colours {spec.colours}"]
        lines += [f"{u} {v}" for u, v in spec.edges]
        return "\n".join(lines) + "\n"
    if spec.kind is PuzzleKind.HAMMING74:
        return json.dumps({"kind": spec.kind.value, "received": spec.received,
                           "flip_prob": spec.flip_prob})
    return json.dumps({
        "kind": spec.kind.value,
        "rows": spec.rows,
        "cols": spec.cols,
        "cages": [
            {"cells": [[r, c] for r, c in cage.cells], "target": cage.target,
             "op": cage.op.value}
            for cage in spec.cages
        ],
        "clues": [[r, c, v] for r, c, v in spec.clues],
    })
