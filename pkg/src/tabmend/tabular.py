"""Rectangular tables with explicit missing cells.

A cell is one of three things: ``None`` (a missing value), a finite ``float``,
or a ``str``. Tables are treated as immutable: every operation here returns a
new table and never touches the rows of its input, so tables can be shared
freely across threads.

CSV support is deliberately plain (comma-separated, header row, no quoting):
the datasets this package targets are numeric grids. ``"NaN"`` is the
canonical missing token on output. Column kinds are re-inferred on parse, so
the parse/write round trip is cell-exact for any table whose text columns
contain at least one non-numeric value; an all-numeric-looking text column
would come back as a numeric column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Union

from .errors import TabmendError

NUMERIC = "numeric"
TEXT = "text"

Cell = Union[float, str, None]

DEFAULT_MISSING_TOKENS = frozenset({"NaN", "nan", ""})


class TableError(TabmendError):
    pass


class EmptyInput(TableError):
    def __init__(self) -> None:
        super().__init__("input has no header row")


class RaggedRow(TableError):
    def __init__(self, row_index: int, expected: int, got: int) -> None:
        self.row_index = row_index
        self.expected = expected
        self.got = got
        super().__init__(f"row {row_index} has {got} fields, expected {expected}")


class DuplicateColumn(TableError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"duplicate column name {name!r}")


class InvalidColumn(TableError):
    pass


class UnknownColumn(TableError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"no column named {name!r}")


class OutOfBounds(TableError):
    pass


class CellLocation(NamedTuple):
    row: int
    column: int


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str  # NUMERIC or TEXT


@dataclass
class Table:
    columns: list[ColumnSchema]
    rows: list[list[Cell]]
    provenance: str | None = None

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for col in self.columns:
            if not col.name:
                raise InvalidColumn("column names must be non-empty")
            if col.kind not in (NUMERIC, TEXT):
                raise InvalidColumn(f"bad column kind {col.kind!r}")
            if col.name in seen:
                raise DuplicateColumn(col.name)
            seen.add(col.name)
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise RaggedRow(i, width, len(row))
            for col, cell in zip(self.columns, row):
                _check_cell(col, cell, i)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def col_index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise UnknownColumn(name)

    def cell(self, row: int, column: int) -> Cell:
        if not (0 <= row < len(self.rows) and 0 <= column < len(self.columns)):
            raise OutOfBounds(f"cell ({row}, {column}) outside table")
        return self.rows[row][column]

    def column_values(self, name: str) -> list[Cell]:
        idx = self.col_index(name)
        return [row[idx] for row in self.rows]


def _check_cell(col: ColumnSchema, cell: Cell, row_index: int) -> None:
    if cell is None:
        return
    if isinstance(cell, float):
        if not math.isfinite(cell):
            raise InvalidColumn(f"non-finite number in column {col.name!r} row {row_index}")
        if col.kind != NUMERIC:
            raise InvalidColumn(f"number in text column {col.name!r} row {row_index}")
        return
    if isinstance(cell, str):
        if col.kind != TEXT:
            raise InvalidColumn(f"text in numeric column {col.name!r} row {row_index}")
        return
    raise InvalidColumn(f"unsupported cell value {cell!r} in column {col.name!r}")


def parse_csv(
    text: str,
    *,
    missing_tokens: Iterable[str] = DEFAULT_MISSING_TOKENS,
    delimiter: str = ",",
) -> Table:
    """Parse header-first CSV text into a Table.

    Fields matching a missing token (exact match after trimming) become
    missing cells. Fields that parse as finite floats become numbers; a
    parseable but non-finite field (``inf``) also becomes missing. A column is
    numeric iff every non-missing field parsed as a number; otherwise all its
    non-missing fields are kept as raw text.
    """
    tokens = frozenset(missing_tokens)
    lines = text.splitlines()
    if not lines or not lines[0]:
        raise EmptyInput()
    names = lines[0].split(delimiter)
    seen: set[str] = set()
    for name in names:
        if name in seen:
            raise DuplicateColumn(name)
        seen.add(name)
    width = len(names)

    # First pass: per-cell classification, keeping the raw field for text fallback.
    MISS, NUM, TXT = 0, 1, 2
    parsed: list[list[tuple[int, Cell, str]]] = []
    for i, line in enumerate(lines[1:]):
        fields = line.split(delimiter)
        if len(fields) != width:
            raise RaggedRow(i, width, len(fields))
        row: list[tuple[int, Cell, str]] = []
        for raw in fields:
            stripped = raw.strip()
            if stripped in tokens:
                row.append((MISS, None, raw))
                continue
            try:
                value = float(stripped)
            except ValueError:
                row.append((TXT, None, raw))
                continue
            if math.isfinite(value):
                row.append((NUM, value, raw))
            else:
                row.append((MISS, None, raw))
        parsed.append(row)

    columns: list[ColumnSchema] = []
    for c, name in enumerate(names):
        has_text = any(row[c][0] == TXT for row in parsed)
        columns.append(ColumnSchema(name, TEXT if has_text else NUMERIC))

    rows: list[list[Cell]] = []
    for row in parsed:
        out: list[Cell] = []
        for c, (klass, value, raw) in enumerate(row):
            if klass == MISS:
                out.append(None)
            elif columns[c].kind == NUMERIC:
                out.append(value)
            else:
                out.append(raw)
        rows.append(out)
    return Table(columns, rows)


def write_csv(table: Table, *, delimiter: str = ",") -> str:
    """Render a table as CSV text; missing cells become ``NaN``.

    Numbers use ``repr``, the shortest decimal form that round-trips exactly.
    """
    lines = [delimiter.join(c.name for c in table.columns)]
    for row in table.rows:
        fields = []
        for cell in row:
            if cell is None:
                fields.append("NaN")
            elif isinstance(cell, float):
                fields.append(repr(cell))
            else:
                fields.append(cell)
        lines.append(delimiter.join(fields))
    return "\n".join(lines)


def missing_locations(table: Table, column_name: str) -> list[CellLocation]:
    """All missing cells of one column, in ascending row order."""
    idx = table.col_index(column_name)
    return [CellLocation(r, idx) for r, row in enumerate(table.rows) if row[idx] is None]


def slice_rows(table: Table, start: int, end: int) -> Table:
    """New table holding rows ``[start, end)`` of the source, schema shared."""
    if not (0 <= start <= end <= len(table.rows)):
        raise OutOfBounds(f"slice [{start}, {end}) outside 0..{len(table.rows)}")
    return Table(list(table.columns), [list(r) for r in table.rows[start:end]], table.provenance)


def with_column(table: Table, schema: ColumnSchema, values: list[Cell]) -> Table:
    if len(values) != table.n_rows:
        raise OutOfBounds("column length does not match row count")
    columns = list(table.columns) + [schema]
    rows = [row + [v] for row, v in zip(table.rows, values)]
    return Table(columns, rows, table.provenance)


def with_cells(table: Table, updates: Mapping[CellLocation, Cell]) -> Table:
    rows = [list(r) for r in table.rows]
    for loc, value in updates.items():
        if not (0 <= loc.row < len(rows) and 0 <= loc.column < len(table.columns)):
            raise OutOfBounds(f"update at {loc} outside table")
        rows[loc.row][loc.column] = value
    return Table(list(table.columns), rows, table.provenance)


def cells_equal(a: Cell, b: Cell) -> bool:
    """Exact cell equality; float compare distinguishes 0.0 from -0.0."""
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, float) and isinstance(b, float):
        return a == b and math.copysign(1.0, a) == math.copysign(1.0, b)
    return type(a) is type(b) and a == b


def tables_equal_cells(a: Table, b: Table) -> bool:
    """Cell-for-cell equality with identical column names (kinds may differ)."""
    if a.column_names != b.column_names or a.n_rows != b.n_rows:
        return False
    for ra, rb in zip(a.rows, b.rows):
        for ca, cb in zip(ra, rb):
            if not cells_equal(ca, cb):
                return False
    return True
