"""Seeded synthetic datasets and cell masking.

Randomness comes from ``random.Random`` (the Mersenne Twister, MT19937),
seeded per call, so every synthesized table and mask selection is exactly
reproducible from its seed. Base columns are generated in their listed order,
each consuming the stream sequentially; derived columns are pure functions of
earlier columns and consume no randomness.

Derived columns are written with ``oracle_value`` so that synthesized data is
self-consistent by construction: at every non-warmup row the stored value IS
the oracle value, bit for bit. Warmup rows get documented truncated-window
placeholders and are excluded from masking by default.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Union

from .errors import TabmendError
from .oracles import FORMULAS, FormulaId, FormulaSpec, oracle_value, warmup_placeholder
from .tabular import (
    NUMERIC,
    Cell,
    CellLocation,
    ColumnSchema,
    Table,
    UnknownColumn,
    with_column,
)


class SynthError(TabmendError):
    pass


class CyclicDerivation(SynthError):
    pass


class NotEnoughRows(SynthError):
    pass


@dataclass(frozen=True)
class RandomWalk:
    start: float
    step_scale: float


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float


@dataclass(frozen=True)
class IntegerUniform:
    lo: int
    hi: int


Generator = Union[RandomWalk, Uniform, IntegerUniform]


@dataclass(frozen=True)
class SynthesisSpec:
    rows: int
    seed: int
    base_columns: tuple[tuple[str, Generator], ...]
    derived: tuple[FormulaSpec, ...]

    def __post_init__(self) -> None:
        if self.rows <= 0:
            raise SynthError("rows must be positive")


def _generate_base(gen: Generator, rows: int, rng: random.Random) -> list[Cell]:
    if isinstance(gen, RandomWalk):
        values = []
        x = gen.start
        for _ in range(rows):
            x = x + gen.step_scale * (2.0 * rng.random() - 1.0)
            values.append(x)
        return values
    if isinstance(gen, Uniform):
        return [gen.lo + (gen.hi - gen.lo) * rng.random() for _ in range(rows)]
    if isinstance(gen, IntegerUniform):
        return [float(rng.randint(gen.lo, gen.hi)) for _ in range(rows)]
    raise SynthError(f"unknown generator {gen!r}")


def synthesize_dataset(spec: SynthesisSpec) -> Table:
    """Deterministically build a table from base generators plus derived columns."""
    rng = random.Random(spec.seed)
    table = Table([], [[] for _ in range(spec.rows)])
    for name, gen in spec.base_columns:
        table = with_column(table, ColumnSchema(name, NUMERIC), _generate_base(gen, spec.rows, rng))

    available = {name for name, _ in spec.base_columns}
    for formula in spec.derived:
        missing = [c for c in formula.input_columns if c not in available]
        if missing:
            raise CyclicDerivation(
                f"{formula.id.value} needs column(s) {missing} not defined before it"
            )
        if formula.target_column in available:
            raise CyclicDerivation(f"column {formula.target_column!r} defined twice")
        values: list[Cell] = []
        if formula.id == FormulaId.EMA5:
            # Incremental form of the oracle recurrence; identical arithmetic,
            # avoids re-unrolling from row 0 for every row.
            close = table.col_index("close")
            alpha, beta = 2.0 / 6.0, 4.0 / 6.0
            value = table.rows[0][close]
            values.append(value)
            for r in range(1, spec.rows):
                value = alpha * table.rows[r][close] + beta * value
                values.append(value)
        else:
            for r in range(spec.rows):
                if r < formula.warmup_rows:
                    values.append(warmup_placeholder(formula, table, r))
                else:
                    values.append(oracle_value(formula, table, r))
        table = with_column(table, ColumnSchema(formula.target_column, NUMERIC), values)
        available.add(formula.target_column)
    return table


@dataclass(frozen=True)
class MaskRecord:
    column: str
    locations: tuple[CellLocation, ...]
    truth: dict[CellLocation, float]
    seed: int
    requested_rate: float | None = None
    requested_count: int | None = None

    def to_json(self) -> dict:
        return {
            "column": self.column,
            "seed": self.seed,
            "requested_rate": self.requested_rate,
            "requested_count": self.requested_count,
            "cells": [
                {"row": loc.row, "col": loc.column, "value": self.truth[loc]}
                for loc in self.locations
            ],
        }

    @staticmethod
    def from_json(doc: dict) -> "MaskRecord":
        locations = tuple(CellLocation(c["row"], c["col"]) for c in doc["cells"])
        truth = {CellLocation(c["row"], c["col"]): float(c["value"]) for c in doc["cells"]}
        return MaskRecord(
            column=doc["column"],
            locations=locations,
            truth=truth,
            seed=int(doc["seed"]),
            requested_rate=doc.get("requested_rate"),
            requested_count=doc.get("requested_count"),
        )


def mask_column(
    table: Table,
    column: str,
    *,
    rate: float | None = None,
    count: int | None = None,
    seed: int,
    exclude_warmup: int = 0,
    require_clean_row: bool = False,
) -> tuple[Table, MaskRecord]:
    """Replace a seeded uniform sample of one column's cells with missing.

    Exactly one of ``rate`` / ``count`` must be given. A rate maps to
    ``max(1, floor(rate * non-missing cells))``. Selection is uniform without
    replacement over eligible rows: non-missing, outside the warmup prefix,
    and (optionally) rows with no missing cell in any column.
    """
    if (rate is None) == (count is None):
        raise SynthError("give exactly one of rate or count")
    idx = table.col_index(column)
    if table.columns[idx].kind != NUMERIC:
        raise UnknownColumn(column)
    present = [r for r, row in enumerate(table.rows) if row[idx] is not None]
    if count is None:
        assert rate is not None
        if not 0 < rate <= 1:
            raise SynthError("rate must be in (0, 1]")
        count = max(1, math.floor(rate * len(present)))
    eligible = [r for r in present if r >= exclude_warmup]
    if require_clean_row:
        eligible = [r for r in eligible if all(c is not None for c in table.rows[r])]
    if count > len(eligible):
        raise NotEnoughRows(
            f"cannot mask {count} cells of {column!r}: only {len(eligible)} eligible rows"
        )
    chosen = sorted(random.Random(seed).sample(eligible, count))
    locations = tuple(CellLocation(r, idx) for r in chosen)
    truth = {CellLocation(r, idx): table.rows[r][idx] for r in chosen}
    rows = [list(row) for row in table.rows]
    for r in chosen:
        rows[r][idx] = None
    masked = Table(list(table.columns), rows, table.provenance)
    record = MaskRecord(
        column=column,
        locations=locations,
        truth=truth,  # type: ignore[arg-type]
        seed=seed,
        requested_rate=rate,
        requested_count=None if rate is not None else count,
    )
    return masked, record


def unmask(table: Table, record: MaskRecord) -> Table:
    """Restore the original values recorded by mask_column."""
    rows = [list(row) for row in table.rows]
    for loc in record.locations:
        rows[loc.row][loc.column] = record.truth[loc]
    return Table(list(table.columns), rows, table.provenance)


# --------------------------------------------------------------------------
# JSON document forms (consumed by the CLI)


def _generator_from_json(doc: dict) -> Generator:
    kind = doc.get("kind")
    if kind == "random_walk":
        return RandomWalk(float(doc["start"]), float(doc["step_scale"]))
    if kind == "uniform":
        return Uniform(float(doc["lo"]), float(doc["hi"]))
    if kind == "integer_uniform":
        return IntegerUniform(int(doc["lo"]), int(doc["hi"]))
    raise SynthError(f"unknown generator kind {kind!r}")


def _generator_to_json(gen: Generator) -> dict:
    if isinstance(gen, RandomWalk):
        return {"kind": "random_walk", "start": gen.start, "step_scale": gen.step_scale}
    if isinstance(gen, Uniform):
        return {"kind": "uniform", "lo": gen.lo, "hi": gen.hi}
    if isinstance(gen, IntegerUniform):
        return {"kind": "integer_uniform", "lo": gen.lo, "hi": gen.hi}
    raise SynthError(f"unknown generator {gen!r}")


def formula_spec_from_json(doc: Union[str, dict]) -> FormulaSpec:
    """A registry id string, or an object with per-field overrides."""
    if isinstance(doc, str):
        try:
            return FORMULAS[FormulaId(doc)]
        except ValueError as exc:
            raise SynthError(f"unknown formula id {doc!r}") from exc
    base = formula_spec_from_json(doc["id"])
    return FormulaSpec(
        id=base.id,
        input_columns=tuple(doc.get("input_columns", base.input_columns)),
        target_column=doc.get("target_column", base.target_column),
        epsilon=float(doc.get("epsilon", base.epsilon)),
        warmup_rows=int(doc.get("warmup_rows", base.warmup_rows)),
    )


def synthesis_spec_from_json(doc: dict, *, seed_override: int | None = None) -> SynthesisSpec:
    base_columns = tuple(
        (name, _generator_from_json(gen)) for name, gen in doc["base_columns"].items()
    )
    derived = tuple(formula_spec_from_json(d) for d in doc.get("derived", []))
    seed = seed_override if seed_override is not None else int(doc["seed"])
    return SynthesisSpec(rows=int(doc["rows"]), seed=seed, base_columns=base_columns, derived=derived)


def synthesis_spec_to_json(spec: SynthesisSpec) -> dict:
    return {
        "rows": spec.rows,
        "seed": spec.seed,
        "base_columns": {name: _generator_to_json(gen) for name, gen in spec.base_columns},
        "derived": [
            {
                "id": f.id.value,
                "input_columns": list(f.input_columns),
                "target_column": f.target_column,
                "epsilon": f.epsilon,
                "warmup_rows": f.warmup_rows,
            }
            for f in spec.derived
        ],
    }
