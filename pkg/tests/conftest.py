"""Shared builders for tests: tables, random ASTs, synthesis specs."""

from __future__ import annotations

import math
import random
import string

import pytest

from tabmend.dsl import BinOp, Const, Expr, FormulaProgram, Ref, ScalarFn, WindowAgg
from tabmend.oracles import FORMULAS, FormulaId
from tabmend.synth import IntegerUniform, RandomWalk, SynthesisSpec, Uniform
from tabmend.tabular import NUMERIC, TEXT, ColumnSchema, Table


def numeric_table(**columns: list) -> Table:
    """Table from keyword columns of floats/None, e.g. numeric_table(close=[1,2])."""
    names = list(columns)
    n = len(columns[names[0]])
    schemas = [ColumnSchema(name, NUMERIC) for name in names]
    rows = []
    for r in range(n):
        rows.append([None if columns[c][r] is None else float(columns[c][r]) for c in names])
    return Table(schemas, rows)


BAJAJ_BASES = (
    ("close", RandomWalk(1700.0, 5.0)),
    ("high", RandomWalk(1705.0, 5.0)),
    ("low", RandomWalk(1695.0, 5.0)),
)


def bajaj_spec(rows: int, seed: int) -> SynthesisSpec:
    derived = tuple(
        FORMULAS[f]
        for f in (
            FormulaId.SMA5,
            FormulaId.EMA5,
            FormulaId.CCI5,
            FormulaId.ROC5,
            FormulaId.MOM10,
            FormulaId.RSI8,
        )
    )
    return SynthesisSpec(rows=rows, seed=seed, base_columns=BAJAJ_BASES, derived=derived)


def bmi_spec(rows: int, seed: int) -> SynthesisSpec:
    return SynthesisSpec(
        rows=rows,
        seed=seed,
        base_columns=(("weight", Uniform(45.0, 110.0)), ("height", Uniform(1.45, 1.95))),
        derived=(FORMULAS[FormulaId.BMI],),
    )


def supermarket_spec(rows: int, seed: int) -> SynthesisSpec:
    return SynthesisSpec(
        rows=rows,
        seed=seed,
        base_columns=(
            ("unit_price", Uniform(10.0, 100.0)),
            ("quantity", IntegerUniform(1, 10)),
            ("tax5", Uniform(0.5, 50.0)),
            ("cogs", Uniform(100.0, 1000.0)),
            ("gross_margin_pct", Uniform(0.047619, 0.047619)),
        ),
        derived=(FORMULAS[FormulaId.SUPERMARKET_TOTAL], FORMULAS[FormulaId.GROSS_INCOME]),
    )


def greentrip_spec(rows: int, seed: int) -> SynthesisSpec:
    fees = (
        "fare_amount",
        "extra",
        "mta_tax",
        "tip_amount",
        "congestion_surcharge",
        "tolls_amount",
        "improvement_surcharge",
    )
    return SynthesisSpec(
        rows=rows,
        seed=seed,
        base_columns=tuple((name, Uniform(0.5, 40.0)) for name in fees),
        derived=(FORMULAS[FormulaId.GREENTRIP_TOTAL],),
    )


def lol_spec(rows: int, seed: int) -> SynthesisSpec:
    return SynthesisSpec(
        rows=rows,
        seed=seed,
        base_columns=(
            ("kills", Uniform(0.0, 12.0)),
            ("assists", Uniform(0.0, 15.0)),
            ("deaths", IntegerUniform(1, 10)),
            ("p_rate", Uniform(0.0, 0.6)),
            ("b_rate", Uniform(0.0, 0.4)),
        ),
        derived=(FORMULAS[FormulaId.KDA], FORMULAS[FormulaId.PRATE_PLUS_BRATE]),
    )


# ---------------------------------------------------------------------------
# Random structures with explicit seeds (used where exact counts matter)

_RESERVED = {"let", "target", "t", "mean", "sum", "min", "max", "sqrt", "abs", "pow", "max2", "min2"}


def random_identifier(rng: random.Random) -> str:
    while True:
        name = rng.choice(string.ascii_lowercase) + "".join(
            rng.choice(string.ascii_lowercase + "_0123456789") for _ in range(rng.randint(0, 6))
        )
        if name not in _RESERVED:
            return name


def random_expr(rng: random.Random, names: list[str], depth: int) -> Expr:
    if depth <= 0 or rng.random() < 0.3:
        if rng.random() < 0.4:
            value = rng.choice(
                [0.0, 1.0, -3.0, 2.5, 0.015, 1e-9, 123456.75, rng.uniform(-1e6, 1e6)]
            )
            return Const(value)
        return Ref(rng.choice(names), rng.randint(-5, 5))
    pick = rng.random()
    if pick < 0.45:
        op = rng.choice("+-*/")
        return BinOp(op, random_expr(rng, names, depth - 1), random_expr(rng, names, depth - 1))
    if pick < 0.75:
        fn = rng.choice(["sqrt", "abs", "pow", "max2", "min2"])
        arity = 1 if fn in ("sqrt", "abs") else 2
        return ScalarFn(fn, tuple(random_expr(rng, names, depth - 1) for _ in range(arity)))
    lo = rng.randint(-6, 3)
    hi = rng.randint(lo, 3)
    return WindowAgg(rng.choice(["mean", "sum", "min", "max"]), random_expr(rng, names, depth - 1), lo, hi)


def random_program(rng: random.Random) -> FormulaProgram:
    columns = sorted({random_identifier(rng) for _ in range(rng.randint(1, 4))})
    lets: list[tuple[str, Expr]] = []
    taken = set(columns)
    for _ in range(rng.randint(0, 2)):
        name = random_identifier(rng)
        if name in taken:
            continue
        visible = columns + [n for n, _ in lets]
        lets.append((name, random_expr(rng, visible, rng.randint(1, 3))))
        taken.add(name)
    target = random_identifier(rng)
    while target in taken:
        target = random_identifier(rng)
    visible = columns + [n for n, _ in lets]
    return FormulaProgram(tuple(lets), target, random_expr(rng, visible, rng.randint(1, 3)))


def random_table(rng: random.Random, n_rows: int | None = None, n_cols: int | None = None) -> Table:
    """Round-trippable table: numeric cols of arbitrary finite floats, text cols of words."""
    n_rows = n_rows if n_rows is not None else rng.randint(0, 12)
    n_cols = n_cols if n_cols is not None else rng.randint(1, 5)
    schemas = []
    for c in range(n_cols):
        kind = NUMERIC if rng.random() < 0.7 else TEXT
        schemas.append(ColumnSchema(f"col{c}", kind))
    rows = []
    for _ in range(n_rows):
        row = []
        for schema in schemas:
            if rng.random() < 0.15:
                row.append(None)
            elif schema.kind == NUMERIC:
                value = rng.choice(
                    [
                        rng.uniform(-1e6, 1e6),
                        rng.random() * 1e-5,
                        float(rng.randint(-5, 5)),
                        5e-324,
                        1.7976931348623157e308,
                        math.pi,
                    ]
                )
                row.append(value)
            else:
                row.append("".join(rng.choice(string.ascii_letters) for _ in range(rng.randint(1, 8))))
        rows.append(row)
    return Table(schemas, rows)


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240817)
