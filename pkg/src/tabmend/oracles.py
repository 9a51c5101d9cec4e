"""Native ground-truth formulas and their canonical DSL renderings.

Each supported derived variable has three faces kept deliberately separate:

* ``oracle_value`` — a direct Python computation, the independent reference
  every other execution path is checked against;
* ``canonical_program`` — the reference DSL program for the same variable;
* a ``FormulaSpec`` entry carrying its input columns, close-match tolerance
  and warmup prefix (leading rows where a window or recurrence is undefined).

The two executable faces must agree to 1e-9 on synthesized data; the test
suite enforces that. Conventions pinned here:

* the 8-period strength index averages gains/losses over the 8 most recent
  row-over-row deltas, and a zero loss average maps to 100 (the DSL program
  uses the algebraically equal form ``100*gain / (gain + loss)`` so that a
  zero loss average does not divide by zero);
* the 5-period channel index's deviation term is the square root of the mean
  squared (close - typical price) over the same 5-row window as its moving
  average, with typical price (high + low + close) / 3;
* the exponential average uses coefficients 2/6 and 4/6 with row 0 seeded
  from the first close.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from enum import Enum

from .dsl import DivisionByZero, FormulaProgram, parse_program
from .errors import TabmendError
from .tabular import CellLocation, OutOfBounds, Table


class OracleError(TabmendError):
    pass


class WarmupRow(OracleError):
    def __init__(self, row: int, warmup_rows: int) -> None:
        self.row = row
        self.warmup_rows = warmup_rows
        super().__init__(f"row {row} is inside the {warmup_rows}-row warmup prefix")


class MissingInput(OracleError):
    def __init__(self, location: CellLocation) -> None:
        self.location = location
        super().__init__(f"missing input at row {location.row}, column {location.column}")


class FormulaId(str, Enum):
    SMA5 = "SMA5"
    EMA5 = "EMA5"
    CCI5 = "CCI5"
    ROC5 = "ROC5"
    MOM10 = "MOM10"
    RSI8 = "RSI8"
    BMI = "BMI"
    BMI_WEIGHT = "BMI_WEIGHT"
    BMI_HEIGHT = "BMI_HEIGHT"
    SUPERMARKET_TOTAL = "SUPERMARKET_TOTAL"
    GROSS_INCOME = "GROSS_INCOME"
    GREENTRIP_TOTAL = "GREENTRIP_TOTAL"
    KDA = "KDA"
    PRATE_PLUS_BRATE = "PRATE_PLUS_BRATE"


@dataclass(frozen=True)
class FormulaSpec:
    id: FormulaId
    input_columns: tuple[str, ...]
    target_column: str
    epsilon: float
    warmup_rows: int

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise OracleError("epsilon must be positive")
        if self.warmup_rows < 0:
            raise OracleError("warmup_rows must be non-negative")


FORMULAS: dict[FormulaId, FormulaSpec] = {
    spec.id: spec
    for spec in (
        FormulaSpec(FormulaId.SMA5, ("close",), "sma5", 0.001, 4),
        FormulaSpec(FormulaId.EMA5, ("close",), "ema5", 0.001, 1),
        FormulaSpec(FormulaId.CCI5, ("high", "low", "close"), "cci5", 0.001, 4),
        FormulaSpec(FormulaId.ROC5, ("close",), "roc5", 0.001, 5),
        FormulaSpec(FormulaId.MOM10, ("close",), "mom10", 0.001, 10),
        FormulaSpec(FormulaId.RSI8, ("close",), "rsi8", 0.001, 8),
        FormulaSpec(FormulaId.BMI, ("weight", "height"), "bmi", 0.01, 0),
        FormulaSpec(FormulaId.BMI_WEIGHT, ("bmi", "height"), "weight", 0.01, 0),
        FormulaSpec(FormulaId.BMI_HEIGHT, ("weight", "bmi"), "height", 0.01, 0),
        FormulaSpec(
            FormulaId.SUPERMARKET_TOTAL, ("unit_price", "quantity", "tax5"), "total", 0.01, 0
        ),
        FormulaSpec(FormulaId.GROSS_INCOME, ("cogs", "gross_margin_pct"), "gross_income", 0.01, 0),
        FormulaSpec(
            FormulaId.GREENTRIP_TOTAL,
            (
                "fare_amount",
                "extra",
                "mta_tax",
                "tip_amount",
                "congestion_surcharge",
                "tolls_amount",
                "improvement_surcharge",
            ),
            "total_amount",
            0.01,
            0,
        ),
        FormulaSpec(FormulaId.KDA, ("kills", "assists", "deaths"), "kda", 0.1, 0),
        FormulaSpec(FormulaId.PRATE_PLUS_BRATE, ("p_rate", "b_rate"), "p_rate_plus_b_rate", 0.01, 0),
    )
}

_CANONICAL_SOURCES: dict[FormulaId, str] = {
    FormulaId.SMA5: "target sma5 = mean(close[t], -4, 0);",
    FormulaId.EMA5: "target ema5 = (2 / 6) * close[t] + (4 / 6) * ema5[t-1];",
    FormulaId.CCI5: (
        "let tp = (high[t] + low[t] + close[t]) / 3;\n"
        "target cci5 = (tp[t] - mean(tp[t], -4, 0))"
        " / (0.015 * sqrt(mean(pow(close[t] - tp[t], 2), -4, 0)));"
    ),
    FormulaId.ROC5: "target roc5 = (close[t] - close[t-5]) / close[t-5];",
    FormulaId.MOM10: "target mom10 = close[t] - close[t-10];",
    FormulaId.RSI8: (
        "let gain = mean(max2(close[t] - close[t-1], 0), -7, 0);\n"
        "let loss = mean(max2(close[t-1] - close[t], 0), -7, 0);\n"
        "target rsi8 = (100 * gain[t]) / (gain[t] + loss[t]);"
    ),
    FormulaId.BMI: "target bmi = weight[t] / pow(height[t], 2);",
    FormulaId.BMI_WEIGHT: "target weight = bmi[t] * pow(height[t], 2);",
    FormulaId.BMI_HEIGHT: "target height = sqrt(weight[t] / bmi[t]);",
    FormulaId.SUPERMARKET_TOTAL: "target total = unit_price[t] * quantity[t] + tax5[t];",
    FormulaId.GROSS_INCOME: "target gross_income = cogs[t] * gross_margin_pct[t];",
    FormulaId.GREENTRIP_TOTAL: (
        "target total_amount = fare_amount[t] + extra[t] + mta_tax[t] + tip_amount[t]"
        " + congestion_surcharge[t] + tolls_amount[t] + improvement_surcharge[t];"
    ),
    FormulaId.KDA: "target kda = (kills[t] + assists[t]) / deaths[t];",
    FormulaId.PRATE_PLUS_BRATE: "target p_rate_plus_b_rate = p_rate[t] + b_rate[t];",
}


@functools.cache
def canonical_program(formula_id: FormulaId) -> FormulaProgram:
    """Reference DSL program for a formula; matches ``oracle_value`` to 1e-9."""
    return parse_program(_CANONICAL_SOURCES[FormulaId(formula_id)])


def canonical_source(formula_id: FormulaId) -> str:
    return _CANONICAL_SOURCES[FormulaId(formula_id)]


def _mean(values: list[float]) -> float:
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


class _Columns:
    """Checked numeric access into one table for a formula's inputs."""

    def __init__(self, table: Table, names: tuple[str, ...]) -> None:
        self.rows = table.rows
        self.index = {name: table.col_index(name) for name in names}

    def at(self, name: str, row: int) -> float:
        col = self.index[name]
        cell = self.rows[row][col]
        if cell is None:
            raise MissingInput(CellLocation(row, col))
        return cell  # numeric column per Table invariant

    def series(self, name: str, start: int, end: int) -> list[float]:
        return [self.at(name, r) for r in range(start, end + 1)]


def oracle_value(spec: FormulaSpec | FormulaId, table: Table, row: int) -> float:
    """The formula's value at ``row``, computed natively.

    Raises WarmupRow inside the warmup prefix, MissingInput when a required
    cell is absent, and DivisionByZero where the formula itself divides by
    zero (deaths of zero, a zero reference close, a flat deviation window).
    """
    if isinstance(spec, FormulaId):
        spec = FORMULAS[spec]
    if not (0 <= row < table.n_rows):
        raise OutOfBounds(f"row {row} outside table")
    if row < spec.warmup_rows:
        raise WarmupRow(row, spec.warmup_rows)
    cols = _Columns(table, spec.input_columns)
    fid = spec.id

    if fid == FormulaId.SMA5:
        return _mean(cols.series("close", row - 4, row))
    if fid == FormulaId.EMA5:
        alpha = 2.0 / 6.0
        beta = 4.0 / 6.0
        value = cols.at("close", 0)
        for r in range(1, row + 1):
            value = alpha * cols.at("close", r) + beta * value
        return value
    if fid == FormulaId.CCI5:
        tps = []
        sq = []
        for r in range(row - 4, row + 1):
            tp = (cols.at("high", r) + cols.at("low", r) + cols.at("close", r)) / 3
            tps.append(tp)
            sq.append((cols.at("close", r) - tp) ** 2)
        ma = _mean(tps)
        md = math.sqrt(_mean(sq))
        denom = 0.015 * md
        if denom == 0.0:
            raise DivisionByZero(row)
        return (tps[-1] - ma) / denom
    if fid == FormulaId.ROC5:
        ref = cols.at("close", row - 5)
        if ref == 0.0:
            raise DivisionByZero(row)
        return (cols.at("close", row) - ref) / ref
    if fid == FormulaId.MOM10:
        return cols.at("close", row) - cols.at("close", row - 10)
    if fid == FormulaId.RSI8:
        gains = []
        losses = []
        for r in range(row - 7, row + 1):
            delta = cols.at("close", r) - cols.at("close", r - 1)
            gains.append(max(delta, 0.0))
            losses.append(max(-delta, 0.0))
        gain = _mean(gains)
        loss = _mean(losses)
        if loss == 0.0:
            return 100.0
        return 100.0 - 100.0 / (1.0 + gain / loss)
    if fid == FormulaId.BMI:
        h2 = cols.at("height", row) ** 2
        if h2 == 0.0:
            raise DivisionByZero(row)
        return cols.at("weight", row) / h2
    if fid == FormulaId.BMI_WEIGHT:
        return cols.at("bmi", row) * cols.at("height", row) ** 2
    if fid == FormulaId.BMI_HEIGHT:
        bmi = cols.at("bmi", row)
        if bmi == 0.0:
            raise DivisionByZero(row)
        ratio = cols.at("weight", row) / bmi
        return math.sqrt(ratio)
    if fid == FormulaId.SUPERMARKET_TOTAL:
        return cols.at("unit_price", row) * cols.at("quantity", row) + cols.at("tax5", row)
    if fid == FormulaId.GROSS_INCOME:
        return cols.at("cogs", row) * cols.at("gross_margin_pct", row)
    if fid == FormulaId.GREENTRIP_TOTAL:
        total = 0.0
        for name in spec.input_columns:
            total = total + cols.at(name, row)
        return total
    if fid == FormulaId.KDA:
        deaths = cols.at("deaths", row)
        if deaths == 0.0:
            raise DivisionByZero(row)
        return (cols.at("kills", row) + cols.at("assists", row)) / deaths
    if fid == FormulaId.PRATE_PLUS_BRATE:
        return cols.at("p_rate", row) + cols.at("b_rate", row)
    raise OracleError(f"unhandled formula {fid}")


def warmup_placeholder(spec: FormulaSpec | FormulaId, table: Table, row: int) -> float:
    """Deterministic stand-in for rows where the formula is undefined.

    Windows are truncated to the available history; the strength index with no
    deltas yet reports the neutral 50. These values pad synthesized datasets
    only and are excluded from masking and from equivalence checks.
    """
    if isinstance(spec, FormulaId):
        spec = FORMULAS[spec]
    cols = _Columns(table, spec.input_columns)
    fid = spec.id
    if fid == FormulaId.SMA5:
        return _mean(cols.series("close", 0, row))
    if fid == FormulaId.EMA5:
        return cols.at("close", 0)
    if fid == FormulaId.CCI5:
        tps = []
        sq = []
        for r in range(0, row + 1):
            tp = (cols.at("high", r) + cols.at("low", r) + cols.at("close", r)) / 3
            tps.append(tp)
            sq.append((cols.at("close", r) - tp) ** 2)
        denom = 0.015 * math.sqrt(_mean(sq))
        if denom == 0.0:
            return 0.0
        return (tps[-1] - _mean(tps)) / denom
    if fid == FormulaId.ROC5:
        ref = cols.at("close", 0)
        if ref == 0.0:
            return 0.0
        return (cols.at("close", row) - ref) / ref
    if fid == FormulaId.MOM10:
        return cols.at("close", row) - cols.at("close", 0)
    if fid == FormulaId.RSI8:
        if row == 0:
            return 50.0
        gains = []
        losses = []
        for r in range(max(1, row - 7), row + 1):
            delta = cols.at("close", r) - cols.at("close", r - 1)
            gains.append(max(delta, 0.0))
            losses.append(max(-delta, 0.0))
        loss = _mean(losses)
        if loss == 0.0:
            return 100.0
        return 100.0 - 100.0 / (1.0 + _mean(gains) / loss)
    raise OracleError(f"{fid} has no warmup rows")
