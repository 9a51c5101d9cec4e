import math

import pytest

from tabmend.dsl import (
    DivisionByZero,
    DomainError,
    EvalError,
    MissingOperand,
    NonNumericColumn,
    RecursionExhausted,
    SelfReferenceForward,
    UnknownIdentifier,
    WindowUnderflow,
    evaluate_cell,
    impute_column,
    parse_program,
)
from tabmend.tabular import TEXT, CellLocation, ColumnSchema, Table, UnknownColumn, tables_equal_cells

from conftest import numeric_table

SMA5 = parse_program("target sma5 = mean(close[t], -4, 0);")
EMA5 = parse_program("target ema5 = (2/6)*close[t] + (4/6)*ema5[t-1];")


def ema_native(close, upto):
    value = close[0]
    for r in range(1, upto + 1):
        value = (2 / 6) * close[r] + (4 / 6) * value
    return value


class TestEvaluateCell:
    def test_sma_hand_value(self):
        t = numeric_table(close=[1, 2, 3, 4, 5], sma5=[None] * 5)
        assert evaluate_cell(SMA5, t, 4) == 3.0

    def test_ema_constant_series_fixed_point(self):
        t = numeric_table(close=[10, 10, 10], ema5=[10, 10, None])
        assert evaluate_cell(EMA5, t, 2) == 10.0

    def test_window_underflow(self):
        t = numeric_table(close=[1, 2, 3, 4, 5], sma5=[None] * 5)
        with pytest.raises(WindowUnderflow):
            evaluate_cell(SMA5, t, 2)

    def test_window_overflow_past_last_row(self):
        p = parse_program("target x = mean(a[t], 0, 2);")
        t = numeric_table(a=[1, 2, 3], x=[None] * 3)
        with pytest.raises(WindowUnderflow):
            evaluate_cell(p, t, 2)

    def test_anchor_rebinding_inside_window(self):
        # per-step deltas summed over the window
        p = parse_program("target x = sum(a[t] - a[t-1], -2, 0);")
        t = numeric_table(a=[1, 4, 9, 16], x=[None] * 4)
        assert evaluate_cell(p, t, 3) == (4 - 1) + (9 - 4) + (16 - 9)

    def test_let_evaluated_at_requesting_row(self):
        p = parse_program("let d = a[t] * 2;\ntarget x = d[t-1];")
        t = numeric_table(a=[3, 5], x=[None, None])
        assert evaluate_cell(p, t, 1) == 6.0

    def test_division_by_zero(self):
        p = parse_program("target x = a[t] / b[t];")
        t = numeric_table(a=[1], b=[0], x=[None])
        with pytest.raises(DivisionByZero):
            evaluate_cell(p, t, 0)

    def test_missing_operand(self):
        p = parse_program("target x = a[t-1];")
        t = numeric_table(a=[None, 2], x=[None, None])
        with pytest.raises(MissingOperand) as err:
            evaluate_cell(p, t, 1)
        assert err.value.location == CellLocation(0, 0)

    def test_self_reference_forward(self):
        p = parse_program("target x = x[t] + 1;")
        t = numeric_table(a=[1], x=[None])
        with pytest.raises(SelfReferenceForward):
            evaluate_cell(p, t, 0)
        p2 = parse_program("target x = x[t+1];")
        with pytest.raises(SelfReferenceForward):
            evaluate_cell(p2, numeric_table(x=[None, 1.0]), 0)

    def test_self_recurrence_reads_stored_then_recurses(self):
        close = [10.0, 11.0, 12.0, 13.0]
        ema = [ema_native(close, r) for r in range(4)]
        t = numeric_table(close=close, ema5=[ema[0], None, None, ema[3]])
        # rows 1 and 2 are missing; evaluating row 2 recurses into row 1
        assert evaluate_cell(EMA5, t, 2) == pytest.approx(ema[2], abs=0)

    def test_recursion_budget_exhausted(self):
        n = 80
        t = numeric_table(close=[10.0] * n, ema5=[10.0] + [None] * (n - 1))
        with pytest.raises(RecursionExhausted):
            evaluate_cell(EMA5, t, n - 1, recursion_budget=64)
        assert evaluate_cell(EMA5, t, n - 1, recursion_budget=100) == 10.0

    def test_sqrt_negative_is_domain_error(self):
        p = parse_program("target x = sqrt(a[t]);")
        t = numeric_table(a=[-1], x=[None])
        with pytest.raises(DomainError):
            evaluate_cell(p, t, 0)

    def test_overflow_is_domain_error(self):
        p = parse_program("target x = a[t] * a[t];")
        t = numeric_table(a=[1e200], x=[None])
        with pytest.raises(DomainError):
            evaluate_cell(p, t, 0)

    def test_unknown_identifier_at_bind_time(self):
        p = parse_program("target x = mystery[t];")
        t = numeric_table(a=[1], x=[None])
        with pytest.raises(UnknownIdentifier):
            evaluate_cell(p, t, 0)

    def test_unknown_target_column(self):
        p = parse_program("target zz = a[t];")
        with pytest.raises(UnknownColumn):
            evaluate_cell(p, numeric_table(a=[1]), 0)

    def test_text_column_reference_rejected(self):
        p = parse_program("target x = label[t];")
        t = Table(
            [ColumnSchema("label", TEXT), ColumnSchema("x", "numeric")],
            [["a", None]],
        )
        with pytest.raises(NonNumericColumn):
            evaluate_cell(p, t, 0)

    def test_deterministic(self):
        t = numeric_table(close=[1, 2, 3, 4, 5, 6], sma5=[None] * 6)
        assert evaluate_cell(SMA5, t, 5) == evaluate_cell(SMA5, t, 5)

    def test_scalar_fns(self):
        p = parse_program("target x = max2(a[t], 3) + min2(a[t], 3) + abs(0 - a[t]) + pow(a[t], 2);")
        t = numeric_table(a=[2], x=[None])
        assert evaluate_cell(p, t, 0) == 3 + 2 + 2 + 4

    def test_window_min_max(self):
        p = parse_program("target x = max(a[t], -2, 0) - min(a[t], -2, 0);")
        t = numeric_table(a=[5, 1, 9], x=[None] * 3)
        assert evaluate_cell(p, t, 2) == 8.0


class TestImputeColumn:
    def test_point_formula_fills_all(self):
        p = parse_program("target bmi = weight[t] / pow(height[t], 2);")
        t = numeric_table(weight=[4, 80, 60], height=[2, 2, 1.5], bmi=[None, 20.0, None])
        filled, results = impute_column(p, t)
        assert filled.column_values("bmi") == [1.0, 20.0, 60 / 1.5**2]
        assert [loc.row for loc, _ in results] == [0, 2]
        assert all(isinstance(v, float) for _, v in results)

    def test_no_missing_is_noop(self):
        p = parse_program("target a = b[t];")
        t = numeric_table(b=[1, 2], a=[5, 6])
        filled, results = impute_column(p, t)
        assert results == []
        assert tables_equal_cells(filled, t)

    def test_adjacent_self_recurrence_matches_native(self):
        close = [10.0, 12.0, 9.0, 14.0, 11.0, 13.0]
        ema = [ema_native(close, r) for r in range(len(close))]
        t = numeric_table(close=close, ema5=[ema[0], ema[1], None, None, ema[4], ema[5]])
        filled, results = impute_column(EMA5, t)
        assert filled.column_values("ema5") == pytest.approx(ema, abs=1e-12)
        assert len(results) == 2

    def test_failures_recorded_not_raised(self):
        p = parse_program("target x = a[t-1];")
        t = numeric_table(a=[1, 2], x=[None, None])
        filled, results = impute_column(p, t)
        assert isinstance(results[0][1], EvalError)  # row 0 underflows
        assert results[1][1] == 1.0
        assert filled.column_values("x") == [None, 1.0]

    def test_never_touches_non_missing(self):
        p = parse_program("target x = a[t] * 2;")
        t = numeric_table(a=[1, 2, 3], x=[7.0, None, 7.0])
        filled, _ = impute_column(p, t)
        assert filled.column_values("x") == [7.0, 4.0, 7.0]
        assert t.column_values("x") == [7.0, None, 7.0]

    def test_unknown_column_raises(self):
        p = parse_program("target zz = a[t];")
        with pytest.raises(UnknownColumn):
            impute_column(p, numeric_table(a=[1]))

    def test_sequential_fill_equals_fixpoint(self):
        # fixpoint oracle: sweep until no cell changes, evaluating each missing
        # cell against the current partially-filled table
        close = [10.0, 12.0, 9.0, 14.0, 11.0, 13.0, 15.0]
        ema = [ema_native(close, r) for r in range(len(close))]
        holes = [1, 2, 4, 5]
        cells = [ema[r] if r not in holes else None for r in range(len(close))]
        t = numeric_table(close=close, ema5=cells)

        sequential, _ = impute_column(EMA5, t)

        current = t
        changed = True
        while changed:
            changed = False
            for r in range(current.n_rows):
                if current.column_values("ema5")[r] is not None:
                    continue
                try:
                    v = evaluate_cell(EMA5, current, r)
                except EvalError:
                    continue
                rows = [list(row) for row in current.rows]
                rows[r][current.col_index("ema5")] = v
                current = Table(list(current.columns), rows)
                changed = True
        assert sequential.column_values("ema5") == current.column_values("ema5")
