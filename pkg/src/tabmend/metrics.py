"""Imputation quality metrics and the per-variable/summary report.

Three metrics, all over cell outcomes (one outcome per originally-masked
cell): accuracy is the close-match rate at each variable's tolerance;
find-accuracy is the same rate restricted to variables that matched at least
once (undefined when no variable matched anywhere), which separates "found
the right formula but it missed a few noisy rows" from "never found it"; RMSE
is root-mean-square error of imputed against truth, by default excluding
cells the method declined to fill (the exclusion count is reported rather
than inventing error mass for absent values).

The report's summary row pools cell outcomes for accuracy/find-accuracy and
averages the per-variable RMSEs for its summary RMSE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .errors import TabmendError
from .tabular import CellLocation


class MetricsError(TabmendError):
    pass


class EmptyOutcomes(MetricsError):
    def __init__(self) -> None:
        super().__init__("no cell outcomes to score")


class AllExcluded(MetricsError):
    def __init__(self) -> None:
        super().__init__("every cell was excluded from RMSE")


@dataclass(frozen=True)
class CellOutcome:
    location: CellLocation
    variable: str
    truth: float
    imputed: float | None
    matched: bool

    def __post_init__(self) -> None:
        if self.imputed is None and self.matched:
            raise MetricsError("an absent imputation cannot match")


def accuracy(outcomes: Sequence[CellOutcome]) -> float:
    if not outcomes:
        raise EmptyOutcomes()
    return sum(o.matched for o in outcomes) / len(outcomes)


def find_accuracy(outcomes: Sequence[CellOutcome]) -> float | None:
    """Accuracy over variables with at least one match; None if there are none."""
    if not outcomes:
        raise EmptyOutcomes()
    surviving = {o.variable for o in outcomes if o.matched}
    if not surviving:
        return None
    kept = [o for o in outcomes if o.variable in surviving]
    return sum(o.matched for o in kept) / len(kept)


FallbackValue = Callable[[CellOutcome], float] | Mapping[CellLocation, float] | float

EXCLUDE = "exclude"
PENALIZE = "penalize"


def rmse(
    outcomes: Sequence[CellOutcome],
    absent_policy: str = EXCLUDE,
    fallback: FallbackValue | None = None,
) -> float:
    """Root-mean-square error of imputed values against truth.

    ``absent_policy="exclude"`` ignores unfilled cells; ``"penalize"`` scores
    them with a per-cell fallback value (a constant, mapping, or callable).
    """
    if not outcomes:
        raise EmptyOutcomes()
    squares = []
    for o in outcomes:
        value = o.imputed
        if value is None:
            if absent_policy == EXCLUDE:
                continue
            if absent_policy != PENALIZE or fallback is None:
                raise MetricsError("penalize policy needs a fallback value")
            if callable(fallback):
                value = fallback(o)
            elif isinstance(fallback, Mapping):
                value = fallback[o.location]
            else:
                value = fallback
        squares.append((value - o.truth) ** 2)
    if not squares:
        raise AllExcluded()
    # fsum: exactly rounded, so the metric is order-independent bit for bit
    return math.sqrt(math.fsum(squares) / len(squares))


def excluded_count(outcomes: Sequence[CellOutcome]) -> int:
    return sum(1 for o in outcomes if o.imputed is None)


def summary_rmse(per_variable_rmses: Sequence[float]) -> float:
    """Arithmetic mean of per-variable RMSEs; the summary-row rule."""
    if not per_variable_rmses:
        raise EmptyOutcomes()
    return math.fsum(per_variable_rmses) / len(per_variable_rmses)


@dataclass
class VariableReport:
    accuracy: float
    find_accuracy: float | None
    rmse: float | None  # None when every cell was excluded
    cell_count: int
    matched_count: int
    excluded_count: int

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "find_accuracy": self.find_accuracy,
            "rmse": self.rmse,
            "cell_count": self.cell_count,
            "matched_count": self.matched_count,
            "excluded_count": self.excluded_count,
        }


@dataclass
class ImputationReport:
    per_variable: dict[str, VariableReport]
    summary_accuracy: float
    summary_find_accuracy: float | None
    summary_rmse: float | None
    excluded_total: int

    def to_json(self) -> dict:
        return {
            "per_variable": {v: r.to_json() for v, r in sorted(self.per_variable.items())},
            "summary": {
                "accuracy": self.summary_accuracy,
                "find_accuracy": self.summary_find_accuracy,
                "rmse": self.summary_rmse,
            },
            "excluded_total": self.excluded_total,
        }


def build_report(outcomes: Sequence[CellOutcome]) -> ImputationReport:
    if not outcomes:
        raise EmptyOutcomes()
    by_variable: dict[str, list[CellOutcome]] = {}
    for o in outcomes:
        by_variable.setdefault(o.variable, []).append(o)
    per_variable: dict[str, VariableReport] = {}
    rmses: list[float] = []
    for variable, cells in by_variable.items():
        try:
            variable_rmse: float | None = rmse(cells)
        except AllExcluded:
            variable_rmse = None
        if variable_rmse is not None:
            rmses.append(variable_rmse)
        per_variable[variable] = VariableReport(
            accuracy=accuracy(cells),
            find_accuracy=find_accuracy(cells),
            rmse=variable_rmse,
            cell_count=len(cells),
            matched_count=sum(o.matched for o in cells),
            excluded_count=excluded_count(cells),
        )
    return ImputationReport(
        per_variable=per_variable,
        summary_accuracy=accuracy(outcomes),
        summary_find_accuracy=find_accuracy(outcomes),
        summary_rmse=summary_rmse(rmses) if rmses else None,
        excluded_total=excluded_count(outcomes),
    )


def render_report_table(report: ImputationReport, title: str = "") -> str:
    """Fixed-width text table: one row per variable plus a Summary row."""

    def fmt(value: float | None, places: int = 4) -> str:
        return "-" if value is None else f"{value:.{places}f}"

    width = max([len("Variable")] + [len(v) for v in report.per_variable])
    header = (
        f"{'Variable':<{width}}  {'Cells':>5}  {'Match':>5}  {'Excl':>4}  "
        f"{'Accuracy':>8}  {'FindAcc':>8}  {'RMSE':>10}"
    )
    lines = []
    if title:
        lines.append(title)
    lines.append(header)
    lines.append("-" * len(header))
    for variable in sorted(report.per_variable):
        r = report.per_variable[variable]
        lines.append(
            f"{variable:<{width}}  {r.cell_count:>5}  {r.matched_count:>5}  {r.excluded_count:>4}  "
            f"{fmt(r.accuracy):>8}  {fmt(r.find_accuracy):>8}  {fmt(r.rmse):>10}"
        )
    lines.append(
        f"{'Summary':<{width}}  {sum(r.cell_count for r in report.per_variable.values()):>5}  "
        f"{sum(r.matched_count for r in report.per_variable.values()):>5}  "
        f"{report.excluded_total:>4}  {fmt(report.summary_accuracy):>8}  "
        f"{fmt(report.summary_find_accuracy):>8}  {fmt(report.summary_rmse):>10}"
    )
    return "\n".join(lines)
