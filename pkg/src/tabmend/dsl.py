"""Constrained formula language: parse, print, evaluate, fill a column.

Generated "code" in this package targets this small language instead of a
general-purpose one, which makes every candidate formula safe to execute and
cheap to verify. Grammar (``#`` starts a line comment)::

    program   := letdef* targetdef
    letdef    := "let" IDENT "=" expr ";"
    targetdef := "target" IDENT "=" expr ";"
    expr      := term (("+"|"-") term)*
    term      := factor (("*"|"/") factor)*
    factor    := NUMBER | ref | call | "(" expr ")" | "-" factor
    ref       := IDENT "[" "t" (("+"|"-") INT)? "]" | IDENT
    call      := ("mean"|"sum"|"min"|"max") "(" expr "," SINT "," SINT ")"
               | ("sqrt"|"abs") "(" expr ")"
               | ("pow"|"max2"|"min2") "(" expr "," expr ")"

A bare identifier is shorthand for ``ident[t]``. References are row-relative:
``close[t-1]`` reads one row above the anchor. Window aggregates take
inclusive signed row offsets (``lo <= hi``) and evaluate their body once per
window row with the anchor rebound to that row, so per-step expressions like
``close[t] - close[t-1]`` work inside a window. The target column may refer to
its own earlier rows (``ema5[t-1]``): stored cells are read back directly and
missing ones are recomputed recursively under a budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Union

from .errors import TabmendError
from .tabular import NUMERIC, Cell, CellLocation, ColumnSchema, OutOfBounds, Table, UnknownColumn

WINDOW_FNS = ("mean", "sum", "min", "max")
SCALAR_FN_ARITY = {"sqrt": 1, "abs": 1, "pow": 2, "max2": 2, "min2": 2}

DEFAULT_RECURSION_BUDGET = 64


class DslError(TabmendError):
    pass


class FormulaSyntaxError(DslError):
    def __init__(self, line: int, col: int, expected: str) -> None:
        self.line = line
        self.col = col
        self.expected = expected
        super().__init__(f"line {line}, col {col}: {expected}")


class DuplicateLet(DslError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"name {name!r} bound more than once")


class ArityError(DslError):
    def __init__(self, fn: str, got: int) -> None:
        self.fn = fn
        self.got = got
        super().__init__(f"{fn} applied to {got} arguments")


class UnknownIdentifier(DslError):
    def __init__(self, name: str, position: tuple[int, int] | None = None) -> None:
        self.name = name
        self.position = position
        where = f" at line {position[0]}, col {position[1]}" if position else ""
        super().__init__(f"unknown identifier {name!r}{where}")


class NonNumericColumn(DslError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"column {name!r} is not numeric")


class EvalError(DslError):
    """Base class for per-cell evaluation failures."""


class WindowUnderflow(EvalError):
    def __init__(self, row: int, needed_offset: int) -> None:
        self.row = row
        self.needed_offset = needed_offset
        super().__init__(f"row {row}: offset {needed_offset:+d} leaves the table")


class MissingOperand(EvalError):
    def __init__(self, location: CellLocation) -> None:
        self.location = location
        super().__init__(f"missing operand at row {location.row}, column {location.column}")


class DivisionByZero(EvalError):
    def __init__(self, row: int) -> None:
        self.row = row
        super().__init__(f"division by zero at row {row}")


class RecursionExhausted(EvalError):
    def __init__(self, row: int) -> None:
        self.row = row
        super().__init__(f"self-reference recursion budget exhausted at row {row}")


class SelfReferenceForward(EvalError):
    def __init__(self, row: int, name: str) -> None:
        self.row = row
        self.name = name
        super().__init__(f"row {row}: {name!r} may only reference its own earlier rows")


class DomainError(EvalError):
    def __init__(self, row: int, detail: str) -> None:
        self.row = row
        super().__init__(f"row {row}: {detail}")


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Ref:
    name: str
    offset: int = 0
    pos: tuple[int, int] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class ScalarFn:
    fn: str
    args: tuple["Expr", ...]

    def __post_init__(self) -> None:
        want = SCALAR_FN_ARITY.get(self.fn)
        if want is None:
            raise ArityError(self.fn, len(self.args))
        if len(self.args) != want:
            raise ArityError(self.fn, len(self.args))


@dataclass(frozen=True)
class WindowAgg:
    fn: str
    body: "Expr"
    lo: int
    hi: int

    def __post_init__(self) -> None:
        if self.fn not in WINDOW_FNS:
            raise ArityError(self.fn, 3)
        if self.lo > self.hi:
            raise FormulaSyntaxError(0, 0, "window bounds must satisfy lo <= hi")


Expr = Union[Const, Ref, BinOp, ScalarFn, WindowAgg]


@dataclass(frozen=True)
class FormulaProgram:
    lets: tuple[tuple[str, Expr], ...]
    target_name: str
    target_expr: Expr


@dataclass
class EvalContext:
    """Row-anchored evaluation settings for one cell computation."""

    table: Table
    anchor_row: int
    target_column: str
    recursion_budget: int = DEFAULT_RECURSION_BUDGET


# --------------------------------------------------------------------------
# Tokenizer / parser


class _Token(NamedTuple):
    kind: str  # ident | number | sym | eof
    text: str
    line: int
    col: int


_SYMBOLS = set("+-*/()[],;=")


def _tokenize(source: str) -> list[_Token]:
    out: list[_Token] = []
    i, line, col = 0, 1, 1
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
        elif ch in " \t\r":
            i += 1
            col += 1
        elif ch == "#":
            while i < n and source[i] != "\n":
                i += 1
        elif ch.isalpha() or ch == "_":
            start, start_col = i, col
            while i < n and (source[i].isalnum() or source[i] == "_"):
                i += 1
                col += 1
            out.append(_Token("ident", source[start:i], line, start_col))
        elif ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            start, start_col = i, col
            while i < n and source[i].isdigit():
                i += 1
            if i < n and source[i] == ".":
                i += 1
                while i < n and source[i].isdigit():
                    i += 1
            if i < n and source[i] in "eE":
                j = i + 1
                if j < n and source[j] in "+-":
                    j += 1
                if j < n and source[j].isdigit():
                    i = j
                    while i < n and source[i].isdigit():
                        i += 1
            text = source[start:i]
            col = start_col + len(text)
            out.append(_Token("number", text, line, start_col))
        elif ch in _SYMBOLS:
            out.append(_Token("sym", ch, line, col))
            i += 1
            col += 1
        else:
            raise FormulaSyntaxError(line, col, f"unexpected character {ch!r}")
    out.append(_Token("eof", "", line, col))
    return out


class _Parser:
    def __init__(self, tokens: list[_Token]) -> None:
        self.tokens = tokens
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_sym(self, sym: str) -> _Token:
        tok = self.peek()
        if tok.kind != "sym" or tok.text != sym:
            raise FormulaSyntaxError(tok.line, tok.col, f"expected {sym!r}")
        return self.advance()

    def at_sym(self, *syms: str) -> bool:
        tok = self.peek()
        return tok.kind == "sym" and tok.text in syms

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "ident" and tok.text == word

    # grammar rules -------------------------------------------------------

    def program(self) -> FormulaProgram:
        lets: list[tuple[str, Expr]] = []
        let_names: set[str] = set()
        while self.at_keyword("let"):
            self.advance()
            name_tok = self.peek()
            if name_tok.kind != "ident":
                raise FormulaSyntaxError(name_tok.line, name_tok.col, "expected a name after 'let'")
            self.advance()
            if name_tok.text in let_names:
                raise DuplicateLet(name_tok.text)
            self.expect_sym("=")
            body = self.expr()
            self.expect_sym(";")
            lets.append((name_tok.text, body))
            let_names.add(name_tok.text)
        tok = self.peek()
        if not self.at_keyword("target"):
            raise FormulaSyntaxError(tok.line, tok.col, "expected 'let' or 'target'")
        self.advance()
        name_tok = self.peek()
        if name_tok.kind != "ident":
            raise FormulaSyntaxError(name_tok.line, name_tok.col, "expected a name after 'target'")
        self.advance()
        if name_tok.text in let_names:
            raise DuplicateLet(name_tok.text)
        self.expect_sym("=")
        target_expr = self.expr()
        self.expect_sym(";")
        tok = self.peek()
        if tok.kind != "eof":
            raise FormulaSyntaxError(tok.line, tok.col, "expected end of input")
        program = FormulaProgram(tuple(lets), name_tok.text, target_expr)
        _check_let_references(program)
        return program

    def expr(self) -> Expr:
        left = self.term()
        while self.at_sym("+", "-"):
            op = self.advance().text
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.factor()
        while self.at_sym("*", "/"):
            op = self.advance().text
            left = BinOp(op, left, self.factor())
        return left

    def factor(self) -> Expr:
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return Const(float(tok.text))
        if tok.kind == "sym" and tok.text == "-":
            self.advance()
            inner = self.factor()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return BinOp("-", Const(0.0), inner)
        if tok.kind == "sym" and tok.text == "(":
            self.advance()
            inner = self.expr()
            self.expect_sym(")")
            return inner
        if tok.kind == "ident":
            self.advance()
            if self.at_sym("("):
                return self.call(tok)
            if self.at_sym("["):
                return self.bracket_ref(tok)
            return Ref(tok.text, 0, (tok.line, tok.col))
        raise FormulaSyntaxError(tok.line, tok.col, "expected a number, name, '(' or '-'")

    def bracket_ref(self, name_tok: _Token) -> Ref:
        self.expect_sym("[")
        anchor = self.peek()
        if anchor.kind != "ident" or anchor.text != "t":
            raise FormulaSyntaxError(anchor.line, anchor.col, "expected 't' inside brackets")
        self.advance()
        offset = 0
        if self.at_sym("+", "-"):
            sign = -1 if self.advance().text == "-" else 1
            num = self.peek()
            if num.kind != "number" or not num.text.isdigit():
                raise FormulaSyntaxError(num.line, num.col, "expected an integer offset")
            self.advance()
            offset = sign * int(num.text)
        self.expect_sym("]")
        return Ref(name_tok.text, offset, (name_tok.line, name_tok.col))

    def call(self, name_tok: _Token) -> Expr:
        fn = name_tok.text
        if fn not in WINDOW_FNS and fn not in SCALAR_FN_ARITY:
            raise FormulaSyntaxError(name_tok.line, name_tok.col, f"unknown function {fn!r}")
        self.expect_sym("(")
        args: list[Expr] = []
        positions: list[_Token] = []
        if not self.at_sym(")"):
            positions.append(self.peek())
            args.append(self.expr())
            while self.at_sym(","):
                self.advance()
                positions.append(self.peek())
                args.append(self.expr())
        self.expect_sym(")")
        if fn in SCALAR_FN_ARITY:
            if len(args) != SCALAR_FN_ARITY[fn]:
                raise ArityError(fn, len(args))
            return ScalarFn(fn, tuple(args))
        if len(args) != 3:
            raise ArityError(fn, len(args))
        lo = self._window_bound(args[1], positions[1])
        hi = self._window_bound(args[2], positions[2])
        if lo > hi:
            raise FormulaSyntaxError(
                positions[1].line, positions[1].col, "window bounds must satisfy lo <= hi"
            )
        return WindowAgg(fn, args[0], lo, hi)

    @staticmethod
    def _window_bound(arg: Expr, tok: _Token) -> int:
        if isinstance(arg, Const) and float(arg.value).is_integer():
            return int(arg.value)
        raise FormulaSyntaxError(tok.line, tok.col, "expected an integer window bound")


def _check_let_references(program: FormulaProgram) -> None:
    """Reject uses of a let name at or before its own definition."""
    all_lets = {name for name, _ in program.lets}

    def walk(e: Expr, visible: set[str]) -> None:
        if isinstance(e, Ref):
            if e.name in all_lets and e.name not in visible:
                raise UnknownIdentifier(e.name, e.pos)
        elif isinstance(e, BinOp):
            walk(e.lhs, visible)
            walk(e.rhs, visible)
        elif isinstance(e, ScalarFn):
            for a in e.args:
                walk(a, visible)
        elif isinstance(e, WindowAgg):
            walk(e.body, visible)

    visible: set[str] = set()
    for name, body in program.lets:
        walk(body, visible)
        visible.add(name)
    walk(program.target_expr, visible)


def parse_program(source: str) -> FormulaProgram:
    """Parse source text into a validated program."""
    return _Parser(_tokenize(source)).program()


# --------------------------------------------------------------------------
# Canonical formatting


def _fmt_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _fmt(e: Expr, parenthesize: bool) -> str:
    if isinstance(e, Const):
        return _fmt_number(e.value)
    if isinstance(e, Ref):
        if e.offset == 0:
            return f"{e.name}[t]"
        return f"{e.name}[t{e.offset:+d}]"
    if isinstance(e, BinOp):
        inner = f"{_fmt(e.lhs, True)} {e.op} {_fmt(e.rhs, True)}"
        return f"({inner})" if parenthesize else inner
    if isinstance(e, ScalarFn):
        args = ", ".join(_fmt(a, False) for a in e.args)
        return f"{e.fn}({args})"
    if isinstance(e, WindowAgg):
        return f"{e.fn}({_fmt(e.body, False)}, {e.lo}, {e.hi})"
    raise TypeError(f"not an expression: {e!r}")


def format_program(program: FormulaProgram) -> str:
    """Canonical text: one statement per line, every nested BinOp parenthesized."""
    lines = [f"let {name} = {_fmt(body, False)};" for name, body in program.lets]
    lines.append(f"target {program.target_name} = {_fmt(program.target_expr, False)};")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Evaluation


class _Evaluator:
    """Interprets a program against live row storage.

    ``rows`` may be the mutable working copy used by impute_column; cells
    written between run() calls are visible to later evaluations.
    """

    def __init__(
        self,
        program: FormulaProgram,
        columns: list[ColumnSchema],
        rows: list[list[Cell]],
        recursion_budget: int = DEFAULT_RECURSION_BUDGET,
    ) -> None:
        self.program = program
        self.rows = rows
        self.budget = recursion_budget
        self.col_index = {c.name: i for i, c in enumerate(columns)}
        kinds = {c.name: c.kind for c in columns}

        target = program.target_name
        if target not in self.col_index:
            raise UnknownColumn(target)
        if kinds[target] != NUMERIC:
            raise NonNumericColumn(target)
        self.target = target
        self.target_col = self.col_index[target]

        self.lets = dict(program.lets)
        for name in self.lets:
            if name in self.col_index:
                raise DuplicateLet(name)

        # Bind-time resolution of every referenced name.
        def check(e: Expr) -> None:
            if isinstance(e, Ref):
                if e.name in self.lets or e.name == target:
                    return
                if e.name not in self.col_index:
                    raise UnknownIdentifier(e.name, e.pos)
                if kinds[e.name] != NUMERIC:
                    raise NonNumericColumn(e.name)
            elif isinstance(e, BinOp):
                check(e.lhs)
                check(e.rhs)
            elif isinstance(e, ScalarFn):
                for a in e.args:
                    check(a)
            elif isinstance(e, WindowAgg):
                check(e.body)

        for _, body in program.lets:
            check(body)
        check(program.target_expr)
        self.memo: dict[int, float] = {}

    def run(self, row: int) -> float:
        if not (0 <= row < len(self.rows)):
            raise OutOfBounds(f"row {row} outside table")
        self.memo = {}
        return self._eval(self.program.target_expr, row, self.budget)

    def _eval(self, e: Expr, row: int, budget: int) -> float:
        kind = type(e)
        if kind is Ref:
            body = self.lets.get(e.name)
            if body is not None:
                return self._eval(body, row + e.offset, budget)
            r = row + e.offset
            if e.name == self.target:
                if e.offset >= 0:
                    raise SelfReferenceForward(row, e.name)
                if r < 0 or r >= len(self.rows):
                    raise WindowUnderflow(row, e.offset)
                cell = self.rows[r][self.target_col]
                if cell is not None:
                    return cell  # type: ignore[return-value]
                if r in self.memo:
                    return self.memo[r]
                if budget <= 0:
                    raise RecursionExhausted(row)
                value = self._eval(self.program.target_expr, r, budget - 1)
                self.memo[r] = value
                return value
            if r < 0 or r >= len(self.rows):
                raise WindowUnderflow(row, e.offset)
            col = self.col_index[e.name]
            cell = self.rows[r][col]
            if cell is None:
                raise MissingOperand(CellLocation(r, col))
            return cell  # type: ignore[return-value]
        if kind is BinOp:
            a = self._eval(e.lhs, row, budget)
            b = self._eval(e.rhs, row, budget)
            op = e.op
            if op == "+":
                value = a + b
            elif op == "-":
                value = a - b
            elif op == "*":
                value = a * b
            else:
                if b == 0.0:
                    raise DivisionByZero(row)
                value = a / b
            if not math.isfinite(value):
                raise DomainError(row, f"non-finite result of {op!r}")
            return value
        if kind is Const:
            return e.value
        if kind is WindowAgg:
            lo_row = row + e.lo
            hi_row = row + e.hi
            if lo_row < 0:
                raise WindowUnderflow(row, e.lo)
            if hi_row >= len(self.rows):
                raise WindowUnderflow(row, e.hi)
            body = e.body
            fn = e.fn
            if fn == "mean" or fn == "sum":
                total = 0.0
                for r in range(lo_row, hi_row + 1):
                    total += self._eval(body, r, budget)
                if fn == "sum":
                    return total
                return total / (hi_row - lo_row + 1)
            best = self._eval(body, lo_row, budget)
            for r in range(lo_row + 1, hi_row + 1):
                v = self._eval(body, r, budget)
                if (fn == "min" and v < best) or (fn == "max" and v > best):
                    best = v
            return best
        # ScalarFn
        fn = e.fn
        if fn == "sqrt":
            a = self._eval(e.args[0], row, budget)
            if a < 0:
                raise DomainError(row, "sqrt of a negative number")
            return math.sqrt(a)
        if fn == "abs":
            return abs(self._eval(e.args[0], row, budget))
        a = self._eval(e.args[0], row, budget)
        b = self._eval(e.args[1], row, budget)
        if fn == "pow":
            try:
                value = math.pow(a, b)
            except (ValueError, OverflowError) as exc:
                raise DomainError(row, f"pow({a!r}, {b!r}) undefined") from exc
            if not math.isfinite(value):
                raise DomainError(row, "non-finite result of pow")
            return value
        if fn == "max2":
            return max(a, b)
        return min(a, b)


def evaluate_cell(
    program: FormulaProgram,
    table: Table,
    row: int,
    recursion_budget: int = DEFAULT_RECURSION_BUDGET,
) -> float:
    """Value of the program's target expression anchored at ``row``."""
    return _Evaluator(program, table.columns, table.rows, recursion_budget).run(row)


def impute_column(
    program: FormulaProgram,
    table: Table,
    recursion_budget: int = DEFAULT_RECURSION_BUDGET,
) -> tuple[Table, list[tuple[CellLocation, float | EvalError]]]:
    """Fill every missing cell of the target column, ascending row order.

    Successful values are written into the returned table and become visible
    to later (self-recurrent) evaluations; failures are recorded per cell and
    never abort the batch. Non-missing cells are never modified.
    """
    working = [list(r) for r in table.rows]
    evaluator = _Evaluator(program, table.columns, working, recursion_budget)
    tcol = evaluator.target_col
    results: list[tuple[CellLocation, float | EvalError]] = []
    for r, row in enumerate(working):
        if row[tcol] is not None:
            continue
        loc = CellLocation(r, tcol)
        try:
            value = evaluator.run(r)
        except EvalError as err:
            results.append((loc, err))
            continue
        row[tcol] = value
        results.append((loc, value))
    return Table(list(table.columns), working, table.provenance), results
