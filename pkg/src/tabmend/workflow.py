"""End-to-end imputation workflow.

One run fixes one target column of one table:

1. sample a contiguous block of fully clean rows and chunk the table;
2. mask a few known cells of the target inside that block;
3. loop: ask the backend for a solution sketch, turn it into a program,
   execute it on the masked block, and compare the filled cells against the
   held-back truth within the configured tolerance; on mismatch ask the
   backend to reflect on the failed sketch and retry, up to ``retry_limit``
   extra attempts;
4. on success, finalize the program (canonical formatting plus an optional
   plain-language description) and execute it across the whole table.

Everything the backend said and every attempt's verdict is recorded in the
run object so a human can audit the final program. When every attempt fails
the outcome is "unable to impute" and the input table is returned unchanged.

In ``dsl`` mode candidate programs are parsed and interpreted by
:mod:`tabmend.dsl`. In ``sandbox`` mode the fenced block is treated as opaque
program text and handed to a user-configured external command; its output is
validated so that, whatever the command did, only missing cells of the target
column can change.
"""

from __future__ import annotations

import json
import random
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .dsl import (
    DslError,
    EvalError,
    FormulaProgram,
    evaluate_cell,
    format_program,
    impute_column,
    parse_program,
)
from .errors import TabmendError
from .gateway import (
    Backend,
    ChatExchange,
    ChatMessage,
    GatewayError,
    MarkerNotFound,
    extract_block,
    get_template,
    output_marker,
    render_template,
)
from .synth import MaskRecord, mask_column
from .tabular import (
    NUMERIC,
    CellLocation,
    Table,
    UnknownColumn,
    cells_equal,
    missing_locations,
    parse_csv,
    slice_rows,
    write_csv,
)

DIAGNOSIS_HEADING = "### Diagnosis:"
NEW_SKETCH_HEADING = "### New Sketch:"


class WorkflowError(TabmendError):
    pass


class NoCleanBlock(WorkflowError):
    def __init__(self, k: int) -> None:
        self.k = k
        super().__init__(f"no contiguous block of {k} fully clean rows")


class NoMissingValues(WorkflowError):
    def __init__(self, column: str) -> None:
        self.column = column
        super().__init__(f"column {column!r} has no missing values to impute")


class MalformedReflection(WorkflowError):
    def __init__(self) -> None:
        super().__init__(f"reflection lacks the {NEW_SKETCH_HEADING!r} heading")


class ShapeMismatch(WorkflowError):
    pass


class SandboxFailure(WorkflowError):
    def __init__(self, exit_code: int, stderr_excerpt: str) -> None:
        self.exit_code = exit_code
        self.stderr_excerpt = stderr_excerpt
        super().__init__(f"sandbox command exited {exit_code}: {stderr_excerpt}")


class ContaminatedOutput(WorkflowError):
    def __init__(self, locations: list[CellLocation]) -> None:
        self.locations = locations
        super().__init__(f"{len(locations)} cell(s) outside the imputation target changed")


@dataclass
class WorkflowConfig:
    """All knobs of one imputation run.

    ``sample_rows`` is the size of the clean block, ``mask_rows`` how many of
    its target cells are hidden from the backend for verification, and
    ``warmup_rows`` the leading prefix of the block where the target formula
    is undefined (masking avoids it). Defaults follow the package-wide
    conventions: three retries, 20-row sample, 2 masked cells, 30-row chunks.
    """

    target_column: str
    epsilon: float
    sample_rows: int = 20
    mask_rows: int = 2
    chunk_size: int = 30
    retry_limit: int = 3
    warmup_rows: int = 0
    mode: str = "dsl"  # "dsl" | "sandbox"
    sandbox_command: str | None = None
    sample_seed: int = 0
    mask_seed: int = 0
    recursion_budget: int = 64

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise WorkflowError("epsilon must be positive")
        if self.retry_limit < 0:
            raise WorkflowError("retry_limit must be >= 0")
        if self.mask_rows < 1:
            raise WorkflowError("mask_rows must be >= 1")
        if self.sample_rows <= self.mask_rows + self.warmup_rows:
            raise WorkflowError("sample_rows must exceed mask_rows + warmup_rows")
        if self.chunk_size < 1:
            raise WorkflowError("chunk_size must be >= 1")
        if self.mode not in ("dsl", "sandbox"):
            raise WorkflowError(f"unknown mode {self.mode!r}")
        if self.mode == "sandbox" and not self.sandbox_command:
            raise WorkflowError("sandbox mode needs sandbox_command")

    def to_json(self) -> dict:
        return {
            "target_column": self.target_column,
            "epsilon": self.epsilon,
            "sample_rows": self.sample_rows,
            "mask_rows": self.mask_rows,
            "chunk_size": self.chunk_size,
            "retry_limit": self.retry_limit,
            "warmup_rows": self.warmup_rows,
            "mode": self.mode,
            "sandbox_command": self.sandbox_command,
            "sample_seed": self.sample_seed,
            "mask_seed": self.mask_seed,
            "recursion_budget": self.recursion_budget,
        }

    @staticmethod
    def from_json(doc: Mapping) -> "WorkflowConfig":
        known = {f for f in WorkflowConfig.__dataclass_fields__}
        return WorkflowConfig(**{k: v for k, v in doc.items() if k in known})


@dataclass
class CellCheck:
    location: CellLocation
    imputed: float | None
    truth: float
    matched: bool
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "row": self.location.row,
            "col": self.location.column,
            "imputed": self.imputed,
            "truth": self.truth,
            "matched": self.matched,
            "error": self.error,
        }


@dataclass
class CloseMatchVerdict:
    per_cell: list[CellCheck]
    all_matched: bool
    contaminated: list[CellLocation] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "per_cell": [c.to_json() for c in self.per_cell],
            "all_matched": self.all_matched,
            "contaminated": [[l.row, l.column] for l in self.contaminated],
        }


@dataclass
class Attempt:
    sketch: str
    program_source: str | None = None
    failure: str | None = None
    verdict: CloseMatchVerdict | None = None
    diagnosis: str | None = None  # reflection that followed this attempt

    def to_json(self) -> dict:
        return {
            "sketch": self.sketch,
            "program_source": self.program_source,
            "failure": self.failure,
            "verdict": self.verdict.to_json() if self.verdict else None,
            "diagnosis": self.diagnosis,
        }


SUCCESS = "success"
UNABLE_TO_IMPUTE = "unable_to_impute"


@dataclass
class WorkflowOutcome:
    status: str
    program: FormulaProgram | None = None
    program_text: str | None = None  # sandbox-mode artifact
    description: str | None = None
    reason: str | None = None

    @property
    def is_success(self) -> bool:
        return self.status == SUCCESS

    def final_text(self) -> str | None:
        if self.program is not None:
            return format_program(self.program)
        return self.program_text


@dataclass
class WorkflowRun:
    config: WorkflowConfig
    transcript: list[ChatExchange] = field(default_factory=list)
    attempts: list[Attempt] = field(default_factory=list)
    outcome: WorkflowOutcome = field(
        default_factory=lambda: WorkflowOutcome(UNABLE_TO_IMPUTE, reason="not started")
    )


@dataclass
class CellFill:
    """One attempted fill on the full table (metrics-ready diff entry)."""

    location: CellLocation
    value: float | None
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "row": self.location.row,
            "col": self.location.column,
            "value": self.value,
            "error": self.error,
        }


# ---------------------------------------------------------------------------
# Stages


def sample_clean_and_chunk(table: Table, config: WorkflowConfig) -> tuple[Table, list[Table]]:
    """A seeded contiguous block of fully clean rows, plus consecutive chunks.

    Contiguity matters: window and recurrence formulas are undefined on
    gapped row samples. "Clean" means no missing cell in any column, so the
    block is usable whatever inputs the eventual formula picks.
    """
    k = config.sample_rows
    n = table.n_rows
    clean = [all(cell is not None for cell in row) for row in table.rows]
    run_length = 0
    starts = []
    for i, ok in enumerate(clean):
        run_length = run_length + 1 if ok else 0
        if run_length >= k:
            starts.append(i - k + 1)
    if not starts:
        raise NoCleanBlock(k)
    start = random.Random(config.sample_seed).choice(starts)
    block = slice_rows(table, start, start + k)
    chunks = [slice_rows(table, i, min(i + config.chunk_size, n)) for i in range(0, n, config.chunk_size)]
    return block, chunks


def mask_clean_subset(clean: Table, config: WorkflowConfig) -> tuple[Table, MaskRecord]:
    return mask_column(
        clean,
        config.target_column,
        count=config.mask_rows,
        seed=config.mask_seed,
        exclude_warmup=config.warmup_rows,
    )


def generate_sketch(
    backend: Backend,
    masked_table: Table,
    prior_reflection: str | None = None,
    mode: str = "dsl",
) -> tuple[str, ChatExchange | None]:
    """First attempt renders the sketch prompt; after a reflection, the
    reflector's new sketch is used directly (no fresh sketch call)."""
    if prior_reflection is not None:
        return prior_reflection, None
    template = get_template("domain_sketch", mode)
    prompt = render_template(template, {"data": write_csv(masked_table)})
    response, exchange = backend.complete([ChatMessage("user", prompt)], "domain_sketch")
    return response, exchange


def generate_code(
    backend: Backend,
    sketch_text: str,
    masked_table: Table,
    config: WorkflowConfig,
) -> tuple[FormulaProgram | None, str | None, str | None, ChatExchange]:
    """Returns (program, extracted_source, failure, exchange).

    Marker and parse failures are reported as attempt failures, not raised:
    a backend that violates the output contract is a recoverable fault.
    """
    template = get_template("code_gen", config.mode)
    variables = {"code": sketch_text, "data": write_csv(masked_table)}
    if config.mode == "sandbox":
        variables["save_path"] = "imputed.csv"
    prompt = render_template(template, variables)
    response, exchange = backend.complete([ChatMessage("user", prompt)], "code_gen")
    marker = output_marker(config.mode)
    try:
        block = extract_block(response, marker)
    except MarkerNotFound:
        return None, None, f"no {marker!r} block in the response", exchange
    if config.mode == "sandbox":
        return None, block, None, exchange
    try:
        program = parse_program(block)
    except DslError as exc:
        return None, block, f"program rejected: {exc}", exchange
    if program.target_name != config.target_column:
        return None, block, (
            f"program targets {program.target_name!r}, expected {config.target_column!r}"
        ), exchange
    return program, block, None, exchange


def evaluate_close_match(
    imputed: Table,
    truth_record: MaskRecord,
    epsilon: float,
    baseline: Table | None = None,
    cell_errors: Mapping[CellLocation, str] | None = None,
) -> CloseMatchVerdict:
    """Tolerance check of filled cells against held-back truth.

    A cell matches iff it holds a number within ``epsilon`` of the truth;
    still-missing or errored cells do not match. When ``baseline`` (the table
    before imputation) is given, any change outside the recorded locations is
    flagged as contamination and fails the verdict.
    """
    masked_locs = set(truth_record.locations)
    for loc in truth_record.locations:
        if not (0 <= loc.row < imputed.n_rows and 0 <= loc.column < len(imputed.columns)):
            raise ShapeMismatch(f"recorded location {loc} outside the imputed table")
    contaminated: list[CellLocation] = []
    if baseline is not None:
        if baseline.n_rows != imputed.n_rows or baseline.column_names != imputed.column_names:
            raise ShapeMismatch("imputed table shape differs from the masked table")
        for r, (row_a, row_b) in enumerate(zip(baseline.rows, imputed.rows)):
            for c, (a, b) in enumerate(zip(row_a, row_b)):
                loc = CellLocation(r, c)
                if loc in masked_locs:
                    continue
                if not cells_equal(a, b):
                    contaminated.append(loc)
    errors = dict(cell_errors or {})
    per_cell: list[CellCheck] = []
    for loc in truth_record.locations:
        truth = truth_record.truth[loc]
        cell = imputed.rows[loc.row][loc.column]
        if isinstance(cell, float):
            matched = abs(cell - truth) <= epsilon
            per_cell.append(CellCheck(loc, cell, truth, matched, errors.get(loc)))
        else:
            per_cell.append(CellCheck(loc, None, truth, False, errors.get(loc, "cell not filled")))
    all_matched = not contaminated and all(c.matched for c in per_cell)
    return CloseMatchVerdict(per_cell, all_matched, contaminated)


def reflect_step(
    backend: Backend,
    wrong_sketch: str,
    masked_table: Table,
    mode: str = "dsl",
) -> tuple[str, str, ChatExchange]:
    """Returns (new_sketch, diagnosis, exchange)."""
    template = get_template("reflector", mode)
    prompt = render_template(
        template, {"wrong_sketch": wrong_sketch, "dirty_data": write_csv(masked_table)}
    )
    response, exchange = backend.complete([ChatMessage("user", prompt)], "reflector")
    if NEW_SKETCH_HEADING not in response:
        raise MalformedReflection()
    head, _, tail = response.partition(NEW_SKETCH_HEADING)
    diagnosis = head
    if DIAGNOSIS_HEADING in head:
        diagnosis = head.split(DIAGNOSIS_HEADING, 1)[1]
    return tail.strip(), diagnosis.strip(), exchange


def summarize_program(
    backend: Backend,
    outcome_program: FormulaProgram | str,
    config: WorkflowConfig,
) -> tuple[FormulaProgram | None, str | None, str | None, list[ChatExchange]]:
    """Finalize a validated program for reuse and review.

    dsl mode: the program is already row-relative, so the reusable form is its
    canonical text; the backend is asked only for a plain-language description
    and a failure there is non-fatal. sandbox mode: the backend rewrites the
    program text into a generalized one, extracted from the fenced block.
    """
    exchanges: list[ChatExchange] = []
    if config.mode == "dsl":
        assert isinstance(outcome_program, FormulaProgram)
        description = None
        template = get_template("summarizer", "dsl")
        prompt = render_template(
            template,
            {"code": format_program(outcome_program), "clean_data_save_path": "clean.csv"},
        )
        try:
            description, exchange = backend.complete([ChatMessage("user", prompt)], "summarizer")
            exchanges.append(exchange)
        except GatewayError:
            description = None
        return outcome_program, None, description, exchanges
    assert isinstance(outcome_program, str)
    template = get_template("summarizer", "sandbox")
    prompt = render_template(
        template, {"code": outcome_program, "clean_data_save_path": "clean.csv"}
    )
    response, exchange = backend.complete([ChatMessage("user", prompt)], "summarizer")
    exchanges.append(exchange)
    summarized = extract_block(response, output_marker("sandbox"))
    return None, summarized, None, exchanges


def _execute_candidate(
    program: FormulaProgram | None,
    program_text: str | None,
    masked: Table,
    config: WorkflowConfig,
) -> tuple[Table, dict[CellLocation, str]]:
    """Run a candidate on the masked block; per-cell failures become notes."""
    if config.mode == "dsl":
        assert program is not None
        filled, results = impute_column(program, masked, config.recursion_budget)
        errors = {loc: str(err) for loc, err in results if isinstance(err, EvalError)}
        return filled, errors
    assert program_text is not None
    filled = _run_sandbox(program_text, masked, config)
    return filled, {}


def run_sketch_loop(
    backend: Backend,
    masked: Table,
    record: MaskRecord,
    config: WorkflowConfig,
) -> WorkflowRun:
    """The generate/execute/evaluate/reflect loop over the masked clean block.

    At most ``retry_limit + 1`` attempts are made. Reflection happens only
    when another attempt will follow; a malformed reflection consumes the
    retry and the next attempt regenerates a sketch from scratch.
    """
    run = WorkflowRun(config=config)
    prior_reflection: str | None = None
    for attempt_index in range(config.retry_limit + 1):
        sketch, exchange = generate_sketch(backend, masked, prior_reflection, config.mode)
        prior_reflection = None
        if exchange is not None:
            run.transcript.append(exchange)
        attempt = Attempt(sketch=sketch)
        run.attempts.append(attempt)

        program, source, failure, exchange = generate_code(backend, sketch, masked, config)
        run.transcript.append(exchange)
        attempt.program_source = source
        if failure is None:
            try:
                imputed, cell_errors = _execute_candidate(program, source, masked, config)
                attempt.verdict = evaluate_close_match(
                    imputed, record, config.epsilon, baseline=masked, cell_errors=cell_errors
                )
            except (WorkflowError, DslError) as exc:
                failure = f"execution failed: {exc}"
        if failure is not None:
            attempt.failure = failure

        if attempt.verdict is not None and attempt.verdict.all_matched:
            final_program, final_text, description, exchanges = summarize_program(
                backend, program if config.mode == "dsl" else source, config
            )
            run.transcript.extend(exchanges)
            run.outcome = WorkflowOutcome(
                SUCCESS,
                program=final_program,
                program_text=final_text,
                description=description,
            )
            return run

        if attempt_index < config.retry_limit:
            try:
                new_sketch, diagnosis, exchange = reflect_step(backend, sketch, masked, config.mode)
                run.transcript.append(exchange)
                attempt.diagnosis = diagnosis
                prior_reflection = new_sketch
            except MalformedReflection:
                attempt.diagnosis = None
                prior_reflection = None

    last = run.attempts[-1]
    reason = last.failure or "filled values did not match the held-back cells"
    run.outcome = WorkflowOutcome(UNABLE_TO_IMPUTE, reason=f"unable to impute: {reason}")
    return run


def _chunk_offsets(chunks: Iterable[Table]) -> list[tuple[int, int]]:
    offsets = []
    start = 0
    for chunk in chunks:
        offsets.append((start, start + chunk.n_rows))
        start += chunk.n_rows
    return offsets


def execute_on_table(
    outcome: WorkflowOutcome,
    table: Table,
    chunks: list[Table],
    config: WorkflowConfig,
) -> tuple[Table, list[CellFill]]:
    """Apply the finalized program to every missing target cell of the table.

    dsl mode works chunk by chunk but evaluates each cell against the full
    (progressively filled) table, so windows that cross a chunk boundary see
    real neighbours instead of a truncated chunk. sandbox mode hands each
    chunk to the external command and validates its output before merging.
    """
    if not outcome.is_success:
        raise WorkflowError("execute_on_table needs a successful outcome")
    offsets = _chunk_offsets(chunks)
    if offsets and offsets[-1][1] != table.n_rows:
        raise ShapeMismatch("chunks do not cover the table")
    tcol = table.col_index(config.target_column)
    fills: list[CellFill] = []

    if config.mode == "dsl":
        assert outcome.program is not None
        from .dsl import _Evaluator  # package-internal use

        working = [list(r) for r in table.rows]
        evaluator = _Evaluator(outcome.program, table.columns, working, config.recursion_budget)
        for start, end in offsets:
            for r in range(start, end):
                if working[r][tcol] is not None:
                    continue
                loc = CellLocation(r, tcol)
                try:
                    value = evaluator.run(r)
                except EvalError as err:
                    fills.append(CellFill(loc, None, str(err)))
                    continue
                working[r][tcol] = value
                fills.append(CellFill(loc, value))
        return Table(list(table.columns), working, table.provenance), fills

    assert outcome.program_text is not None
    working_table = table
    for start, end in offsets:
        chunk = slice_rows(working_table, start, end)
        if not missing_locations(chunk, config.target_column):
            continue
        out_chunk = _run_sandbox(outcome.program_text, chunk, config)
        for loc in missing_locations(chunk, config.target_column):
            cell = out_chunk.rows[loc.row][loc.column]
            absolute = CellLocation(start + loc.row, tcol)
            if isinstance(cell, float):
                fills.append(CellFill(absolute, cell))
            else:
                fills.append(CellFill(absolute, None, "cell not filled"))
        rows = [list(r) for r in working_table.rows]
        for loc in missing_locations(chunk, config.target_column):
            cell = out_chunk.rows[loc.row][loc.column]
            if isinstance(cell, float):
                rows[start + loc.row][tcol] = cell
        working_table = Table(list(working_table.columns), rows, working_table.provenance)
    return working_table, fills


def _run_sandbox(program_text: str, chunk: Table, config: WorkflowConfig) -> Table:
    """Write chunk + program, run the external command, read back, validate.

    The command template must contain {program_path}, {input_csv} and
    {output_csv}. The command is trusted to execute the program but never for
    integrity: only missing cells of the target column may change.
    """
    assert config.sandbox_command is not None
    tcol = chunk.col_index(config.target_column)
    with tempfile.TemporaryDirectory(prefix="tabmend-sandbox-") as tmp:
        tmp_path = Path(tmp)
        program_path = tmp_path / "program.txt"
        input_csv = tmp_path / "input.csv"
        output_csv = tmp_path / "output.csv"
        program_path.write_text(program_text, encoding="utf-8")
        input_csv.write_text(write_csv(chunk), encoding="utf-8")
        command = config.sandbox_command.format(
            program_path=str(program_path), input_csv=str(input_csv), output_csv=str(output_csv)
        )
        proc = subprocess.run(shlex.split(command), capture_output=True, text=True)
        if proc.returncode != 0:
            raise SandboxFailure(proc.returncode, proc.stderr.strip()[:400])
        if not output_csv.exists():
            raise SandboxFailure(0, "command wrote no output file")
        out = parse_csv(output_csv.read_text(encoding="utf-8"))
    if out.n_rows != chunk.n_rows or out.column_names != chunk.column_names:
        raise ShapeMismatch("sandbox output shape differs from its input")
    contaminated = []
    for r, (row_in, row_out) in enumerate(zip(chunk.rows, out.rows)):
        for c, (a, b) in enumerate(zip(row_in, row_out)):
            if c == tcol and a is None:
                continue  # the one kind of cell allowed to change
            if not cells_equal(a, b):
                contaminated.append(CellLocation(r, c))
    if contaminated:
        raise ContaminatedOutput(contaminated)
    return out


def impute(
    table: Table,
    config: WorkflowConfig,
    backend: Backend,
) -> tuple[Table, WorkflowRun, list[CellFill]]:
    """Compose all stages for one target column.

    Returns the (possibly) repaired table, the audit record, and the cell
    fills for metrics. On an unable-to-impute outcome the table comes back
    cell-identical to the input and the fill list is empty.
    """
    tcol = table.col_index(config.target_column)
    if table.columns[tcol].kind != NUMERIC:
        raise UnknownColumn(config.target_column)
    if not missing_locations(table, config.target_column):
        raise NoMissingValues(config.target_column)

    clean, chunks = sample_clean_and_chunk(table, config)
    masked, record = mask_clean_subset(clean, config)
    run = run_sketch_loop(backend, masked, record, config)
    if not run.outcome.is_success:
        return table, run, []

    originally_missing = set(missing_locations(table, config.target_column))
    imputed, fills = execute_on_table(run.outcome, table, chunks, config)
    contaminated = []
    for r, (row_a, row_b) in enumerate(zip(table.rows, imputed.rows)):
        for c, (a, b) in enumerate(zip(row_a, row_b)):
            if CellLocation(r, c) in originally_missing:
                continue
            if not cells_equal(a, b):
                contaminated.append(CellLocation(r, c))
    if contaminated:
        raise ContaminatedOutput(contaminated)
    return imputed, run, fills


# ---------------------------------------------------------------------------
# Run artifacts


def write_run_artifacts(
    run_dir: Path,
    run: WorkflowRun,
    imputed: Table | None = None,
    fills: list[CellFill] | None = None,
    report: dict | None = None,
) -> None:
    """Persist the audit trail of one run: transcript, attempts, program,
    imputed CSV and (when available) the metrics report."""
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "transcript.json").write_text(
        json.dumps([e.to_json() for e in run.transcript], indent=2, sort_keys=True),
        encoding="utf-8",
    )
    attempts_doc = {
        "target_column": run.config.target_column,
        "outcome": run.outcome.status,
        "reason": run.outcome.reason,
        "description": run.outcome.description,
        "attempts": [a.to_json() for a in run.attempts],
    }
    (run_dir / "attempts.json").write_text(
        json.dumps(attempts_doc, indent=2, sort_keys=True), encoding="utf-8"
    )
    final_text = run.outcome.final_text()
    if final_text is not None:
        suffix = "dsl" if run.config.mode == "dsl" else "txt"
        (run_dir / f"final_program.{suffix}").write_text(final_text + "\n", encoding="utf-8")
    if imputed is not None:
        (run_dir / "imputed.csv").write_text(write_csv(imputed), encoding="utf-8")
    if fills is not None:
        (run_dir / "fills.json").write_text(
            json.dumps([f.to_json() for f in fills], indent=2, sort_keys=True), encoding="utf-8"
        )
    if report is not None:
        (run_dir / "report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True), encoding="utf-8"
        )


def new_run_dir(base: Path, label: str) -> Path:
    """Append-only run directories: reruns never overwrite."""
    base.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    for i in range(10000):
        suffix = f"-{i}" if i else ""
        candidate = base / f"run-{label}-{stamp}{suffix}"
        if not candidate.exists():
            candidate.mkdir()
            return candidate
    raise WorkflowError("could not allocate a run directory")
