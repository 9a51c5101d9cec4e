"""Language-model access: prompt templates, chat backends, block extraction.

Two backend kinds sit behind one ``complete()`` surface: an HTTP client for
OpenAI-compatible chat-completion endpoints, and a deterministic scripted
backend that replays fixture responses, which lets the whole workflow run and
be tested without a live model.

Templates come in two parallel sets. The ``sandbox`` set instructs the model
to produce Python between ``### Python`` marker lines and is what a raw-code
deployment would send. The ``dsl`` set differs only in the output contract:
the fenced block uses ``### FORMULA`` and must contain a program in the
package's formula language (see :mod:`tabmend.dsl`), which is the verifiable
path used by default.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import requests

from .errors import TabmendError

ROLE_SYSTEM = "system"
ROLE_USER = "user"
ROLE_ASSISTANT = "assistant"

PYTHON_MARKER = "### Python"
FORMULA_MARKER = "### FORMULA"


class GatewayError(TabmendError):
    pass


class MissingVariable(GatewayError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"template variable {name!r} not supplied")


class UnknownPlaceholder(GatewayError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"{name!r} is not a placeholder of this template")


class AuthMissing(GatewayError):
    def __init__(self, env_var: str) -> None:
        self.env_var = env_var
        super().__init__(f"API key environment variable {env_var!r} is not set")


class HttpError(GatewayError):
    def __init__(self, status: int, body_excerpt: str) -> None:
        self.status = status
        self.body_excerpt = body_excerpt
        super().__init__(f"chat completion failed with status {status}: {body_excerpt}")


class Timeout(GatewayError):
    pass


class FixtureExhausted(GatewayError):
    def __init__(self, step_label: str) -> None:
        self.step_label = step_label
        super().__init__(f"no scripted response left for step {step_label!r}")


class MarkerNotFound(GatewayError):
    def __init__(self, marker: str) -> None:
        self.marker = marker
        super().__init__(f"no line equal to {marker!r} in the response")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in (ROLE_SYSTEM, ROLE_USER, ROLE_ASSISTANT):
            raise GatewayError(f"bad message role {self.role!r}")
        if not self.content:
            raise GatewayError("message content must be non-empty")


@dataclass(frozen=True)
class ChatExchange:
    step_label: str
    request: tuple[ChatMessage, ...]
    response: str
    latency: float
    backend_kind: str

    def to_json(self) -> dict:
        return {
            "step_label": self.step_label,
            "request": [{"role": m.role, "content": m.content} for m in self.request],
            "response": self.response,
            "latency": self.latency,
            "backend_kind": self.backend_kind,
        }

    @staticmethod
    def from_json(doc: dict) -> "ChatExchange":
        return ChatExchange(
            step_label=doc["step_label"],
            request=tuple(ChatMessage(m["role"], m["content"]) for m in doc["request"]),
            response=doc["response"],
            latency=float(doc["latency"]),
            backend_kind=doc["backend_kind"],
        )


def transcript_to_json(exchanges: Sequence[ChatExchange]) -> str:
    return json.dumps([e.to_json() for e in exchanges], indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Templates

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str
    variables: frozenset[str] = field(default=frozenset())

    def __post_init__(self) -> None:
        found = frozenset(_PLACEHOLDER_RE.findall(self.body))
        declared = self.variables or found
        if found != declared:
            raise GatewayError(
                f"template {self.id!r}: placeholders {sorted(found)} != declared {sorted(declared)}"
            )
        object.__setattr__(self, "variables", declared)


def render_template(template: PromptTemplate, variables: Mapping[str, str]) -> str:
    """Exact placeholder substitution; nothing else in the body is altered."""
    for name in template.variables:
        if name not in variables:
            raise MissingVariable(name)
    for name in variables:
        if name not in template.variables:
            raise UnknownPlaceholder(name)
    return _PLACEHOLDER_RE.sub(lambda m: variables[m.group(1)], template.body)


_DOMAIN_SKETCH_STEPS = """Step 1 Finding Missing value: find the location of the missing value and describe the missing value, outputting the entire row where the missing values are located in this step.

Step 2 Finding related Columns: Find related Columns that are related to the missing value column you are filling. These related Columns are helpful for the imputation of missing values. Outputting the names of these related Columns in this step.

Step 3 Drafting Solution: Using the related Columns you find in Step 2, draft the solution for missing value imputation. The solution should be based on the related columns you find. Outputting the solution.

Step 4 Calculating Intermediate Values: Check if there were unknown variables in the solution. If there were, calculate the intermediate values of the intermediate Variable missing and needed in the solution. Output the calculation process of all the intermediate values in this step.

Step 5 Finding Related Rows: Find the values of other rows in the table that are needed in the imputation. Outputting all the values you find in this step.

Step 6 Calculating and Verifying the parameters: Check if there were unknown or unsure parameters in the solution for missing value imputation. You need to calculate and verify these parameters based on rows without missing values. Find 3 rows as examples for you to calculate and verify the parameters. Output the parameters you get and the rows you used in this step."""

_DOMAIN_SKETCH_SANDBOX = f"""Assume that you are a data scientist. I offer you a table in CSV form with missing values denoted as NaN. The first row is the variables' names it contains, and the separator of this CSV format file is char ",". Suggest a solution to fill in each missing value, denoted by NaN. You must sketch your solution into the following template for each missing value you found.

Process all the steps and Give Python code solutions for each missing value. This is extremely important. Omitting any steps of any missing value is forbidden.

{_DOMAIN_SKETCH_STEPS}

Step 7 Use results from step 1 to step 6 and rebuild the Solution in Python code and combine all the steps and Python code you generated in this new Python code. When you rebuild the code, you must make sure the value for imputation is in the same row and column of the missing value. Remember the index in Python is 0-based, the first number starts with 0. Generate the rebuilt solution in Python code way. So be extremely careful with the row index when rebuilding your Python code. And write your code in this format:

{PYTHON_MARKER}

Your Python code for rebuilding the solution

{PYTHON_MARKER}

Process all the steps and Give Python code solutions for each missing value. This is extremely important. Omitting any steps of any missing value is forbidden.
Here is the data:

{{data}}"""

_FORMULA_LANGUAGE_HELP = """The formula language has one statement per line. Optional helper lines "let name = expression;" come first, then exactly one "target column = expression;" naming the column being imputed. An expression may use numbers, +, -, *, /, parentheses, row references like close[t] or close[t-1] (t is the row being filled), window aggregates mean(expr, lo, hi), sum(expr, lo, hi), min(expr, lo, hi), max(expr, lo, hi) over inclusive row offsets lo..hi, and the functions sqrt(x), abs(x), pow(x, y), max2(x, y), min2(x, y). The target column may reference its own earlier rows, e.g. ema5[t-1]."""

_DOMAIN_SKETCH_DSL = f"""Assume that you are a data scientist. I offer you a table in CSV form with missing values denoted as NaN. The first row is the variables' names it contains, and the separator of this CSV format file is char ",". Suggest a solution to fill in each missing value, denoted by NaN. You must sketch your solution into the following template for each missing value you found.

Process all the steps and Give a formula solution for each missing value. This is extremely important. Omitting any steps of any missing value is forbidden.

{_DOMAIN_SKETCH_STEPS}

Step 7 Use results from step 1 to step 6 and rebuild the Solution as a formula program that works for any row, and combine all the steps into this program. {_FORMULA_LANGUAGE_HELP} When you rebuild the formula, you must make sure the value for imputation is in the same row and column of the missing value, so be extremely careful with the row offsets. And write your formula in this format:

{FORMULA_MARKER}

Your formula program for rebuilding the solution

{FORMULA_MARKER}

Process all the steps and Give a formula solution for each missing value. This is extremely important. Omitting any steps of any missing value is forbidden.
Here is the data:

{{data}}"""

_CODE_GEN_SANDBOX = f"""Assume you are a code rewriter, you are given a Python code sketch for imputation task on the given data. The new Python code you rewrite should take the given data for input and fill in the missing value of it.
When you rewrite the code, you must slice the dataset and use the same row or column index in the given Python code sketch. Trust the Python code in the given sketch. You must turn this data as DataFrame of pandas in your Python code. The Python code needs to save the dataset in csv format after imputation in this path {{save_path}}. Here is the requirement:

Give only the Python code for your reply. Do not generate any other information. And write your code in this format:

{PYTHON_MARKER}

Put only your rewritten Python code here.

{PYTHON_MARKER}

Here is the Python code sketch for you to rewrite:

{{code}}

You must turn this data as DataFrame in your Python code.

Here is the data: {{data}}"""

_CODE_GEN_DSL = f"""Assume you are a code rewriter, you are given a solution sketch for an imputation task on the given data. Rewrite the sketch as one program in the formula language below; the program must fill in the missing values of the given data.
When you rewrite the sketch, you must use the same rows and columns referenced in the sketch. Trust the solution in the given sketch. {_FORMULA_LANGUAGE_HELP} Here is the requirement:

Give only the formula program for your reply. Do not generate any other information. And write your formula in this format:

{FORMULA_MARKER}

Put only your rewritten formula program here.

{FORMULA_MARKER}

Here is the solution sketch for you to rewrite:

{{code}}

Here is the data: {{data}}"""

_REFLECTOR_SANDBOX = """You are an advanced reasoning agent that can improve based on self-reflection. You will be given a previous sketch trial in which you were required to generate a solution for missing value imputation for the given dirty table. You were unsuccessful in imputing missing values in the dirty table for some reason.

Here are some hints for your reflection:

1. using the wrong solution, try to use your domain knowledge in the field related to this data and fill in the missing value with the calculation based on other variables

2. using the wrong rows or columns when generating the solution, please reflect the rows and columns you used for imputation. For example, you should use data from the second row to the fourth row, but you use data from the first row to the third row.

3. remember the index in Python is 0-based.

Here is the wrong sketch to reflect:

{wrong_sketch}

Here is the dirty data:

{dirty_data}

Requirement:

In a few sentences, Diagnose a possible reason for failure or phrasing discrepancy. Take the hints as examples and Give a new sketch for the missing value imputation of this dirty table. The new reflected sketch must follow the same steps as the wrong sketch, this is extremely important. You MUST Return your answer in this Format:

### Diagnosis:

Write your diagnosis here

### New Sketch:

Write your new sketch here"""

_REFLECTOR_DSL = _REFLECTOR_SANDBOX.replace(
    "3. remember the index in Python is 0-based.",
    "3. remember row references are relative to the row being filled: close[t-1] is one row above it.",
)

_SUMMARIZER_SANDBOX = f"""Assume you are a code summarizer, you are given a code focus on the imputation of missing value in a particular dataset. Please summarize this code into a function, so it can take any dirty dataset with the same structure. The input of the function is the dirty dataset, {{clean_data_save_path}}.

When you are summarizing the code, pay attention to the following situation:

1. You need to find the missing values index of the dirty data in the Python function.

2. There can be more than 1 missing value in the given new dirty data, when you rewrite the given code, make sure it can impute multiple missing values in the given dataset.

3. Remember the location of missing values in the new dirty data is not the same as the code provided. Change the fixed index of the provided code into indexes capable of any location.

Here is the requirement:

The name of the function is impute_missing_value. Give only the Python code for your reply. Do not generate any other information. Do not write any explanation. And write your code in this format:

{PYTHON_MARKER}

Put only your rewritten Python code here.

{PYTHON_MARKER}

Here is the code need to be summarized:

{{code}}"""

_SUMMARIZER_DSL = """Assume you are a code summarizer, you are given a formula program that imputes missing values of one column in a dataset saved at {clean_data_save_path}. The program already works for any row of any dataset with the same structure.

In a short paragraph of plain language, describe what the formula computes and which columns and row offsets it uses, so a reviewer can approve it quickly. Reply with the description only.

Here is the formula program to describe:

{code}"""

_TEMPLATES: dict[tuple[str, str], PromptTemplate] = {
    ("domain_sketch", "sandbox"): PromptTemplate("domain_sketch", _DOMAIN_SKETCH_SANDBOX),
    ("domain_sketch", "dsl"): PromptTemplate("domain_sketch", _DOMAIN_SKETCH_DSL),
    ("code_gen", "sandbox"): PromptTemplate("code_gen", _CODE_GEN_SANDBOX),
    ("code_gen", "dsl"): PromptTemplate("code_gen", _CODE_GEN_DSL),
    ("reflector", "sandbox"): PromptTemplate("reflector", _REFLECTOR_SANDBOX),
    ("reflector", "dsl"): PromptTemplate("reflector", _REFLECTOR_DSL),
    ("summarizer", "sandbox"): PromptTemplate("summarizer", _SUMMARIZER_SANDBOX),
    ("summarizer", "dsl"): PromptTemplate("summarizer", _SUMMARIZER_DSL),
}


def get_template(template_id: str, mode: str = "dsl") -> PromptTemplate:
    try:
        return _TEMPLATES[(template_id, mode)]
    except KeyError:
        raise GatewayError(f"no template {template_id!r} for mode {mode!r}") from None


def output_marker(mode: str) -> str:
    return FORMULA_MARKER if mode == "dsl" else PYTHON_MARKER


# ---------------------------------------------------------------------------
# Backends


@dataclass
class HttpChatConfig:
    base_url: str
    model_name: str
    api_key_env_var: str
    temperature: float = 0.0
    max_tokens: int = 4096
    timeout: float = 60.0
    max_retries: int = 3
    retry_backoff: float = 1.0  # seconds; doubles per retry


@dataclass
class ScriptedConfig:
    fixture_path: str | None = None
    responses: Mapping[str, Sequence[str]] | None = None


@dataclass
class BackendConfig:
    kind: str  # "http_chat" | "scripted"
    http: HttpChatConfig | None = None
    scripted: ScriptedConfig | None = None


class ScriptedBackend:
    """Replays fixture responses per step label, queue style, thread safe."""

    kind = "scripted"

    def __init__(self, fixture: Mapping[str, Sequence[str]] | str) -> None:
        if isinstance(fixture, str):
            with open(fixture, encoding="utf-8") as fh:
                fixture = json.load(fh)
        self._queues = {label: deque(items) for label, items in fixture.items()}
        self._lock = threading.Lock()

    def complete(
        self, messages: Sequence[ChatMessage], step_label: str
    ) -> tuple[str, ChatExchange]:
        with self._lock:
            queue = self._queues.get(step_label)
            if not queue:
                raise FixtureExhausted(step_label)
            response = queue.popleft()
        exchange = ChatExchange(step_label, tuple(messages), response, 0.0, self.kind)
        return response, exchange


_RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


class HttpChatBackend:
    """OpenAI-compatible chat-completion client with bounded retries.

    Retries transport failures, timeouts, 429 and 5xx with exponential
    backoff; other 4xx statuses fail immediately. The API key is read from the
    configured environment variable at call time and never stored.
    """

    kind = "http_chat"

    def __init__(self, config: HttpChatConfig) -> None:
        self.config = config
        self._session = requests.Session()

    def complete(
        self, messages: Sequence[ChatMessage], step_label: str
    ) -> tuple[str, ChatExchange]:
        cfg = self.config
        api_key = os.environ.get(cfg.api_key_env_var)
        if not api_key:
            raise AuthMissing(cfg.api_key_env_var)
        url = cfg.base_url.rstrip("/") + "/chat/completions"
        payload = {
            "model": cfg.model_name,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
        }
        headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}

        start = time.monotonic()
        last_error: GatewayError | None = None
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                time.sleep(cfg.retry_backoff * 2 ** (attempt - 1))
            try:
                resp = self._session.post(url, json=payload, headers=headers, timeout=cfg.timeout)
            except requests.Timeout:
                last_error = Timeout(f"no response within {cfg.timeout}s from {url}")
                continue
            except requests.RequestException as exc:
                last_error = HttpError(0, f"transport failure: {exc}")
                continue
            if resp.status_code == 200:
                try:
                    text = resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError):
                    raise HttpError(200, f"malformed completion body: {resp.text[:200]}")
                latency = time.monotonic() - start
                exchange = ChatExchange(step_label, tuple(messages), text, latency, self.kind)
                return text, exchange
            if resp.status_code in _RETRYABLE_STATUSES:
                last_error = HttpError(resp.status_code, resp.text[:200])
                continue
            raise HttpError(resp.status_code, resp.text[:200])
        assert last_error is not None
        raise last_error


Backend = ScriptedBackend | HttpChatBackend


def create_backend(config: BackendConfig) -> Backend:
    if config.kind == "scripted":
        if config.scripted is None:
            raise GatewayError("scripted backend needs a fixture")
        source = config.scripted.responses or config.scripted.fixture_path
        if source is None:
            raise GatewayError("scripted backend needs responses or a fixture path")
        return ScriptedBackend(source)
    if config.kind == "http_chat":
        if config.http is None:
            raise GatewayError("http_chat backend needs connection settings")
        return HttpChatBackend(config.http)
    raise GatewayError(f"unknown backend kind {config.kind!r}")


def complete(
    backend: Backend, messages: Sequence[ChatMessage], step_label: str
) -> tuple[str, ChatExchange]:
    """Single entry point used by the workflow; delegates to the backend."""
    return backend.complete(messages, step_label)


# ---------------------------------------------------------------------------
# Block extraction


def extract_block(text: str, marker: str) -> str:
    """Content strictly between the first pair of lines equal to ``marker``.

    With a single marker line, everything after it is returned. Interior
    newlines are preserved; surrounding blank lines are trimmed.
    """
    lines = text.splitlines()
    marker = marker.strip()
    hits = [i for i, line in enumerate(lines) if line.strip() == marker]
    if not hits:
        raise MarkerNotFound(marker)
    if len(hits) == 1:
        block = lines[hits[0] + 1 :]
    else:
        block = lines[hits[0] + 1 : hits[1]]
    return "\n".join(block).strip()
