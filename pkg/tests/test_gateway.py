import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from tabmend.gateway import (
    FORMULA_MARKER,
    AuthMissing,
    BackendConfig,
    ChatExchange,
    ChatMessage,
    FixtureExhausted,
    HttpChatBackend,
    HttpChatConfig,
    HttpError,
    MarkerNotFound,
    MissingVariable,
    PromptTemplate,
    ScriptedBackend,
    ScriptedConfig,
    Timeout,
    UnknownPlaceholder,
    create_backend,
    extract_block,
    get_template,
    render_template,
    transcript_to_json,
)


class TestTemplates:
    def test_domain_sketch_ends_with_data(self):
        tpl = get_template("domain_sketch", "sandbox")
        out = render_template(tpl, {"data": "a,b\n1,NaN"})
        assert out.endswith("a,b\n1,NaN")
        assert "{data}" not in out

    def test_code_gen_missing_save_path(self):
        tpl = get_template("code_gen", "sandbox")
        with pytest.raises(MissingVariable) as err:
            render_template(tpl, {"code": "s", "data": "d"})
        assert err.value.name == "save_path"

    def test_reflector_substitutions_verbatim(self):
        tpl = get_template("reflector", "dsl")
        out = render_template(tpl, {"wrong_sketch": "SKETCH-X", "dirty_data": "DATA-Y"})
        assert "SKETCH-X" in out and "DATA-Y" in out
        assert "### Diagnosis:" in out and "### New Sketch:" in out

    def test_unknown_placeholder(self):
        tpl = get_template("domain_sketch", "dsl")
        with pytest.raises(UnknownPlaceholder):
            render_template(tpl, {"data": "x", "bogus": "y"})

    def test_renders_are_injective_in_data(self):
        tpl = get_template("domain_sketch", "dsl")
        seen = {render_template(tpl, {"data": f"payload-{i}"}) for i in range(25)}
        assert len(seen) == 25

    def test_dsl_variants_use_formula_marker(self):
        for tid in ("domain_sketch", "code_gen"):
            assert FORMULA_MARKER in get_template(tid, "dsl").body
            assert "### Python" in get_template(tid, "sandbox").body

    def test_template_declares_exact_placeholders(self):
        with pytest.raises(Exception):
            PromptTemplate("bad", "uses {thing}", frozenset({"other"}))


class TestExtractBlock:
    def test_between_pair(self):
        text = "intro\n### Python\nx = 1\n### Python\noutro"
        assert extract_block(text, "### Python") == "x = 1"

    def test_parametrized_marker(self):
        text = "### FORMULA\ntarget y = a[t];\n### FORMULA"
        assert extract_block(text, "### FORMULA") == "target y = a[t];"

    def test_missing_marker(self):
        with pytest.raises(MarkerNotFound):
            extract_block("no markers here", "### Python")

    def test_single_marker_takes_rest(self):
        assert extract_block("pre\n### Python\na\nb", "### Python") == "a\nb"

    def test_refencing_identity(self):
        body = "line one\n\nline two"
        fenced = f"### Python\n{body}\n### Python"
        assert extract_block(fenced, "### Python") == body

    def test_interior_newlines_preserved(self):
        text = "### M\nx\n\ny\n### M"
        assert extract_block(text, "### M") == "x\n\ny"


class TestScriptedBackend:
    def test_queue_semantics(self):
        backend = ScriptedBackend({"domain_sketch": ["S1...", "S1'..."]})
        msg = [ChatMessage("user", "hello")]
        first, _ = backend.complete(msg, "domain_sketch")
        second, _ = backend.complete(msg, "domain_sketch")
        assert (first, second) == ("S1...", "S1'...")
        with pytest.raises(FixtureExhausted):
            backend.complete(msg, "domain_sketch")

    def test_unknown_label(self):
        backend = ScriptedBackend({})
        with pytest.raises(FixtureExhausted):
            backend.complete([ChatMessage("user", "x")], "reflector")

    def test_transcript_deterministic(self):
        def run():
            backend = ScriptedBackend({"a": ["1", "2"], "b": ["3"]})
            out = []
            for label in ("a", "b", "a"):
                _, exch = backend.complete([ChatMessage("user", f"ask {label}")], label)
                out.append(exch)
            return transcript_to_json(out)

        assert run() == run()

    def test_fixture_file(self, tmp_path):
        path = tmp_path / "fixture.json"
        path.write_text(json.dumps({"code_gen": ["resp"]}), encoding="utf-8")
        backend = create_backend(
            BackendConfig(kind="scripted", scripted=ScriptedConfig(fixture_path=str(path)))
        )
        text, exch = backend.complete([ChatMessage("user", "q")], "code_gen")
        assert text == "resp"
        assert exch.backend_kind == "scripted" and exch.latency == 0.0

    def test_exchange_json_round_trip(self):
        exch = ChatExchange("s", (ChatMessage("user", "q"),), "r", 0.0, "scripted")
        assert ChatExchange.from_json(exch.to_json()) == exch


class _StubHandler(BaseHTTPRequestHandler):
    calls: list[dict] = []
    behavior = "ok"

    def do_POST(self):  # noqa: N802 (stdlib naming)
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        _StubHandler.calls.append(
            {"path": self.path, "auth": self.headers.get("Authorization"), "body": body}
        )
        if _StubHandler.behavior == "ok":
            payload = {"choices": [{"message": {"role": "assistant", "content": "stub says hi"}}]}
            data = json.dumps(payload).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)
        elif _StubHandler.behavior == "flaky":
            if len(_StubHandler.calls) < 3:
                self.send_response(503)
                self.end_headers()
            else:
                data = json.dumps(
                    {"choices": [{"message": {"content": "recovered"}}]}
                ).encode()
                self.send_response(200)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)
        elif _StubHandler.behavior == "fail":
            self.send_response(500)
            self.end_headers()
        elif _StubHandler.behavior == "notfound":
            self.send_response(404)
            self.end_headers()

    def log_message(self, *args):  # keep test output quiet
        pass


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.calls = []
    _StubHandler.behavior = "ok"
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def _http_backend(base_url, **kw):
    defaults = dict(
        base_url=base_url,
        model_name="test-model",
        api_key_env_var="TABMEND_TEST_KEY",
        max_retries=2,
        retry_backoff=0.01,
        timeout=5.0,
    )
    defaults.update(kw)
    return HttpChatBackend(HttpChatConfig(**defaults))


class TestHttpBackend:
    def test_wire_shape_and_response(self, stub_server, monkeypatch):
        monkeypatch.setenv("TABMEND_TEST_KEY", "sekrit")
        backend = _http_backend(stub_server)
        text, exch = backend.complete([ChatMessage("user", "ping")], "domain_sketch")
        assert text == "stub says hi"
        call = _StubHandler.calls[0]
        assert call["path"] == "/chat/completions"
        assert call["auth"] == "Bearer sekrit"
        assert call["body"]["model"] == "test-model"
        assert call["body"]["temperature"] == 0.0
        assert call["body"]["max_tokens"] == 4096
        assert call["body"]["messages"] == [{"role": "user", "content": "ping"}]
        assert exch.backend_kind == "http_chat" and exch.latency >= 0.0

    def test_auth_missing(self, stub_server, monkeypatch):
        monkeypatch.delenv("TABMEND_TEST_KEY", raising=False)
        backend = _http_backend(stub_server)
        with pytest.raises(AuthMissing):
            backend.complete([ChatMessage("user", "ping")], "s")

    def test_retries_then_success(self, stub_server, monkeypatch):
        monkeypatch.setenv("TABMEND_TEST_KEY", "k")
        _StubHandler.behavior = "flaky"
        backend = _http_backend(stub_server)
        text, _ = backend.complete([ChatMessage("user", "ping")], "s")
        assert text == "recovered"
        assert len(_StubHandler.calls) == 3

    def test_persistent_500_exhausts_retries(self, stub_server, monkeypatch):
        monkeypatch.setenv("TABMEND_TEST_KEY", "k")
        _StubHandler.behavior = "fail"
        backend = _http_backend(stub_server)
        with pytest.raises(HttpError) as err:
            backend.complete([ChatMessage("user", "ping")], "s")
        assert err.value.status == 500
        assert len(_StubHandler.calls) == 3  # initial + 2 retries

    def test_404_fails_fast(self, stub_server, monkeypatch):
        monkeypatch.setenv("TABMEND_TEST_KEY", "k")
        _StubHandler.behavior = "notfound"
        backend = _http_backend(stub_server)
        with pytest.raises(HttpError) as err:
            backend.complete([ChatMessage("user", "ping")], "s")
        assert err.value.status == 404
        assert len(_StubHandler.calls) == 1

    def test_unreachable_host(self, monkeypatch):
        monkeypatch.setenv("TABMEND_TEST_KEY", "k")
        backend = _http_backend("http://127.0.0.1:1", max_retries=1)
        with pytest.raises((HttpError, Timeout)):
            backend.complete([ChatMessage("user", "ping")], "s")
