import http.server
import json
import threading

import pytest
from hypothesis import given, settings, strategies as st

from invoiceflow.llm import (
    EXTRACTION_INSTRUCTION,
    FixtureMiss,
    LiveLlmClient,
    LlmUnavailable,
    MissingAuthKey,
    NotAnObject,
    PartialInvoice,
    RefusalStubClient,
    ReplayLlmClient,
    Unrepairable,
    build_prompt,
    parse_extraction,
    prompt_hash,
    repair_json,
)
from invoiceflow.model import FIELD_DESCRIPTIONS, CanonicalField


class TestBuildPrompt:
    def test_contains_exact_instruction(self):
        prompt = build_prompt("INVOICE NO: 42", FIELD_DESCRIPTIONS)
        assert "Extract structured data from the text as JSON." in prompt
        assert prompt.startswith(EXTRACTION_INSTRUCTION)
        assert "BEGIN DOCUMENT" in prompt and "END DOCUMENT" in prompt

    def test_empty_schema_still_valid(self):
        prompt = build_prompt("hello", None)
        assert EXTRACTION_INSTRUCTION in prompt
        assert "Fields:" not in prompt

    def test_truncation(self):
        text = "A" * 1_000_000
        prompt = build_prompt(text, None, max_chars=100_000)
        assert "[document truncated]" in prompt
        assert len(prompt) < 110_000

    def test_rejects_empty_text(self):
        with pytest.raises(ValueError):
            build_prompt("", None)


class TestReplayClient:
    def test_fixture_round_trip(self, tmp_path):
        client = ReplayLlmClient(tmp_path)
        body = '{"total": "1.00"}\n'
        client.record("some prompt", body)
        assert client.complete("some prompt") == body

    def test_fixture_miss_names_hash(self, tmp_path):
        client = ReplayLlmClient(tmp_path)
        digest = prompt_hash("unknown prompt")
        with pytest.raises(FixtureMiss) as err:
            client.complete("unknown prompt")
        assert digest in str(err.value)

    def test_byte_identical(self, tmp_path):
        client = ReplayLlmClient(tmp_path)
        body = "é exact bytes \n\nwith blank lines"
        client.record("p", body)
        assert client.complete("p") == body


class _FlakyHandler(http.server.BaseHTTPRequestHandler):
    responses = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        self.rfile.read(length)
        kind = self.responses.pop(0) if self.responses else "ok"
        if kind == "500":
            self.send_response(500)
            self.end_headers()
            return
        body = json.dumps({"text": '{"invoice_number": "X"}'}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture()
def llm_server():
    server = http.server.HTTPServer(("127.0.0.1", 0), _FlakyHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestLiveClient:
    def test_missing_auth_key(self):
        client = LiveLlmClient("http://127.0.0.1:1/v1", "m")
        with pytest.raises(MissingAuthKey):
            client.complete("p", None)

    def test_success(self, llm_server):
        _FlakyHandler.responses = []
        client = LiveLlmClient(llm_server, "m", timeout_s=5, attempts=1)
        assert client.complete("p", "key") == '{"invoice_number": "X"}'

    def test_retries_5xx_then_succeeds(self, llm_server, monkeypatch):
        monkeypatch.setattr("time.sleep", lambda s: None)
        _FlakyHandler.responses = ["500", "500"]
        client = LiveLlmClient(llm_server, "m", timeout_s=5, attempts=3)
        assert client.complete("p", "key") == '{"invoice_number": "X"}'

    def test_unavailable_after_retries(self, monkeypatch):
        monkeypatch.setattr("time.sleep", lambda s: None)
        client = LiveLlmClient("http://127.0.0.1:1/v1", "m", timeout_s=0.2, attempts=3)
        with pytest.raises(LlmUnavailable) as err:
            client.complete("p", "key")
        assert "3 attempts" in str(err.value)


class TestRepairJson:
    def test_fence_strip(self):
        assert repair_json('```json\n{"a":1}\n```') == '{"a":1}'

    def test_trailing_comma(self):
        assert repair_json('{"a":1,}') == '{"a":1}'

    def test_refusal_unrepairable(self):
        with pytest.raises(Unrepairable):
            repair_json("I cannot help with that.")

    def test_identity_on_valid(self):
        doc = '{"a": [1, 2, {"b": "c,}"}], "d": null}'
        assert repair_json(doc) == doc

    def test_balanced_extraction(self):
        wrapped = 'Sure! Here is the data: {"a": {"b": 2}} hope that helps'
        assert repair_json(wrapped) == '{"a": {"b": 2}}'

    def test_single_quotes(self):
        assert json.loads(repair_json("{'a': 'b'}")) == {"a": "b"}

    @given(st.recursive(
        st.none() | st.booleans() | st.integers(-1000, 1000)
        | st.text(max_size=8),
        lambda children: st.lists(children, max_size=4)
        | st.dictionaries(st.text(max_size=6), children, max_size=4),
        max_leaves=12))
    @settings(max_examples=150)
    def test_idempotent_and_identity(self, obj):
        doc = json.dumps(obj)
        assert repair_json(doc) == doc
        fenced = f"```json\n{doc}\n```"
        once = repair_json(fenced)
        assert repair_json(once) == once


class TestParseExtraction:
    def test_two_fields(self):
        partial = parse_extraction('{"invoice_number":"42","total_amount":"150.00"}')
        assert partial.fields[CanonicalField.INVOICE_NUMBER] == "42"
        assert partial.fields[CanonicalField.TOTAL_AMOUNT] == "150.00"

    def test_synonym_case_insensitive(self):
        partial = parse_extraction('{"Invoice_No":"42"}')
        assert partial.fields[CanonicalField.INVOICE_NUMBER] == "42"

    def test_array_not_object(self):
        with pytest.raises(NotAnObject):
            parse_extraction("[1,2,3]")

    def test_unknown_keys_preserved(self):
        partial = parse_extraction('{"mystery_field":"x","invoice_number":"1"}')
        assert partial.unparsed_keys == ["mystery_field"]

    def test_nulls_omitted(self):
        partial = parse_extraction('{"invoice_number": null, "total": "9.00"}')
        assert CanonicalField.INVOICE_NUMBER not in partial.fields

    def test_line_items_mapped(self):
        body = json.dumps({"items": [
            {"Item": "WIDGET", "Qty": 2, "Rate": "5.00", "Total": "10.00"},
            "not a dict",
        ]})
        partial = parse_extraction(body)
        assert partial.line_items == [{
            "description": "WIDGET", "quantity": "2",
            "unit_price": "5.00", "amount": "10.00"}]

    def test_numeric_values_coerced_to_strings(self):
        partial = parse_extraction('{"total_amount": 150.5}')
        assert partial.fields[CanonicalField.TOTAL_AMOUNT] == "150.5"


class TestRefusalStub:
    def test_pipeline_survives_refusal(self):
        stub = RefusalStubClient()
        raw = stub.complete("anything")
        with pytest.raises(Unrepairable):
            repair_json(raw)
