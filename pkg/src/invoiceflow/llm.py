"""LLM prompt construction, client contract, and robust JSON parsing.

The client is provider-agnostic: one completion call with endpoint, model
and key from config. The replay client answers from prompt-hash-addressed
fixture files, which makes the whole pipeline deterministic for tests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol

from .model import CanonicalField, InvoiceFlowError

logger = logging.getLogger(__name__)

__all__ = [
    "LlmError",
    "LlmUnavailable",
    "MissingAuthKey",
    "FixtureMiss",
    "Unrepairable",
    "NotAnObject",
    "LlmClient",
    "LiveLlmClient",
    "ReplayLlmClient",
    "RefusalStubClient",
    "PartialInvoice",
    "build_prompt",
    "call_llm",
    "prompt_hash",
    "repair_json",
    "parse_extraction",
]

EXTRACTION_INSTRUCTION = "Extract structured data from the text as JSON."

TRUNCATION_NOTICE = "[document truncated]"


class LlmError(InvoiceFlowError):
    pass


class LlmUnavailable(LlmError):
    pass


class MissingAuthKey(LlmError):
    pass


class FixtureMiss(LlmError):
    pass


class Unrepairable(LlmError):
    pass


class NotAnObject(LlmError):
    pass


class LlmClient(Protocol):
    def complete(self, prompt: str, auth: Optional[str]) -> str: ...


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class LiveLlmClient:
    """HTTPS completion client: POST {"model", "prompt"} -> {"text"}.

    Retries up to `attempts` times with exponential backoff (1s/2s/4s) on
    timeout or 5xx-class failure. A semaphore bounds in-flight requests.
    """

    def __init__(self, endpoint: str, model: str, timeout_s: float = 30.0,
                 attempts: int = 3, max_inflight: int = 4):
        self.endpoint = endpoint
        self.model = model
        self.timeout_s = timeout_s
        self.attempts = attempts
        self._slots = threading.Semaphore(max_inflight)

    def complete(self, prompt: str, auth: Optional[str]) -> str:
        if not auth:
            raise MissingAuthKey("live LLM mode requires an auth key (LLM_API_KEY)")
        body = json.dumps({"model": self.model, "prompt": prompt}).encode("utf-8")
        last_error: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                time.sleep(2 ** (attempt - 1))
            req = urllib.request.Request(
                self.endpoint, data=body, method="POST",
                headers={"Content-Type": "application/json",
                         "Authorization": f"Bearer {auth}"})
            with self._slots:
                try:
                    with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                        payload = json.loads(resp.read().decode("utf-8"))
                        return payload["text"]
                except urllib.error.HTTPError as exc:
                    last_error = exc
                    if exc.code < 500:
                        raise LlmUnavailable(f"LLM endpoint rejected request: {exc.code}") from exc
                except (urllib.error.URLError, TimeoutError, OSError) as exc:
                    last_error = exc
                logger.warning("LLM attempt %d/%d failed: %s", attempt + 1, self.attempts, last_error)
        raise LlmUnavailable(f"LLM unreachable after {self.attempts} attempts: {last_error}")


class ReplayLlmClient:
    """Deterministic client: one fixture file per prompt, named <sha256(prompt)>.txt."""

    def __init__(self, fixture_dir: str | Path):
        self.fixture_dir = Path(fixture_dir)

    def complete(self, prompt: str, auth: Optional[str] = None) -> str:
        digest = prompt_hash(prompt)
        path = self.fixture_dir / f"{digest}.txt"
        if not path.is_file():
            raise FixtureMiss(f"no replay fixture for prompt hash {digest}")
        return path.read_bytes().decode("utf-8")

    def record(self, prompt: str, response: str) -> Path:
        self.fixture_dir.mkdir(parents=True, exist_ok=True)
        path = self.fixture_dir / f"{prompt_hash(prompt)}.txt"
        path.write_bytes(response.encode("utf-8"))
        return path


class RefusalStubClient:
    """Always declines; exercises the no-LLM fallback path."""

    def complete(self, prompt: str, auth: Optional[str] = None) -> str:
        return "I cannot help with that."


def build_prompt(text: str, schema: Optional[dict[CanonicalField, str]] = None,
                 max_chars: int = 100_000) -> str:
    """Assemble the extraction prompt around the fixed instruction sentence."""
    if not text:
        raise ValueError("text must be non-empty")
    if len(text) > max_chars:
        text = text[:max_chars] + "\n" + TRUNCATION_NOTICE

    parts = [EXTRACTION_INSTRUCTION, ""]
    if schema:
        parts.append("Fields:")
        for f, desc in schema.items():
            parts.append(f"- {f.value}: {desc}")
        keys = ", ".join(f'"{f.value}"' for f in schema)
        parts.append("")
        parts.append(f"Return a single JSON object with keys {keys} and "
                     '"line_items" (array of {"description", "quantity", "unit_price", "amount"}).')
    parts.append("Use null for fields absent from the document. Output JSON only.")
    parts.append("")
    parts.append("BEGIN DOCUMENT")
    parts.append(text)
    parts.append("END DOCUMENT")
    return "\n".join(parts)


def call_llm(client: LlmClient, prompt: str, auth: Optional[str] = None) -> str:
    return client.complete(prompt, auth)


# ---------------------------------------------------------------------------
# JSON repair and schema mapping
# ---------------------------------------------------------------------------

_FENCE_RE = re.compile(r"^\s*```[a-zA-Z]*\s*\n(.*?)\n?\s*```\s*$", re.DOTALL)
_TRAILING_COMMA_RE = re.compile(r",(\s*[}\]])")


def _strict(text: str) -> bool:
    try:
        json.loads(text)
        return True
    except (json.JSONDecodeError, RecursionError):
        return False


def _extract_balanced(text: str) -> Optional[str]:
    start = text.find("{")
    while start != -1:
        depth = 0
        in_str = False
        escape = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if escape:
                    escape = False
                elif ch == "\\":
                    escape = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start: i + 1]
        start = text.find("{", start + 1)
    return None


def _requote_single(text: str) -> str:
    # Swap single-quoted keys/strings for double quotes when the content
    # itself contains neither quote kind (the unambiguous case).
    return re.sub(r"'([^'\"\\]*)'", lambda m: '"' + m.group(1) + '"', text)


def repair_json(raw: str) -> str:
    """Return a strict-JSON version of raw, applying ordered minimal repairs.

    Repairs are attempted only while the text still fails strict parsing:
    fence stripping, balanced-brace extraction, trailing-comma removal,
    single-quote conversion. Idempotent, and the identity on valid JSON.
    """
    text = raw
    if _strict(text):
        return text

    fence = _FENCE_RE.match(text)
    if fence:
        text = fence.group(1)
        if _strict(text):
            return text

    span = _extract_balanced(text)
    if span is not None:
        text = span
        if _strict(text):
            return text

    candidate = _TRAILING_COMMA_RE.sub(r"\1", text)
    if _strict(candidate):
        return candidate
    text = candidate

    candidate = _requote_single(text)
    if _strict(candidate):
        return candidate

    raise Unrepairable(f"could not repair LLM output ({raw[:60]!r}...)")


#: Response-key synonyms -> canonical field names, matched case-insensitively
#: after collapsing spaces/hyphens to underscores.
KEY_SYNONYMS = {
    "invoice_number": "invoice_number",
    "invoice_no": "invoice_number",
    "invoice_num": "invoice_number",
    "invoice_id": "invoice_number",
    "invoice": "invoice_number",
    "inv_no": "invoice_number",
    "number": "invoice_number",
    "invoice_date": "invoice_date",
    "date": "invoice_date",
    "issue_date": "invoice_date",
    "date_of_issue": "invoice_date",
    "due_date": "due_date",
    "payment_due": "due_date",
    "due": "due_date",
    "vendor_name": "vendor_name",
    "vendor": "vendor_name",
    "supplier": "vendor_name",
    "supplier_name": "vendor_name",
    "seller": "vendor_name",
    "company": "vendor_name",
    "company_name": "vendor_name",
    "vendor_address": "vendor_address",
    "supplier_address": "vendor_address",
    "billing_address": "billing_address",
    "bill_to": "billing_address",
    "shipping_address": "shipping_address",
    "ship_to": "shipping_address",
    "currency": "currency",
    "currency_code": "currency",
    "subtotal": "subtotal",
    "sub_total": "subtotal",
    "net_amount": "subtotal",
    "tax_rate": "tax_rate",
    "vat_rate": "tax_rate",
    "tax_amount": "tax_amount",
    "tax": "tax_amount",
    "vat": "tax_amount",
    "gst": "tax_amount",
    "discount_amount": "discount_amount",
    "discount": "discount_amount",
    "total_amount": "total_amount",
    "total": "total_amount",
    "grand_total": "total_amount",
    "amount_due": "total_amount",
    "total_due": "total_amount",
    "weight_kg": "weight_kg",
    "weight": "weight_kg",
}

_ITEM_KEY_SYNONYMS = {
    "description": "description",
    "item": "description",
    "name": "description",
    "product": "description",
    "quantity": "quantity",
    "qty": "quantity",
    "unit_price": "unit_price",
    "price": "unit_price",
    "rate": "unit_price",
    "amount": "amount",
    "total": "amount",
    "line_total": "amount",
}

_LINE_ITEM_KEYS = ("line_items", "items", "lines", "line_item")


@dataclass
class PartialInvoice:
    """Raw-string field values as reported by the LLM, nothing normalized yet."""

    fields: dict[CanonicalField, str] = field(default_factory=dict)
    line_items: list[dict[str, str]] = field(default_factory=list)
    unparsed_keys: list[str] = field(default_factory=list)

    def get(self, f: CanonicalField) -> Optional[str]:
        return self.fields.get(f)


def _canon_key(key: str) -> str:
    return re.sub(r"[\s\-]+", "_", key.strip().lower()).strip("_")


def _as_raw_string(value) -> Optional[str]:
    if value is None:
        return None
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return json.dumps(value)
    if isinstance(value, str):
        return value.strip() or None
    return json.dumps(value, sort_keys=True)


def parse_extraction(json_text: str) -> PartialInvoice:
    """Map a strict-JSON response onto the canonical schema.

    Unknown keys land in unparsed_keys rather than being dropped; value
    coercion is to raw strings only, normalization happens downstream.
    """
    data = json.loads(json_text)
    if not isinstance(data, dict):
        raise NotAnObject(f"top-level JSON is {type(data).__name__}, expected object")

    out = PartialInvoice()
    for key, value in data.items():
        ck = _canon_key(str(key))
        if ck in _LINE_ITEM_KEYS:
            if isinstance(value, list):
                for entry in value:
                    if not isinstance(entry, dict):
                        continue
                    item: dict[str, str] = {}
                    for ik, iv in entry.items():
                        mapped = _ITEM_KEY_SYNONYMS.get(_canon_key(str(ik)))
                        sval = _as_raw_string(iv)
                        if mapped and sval is not None:
                            item[mapped] = sval
                    if item:
                        out.line_items.append(item)
            continue
        mapped = KEY_SYNONYMS.get(ck)
        if mapped is None:
            out.unparsed_keys.append(str(key))
            continue
        sval = _as_raw_string(value)
        if sval is None:
            continue
        field_enum = CanonicalField(mapped)
        out.fields.setdefault(field_enum, sval)
    return out
