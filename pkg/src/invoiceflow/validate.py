"""Post-processing: normalization, arithmetic consistency, confidence
scoring, field fusion, deduplication, anomaly detection, audit trail.

Every check works on exact integers (minor units); a tolerance of one
minor unit per rounding site absorbs legitimate half-up/bankers rounding
differences in source documents.
"""

from __future__ import annotations

import hashlib
import json
import re
import statistics
import threading
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from decimal import Decimal, InvalidOperation, ROUND_HALF_UP
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

from .fallback import RegexCandidate, correct_numeric_ocr
from .layout import LayoutLink
from .llm import PartialInvoice
from .model import (
    DATE_FIELDS,
    MONEY_FIELDS,
    CanonicalField,
    CheckResult,
    DatePolicy,
    ExtractedInvoice,
    FieldValue,
    InvoiceFlowError,
    InvoiceStatus,
    LineItem,
    Money,
    MoneyError,
    PipelineConfig,
    Provenance,
    ValidationReport,
    ValidationState,
    money_parse,
    overall_confidence,
)

__all__ = [
    "UnparseableDate",
    "ImpossibleDate",
    "UnknownUnit",
    "NormalizationFailed",
    "normalize_date",
    "normalize_weight",
    "normalize_field",
    "check_arithmetic",
    "check_arithmetic_values",
    "FusionResult",
    "fuse_fields",
    "score_confidence",
    "BASE_CONFIDENCE",
    "DedupIndex",
    "dedup_check",
    "VendorHistory",
    "AnomalyResult",
    "detect_anomaly",
    "finalize",
    "AuditEvent",
    "AuditLog",
    "Grounding",
]


class UnparseableDate(InvoiceFlowError):
    pass


class ImpossibleDate(InvoiceFlowError):
    pass


class UnknownUnit(InvoiceFlowError):
    pass


class NormalizationFailed(InvoiceFlowError):
    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field_name = field_name
        self.reason = reason


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

_MONTHS = {
    "jan": 1, "feb": 2, "mar": 3, "apr": 4, "may": 5, "jun": 6,
    "jul": 7, "aug": 8, "sep": 9, "oct": 10, "nov": 11, "dec": 12,
}

_ISO_RE = re.compile(r"^\s*(\d{4})-(\d{1,2})-(\d{1,2})\s*$")
_SLASHED_RE = re.compile(r"^\s*(\d{1,2})[/.\-](\d{1,2})[/.\-](\d{4})\s*$")
_DAY_NAME_RE = re.compile(
    r"(?i)^\s*(\d{1,2})(?:st|nd|rd|th)?\s+([a-z]{3,9})\.?,?\s+(\d{4})\s*$")
_NAME_DAY_RE = re.compile(
    r"(?i)^\s*([a-z]{3,9})\.?\s+(\d{1,2})(?:st|nd|rd|th)?,?\s+(\d{4})\s*$")


def _make_date(y: int, m: int, d: int) -> date:
    try:
        return date(y, m, d)
    except ValueError as exc:
        raise ImpossibleDate(f"{y:04d}-{m:02d}-{d:02d} is not a calendar date") from exc


def normalize_date(raw: str, policy: DatePolicy = DatePolicy.DAY_FIRST) -> date:
    """Parse a printed date into a calendar date.

    Unambiguous forms parse directly; an all-numeric day/month pair where
    both values could be a month is resolved by policy. A reading whose
    month slot exceeds 12 forces the other interpretation.
    """
    if raw is None or not str(raw).strip():
        raise UnparseableDate("empty date")
    text = str(raw).strip()

    m = _ISO_RE.match(text)
    if m:
        return _make_date(int(m.group(1)), int(m.group(2)), int(m.group(3)))

    m = _SLASHED_RE.match(text)
    if m:
        a, b, y = int(m.group(1)), int(m.group(2)), int(m.group(3))
        if a > 12 and b > 12:
            raise ImpossibleDate(f"{text!r}: no reading has a valid month")
        if a > 12:
            day_first = True
        elif b > 12:
            day_first = False
        else:
            day_first = policy == DatePolicy.DAY_FIRST
        day, month = (a, b) if day_first else (b, a)
        return _make_date(y, month, day)

    for pattern, day_group, month_group in ((_DAY_NAME_RE, 1, 2), (_NAME_DAY_RE, 2, 1)):
        m = pattern.match(text)
        if m:
            name = m.group(month_group).lower()[:3]
            if name in _MONTHS:
                return _make_date(int(m.group(3)), _MONTHS[name], int(m.group(day_group)))

    raise UnparseableDate(f"unrecognized date form {raw!r}")


_WEIGHT_NUM = re.compile(r"[-+]?\d+(?:\.\d+)?")
_KG_UNITS = ("kgs", "kg", "kilogram", "kilograms", "kilo")


def normalize_weight(raw: str) -> Decimal:
    """Normalize a printed weight to kilograms.

    Unit matching is a case-insensitive substring test, checked in the
    order qtl, ton, kg; "qtl" scales by 100 and "ton" by 1000 (so "tonne"
    also matches "ton"). A bare number is already kilograms.
    """
    if raw is None or not str(raw).strip():
        raise UnknownUnit("empty weight")
    text = str(raw).strip()
    m = _WEIGHT_NUM.search(text)
    if not m:
        raise UnknownUnit(f"no numeric value in {raw!r}")
    value = Decimal(m.group(0))
    lowered = text.lower()
    if "qtl" in lowered or "quintal" in lowered:
        return value * 100
    if "ton" in lowered:
        return value * 1000
    rest = (text[: m.start()] + " " + text[m.end():]).strip()
    unit_word = re.search(r"[a-zA-Z]+", rest)
    if unit_word and unit_word.group(0).lower() not in _KG_UNITS:
        raise UnknownUnit(f"unrecognized unit {unit_word.group(0)!r}")
    return value


def _normalize_rate(raw: str) -> Decimal:
    cleaned = raw.strip().rstrip("%").strip()
    try:
        value = Decimal(cleaned)
    except InvalidOperation as exc:
        raise NormalizationFailed(CanonicalField.TAX_RATE.value, f"bad rate {raw!r}") from exc
    if raw.strip().endswith("%") or value > 1:
        value = value / 100
    if not 0 <= value <= 1:
        raise NormalizationFailed(CanonicalField.TAX_RATE.value, f"rate {raw!r} outside [0,100%]")
    return value


def _collapse_ws(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


@lru_cache(maxsize=8)
def _confusion_table(path: Optional[str]) -> Optional[dict[str, str]]:
    if not path:
        return None
    from .fallback import load_confusion_map

    return load_confusion_map(path)


def normalize_field(f: CanonicalField, raw: str, cfg: PipelineConfig,
                    currency_hint: Optional[str] = None):
    """Field-type-aware normalization; raises NormalizationFailed."""
    if raw is None or not str(raw).strip():
        raise NormalizationFailed(f.value, "empty value")
    raw = str(raw)
    table = _confusion_table(cfg.confusion_map_path)
    try:
        if f in MONEY_FIELDS:
            return money_parse(correct_numeric_ocr(raw, table),
                               currency_hint or cfg.default_currency)
        if f in DATE_FIELDS:
            return normalize_date(correct_numeric_ocr(raw, table), cfg.date_policy)
        if f is CanonicalField.TAX_RATE:
            return _normalize_rate(correct_numeric_ocr(raw, table))
        if f is CanonicalField.WEIGHT_KG:
            return normalize_weight(correct_numeric_ocr(raw, table))
        if f is CanonicalField.CURRENCY:
            code = raw.strip().upper()
            if not re.fullmatch(r"[A-Z]{3}", code):
                raise NormalizationFailed(f.value, f"bad currency {raw!r}")
            return code
        return _collapse_ws(raw)
    except NormalizationFailed:
        raise
    except (MoneyError, UnparseableDate, ImpossibleDate, UnknownUnit) as exc:
        raise NormalizationFailed(f.value, str(exc)) from exc


# ---------------------------------------------------------------------------
# Arithmetic consistency
# ---------------------------------------------------------------------------

def _round_half_up(value: Decimal) -> int:
    return int(value.quantize(Decimal("1"), rounding=ROUND_HALF_UP))


def check_arithmetic_values(
    fields: dict[CanonicalField, object],
    line_items: Sequence[LineItem],
    tol_minor: int = 1,
) -> ValidationReport:
    """Exact-integer consistency checks over normalized values.

    Each check is skipped with a note when its inputs are absent; failures
    are report entries, never exceptions.
    """
    checks: list[CheckResult] = []

    def money_of(f: CanonicalField) -> Optional[Money]:
        v = fields.get(f)
        return v if isinstance(v, Money) else None

    subtotal = money_of(CanonicalField.SUBTOTAL)
    tax_amount = money_of(CanonicalField.TAX_AMOUNT)
    discount = money_of(CanonicalField.DISCOUNT_AMOUNT)
    total = money_of(CanonicalField.TOTAL_AMOUNT)
    rate = fields.get(CanonicalField.TAX_RATE)
    rate = rate if isinstance(rate, Decimal) else None

    # LINE_MATH: qty x unit_price reproduces each line amount.
    if line_items:
        failures = []
        for i, item in enumerate(line_items):
            expected = _round_half_up(item.quantity * item.unit_price.minor_units)
            if abs(expected - item.amount.minor_units) > tol_minor:
                failures.append(f"line {i}: expected {expected} got {item.amount.minor_units}")
        checks.append(CheckResult(
            "LINE_MATH", not failures,
            "; ".join(failures) if failures else f"{len(line_items)} lines consistent"))
    else:
        checks.append(CheckResult("LINE_MATH", True, "no line items", skipped=True))

    # SUBTOTAL: line amounts sum to the printed subtotal.
    if line_items and subtotal is not None:
        try:
            line_sum = sum(it.amount.minor_units for it in line_items
                           if it.amount.currency == subtotal.currency)
            mismatched = any(it.amount.currency != subtotal.currency for it in line_items)
            tol = tol_minor * len(line_items)
            ok = not mismatched and abs(line_sum - subtotal.minor_units) <= tol
            detail = (f"expected {line_sum} got {subtotal.minor_units}" if not ok
                      else f"sum {line_sum} within {tol}")
            checks.append(CheckResult("SUBTOTAL", ok, detail, (CanonicalField.SUBTOTAL,)))
        except MoneyError as exc:
            checks.append(CheckResult("SUBTOTAL", False, str(exc), (CanonicalField.SUBTOTAL,)))
    else:
        checks.append(CheckResult("SUBTOTAL", True, "inputs absent",
                                  (CanonicalField.SUBTOTAL,), skipped=True))

    # TAX: subtotal x rate reproduces the tax amount.
    if subtotal is not None and rate is not None and tax_amount is not None:
        expected = _round_half_up(rate * subtotal.minor_units)
        ok = abs(expected - tax_amount.minor_units) <= tol_minor
        checks.append(CheckResult(
            "TAX", ok,
            f"expected {expected} got {tax_amount.minor_units}" if not ok
            else f"rate {rate} consistent",
            (CanonicalField.TAX_RATE, CanonicalField.TAX_AMOUNT, CanonicalField.SUBTOTAL)))
    else:
        checks.append(CheckResult("TAX", True, "inputs absent",
                                  (CanonicalField.TAX_RATE, CanonicalField.TAX_AMOUNT),
                                  skipped=True))

    # TOTAL: subtotal + tax - discount reproduces the grand total.
    if subtotal is not None and total is not None:
        tax_m = tax_amount.minor_units if tax_amount else 0
        disc_m = discount.minor_units if discount else 0
        expected = subtotal.minor_units + tax_m - disc_m
        ok = abs(expected - total.minor_units) <= tol_minor
        checks.append(CheckResult(
            "TOTAL", ok,
            f"expected {expected} got {total.minor_units}" if not ok
            else f"total {total.minor_units} consistent",
            (CanonicalField.SUBTOTAL, CanonicalField.TAX_AMOUNT,
             CanonicalField.DISCOUNT_AMOUNT, CanonicalField.TOTAL_AMOUNT)))
    else:
        checks.append(CheckResult("TOTAL", True, "inputs absent",
                                  (CanonicalField.TOTAL_AMOUNT,), skipped=True))

    return ValidationReport(tuple(checks))


def check_arithmetic(inv: ExtractedInvoice, tol_minor: int = 1) -> ValidationReport:
    values = {f: fv.normalized for f, fv in inv.fields.items() if fv.normalized is not None}
    return check_arithmetic_values(values, inv.line_items, tol_minor)


def arithmetic_status(report: ValidationReport, f: CanonicalField) -> str:
    """passed | failed | n/a for one field, aggregated over its checks."""
    involved = [c for c in report.checks if f in c.fields_involved and not c.skipped]
    if not involved:
        return "n/a"
    if any(not c.passed for c in involved):
        return "failed"
    return "passed"


# ---------------------------------------------------------------------------
# Confidence scoring
# ---------------------------------------------------------------------------

#: Base confidence per provenance. OCR-grounded values use the mean
#: confidence of their supporting tokens instead.
BASE_CONFIDENCE = {
    Provenance.EMBEDDED: 0.95,
    Provenance.LLM: 0.60,
    Provenance.REGEX: 0.75,
    Provenance.LAYOUT: 0.70,
    Provenance.HUMAN: 1.0,
}


def score_confidence(source_conf: float, agreement: bool, arithmetic: str = "n/a") -> float:
    """Combine source reliability with corroboration and arithmetic outcome.

    Agreement halves the remaining doubt; a passed arithmetic check floors
    the score at 0.90; a failed one halves it.
    """
    if not 0.0 <= source_conf <= 1.0:
        raise ValueError(f"source_conf {source_conf} outside [0,1]")
    c = source_conf
    if agreement:
        c = 1.0 - (1.0 - c) * 0.5
    if arithmetic == "passed":
        c = max(c, 0.90)
    elif arithmetic == "failed":
        c = c * 0.5
    return max(0.0, min(1.0, c))


# ---------------------------------------------------------------------------
# Field fusion
# ---------------------------------------------------------------------------

class Grounding:
    """Locates raw strings in page text to attach supporting tokens.

    Built from assembled page text; a hit returns the covering token ids,
    whether they are embedded or OCR tokens, and their mean confidence.
    """

    def __init__(self, text: str, spans: Sequence[tuple[int, int, int]],
                 tokens: Sequence, id_offset: int = 0):
        self.text = text
        self.spans = list(spans)
        self.tokens = tokens
        self.id_offset = id_offset

    def find(self, raw: str) -> Optional[tuple[tuple[int, ...], str, float]]:
        needle = _collapse_ws(raw)
        if not needle:
            return None
        idx = self.text.find(needle)
        if idx < 0:
            idx = self.text.lower().find(needle.lower())
        if idx < 0:
            return None
        return self.tokens_for_span((idx, idx + len(needle)))

    def tokens_for_span(self, span: tuple[int, int]
                        ) -> Optional[tuple[tuple[int, ...], str, float]]:
        start, end = span
        ids = [tid for s, e, tid in self.spans if s < end and start < e]
        if not ids:
            return None
        toks = [self.tokens[t] for t in ids]
        source = "embedded" if all(t.source == "embedded" for t in toks) else "ocr"
        conf = sum(t.confidence for t in toks) / len(toks)
        return tuple(self.id_offset + t for t in ids), source, conf


def _base_for(provenance: Provenance, support: tuple[int, ...],
              grounded_source: Optional[str], grounded_conf: float) -> float:
    if grounded_source == "embedded":
        return BASE_CONFIDENCE[Provenance.EMBEDDED]
    if grounded_source == "ocr" and support:
        return grounded_conf
    return BASE_CONFIDENCE[provenance]


@dataclass
class FusionResult:
    fields: dict[CanonicalField, FieldValue]
    agreement: dict[CanonicalField, bool]
    conflicts: dict[CanonicalField, tuple[str, str]] = field(default_factory=dict)


def fuse_fields(
    llm: Optional[PartialInvoice],
    regex: dict[CanonicalField, list[RegexCandidate]],
    layout: Sequence[LayoutLink],
    cfg: PipelineConfig,
    grounding: Optional[Grounding] = None,
) -> FusionResult:
    """Merge the three extraction routes field by field.

    The LLM value wins when present; corroboration by regex or layout
    records agreement, contradiction records a conflict (the LLM value
    still wins but scores lower). Without an LLM value the regex candidate
    outranks the layout link.
    """
    layout_by_field = {l.field: l for l in layout}
    field_names: set[CanonicalField] = set()
    if llm:
        field_names.update(llm.fields)
    field_names.update(regex)
    field_names.update(layout_by_field)

    # Currency first; it is the hint for every money field.
    currency_hint = cfg.default_currency
    ordered = sorted(field_names, key=lambda f: (f is not CanonicalField.CURRENCY, f.value))

    fields: dict[CanonicalField, FieldValue] = {}
    agreement: dict[CanonicalField, bool] = {}
    conflicts: dict[CanonicalField, tuple[str, str]] = {}

    for f in ordered:
        sources: list[tuple[Provenance, str, tuple[int, ...]]] = []
        if llm and llm.get(f) is not None:
            sources.append((Provenance.LLM, llm.get(f), ()))
        for cand in regex.get(f, [])[:1]:
            support: tuple[int, ...] = ()
            if grounding is not None:
                hit = grounding.tokens_for_span(cand.span)
                if hit:
                    support = hit[0]
            sources.append((Provenance.REGEX, cand.raw, support))
        if f in layout_by_field:
            link = layout_by_field[f]
            sources.append((Provenance.LAYOUT, link.text,
                            tuple((grounding.id_offset if grounding else 0) + t
                                  for t in link.token_ids)))
        if not sources:
            continue

        normalized: list[tuple[Provenance, str, tuple[int, ...], object]] = []
        for prov, raw, support in sources:
            try:
                value = normalize_field(f, raw, cfg, currency_hint)
            except NormalizationFailed:
                continue
            normalized.append((prov, raw, support, value))
        if not normalized:
            # Nothing normalizes; keep the best raw string, unusable as typed value.
            prov, raw, support = sources[0]
            fields[f] = FieldValue(f, raw, None, 0.0, prov, support)
            agreement[f] = False
            continue

        prov, raw, support, value = normalized[0]
        others = [str(v) for _, _, _, v in normalized[1:]]
        agree = any(v == str(value) for v in others)
        disagreeing = [v for v in others if v != str(value)]
        if disagreeing:
            conflicts[f] = (str(value), disagreeing[0])

        if grounding is not None and not support:
            hit = grounding.find(raw)
            if hit:
                support = hit[0]

        fields[f] = FieldValue(f, raw, value, 0.0, prov, support)
        agreement[f] = agree
        if f is CanonicalField.CURRENCY and isinstance(value, str):
            currency_hint = value

    # Money fields may carry their own symbol-derived currency; re-anchor
    # them on the fused currency so one invoice never mixes codes.
    cur_fv = fields.get(CanonicalField.CURRENCY)
    if cur_fv and isinstance(cur_fv.normalized, str):
        code = cur_fv.normalized
        for f in MONEY_FIELDS:
            fv = fields.get(f)
            if fv and isinstance(fv.normalized, Money) and fv.normalized.currency != code:
                has_symbol = any(sym in fv.raw_text for sym in "$€£₹¥")
                has_code = re.search(r"(?<![A-Za-z])[A-Z]{3}(?![A-Za-z])", fv.raw_text)
                if not has_symbol and not has_code:
                    fields[f] = FieldValue(f, fv.raw_text,
                                           Money(fv.normalized.minor_units, code),
                                           fv.confidence, fv.provenance, fv.support)

    return FusionResult(fields, agreement, conflicts)


def score_fused(fusion: FusionResult, report: ValidationReport,
                grounding: Optional[Grounding] = None) -> dict[CanonicalField, FieldValue]:
    """Apply the confidence formula to every fused field."""
    out: dict[CanonicalField, FieldValue] = {}
    for f, fv in fusion.fields.items():
        grounded_source = None
        grounded_conf = 0.0
        if fv.support and grounding is not None:
            local = [t - grounding.id_offset for t in fv.support]
            toks = [grounding.tokens[i] for i in local if 0 <= i < len(grounding.tokens)]
            if toks:
                grounded_source = ("embedded" if all(t.source == "embedded" for t in toks)
                                   else "ocr")
                grounded_conf = sum(t.confidence for t in toks) / len(toks)
        base = _base_for(fv.provenance, fv.support, grounded_source, grounded_conf)
        if fv.normalized is None:
            out[f] = fv
            continue
        arith = arithmetic_status(report, f)
        conf = score_confidence(base, fusion.agreement.get(f, False), arith)
        validation = (ValidationState.UNCHECKED if arith == "n/a"
                      else ValidationState(arith))
        out[f] = FieldValue(f, fv.raw_text, fv.normalized, conf, fv.provenance,
                            fv.support, validation)
    return out


# ---------------------------------------------------------------------------
# Deduplication
# ---------------------------------------------------------------------------

class DedupIndex:
    """Insert-only raw and logical hash sets, persistable as a flat file."""

    def __init__(self) -> None:
        self.raw_hashes: set[str] = set()
        self.canonical_hashes: set[str] = set()

    def insert(self, raw_hash: Optional[str], logical_hash: Optional[str]) -> None:
        if raw_hash:
            self.raw_hashes.add(raw_hash)
        if logical_hash:
            self.canonical_hashes.add(logical_hash)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        lines = [f"raw {h}" for h in sorted(self.raw_hashes)]
        lines += [f"logical {h}" for h in sorted(self.canonical_hashes)]
        tmp.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "DedupIndex":
        index = cls()
        path = Path(path)
        if path.is_file():
            for line in path.read_text(encoding="utf-8").splitlines():
                kind, _, digest = line.partition(" ")
                if kind == "raw":
                    index.raw_hashes.add(digest)
                elif kind == "logical":
                    index.canonical_hashes.add(digest)
        return index


def logical_hash(fields: dict[CanonicalField, FieldValue]) -> Optional[str]:
    """SHA-256 over (vendor, invoice number, date, total minor, currency)."""
    vendor = fields.get(CanonicalField.VENDOR_NAME)
    number = fields.get(CanonicalField.INVOICE_NUMBER)
    day = fields.get(CanonicalField.INVOICE_DATE)
    total = fields.get(CanonicalField.TOTAL_AMOUNT)
    if not all(fv is not None and fv.normalized is not None
               for fv in (vendor, number, day, total)):
        return None
    total_money: Money = total.normalized
    key = "|".join([
        str(vendor.normalized), str(number.normalized), str(day.normalized),
        str(total_money.minor_units), total_money.currency,
    ])
    key = re.sub(r"\s+", " ", key.lower()).strip()
    return hashlib.sha256(key.encode("utf-8")).hexdigest()


def dedup_check(fields: dict[CanonicalField, FieldValue], raw_hash: str,
                index: DedupIndex) -> str:
    """new | duplicate_exact | duplicate_logical. Membership only; callers
    insert hashes after an invoice is accepted."""
    if raw_hash in index.raw_hashes:
        return "duplicate_exact"
    lh = logical_hash(fields)
    if lh is not None and lh in index.canonical_hashes:
        return "duplicate_logical"
    return "new"


# ---------------------------------------------------------------------------
# Anomaly detection
# ---------------------------------------------------------------------------

class VendorHistory:
    """Per-vendor record of accepted invoice totals (minor units)."""

    def __init__(self) -> None:
        self.totals: dict[str, list[int]] = {}

    @staticmethod
    def key(vendor_name: str) -> str:
        return re.sub(r"\s+", " ", vendor_name.lower()).strip()

    def record(self, vendor_name: str, total_minor: int) -> None:
        self.totals.setdefault(self.key(vendor_name), []).append(total_minor)

    def get(self, vendor_name: str) -> list[int]:
        return self.totals.get(self.key(vendor_name), [])

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.totals, sort_keys=True), encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "VendorHistory":
        history = cls()
        path = Path(path)
        if path.is_file():
            history.totals = {k: list(map(int, v)) for k, v in
                              json.loads(path.read_text(encoding="utf-8")).items()}
        return history


@dataclass(frozen=True)
class AnomalyResult:
    flagged: bool
    z: Optional[float] = None


def detect_anomaly(history: VendorHistory, vendor_name: str, total: Money) -> AnomalyResult:
    """Z-score of this total against the vendor's past totals.

    Needs at least 5 history points; |z| > 3 flags. A zero-spread history
    flags any differing amount without a defined z.
    """
    points = history.get(vendor_name)
    if len(points) < 5:
        return AnomalyResult(False)
    mean = statistics.fmean(points)
    stdev = statistics.stdev(points)
    x = float(total.minor_units)
    if stdev == 0.0:
        return AnomalyResult(flagged=x != mean)
    z = (x - mean) / stdev
    return AnomalyResult(abs(z) > 3.0, z)


# ---------------------------------------------------------------------------
# Audit trail
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AuditEvent:
    timestamp: str
    actor: str
    action: str
    subject: str
    before: Optional[str] = None
    after: Optional[str] = None

    def to_json(self) -> str:
        payload = {"timestamp": self.timestamp, "actor": self.actor,
                   "action": self.action, "subject": self.subject}
        if self.before is not None:
            payload["before"] = self.before
        if self.after is not None:
            payload["after"] = self.after
        return json.dumps(payload, sort_keys=True)


class AuditLog:
    """Append-only newline-delimited JSON log with monotonic UTC timestamps."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._last = 0.0

    def _timestamp(self) -> str:
        now = time.time()
        if now <= self._last:
            now = self._last + 1e-6
        self._last = now
        return datetime.fromtimestamp(now, tz=timezone.utc).strftime(
            "%Y-%m-%dT%H:%M:%S.%fZ")

    def append(self, actor: str, action: str, subject: str,
               before: Optional[str] = None, after: Optional[str] = None) -> AuditEvent:
        with self._lock:
            event = AuditEvent(self._timestamp(), actor, action, subject, before, after)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(event.to_json() + "\n")
        return event

    def events(self, subject: Optional[str] = None) -> list[AuditEvent]:
        if not self.path.is_file():
            return []
        out = []
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            data = json.loads(line)
            if subject is not None and data.get("subject") != subject:
                continue
            out.append(AuditEvent(data["timestamp"], data["actor"], data["action"],
                                  data["subject"], data.get("before"), data.get("after")))
        return out


# ---------------------------------------------------------------------------
# Finalize
# ---------------------------------------------------------------------------

def finalize(
    fields: dict[CanonicalField, FieldValue],
    line_items: Sequence[LineItem],
    report: ValidationReport,
    dedup_result: str,
    anomaly: AnomalyResult,
    review_threshold: float,
    audit: Optional[AuditLog] = None,
    subject: str = "invoice",
) -> ExtractedInvoice:
    """Decide the invoice's fate from confidences, dedup and anomaly state."""
    overall = overall_confidence(fields)
    if anomaly.flagged:
        overall = min(overall, review_threshold - 0.01)
    if dedup_result in ("duplicate_exact", "duplicate_logical"):
        status = InvoiceStatus.REJECTED_DUPLICATE
    elif overall >= review_threshold:
        status = InvoiceStatus.AUTO_APPROVED
    else:
        status = InvoiceStatus.NEEDS_REVIEW
    if audit is not None:
        audit.append("system", f"finalize:{status.value}", subject,
                     after=f"overall={overall:.4f} dedup={dedup_result} "
                           f"anomaly={anomaly.flagged}")
    return ExtractedInvoice(
        fields=dict(fields),
        line_items=tuple(line_items),
        validation_report=report,
        overall_confidence=overall,
        status=status,
    )
