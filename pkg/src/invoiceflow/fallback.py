"""Regex entity extraction and numeric OCR-confusion correction.

These deterministic extractors corroborate or substitute the LLM output.
Every candidate records the exact character span it came from, so results
can always be traced back to page text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .model import CanonicalField

__all__ = [
    "RegexCandidate",
    "extract_invoice_number",
    "extract_dates",
    "extract_amounts",
    "extract_all",
    "correct_numeric_ocr",
]

MONTHS = {
    "jan": 1, "feb": 2, "mar": 3, "apr": 4, "may": 5, "jun": 6,
    "jul": 7, "aug": 8, "sep": 9, "oct": 10, "nov": 11, "dec": 12,
}


@dataclass(frozen=True)
class RegexCandidate:
    field: CanonicalField
    raw: str
    span: tuple[int, int]
    pattern_id: str

    def check_span(self, text: str) -> bool:
        return text[self.span[0]: self.span[1]] == self.raw


_INVOICE_NO_PATTERNS = [
    ("inv_label", re.compile(
        r"(?i)\binv(?:oice)?\s*(?:no|#|num(?:ber)?)\.?\s*[:.#]?\s*"
        r"([A-Z0-9][A-Z0-9/-]{1,24})")),
    ("inv_colon", re.compile(
        r"(?i)\binvoice\s*[:#]\s*([A-Z0-9][A-Z0-9/-]{1,24})")),
    ("inv_bare", re.compile(
        # A bare "invoice" label only captures digit-led values, so words
        # like DATE after an "INVOICE" heading never match.
        r"(?i)\binv(?:oice)?\s+(\d[A-Z0-9/-]{0,24})")),
    ("bill_label", re.compile(
        r"(?i)\bbill\s*(?:no|#|num(?:ber)?)\s*[:.]?\s*([A-Z0-9][A-Z0-9/-]{1,24})")),
]

_DATE_PATTERNS = [
    ("iso", re.compile(r"\b(\d{4})-(\d{2})-(\d{2})\b")),
    ("slashed", re.compile(r"\b(\d{1,2})[/.](\d{1,2})[/.](\d{4})\b")),
    ("day_month_name", re.compile(
        r"(?i)\b(\d{1,2})(?:st|nd|rd|th)?\s+"
        r"(jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|jun(?:e)?|"
        r"jul(?:y)?|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)"
        r"\.?,?\s+(\d{4})\b")),
    ("month_name_day", re.compile(
        r"(?i)\b(jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|jun(?:e)?|"
        r"jul(?:y)?|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)"
        r"\.?\s+(\d{1,2})(?:st|nd|rd|th)?,?\s+(\d{4})\b")),
]

_AMOUNT_LABELS = [
    ("total_amount", re.compile(
        r"(?i)\b(?:grand\s+total|total\s+due|amount\s+due|balance\s+due|"
        r"total(?!\s*(?:weight|wt)))\b")),
    ("subtotal", re.compile(r"(?i)\bsub\s*[- ]?total\b|\bnet\s+amount\b")),
    # A parenthesized rate after the label ("TAX (10%)") is consumed so the
    # captured number is the amount, not the rate.
    ("tax_amount", re.compile(
        r"(?i)\b(?:sales\s+tax|tax|vat|gst)\b(?!\s+rate)(?:\s*\([^)\n]*\))?")),
    ("discount_amount", re.compile(r"(?i)\bdiscount\b")),
]

_NUMERIC_GROUP = re.compile(
    r"[$€£₹¥]?\s*-?\d[\d.,]*(?:\s*[$€£₹¥])?")

_LABEL_NEAR_DATE = re.compile(
    r"(?i)\b(invoice\s+date|due\s+date|date\s+of\s+issue|issue\s+date|payment\s+due|date)\b")


def _valid_day(year: int, month: int, day: int) -> bool:
    if not 1 <= month <= 12 or not 1 <= day <= 31:
        return False
    days = [31, 29 if (year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)) else 28,
            31, 30, 31, 30, 31, 31, 30, 31, 30, 31][month - 1]
    return day <= days


def extract_invoice_number(text: str) -> list[RegexCandidate]:
    """Label-anchored invoice number candidates, nearest-to-top first."""
    out = []
    for pattern_id, pat in _INVOICE_NO_PATTERNS:
        for m in pat.finditer(text):
            value = m.group(1)
            # A bare "invoice" label followed by a date is not a number.
            if re.fullmatch(r"\d{4}-\d{2}-\d{2}", value):
                continue
            out.append(RegexCandidate(
                CanonicalField.INVOICE_NUMBER, value, m.span(1), pattern_id))
    out.sort(key=lambda c: c.span[0])
    return out


@dataclass(frozen=True)
class DateCandidate:
    raw: str
    span: tuple[int, int]
    parsed: tuple[str, ...]          # possible ISO dates, ambiguity preserved
    nearest_label: Optional[str]
    pattern_id: str


def _nearest_label(text: str, start: int, window: int = 40) -> Optional[str]:
    lo = max(0, start - window)
    best = None
    for m in _LABEL_NEAR_DATE.finditer(text, lo, start):
        best = m.group(1).lower()
    if best is not None:
        best = re.sub(r"\s+", " ", best)
    return best


def extract_dates(text: str) -> list[DateCandidate]:
    """All date-shaped strings with every calendar-valid reading preserved."""
    out = []
    taken: list[tuple[int, int]] = []
    for pattern_id, pat in _DATE_PATTERNS:
        for m in pat.finditer(text):
            span = m.span()
            if any(s < span[1] and span[0] < e for s, e in taken):
                continue
            candidates: list[str] = []
            if pattern_id == "iso":
                y, mo, d = int(m.group(1)), int(m.group(2)), int(m.group(3))
                if _valid_day(y, mo, d):
                    candidates.append(f"{y:04d}-{mo:02d}-{d:02d}")
            elif pattern_id == "slashed":
                a, b, y = int(m.group(1)), int(m.group(2)), int(m.group(3))
                if _valid_day(y, b, a):
                    candidates.append(f"{y:04d}-{b:02d}-{a:02d}")   # day-first
                if a != b and _valid_day(y, a, b):
                    candidates.append(f"{y:04d}-{a:02d}-{b:02d}")   # month-first
            elif pattern_id == "day_month_name":
                d, name, y = int(m.group(1)), m.group(2).lower()[:3], int(m.group(3))
                mo = MONTHS[name]
                if _valid_day(y, mo, d):
                    candidates.append(f"{y:04d}-{mo:02d}-{d:02d}")
            else:
                name, d, y = m.group(1).lower()[:3], int(m.group(2)), int(m.group(3))
                mo = MONTHS[name]
                if _valid_day(y, mo, d):
                    candidates.append(f"{y:04d}-{mo:02d}-{d:02d}")
            if not candidates:
                continue
            taken.append(span)
            out.append(DateCandidate(
                raw=m.group(0), span=span, parsed=tuple(candidates),
                nearest_label=_nearest_label(text, span[0]), pattern_id=pattern_id))
    out.sort(key=lambda c: c.span[0])
    return out


def extract_amounts(text: str) -> list[RegexCandidate]:
    """Currency- or label-anchored amounts mapped onto money fields.

    The largest value labeled "total" outranks other total candidates, so
    a grand total printed after per-line totals wins.
    """
    out: list[RegexCandidate] = []
    for field_name, label_pat in _AMOUNT_LABELS:
        field = CanonicalField(field_name)
        for m in label_pat.finditer(text):
            look = text[m.end(): m.end() + 32]
            g = _NUMERIC_GROUP.search(look)
            if not g:
                continue
            raw = g.group(0).strip()
            if not any(ch.isdigit() for ch in raw):
                continue
            start = m.end() + g.start() + (len(g.group(0)) - len(g.group(0).lstrip()))
            out.append(RegexCandidate(field, raw, (start, start + len(raw)), field_name))

    def sort_key(c: RegexCandidate):
        if c.field is CanonicalField.TOTAL_AMOUNT:
            digits = re.sub(r"[^\d]", "", c.raw) or "0"
            return (0, -int(digits))
        return (1, c.span[0])

    out.sort(key=sort_key)
    return out


def extract_all(text: str) -> dict[CanonicalField, list[RegexCandidate]]:
    """All regex candidates grouped by field, best-ranked first."""
    grouped: dict[CanonicalField, list[RegexCandidate]] = {}
    for cand in extract_invoice_number(text) + extract_amounts(text):
        grouped.setdefault(cand.field, []).append(cand)
    for dc in extract_dates(text):
        label = dc.nearest_label or ""
        if "due" in label:
            field = CanonicalField.DUE_DATE
        elif "invoice" in label or "issue" in label:
            field = CanonicalField.INVOICE_DATE
        elif label == "date":
            field = CanonicalField.INVOICE_DATE
        else:
            continue
        grouped.setdefault(field, []).append(
            RegexCandidate(field, dc.raw, dc.span, dc.pattern_id))
    return grouped


# ---------------------------------------------------------------------------
# OCR confusion correction
# ---------------------------------------------------------------------------

#: Default character confusion map; overridable via a "from<TAB>to" config file.
DEFAULT_CONFUSION_MAP = {
    "O": "0", "o": "0",
    "l": "1", "I": "1", "|": "1",
    "S": "5",
    "B": "8",
    "Z": "2",
    "G": "6",
}

_CURRENCY_PUNCT = set(".,$€£₹¥-/:")


def load_confusion_map(path: str) -> dict[str, str]:
    table = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            src, dst = line.split("\t")
            table[src] = dst
    return table


def correct_numeric_ocr(raw: str, confusion: Optional[dict[str, str]] = None) -> str:
    """Fix digit-lookalike OCR errors inside numeric content.

    Only runs of confusable characters bounded by digits, currency
    punctuation or the string ends are rewritten; any run containing a
    non-confusable letter is left alone, so ordinary words survive intact.
    Length-preserving and idempotent.
    """
    table = confusion if confusion is not None else DEFAULT_CONFUSION_MAP
    confusable = set(table)
    chars = list(raw)
    n = len(chars)
    i = 0
    while i < n:
        c = chars[i]
        if not (c.isalpha() or c == "|"):
            i += 1
            continue
        j = i
        while j < n and (chars[j].isalpha() or chars[j] == "|"):
            j += 1
        run = chars[i:j]
        left = chars[i - 1] if i > 0 else None
        right = chars[j] if j < n else None

        def boundary_ok(ch: Optional[str]) -> bool:
            return ch is None or ch.isdigit() or ch in _CURRENCY_PUNCT

        if all(ch in confusable for ch in run) and boundary_ok(left) and boundary_ok(right):
            for k in range(i, j):
                chars[k] = table[chars[k]]
        i = j
    return "".join(chars)
