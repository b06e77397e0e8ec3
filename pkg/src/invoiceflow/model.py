"""Shared domain types: canonical fields, exact money arithmetic, invoice records.

Money is integer minor units (cents) plus a 3-letter currency code. All
arithmetic on amounts is exact integer arithmetic; floats never appear in
any validation path.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from decimal import Decimal
from enum import Enum
from typing import Optional, Union

__all__ = [
    "CanonicalField",
    "REQUIRED_FIELDS",
    "FIELD_DESCRIPTIONS",
    "Provenance",
    "ValidationState",
    "InvoiceStatus",
    "DatePolicy",
    "Money",
    "MoneyError",
    "MalformedAmount",
    "CurrencyMismatch",
    "Overflow",
    "money_parse",
    "money_format",
    "money_sum",
    "FieldValue",
    "LineItem",
    "ExtractedInvoice",
    "PipelineConfig",
    "InvoiceFlowError",
]


class InvoiceFlowError(Exception):
    """Base class for all errors raised by this package."""


class CanonicalField(str, Enum):
    """The closed set of invoice fields the whole system agrees on."""

    INVOICE_NUMBER = "invoice_number"
    INVOICE_DATE = "invoice_date"
    DUE_DATE = "due_date"
    VENDOR_NAME = "vendor_name"
    VENDOR_ADDRESS = "vendor_address"
    BILLING_ADDRESS = "billing_address"
    SHIPPING_ADDRESS = "shipping_address"
    CURRENCY = "currency"
    SUBTOTAL = "subtotal"
    TAX_RATE = "tax_rate"
    TAX_AMOUNT = "tax_amount"
    DISCOUNT_AMOUNT = "discount_amount"
    TOTAL_AMOUNT = "total_amount"
    WEIGHT_KG = "weight_kg"

    def __str__(self) -> str:  # pragma: no cover - repr convenience
        return self.value


#: Fields that must be present and confident for an invoice to auto-approve.
REQUIRED_FIELDS = (
    CanonicalField.INVOICE_NUMBER,
    CanonicalField.INVOICE_DATE,
    CanonicalField.VENDOR_NAME,
    CanonicalField.TOTAL_AMOUNT,
)

#: Money-typed fields, normalized through money_parse.
MONEY_FIELDS = frozenset(
    {
        CanonicalField.SUBTOTAL,
        CanonicalField.TAX_AMOUNT,
        CanonicalField.DISCOUNT_AMOUNT,
        CanonicalField.TOTAL_AMOUNT,
    }
)

#: Date-typed fields, normalized to ISO-8601.
DATE_FIELDS = frozenset({CanonicalField.INVOICE_DATE, CanonicalField.DUE_DATE})

FIELD_DESCRIPTIONS = {
    CanonicalField.INVOICE_NUMBER: "unique identifier printed on the invoice",
    CanonicalField.INVOICE_DATE: "date the invoice was issued",
    CanonicalField.DUE_DATE: "date payment is due",
    CanonicalField.VENDOR_NAME: "name of the issuing company",
    CanonicalField.VENDOR_ADDRESS: "postal address of the issuing company",
    CanonicalField.BILLING_ADDRESS: "address the invoice is billed to",
    CanonicalField.SHIPPING_ADDRESS: "address goods are shipped to",
    CanonicalField.CURRENCY: "3-letter currency code",
    CanonicalField.SUBTOTAL: "sum of line amounts before tax",
    CanonicalField.TAX_RATE: "tax rate applied, as a fraction or percentage",
    CanonicalField.TAX_AMOUNT: "tax charged",
    CanonicalField.DISCOUNT_AMOUNT: "discount subtracted from the total",
    CanonicalField.TOTAL_AMOUNT: "grand total payable",
    CanonicalField.WEIGHT_KG: "shipment weight, normalized to kilograms",
}


class Provenance(str, Enum):
    EMBEDDED = "embedded"
    OCR = "ocr"
    LLM = "llm"
    REGEX = "regex"
    LAYOUT = "layout"
    HUMAN = "human"


class ValidationState(str, Enum):
    UNCHECKED = "unchecked"
    PASSED = "passed"
    FAILED = "failed"


class InvoiceStatus(str, Enum):
    AUTO_APPROVED = "auto_approved"
    NEEDS_REVIEW = "needs_review"
    CORRECTED = "corrected"
    REJECTED_DUPLICATE = "rejected_duplicate"


class DatePolicy(str, Enum):
    DAY_FIRST = "day_first"
    MONTH_FIRST = "month_first"


# ---------------------------------------------------------------------------
# Money
# ---------------------------------------------------------------------------

class MoneyError(InvoiceFlowError):
    pass


class MalformedAmount(MoneyError):
    pass


class CurrencyMismatch(MoneyError):
    pass


class Overflow(MoneyError):
    pass


_CURRENCY_RE = re.compile(r"^[A-Z]{3}$")

#: Signed-64-bit bound; sums beyond this raise Overflow so downstream
#: integer columns (xlsx, SQL) stay representable.
MINOR_UNIT_LIMIT = 2**63 - 1

_CURRENCY_SYMBOLS = {
    "$": "USD",
    "€": "EUR",
    "£": "GBP",
    "₹": "INR",
    "¥": "JPY",
    "₩": "KRW",
}

_KNOWN_CODES = frozenset(
    {
        "USD", "EUR", "GBP", "INR", "JPY", "AUD", "CAD", "CHF", "CNY",
        "KRW", "SEK", "NOK", "DKK", "SGD", "HKD", "NZD", "ZAR", "BRL",
        "MXN", "AED", "PLN", "CZK", "THB", "IDR", "MYR", "PHP", "TRY",
    }
)


@dataclass(frozen=True)
class Money:
    """An exact amount: integer minor units (e.g. cents) plus currency code."""

    minor_units: int
    currency: str

    def __post_init__(self) -> None:
        if not isinstance(self.minor_units, int) or isinstance(self.minor_units, bool):
            raise MalformedAmount(f"minor_units must be int, got {type(self.minor_units).__name__}")
        if not _CURRENCY_RE.match(self.currency):
            raise MalformedAmount(f"invalid currency code {self.currency!r}")

    def __str__(self) -> str:
        return f"{money_format(self)} {self.currency}"


def money_format(m: Money) -> str:
    """Render minor units as a plain decimal string with exactly 2 fraction digits."""
    sign = "-" if m.minor_units < 0 else ""
    units, cents = divmod(abs(m.minor_units), 100)
    return f"{sign}{units}.{cents:02d}"


def _detect_currency(text: str) -> tuple[str, Optional[str]]:
    """Strip any currency symbol or known 3-letter code, returning (rest, code)."""
    code = None
    for sym, sym_code in _CURRENCY_SYMBOLS.items():
        if sym in text:
            code = sym_code
            text = text.replace(sym, " ")
    for match in re.finditer(r"(?<![A-Za-z])[A-Za-z]{3}(?![A-Za-z])", text):
        candidate = match.group(0).upper()
        if candidate in _KNOWN_CODES:
            code = candidate
            text = text[: match.start()] + " " + text[match.end():]
            break
    return text, code


def money_parse(raw: str, default_currency: str = "USD") -> Money:
    """Parse a printed amount into Money.

    Separator disambiguation: the rightmost of {"." , ","} followed by 1-2
    digits is the decimal mark; every other separator must delimit a group
    of exactly three digits. Handles leading/trailing signs, accounting
    parentheses, currency symbols and known 3-letter codes.
    """
    if raw is None or not str(raw).strip():
        raise MalformedAmount("empty amount")
    text = str(raw).strip()

    negative = False
    if text.startswith("(") and text.endswith(")"):
        negative = True
        text = text[1:-1]
    text = text.strip()
    if text[:1] in ("-", "−"):
        negative = True
        text = text[1:]
    elif text[-1:] in ("-", "−"):
        negative = True
        text = text[:-1]

    text, detected = _detect_currency(text)
    currency = detected or default_currency
    if not _CURRENCY_RE.match(currency):
        raise MalformedAmount(f"invalid default currency {default_currency!r}")

    # Grouping by space or apostrophe between digits is dropped outright.
    text = re.sub(r"(?<=\d)[\s'  ](?=\d)", "", text)
    core = "".join(ch for ch in text if ch.isdigit() or ch in ".,")
    if not any(ch.isdigit() for ch in core):
        raise MalformedAmount(f"no digits in {raw!r}")

    groups = re.split(r"[.,]", core)
    if len(groups) == 1:
        units, frac = core, ""
    else:
        tail = groups[-1]
        if len(tail) <= 2:
            # Rightmost separator is the decimal mark.
            units_groups, frac = groups[:-1], tail
        else:
            units_groups, frac = groups, ""
        # Every other separator is a thousands mark: interior groups of 3.
        for g in units_groups[1:]:
            if len(g) != 3:
                raise MalformedAmount(f"ambiguous separators in {raw!r}")
        if len(units_groups) > 1 and not 1 <= len(units_groups[0]) <= 3:
            raise MalformedAmount(f"ambiguous separators in {raw!r}")
        units = "".join(units_groups)

    if not units and not frac:
        raise MalformedAmount(f"no digits in {raw!r}")
    minor = int(units or "0") * 100 + int(frac.ljust(2, "0") or "0")
    if negative:
        minor = -minor
    return Money(minor, currency)


def money_sum(items: list[Money] | tuple[Money, ...], currency: Optional[str] = None) -> Money:
    """Exact integer sum. Empty input needs an explicit currency."""
    if not items:
        if currency is None:
            raise CurrencyMismatch("empty sum requires an explicit currency")
        return Money(0, currency)
    cur = currency or items[0].currency
    total = 0
    for m in items:
        if m.currency != cur:
            raise CurrencyMismatch(f"cannot add {m.currency} to {cur}")
        total += m.minor_units
        if abs(total) > MINOR_UNIT_LIMIT:
            raise Overflow(f"sum exceeds {MINOR_UNIT_LIMIT} minor units")
    return Money(total, cur)


# ---------------------------------------------------------------------------
# Extraction results
# ---------------------------------------------------------------------------

NormalizedValue = Union[str, Money, Decimal]


@dataclass(frozen=True)
class FieldValue:
    """One extracted field with its provenance and reliability."""

    field: CanonicalField
    raw_text: str
    normalized: Optional[NormalizedValue]
    confidence: float
    provenance: Provenance
    support: tuple[int, ...] = ()
    validation: ValidationState = ValidationState.UNCHECKED

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def with_confidence(self, confidence: float) -> "FieldValue":
        return replace(self, confidence=confidence)


@dataclass(frozen=True)
class LineItem:
    description: str
    quantity: Decimal
    unit_price: Money
    amount: Money

    def __post_init__(self) -> None:
        if self.unit_price.currency != self.amount.currency:
            raise CurrencyMismatch(
                f"line item mixes {self.unit_price.currency} and {self.amount.currency}"
            )


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one validation check."""

    id: str
    passed: bool
    detail: str
    fields_involved: tuple[CanonicalField, ...] = ()
    skipped: bool = False


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...] = ()

    def __post_init__(self) -> None:
        ids = [c.id for c in self.checks]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate check ids in report: {ids}")

    def check(self, check_id: str) -> Optional[CheckResult]:
        for c in self.checks:
            if c.id == check_id:
                return c
        return None

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks if not c.skipped)


def overall_confidence(fields: dict[CanonicalField, FieldValue]) -> float:
    """Minimum confidence over required fields; a missing required field is 0."""
    worst = 1.0
    for f in REQUIRED_FIELDS:
        fv = fields.get(f)
        if fv is None or fv.normalized is None:
            return 0.0
        worst = min(worst, fv.confidence)
    return worst


@dataclass(frozen=True)
class ExtractedInvoice:
    fields: dict[CanonicalField, FieldValue]
    line_items: tuple[LineItem, ...]
    validation_report: ValidationReport
    overall_confidence: float
    status: InvoiceStatus

    def get(self, f: CanonicalField) -> Optional[FieldValue]:
        return self.fields.get(f)

    def normalized(self, f: CanonicalField) -> Optional[NormalizedValue]:
        fv = self.fields.get(f)
        return fv.normalized if fv else None


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class PipelineConfig:
    """Everything the pipeline needs to run; thresholds and knobs documented inline."""

    input_paths: tuple[str, ...] = ()
    llm_auth_key: Optional[str] = None
    output_path: Optional[str] = None
    review_threshold: float = 0.85
    ocr_escalation_threshold: float = 0.80
    target_dpi: int = 300
    date_policy: DatePolicy = DatePolicy.DAY_FIRST
    default_currency: str = "USD"

    # Embedded text is trusted when a page carries at least this many characters.
    embedded_min_chars_per_page: int = 32

    # Adaptive preprocessing gates (see preprocess.preprocess_adaptive).
    denoise_sharpness_gate: float = 200.0
    denoise_salt_gate: float = 0.01
    deskew_gate_deg: float = 0.3
    contrast_gate: float = 0.5
    low_quality_score: float = 0.40

    # LLM client settings. The auth key comes from LLM_API_KEY, never argv.
    llm_endpoint: str = "https://llm.invalid/v1/complete"
    llm_model: str = "default"
    llm_mode: str = "replay"          # live | replay | stub
    llm_fixture_dir: Optional[str] = None
    llm_max_chars: int = 100_000
    llm_timeout_s: float = 30.0
    llm_attempts: int = 3
    llm_max_inflight: int = 4

    # Cascade acceptance metric over token confidences: mean (default) or median.
    cascade_metric: str = "mean"

    # Service settings.
    workers: int = 4
    api_token: Optional[str] = None
    rasterizer_cmd: Optional[str] = None
    lexicon_path: Optional[str] = None
    confusion_map_path: Optional[str] = None

    arithmetic_tolerance_minor: int = 1

    def __post_init__(self) -> None:
        for name in ("review_threshold", "ocr_escalation_threshold"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if not 72 <= self.target_dpi <= 1200:
            raise ValueError(f"target_dpi must be in [72, 1200], got {self.target_dpi}")
        if isinstance(self.date_policy, str):
            self.date_policy = DatePolicy(self.date_policy)
        if self.cascade_metric not in ("mean", "median"):
            raise ValueError(f"cascade_metric must be mean or median, got {self.cascade_metric}")
