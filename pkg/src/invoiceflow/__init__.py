"""Automated invoice data extraction toolkit."""

from .model import (
    CanonicalField,
    DatePolicy,
    ExtractedInvoice,
    FieldValue,
    InvoiceStatus,
    LineItem,
    Money,
    PipelineConfig,
    money_format,
    money_parse,
    money_sum,
)
from .pipeline import process_document, process_path

__version__ = "0.1.0"

__all__ = [
    "CanonicalField",
    "DatePolicy",
    "ExtractedInvoice",
    "FieldValue",
    "InvoiceStatus",
    "LineItem",
    "Money",
    "PipelineConfig",
    "money_format",
    "money_parse",
    "money_sum",
    "process_document",
    "process_path",
    "__version__",
]
