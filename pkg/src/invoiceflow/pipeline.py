"""End-to-end document processing: ingest, preprocess, recognize, analyze,
extract, validate, finalize.

Per-document flow: embedded text wins when a real text layer exists;
otherwise pages are rasterized, adaptively preprocessed and recognized by
the OCR cascade. Extraction fuses the LLM route with regex and layout
fallbacks, then exact-integer validation and confidence gating decide
whether a human needs to look.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Optional, Sequence

from . import llm as llm_mod
from .fallback import extract_all
from .ingest import RawDocument, Token, extract_embedded_text, rasterize
from .layout import LayoutLink, PageLayout, analyze_page, assemble_text
from .llm import (
    LlmClient,
    PartialInvoice,
    build_prompt,
    prompt_hash,
    repair_json,
    parse_extraction,
)
from .model import (
    FIELD_DESCRIPTIONS,
    CanonicalField,
    ExtractedInvoice,
    InvoiceStatus,
    LineItem,
    Money,
    MoneyError,
    PipelineConfig,
)
from .ocr import OcrEngine, OcrTrace, run_cascade, select_plan
from .preprocess import PageImage, PreprocessResult, preprocess_adaptive
from .validate import (
    AuditLog,
    DedupIndex,
    Grounding,
    VendorHistory,
    check_arithmetic_values,
    dedup_check,
    detect_anomaly,
    AnomalyResult,
    finalize,
    fuse_fields,
    logical_hash,
    score_fused,
)

logger = logging.getLogger(__name__)

__all__ = [
    "DocText",
    "PipelineResult",
    "document_text",
    "make_llm_client",
    "process_document",
    "process_path",
]


@dataclass(frozen=True)
class DocText:
    """Whole-document reading-order text with global token ids."""

    text: str
    tokens: tuple[Token, ...]
    spans: tuple[tuple[int, int, int], ...]


def document_text(pages_tokens: Sequence[Sequence[Token]]) -> DocText:
    """Concatenate per-page reading-order text; token ids run document-wide."""
    parts: list[str] = []
    flat: list[Token] = []
    spans: list[tuple[int, int, int]] = []
    offset = 0
    id_offset = 0
    for pi, page in enumerate(pages_tokens):
        page_text = assemble_text(page)
        if pi:
            parts.append("\n\n")
            offset += 2
        parts.append(page_text.text)
        for s, e, tid in page_text.token_spans:
            spans.append((s + offset, e + offset, tid + id_offset))
        flat.extend(page)
        offset += len(page_text.text)
        id_offset += len(page)
    return DocText("".join(parts), tuple(flat), tuple(spans))


@dataclass
class PipelineResult:
    invoice: ExtractedInvoice
    doc: RawDocument
    ocr_trace: Optional[OcrTrace] = None
    llm_error: Optional[str] = None
    prompt_digest: Optional[str] = None
    duration_ms: float = 0.0
    preprocessing: tuple[tuple[str, ...], ...] = ()
    layouts: tuple[PageLayout, ...] = ()
    text: str = ""


def make_llm_client(cfg: PipelineConfig) -> Optional[LlmClient]:
    """Build the configured client; replay needs a fixture directory."""
    if cfg.llm_mode == "live":
        return llm_mod.LiveLlmClient(cfg.llm_endpoint, cfg.llm_model,
                                     cfg.llm_timeout_s, cfg.llm_attempts,
                                     cfg.llm_max_inflight)
    if cfg.llm_mode == "replay":
        if not cfg.llm_fixture_dir:
            return None
        return llm_mod.ReplayLlmClient(cfg.llm_fixture_dir)
    if cfg.llm_mode == "stub":
        return llm_mod.RefusalStubClient()
    return None


def _auth_key(cfg: PipelineConfig) -> Optional[str]:
    return cfg.llm_auth_key or os.environ.get("LLM_API_KEY")


def _parse_decimal(raw: str) -> Optional[Decimal]:
    cleaned = raw.strip().replace(",", "")
    try:
        return Decimal(cleaned)
    except InvalidOperation:
        return None


def _line_items_from_llm(partial: PartialInvoice, currency: str) -> list[LineItem]:
    items = []
    for entry in partial.line_items:
        desc = entry.get("description", "").strip()
        qty_raw = entry.get("quantity")
        price_raw = entry.get("unit_price")
        amount_raw = entry.get("amount")
        if not (desc and qty_raw and price_raw and amount_raw):
            continue
        qty = _parse_decimal(qty_raw)
        if qty is None:
            continue
        try:
            from .model import money_parse

            unit = money_parse(price_raw, currency)
            amount = money_parse(amount_raw, currency)
            items.append(LineItem(desc, qty, Money(unit.minor_units, currency),
                                  Money(amount.minor_units, currency)))
        except MoneyError:
            continue
    return items


def _line_items_from_tables(layouts: Sequence[PageLayout],
                            tokens_by_page: Sequence[Sequence[Token]],
                            currency: str) -> list[LineItem]:
    """Deterministic fallback: read desc/qty/price/amount off a detected
    4-column grid, skipping the header row."""
    from .model import money_parse

    items: list[LineItem] = []
    for layout_result, tokens in zip(layouts, tokens_by_page):
        for table in layout_result.tables:
            if len(table.columns) < 4:
                continue
            for row in table.cells:
                cell_text = [" ".join(tokens[i].text for i in cell) for cell in row[:4]]
                desc, qty_raw, price_raw, amount_raw = cell_text
                qty = _parse_decimal(qty_raw)
                if qty is None or not desc:
                    continue
                try:
                    unit = money_parse(price_raw, currency)
                    amount = money_parse(amount_raw, currency)
                except MoneyError:
                    continue
                items.append(LineItem(desc.strip(), qty,
                                      Money(unit.minor_units, currency),
                                      Money(amount.minor_units, currency)))
    return items


def _run_llm(client: Optional[LlmClient], text: str, cfg: PipelineConfig
             ) -> tuple[Optional[PartialInvoice], Optional[str], Optional[str]]:
    if client is None or not text.strip():
        return None, None, None
    prompt = build_prompt(text, FIELD_DESCRIPTIONS, cfg.llm_max_chars)
    digest = prompt_hash(prompt)
    try:
        raw = client.complete(prompt, _auth_key(cfg))
        repaired = repair_json(raw)
        return parse_extraction(repaired), None, digest
    except llm_mod.LlmError as exc:
        logger.info("LLM extraction unavailable (%s); using fallbacks", exc)
        return None, f"{type(exc).__name__}: {exc}", digest


def process_document(
    doc: RawDocument,
    cfg: PipelineConfig,
    *,
    llm_client: Optional[LlmClient] = None,
    engines: Optional[dict[str, OcrEngine]] = None,
    dedup_index: Optional[DedupIndex] = None,
    vendor_history: Optional[VendorHistory] = None,
    audit: Optional[AuditLog] = None,
    audit_subject: Optional[str] = None,
    commit: bool = True,
) -> PipelineResult:
    """Run the full pipeline over one document and finalize its invoice."""
    start = time.perf_counter()
    engines = engines or {}
    subject = audit_subject or doc.content_hash[:12]

    # Recognition route: embedded text layer first, OCR cascade otherwise.
    embedded: list[list[Token]] = []
    if doc.format == "pdf":
        embedded = extract_embedded_text(doc, dpi=cfg.target_dpi)

    pages: list[PageImage] = []
    prep_results: list[PreprocessResult] = []
    quality = None
    page_chars = (sum(len(t.text) for page in embedded for t in page)
                  / max(1, len(embedded)))
    needs_raster = doc.format != "pdf" or page_chars < cfg.embedded_min_chars_per_page
    if needs_raster:
        raw_pages = rasterize(doc, cfg.target_dpi, cfg.rasterizer_cmd)
        for img in raw_pages:
            result = preprocess_adaptive(
                img,
                target_dpi=cfg.target_dpi,
                sharpness_gate=cfg.denoise_sharpness_gate,
                salt_gate=cfg.denoise_salt_gate,
                deskew_gate_deg=cfg.deskew_gate_deg,
                contrast_gate=cfg.contrast_gate,
            )
            prep_results.append(result)
            pages.append(result.image)
        quality = prep_results[0].quality if prep_results else None

    plan = select_plan(embedded, quality, list(engines),
                       cfg.ocr_escalation_threshold,
                       cfg.embedded_min_chars_per_page,
                       cfg.low_quality_score)
    tokens, trace = run_cascade(plan, pages, engines, embedded,
                                metric=cfg.cascade_metric)
    if audit is not None:
        audit.append("system", f"recognize:{trace.accepted_source}", subject,
                     after=f"attempts={len(trace.attempts)} tokens={len(tokens)}")

    # Group accepted tokens per page for structural analysis.
    page_count = max([t.page for t in tokens], default=0) + 1
    tokens_by_page: list[list[Token]] = [[] for _ in range(page_count)]
    for t in tokens:
        tokens_by_page[t.page].append(t)

    doc_text = document_text(tokens_by_page)
    grounding = Grounding(doc_text.text, doc_text.spans, doc_text.tokens)

    lexicon = None
    if cfg.lexicon_path:
        from .layout import load_lexicon

        lexicon = load_lexicon(cfg.lexicon_path)

    layouts: list[PageLayout] = []
    links: list[LayoutLink] = []
    id_offset = 0
    for pi, page_tokens in enumerate(tokens_by_page):
        if pages and pi < len(pages):
            page_h = float(pages[pi].height)
        else:
            page_h = max(11.0 * cfg.target_dpi,
                         max((t.bbox[3] for t in page_tokens), default=0.0) + 1)
        lay = analyze_page(page_tokens, page_h, lexicon)
        layouts.append(lay)
        for link in lay.links:
            links.append(LayoutLink(link.field, link.text, link.block_id,
                                    tuple(i + id_offset for i in link.token_ids),
                                    link.distance))
        id_offset += len(page_tokens)

    # Nearest candidate per field across pages.
    best_links: dict[CanonicalField, LayoutLink] = {}
    for link in links:
        prev = best_links.get(link.field)
        if prev is None or link.distance < prev.distance:
            best_links[link.field] = link

    regex_candidates = extract_all(doc_text.text)
    partial, llm_error, digest = _run_llm(llm_client, doc_text.text, cfg)

    fusion = fuse_fields(partial, regex_candidates, list(best_links.values()),
                         cfg, grounding)

    currency = cfg.default_currency
    cur_fv = fusion.fields.get(CanonicalField.CURRENCY)
    if cur_fv and isinstance(cur_fv.normalized, str):
        currency = cur_fv.normalized
    else:
        total_fv = fusion.fields.get(CanonicalField.TOTAL_AMOUNT)
        if total_fv and isinstance(total_fv.normalized, Money):
            currency = total_fv.normalized.currency

    line_items = _line_items_from_llm(partial, currency) if partial else []
    if not line_items:
        line_items = _line_items_from_tables(layouts, tokens_by_page, currency)

    normalized_values = {f: fv.normalized for f, fv in fusion.fields.items()
                         if fv.normalized is not None}
    report = check_arithmetic_values(normalized_values, line_items,
                                     cfg.arithmetic_tolerance_minor)
    fields = score_fused(fusion, report, grounding)

    dedup_result = "new"
    if dedup_index is not None:
        dedup_result = dedup_check(fields, doc.content_hash, dedup_index)

    anomaly = AnomalyResult(False)
    vendor_fv = fields.get(CanonicalField.VENDOR_NAME)
    total_fv = fields.get(CanonicalField.TOTAL_AMOUNT)
    if (vendor_history is not None and vendor_fv and total_fv
            and isinstance(total_fv.normalized, Money)):
        anomaly = detect_anomaly(vendor_history, str(vendor_fv.normalized),
                                 total_fv.normalized)

    invoice = finalize(fields, line_items, report, dedup_result, anomaly,
                       cfg.review_threshold, audit, subject=subject)

    if commit and invoice.status is not InvoiceStatus.REJECTED_DUPLICATE:
        if dedup_index is not None:
            dedup_index.insert(doc.content_hash, logical_hash(fields))
        if (vendor_history is not None and invoice.status is InvoiceStatus.AUTO_APPROVED
                and vendor_fv and total_fv and isinstance(total_fv.normalized, Money)):
            vendor_history.record(str(vendor_fv.normalized),
                                  total_fv.normalized.minor_units)

    return PipelineResult(
        invoice=invoice,
        doc=doc,
        ocr_trace=trace,
        llm_error=llm_error,
        prompt_digest=digest,
        duration_ms=(time.perf_counter() - start) * 1000.0,
        preprocessing=tuple(r.applied for r in prep_results),
        layouts=tuple(layouts),
        text=doc_text.text,
    )


def process_path(path: str | Path, cfg: PipelineConfig, **kwargs) -> PipelineResult:
    return process_document(RawDocument.from_path(path), cfg, **kwargs)
