import dataclasses
from decimal import Decimal

import pytest

from invoiceflow.corpus import corpus_ids, load_truth
from invoiceflow.ingest import RawDocument
from invoiceflow.llm import RefusalStubClient
from invoiceflow.model import (
    CanonicalField,
    InvoiceStatus,
    Money,
    PipelineConfig,
    Provenance,
)
from invoiceflow.ocr import MockNoisyEngine, MockPerfectEngine
from invoiceflow.pipeline import make_llm_client, process_path, process_document
from invoiceflow.validate import DedupIndex, VendorHistory


class TestEmbeddedPath:
    def test_fields_match_truth(self, small_corpus, small_cfg):
        client = make_llm_client(small_cfg)
        for fid in corpus_ids(small_corpus)[:3]:
            truth = load_truth(small_corpus, fid)
            result = process_path(small_corpus / fid / "invoice.pdf", small_cfg,
                                  llm_client=client)
            inv = result.invoice
            assert inv.status is InvoiceStatus.AUTO_APPROVED
            assert inv.normalized(CanonicalField.INVOICE_NUMBER) == truth["fields"]["invoice_number"]
            assert inv.normalized(CanonicalField.INVOICE_DATE).isoformat() == truth["fields"]["invoice_date"]
            total = inv.normalized(CanonicalField.TOTAL_AMOUNT)
            assert isinstance(total, Money)
            assert result.ocr_trace.accepted_source == "embedded"
            assert result.preprocessing == ()

    def test_llm_values_grounded_in_embedded_tokens(self, small_corpus, small_cfg):
        client = make_llm_client(small_cfg)
        result = process_path(small_corpus / "inv0000" / "invoice.pdf", small_cfg,
                              llm_client=client)
        fv = result.invoice.fields[CanonicalField.INVOICE_NUMBER]
        assert fv.provenance is Provenance.LLM
        assert fv.support
        assert fv.confidence >= 0.95

    def test_line_items_extracted(self, small_corpus, small_cfg):
        client = make_llm_client(small_cfg)
        for fid in corpus_ids(small_corpus)[:3]:
            truth = load_truth(small_corpus, fid)
            result = process_path(small_corpus / fid / "invoice.pdf", small_cfg,
                                  llm_client=client)
            assert len(result.invoice.line_items) == len(truth["line_items"])
            assert result.invoice.validation_report.all_passed


class TestFallbackPath:
    def test_refusal_stub_still_extracts(self, small_corpus, small_cfg):
        result = process_path(small_corpus / "inv0000" / "invoice.pdf", small_cfg,
                              llm_client=RefusalStubClient())
        inv = result.invoice
        assert result.llm_error is not None
        number = inv.fields.get(CanonicalField.INVOICE_NUMBER)
        total = inv.fields.get(CanonicalField.TOTAL_AMOUNT)
        assert number is not None and number.provenance in (
            Provenance.REGEX, Provenance.LAYOUT)
        assert total is not None
        truth = load_truth(small_corpus, "inv0000")
        assert number.normalized == truth["fields"]["invoice_number"]

    def test_no_client_at_all(self, small_corpus, small_cfg):
        result = process_path(small_corpus / "inv0000" / "invoice.pdf", small_cfg,
                              llm_client=None)
        assert result.llm_error is None
        assert CanonicalField.TOTAL_AMOUNT in result.invoice.fields

    def test_table_line_items_without_llm(self, small_corpus, small_cfg):
        truth = load_truth(small_corpus, "inv0000")
        result = process_path(small_corpus / "inv0000" / "invoice.pdf", small_cfg,
                              llm_client=None)
        assert len(result.invoice.line_items) == len(truth["line_items"])


class TestOcrPath:
    def test_mock_perfect_engine_end_to_end(self, small_corpus, small_cfg):
        cfg = dataclasses.replace(small_cfg, target_dpi=150)
        engines = {"mock-perfect": MockPerfectEngine(small_corpus)}
        client = make_llm_client(cfg)
        truth = load_truth(small_corpus, "inv0000")
        result = process_path(small_corpus / "inv0000" / "page.png", cfg,
                              llm_client=client, engines=engines)
        inv = result.invoice
        assert result.ocr_trace.accepted_source == "mock-perfect"
        assert result.preprocessing and "binarize_otsu" in result.preprocessing[0]
        assert inv.normalized(CanonicalField.INVOICE_NUMBER) == truth["fields"]["invoice_number"]

    def test_noisy_escalates_to_better_engine(self, small_corpus, small_cfg):
        cfg = dataclasses.replace(small_cfg, target_dpi=150,
                                  ocr_escalation_threshold=0.90)
        engines = {
            "noisy": MockNoisyEngine(small_corpus, rate=0.20, seed=2),
            "perfect": MockPerfectEngine(small_corpus),
        }
        result = process_path(small_corpus / "inv0001" / "page.png", cfg,
                              llm_client=None, engines=engines)
        assert result.ocr_trace.accepted_source == "perfect"
        assert len(result.ocr_trace.attempts) == 2


class TestDedupAndHistory:
    def test_second_run_rejected(self, small_corpus, small_cfg):
        index = DedupIndex()
        client = make_llm_client(small_cfg)
        first = process_path(small_corpus / "inv0000" / "invoice.pdf", small_cfg,
                             llm_client=client, dedup_index=index)
        assert first.invoice.status is InvoiceStatus.AUTO_APPROVED
        second = process_path(small_corpus / "inv0000" / "invoice.pdf", small_cfg,
                              llm_client=client, dedup_index=index)
        assert second.invoice.status is InvoiceStatus.REJECTED_DUPLICATE

    def test_vendor_history_recorded_on_approval(self, small_corpus, small_cfg):
        history = VendorHistory()
        client = make_llm_client(small_cfg)
        result = process_path(small_corpus / "inv0000" / "invoice.pdf", small_cfg,
                              llm_client=client, vendor_history=history)
        vendor = str(result.invoice.normalized(CanonicalField.VENDOR_NAME))
        assert history.get(vendor) == [
            result.invoice.normalized(CanonicalField.TOTAL_AMOUNT).minor_units]


class TestTransportIndependence:
    def test_cli_pipeline_and_service_agree(self, tmp_path, small_corpus, small_cfg):
        """The same bytes produce the same invoice through both surfaces."""
        import time

        from fastapi.testclient import TestClient

        from invoiceflow.service import Service, create_app
        from invoiceflow.store import invoice_from_state

        direct = process_path(small_corpus / "inv0002" / "invoice.pdf", small_cfg,
                              llm_client=make_llm_client(small_cfg))

        service = Service(tmp_path / "store", small_cfg)
        app = create_app(service)
        with TestClient(app) as client:
            pdf = (small_corpus / "inv0002" / "invoice.pdf").read_bytes()
            r = client.post("/v1/invoices",
                            files={"file": ("x.pdf", pdf, "application/pdf")})
            jid = r.json()["job_id"]
            deadline = time.time() + 15
            while time.time() < deadline:
                if client.get(f"/v1/invoices/{jid}").json()["state"] == "exported":
                    break
                time.sleep(0.02)
        job = service.store.get(jid)
        via_service = invoice_from_state(job.invoice)
        assert via_service.fields == direct.invoice.fields
        assert via_service.line_items == direct.invoice.line_items
        assert via_service.status == direct.invoice.status


class TestConfigHooks:
    def test_custom_lexicon_file_drives_linking(self, tmp_path, small_cfg):
        from invoiceflow.corpus import _build_pdf, _TextLine

        pdf = _build_pdf([
            _TextLine(54, 100, 10, "REF CODE: ZZ-9871"),
            _TextLine(54, 130, 10, "ISSUED: 2024-05-06"),
            _TextLine(54, 160, 10, "SELLER OF RECORD: NORTH RIVER TRADING"),
            _TextLine(54, 220, 10, "TOTAL: $42.00"),
        ])
        lexicon = tmp_path / "lexicon.tsv"
        lexicon.write_text("ref code\tinvoice_number\nissued\tinvoice_date\n",
                           encoding="utf-8")
        cfg = dataclasses.replace(small_cfg, lexicon_path=str(lexicon))
        doc = RawDocument.from_bytes(pdf, "custom.pdf")
        result = process_document(doc, cfg, llm_client=None)
        inv = result.invoice
        assert inv.normalized(CanonicalField.INVOICE_NUMBER) == "ZZ-9871"
        assert inv.normalized(CanonicalField.INVOICE_DATE).isoformat() == "2024-05-06"

    def test_confusion_map_file_used_in_normalization(self, tmp_path):
        from invoiceflow.validate import normalize_field

        table = tmp_path / "confusion.tsv"
        table.write_text("Q\t0\n", encoding="utf-8")
        cfg = PipelineConfig(confusion_map_path=str(table))
        value = normalize_field(CanonicalField.TOTAL_AMOUNT, "1Q0.00", cfg)
        assert value == Money(10000, "USD")
