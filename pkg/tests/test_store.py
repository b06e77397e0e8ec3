import json
from pathlib import Path

import pytest

from invoiceflow.corpus import corpus_ids
from invoiceflow.ingest import RawDocument
from invoiceflow.model import CanonicalField, InvoiceStatus, PipelineConfig
from invoiceflow.pipeline import make_llm_client, process_document
from invoiceflow.store import (
    ALLOWED_TRANSITIONS,
    Correction,
    IllegalTransition,
    JobNotReviewable,
    JobStore,
    StaleRevision,
    UnknownField,
    invoice_from_state,
    invoice_to_state,
)
from invoiceflow.validate import NormalizationFailed

from conftest import corrupt_fixture


def run_store_job(store, corpus, fid, cfg):
    """Drive one corpus document through the store's job lifecycle."""
    data = (corpus / fid / "invoice.pdf").read_bytes()
    job = store.create_job(f"{fid}.pdf", data)
    client = make_llm_client(cfg)
    result = process_document(
        RawDocument.from_bytes(data, job.filename), cfg,
        llm_client=client, dedup_index=store.dedup,
        vendor_history=store.vendors, audit=store.audit, commit=False)
    store.transition(job.id, "preprocessed")
    store.transition(job.id, "extracted")
    store.transition(job.id, "validated")
    final = {InvoiceStatus.REJECTED_DUPLICATE: "rejected_duplicate",
             InvoiceStatus.NEEDS_REVIEW: "needs_review"}.get(
        result.invoice.status, "exported")
    store.transition(job.id, final, result.invoice)
    return store.get(job.id), result.invoice


class TestStateMachine:
    def test_happy_path(self, tmp_path, small_corpus, small_cfg):
        store = JobStore(tmp_path / "store", small_cfg)
        job, invoice = run_store_job(store, small_corpus, "inv0000", small_cfg)
        assert job.state == "exported"
        assert [t["state"] for t in job.transitions] == [
            "received", "preprocessed", "extracted", "validated", "exported"]

    def test_illegal_transition_rejected(self, tmp_path):
        store = JobStore(tmp_path / "store")
        job = store.create_job("x.pdf", b"%PDF-1.4 fake")
        with pytest.raises(IllegalTransition):
            store.transition(job.id, "exported")

    def test_replay_of_logs_is_legal(self, tmp_path, small_corpus, small_cfg):
        store = JobStore(tmp_path / "store", small_cfg)
        for fid in corpus_ids(small_corpus)[:3]:
            run_store_job(store, small_corpus, fid, small_cfg)
        for job in store.jobs():
            states = [t["state"] for t in job.transitions]
            assert states[0] == "received"
            for a, b in zip(states, states[1:]):
                assert b in ALLOWED_TRANSITIONS[a], (a, b)

    def test_invoice_serialization_round_trip(self, tmp_path, small_corpus, small_cfg):
        store = JobStore(tmp_path / "store", small_cfg)
        _, invoice = run_store_job(store, small_corpus, "inv0001", small_cfg)
        restored = invoice_from_state(invoice_to_state(invoice))
        assert restored == invoice


class TestCrashRecovery:
    def test_restart_preserves_accepted(self, tmp_path, small_corpus, small_cfg):
        root = tmp_path / "store"
        store = JobStore(root, small_cfg)
        done, _ = run_store_job(store, small_corpus, "inv0000", small_cfg)
        # Simulate a crash with one job mid-flight.
        pending = store.create_job("pending.pdf",
                                   (small_corpus / "inv0001" / "invoice.pdf").read_bytes())

        reopened = JobStore(root, small_cfg)
        assert reopened.get(done.id).state == "exported"
        assert reopened.get(done.id).invoice is not None
        assert reopened.get(pending.id).state == "failed"
        assert "interrupted" in reopened.get(pending.id).error

    def test_resubmit_after_restart_is_duplicate(self, tmp_path, small_corpus, small_cfg):
        root = tmp_path / "store"
        store = JobStore(root, small_cfg)
        run_store_job(store, small_corpus, "inv0000", small_cfg)

        reopened = JobStore(root, small_cfg)
        job, invoice = run_store_job(reopened, small_corpus, "inv0000", small_cfg)
        assert job.state == "rejected_duplicate"
        assert invoice.status is InvoiceStatus.REJECTED_DUPLICATE

    def test_interrupted_job_can_be_resubmitted_fresh(self, tmp_path, small_corpus,
                                                      small_cfg):
        root = tmp_path / "store"
        store = JobStore(root, small_cfg)
        store.create_job("p.pdf", (small_corpus / "inv0002" / "invoice.pdf").read_bytes())
        reopened = JobStore(root, small_cfg)
        job, invoice = run_store_job(reopened, small_corpus, "inv0002", small_cfg)
        assert job.state == "exported"


@pytest.fixture()
def review_setup(tmp_path, tmp_path_factory, small_cfg):
    """A needs_review job produced by a fixture with a wrong total."""
    from invoiceflow.corpus import gen_corpus, load_truth

    corpus = tmp_path_factory.mktemp("corpus-review")
    gen_corpus(seed=77, n=1, out_dir=corpus, render_png=False)
    truth = load_truth(corpus, "inv0000")
    good_total = truth["fields"]["total_amount"]
    wrong = "9999.99"
    corrupt_fixture(corpus, "inv0000", total_amount=wrong)
    cfg = PipelineConfig(llm_fixture_dir=str(corpus / "fixtures"))
    store = JobStore(tmp_path / "store", cfg)
    job, invoice = run_store_job(store, corpus, "inv0000", cfg)
    assert job.state == "needs_review", invoice.status
    return store, job, good_total


class TestCorrections:
    def test_fixing_total_promotes_to_corrected(self, review_setup):
        store, job, good_total = review_setup
        updated_job, invoice = store.apply_correction(
            job.id, [Correction(CanonicalField.TOTAL_AMOUNT, good_total)],
            reviewer="user-7", revision=job.revision)
        assert invoice.status is InvoiceStatus.CORRECTED
        assert updated_job.state == "exported"
        assert invoice.validation_report.check("TOTAL").passed
        fv = invoice.fields[CanonicalField.TOTAL_AMOUNT]
        assert fv.provenance.value == "human"
        assert fv.confidence == 1.0
        events = store.audit.events(job.id)
        corrections = [e for e in events if e.action.startswith("correction:")]
        assert corrections and corrections[0].after == good_total
        assert corrections[0].before is not None

    def test_invalid_date_rejected_atomically(self, review_setup):
        store, job, good_total = review_setup
        before_revision = store.get(job.id).revision
        with pytest.raises(NormalizationFailed):
            store.apply_correction(
                job.id,
                [Correction(CanonicalField.TOTAL_AMOUNT, good_total),
                 Correction(CanonicalField.INVOICE_DATE, "31/02/2024")],
                reviewer="user-7")
        refreshed = store.get(job.id)
        assert refreshed.state == "needs_review"
        assert refreshed.revision == before_revision
        fv = invoice_from_state(refreshed.invoice)
        assert fv.fields[CanonicalField.TOTAL_AMOUNT].provenance.value != "human"

    def test_correction_on_exported_job(self, tmp_path, small_corpus, small_cfg):
        store = JobStore(tmp_path / "store", small_cfg)
        job, _ = run_store_job(store, small_corpus, "inv0000", small_cfg)
        with pytest.raises(JobNotReviewable):
            store.apply_correction(job.id, [Correction(CanonicalField.TOTAL_AMOUNT, "1.00")],
                                   reviewer="r")

    def test_unknown_field(self, review_setup):
        store, job, _ = review_setup
        with pytest.raises(UnknownField):
            store.apply_correction(job.id, [Correction("not_a_field", "x")], reviewer="r")

    def test_stale_revision(self, review_setup):
        store, job, good_total = review_setup
        with pytest.raises(StaleRevision):
            store.apply_correction(
                job.id, [Correction(CanonicalField.TOTAL_AMOUNT, good_total)],
                reviewer="r", revision=job.revision + 5)

    def test_monotone_confidence(self, review_setup):
        store, job, good_total = review_setup
        before = invoice_from_state(store.get(job.id).invoice)
        _, after = store.apply_correction(
            job.id, [Correction(CanonicalField.TOTAL_AMOUNT, good_total)],
            reviewer="r", revision=job.revision)
        for f, fv in after.fields.items():
            assert fv.confidence >= before.fields[f].confidence - 1e-12
