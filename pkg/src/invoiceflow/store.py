"""File-backed job store: content-addressed originals, journaled job
records, append-only audit log, dedup index and vendor history.

Job records are the single source of truth; the dedup index and vendor
history are rebuilt from them on startup, so a crash between writes can
never double-post or lose an accepted invoice. All mutations pass through
one lock (single-writer); reads work on immutable snapshots.
"""

from __future__ import annotations

import hashlib
import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from decimal import Decimal
from pathlib import Path
from typing import Optional

from .model import (
    CanonicalField,
    CheckResult,
    ExtractedInvoice,
    FieldValue,
    InvoiceFlowError,
    InvoiceStatus,
    LineItem,
    Money,
    PipelineConfig,
    Provenance,
    ValidationReport,
    ValidationState,
    overall_confidence,
)
from .validate import (
    AuditLog,
    DedupIndex,
    VendorHistory,
    arithmetic_status,
    check_arithmetic,
    logical_hash,
    normalize_field,
)

__all__ = [
    "JobState",
    "JobRecord",
    "JobStore",
    "IllegalTransition",
    "JobNotReviewable",
    "UnknownField",
    "StaleRevision",
    "UnknownJob",
    "Correction",
    "invoice_to_state",
    "invoice_from_state",
    "ALLOWED_TRANSITIONS",
    "TERMINAL_STATES",
]


class IllegalTransition(InvoiceFlowError):
    pass


class JobNotReviewable(InvoiceFlowError):
    pass


class UnknownField(InvoiceFlowError):
    pass


class StaleRevision(InvoiceFlowError):
    pass


class UnknownJob(InvoiceFlowError):
    pass


JobState = str

ALLOWED_TRANSITIONS: dict[str, set[str]] = {
    "received": {"preprocessed", "failed"},
    "preprocessed": {"extracted", "failed"},
    "extracted": {"validated", "failed"},
    "validated": {"exported", "needs_review", "rejected_duplicate", "failed"},
    "needs_review": {"exported", "failed"},
    "exported": set(),
    "failed": set(),
    "rejected_duplicate": set(),
}

TERMINAL_STATES = {"exported", "failed", "rejected_duplicate"}

#: Job states whose invoices count as present in the system for dedup.
_DEDUP_STATES = {"exported", "needs_review"}


@dataclass
class Correction:
    field: CanonicalField
    new_value: str
    note: Optional[str] = None


@dataclass
class JobRecord:
    id: str
    state: JobState
    raw_hash: str
    filename: str
    revision: int = 0
    error: Optional[str] = None
    transitions: list[dict] = field(default_factory=list)
    invoice: Optional[dict] = None         # serialized ExtractedInvoice

    def to_dict(self) -> dict:
        return {
            "id": self.id, "state": self.state, "raw_hash": self.raw_hash,
            "filename": self.filename, "revision": self.revision,
            "error": self.error, "transitions": self.transitions,
            "invoice": self.invoice,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "JobRecord":
        return cls(**data)


# ---------------------------------------------------------------------------
# Invoice (de)serialization
# ---------------------------------------------------------------------------

def _encode_value(v) -> Optional[dict]:
    if v is None:
        return None
    if isinstance(v, Money):
        return {"kind": "money", "minor": v.minor_units, "currency": v.currency}
    if isinstance(v, date):
        return {"kind": "date", "value": v.isoformat()}
    if isinstance(v, Decimal):
        return {"kind": "decimal", "value": str(v)}
    return {"kind": "str", "value": str(v)}


def _decode_value(data: Optional[dict]):
    if data is None:
        return None
    kind = data["kind"]
    if kind == "money":
        return Money(data["minor"], data["currency"])
    if kind == "date":
        return date.fromisoformat(data["value"])
    if kind == "decimal":
        return Decimal(data["value"])
    return data["value"]


def invoice_to_state(inv: ExtractedInvoice) -> dict:
    return {
        "status": inv.status.value,
        "overall_confidence": inv.overall_confidence,
        "fields": {
            f.value: {
                "raw": fv.raw_text,
                "normalized": _encode_value(fv.normalized),
                "confidence": fv.confidence,
                "provenance": fv.provenance.value,
                "support": list(fv.support),
                "validation": fv.validation.value,
            }
            for f, fv in sorted(inv.fields.items(), key=lambda kv: kv[0].value)
        },
        "line_items": [
            {
                "description": it.description,
                "quantity": str(it.quantity),
                "unit_price": _encode_value(it.unit_price),
                "amount": _encode_value(it.amount),
            }
            for it in inv.line_items
        ],
        "checks": [
            {"id": c.id, "passed": c.passed, "detail": c.detail,
             "fields_involved": [f.value for f in c.fields_involved],
             "skipped": c.skipped}
            for c in inv.validation_report.checks
        ],
    }


def invoice_from_state(data: dict) -> ExtractedInvoice:
    fields = {}
    for name, fv in data["fields"].items():
        f = CanonicalField(name)
        fields[f] = FieldValue(
            field=f, raw_text=fv["raw"], normalized=_decode_value(fv["normalized"]),
            confidence=fv["confidence"], provenance=Provenance(fv["provenance"]),
            support=tuple(fv["support"]), validation=ValidationState(fv["validation"]),
        )
    items = tuple(
        LineItem(it["description"], Decimal(it["quantity"]),
                 _decode_value(it["unit_price"]), _decode_value(it["amount"]))
        for it in data["line_items"]
    )
    report = ValidationReport(tuple(
        CheckResult(c["id"], c["passed"], c["detail"],
                    tuple(CanonicalField(f) for f in c["fields_involved"]),
                    c["skipped"])
        for c in data["checks"]
    ))
    return ExtractedInvoice(
        fields=fields, line_items=items, validation_report=report,
        overall_confidence=data["overall_confidence"],
        status=InvoiceStatus(data["status"]),
    )


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------

class JobStore:
    def __init__(self, root: str | Path, cfg: Optional[PipelineConfig] = None):
        self.root = Path(root)
        self.cfg = cfg or PipelineConfig()
        (self.root / "raw").mkdir(parents=True, exist_ok=True)
        (self.root / "jobs").mkdir(parents=True, exist_ok=True)
        self.audit = AuditLog(self.root / "audit.log")
        self._lock = threading.RLock()
        self._jobs: dict[str, JobRecord] = {}
        self.dedup = DedupIndex()
        self.vendors = VendorHistory()
        self._load()

    # -- persistence ------------------------------------------------------

    def _job_path(self, job_id: str) -> Path:
        return self.root / "jobs" / f"{job_id}.json"

    def _write_job(self, job: JobRecord) -> None:
        path = self._job_path(job.id)
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(job.to_dict(), indent=1, sort_keys=True),
                       encoding="utf-8")
        tmp.replace(path)

    def _load(self) -> None:
        """Reload journaled jobs; interrupted jobs fail, indexes rebuild."""
        for path in sorted((self.root / "jobs").glob("*.json")):
            job = JobRecord.from_dict(json.loads(path.read_text(encoding="utf-8")))
            if job.state not in TERMINAL_STATES and job.state != "needs_review":
                job.error = "interrupted by restart"
                self._transition_unlocked(job, "failed")
            self._jobs[job.id] = job
        for job in self._jobs.values():
            self._index_job(job)

    def _index_job(self, job: JobRecord) -> None:
        if job.state in _DEDUP_STATES and job.invoice:
            inv = invoice_from_state(job.invoice)
            self.dedup.insert(job.raw_hash, logical_hash(inv.fields))
            vendor = inv.fields.get(CanonicalField.VENDOR_NAME)
            total = inv.fields.get(CanonicalField.TOTAL_AMOUNT)
            if (inv.status in (InvoiceStatus.AUTO_APPROVED, InvoiceStatus.CORRECTED)
                    and vendor and total and isinstance(total.normalized, Money)):
                self.vendors.record(str(vendor.normalized), total.normalized.minor_units)
        self.dedup.save(self.root / "dedup.idx")
        self.vendors.save(self.root / "vendors.json")

    # -- job lifecycle ----------------------------------------------------

    def create_job(self, filename: str, data: bytes) -> JobRecord:
        raw_hash = hashlib.sha256(data).hexdigest()
        with self._lock:
            raw_path = self.root / "raw" / raw_hash
            if not raw_path.exists():
                raw_path.write_bytes(data)
            job = JobRecord(
                id=str(uuid.uuid4()), state="received", raw_hash=raw_hash,
                filename=filename,
            )
            job.transitions.append({"state": "received", "timestamp": self._now()})
            self._write_job(job)
            self._jobs[job.id] = job
            self.audit.append("system", "job:received", job.id, after=filename)
        return job

    def raw_bytes(self, job: JobRecord) -> bytes:
        return (self.root / "raw" / job.raw_hash).read_bytes()

    @staticmethod
    def _now() -> str:
        return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")

    def _transition_unlocked(self, job: JobRecord, new_state: JobState,
                             invoice: Optional[ExtractedInvoice] = None) -> None:
        if new_state not in ALLOWED_TRANSITIONS.get(job.state, set()):
            raise IllegalTransition(f"{job.state} -> {new_state} for job {job.id}")
        job.state = new_state
        job.revision += 1
        job.transitions.append({"state": new_state, "timestamp": self._now()})
        if invoice is not None:
            job.invoice = invoice_to_state(invoice)
        self._write_job(job)
        self.audit.append("system", f"job:{new_state}", job.id,
                          after=job.error if new_state == "failed" else None)

    def transition(self, job_id: str, new_state: JobState,
                   invoice: Optional[ExtractedInvoice] = None,
                   error: Optional[str] = None) -> JobRecord:
        with self._lock:
            job = self._require(job_id)
            if error is not None:
                job.error = error
            self._transition_unlocked(job, new_state, invoice)
            if new_state in _DEDUP_STATES:
                self._index_job(job)
            return job

    def _require(self, job_id: str) -> JobRecord:
        job = self._jobs.get(job_id)
        if job is None:
            raise UnknownJob(f"no job {job_id}")
        return job

    def get(self, job_id: str) -> JobRecord:
        with self._lock:
            return self._require(job_id)

    def jobs(self) -> list[JobRecord]:
        with self._lock:
            return list(self._jobs.values())

    def review_queue(self, limit: Optional[int] = None) -> list[JobRecord]:
        with self._lock:
            queue = [j for j in self._jobs.values()
                     if j.state == "needs_review" and j.invoice]
            queue.sort(key=lambda j: (j.invoice["overall_confidence"], j.id))
        return queue[:limit] if limit else queue

    def invoices(self, statuses: Optional[set[str]] = None) -> list[ExtractedInvoice]:
        out = []
        with self._lock:
            for job in sorted(self._jobs.values(),
                              key=lambda j: j.transitions[0]["timestamp"]):
                if not job.invoice:
                    continue
                if statuses and job.invoice["status"] not in statuses:
                    continue
                out.append(invoice_from_state(job.invoice))
        return out

    # -- review -----------------------------------------------------------

    def apply_correction(self, job_id: str, corrections: list[Correction],
                         reviewer: str, revision: Optional[int] = None
                         ) -> tuple[JobRecord, ExtractedInvoice]:
        """Replace field values with human input, re-validate, re-decide.

        Rejected atomically on the first bad field (state unchanged); a
        successful pass either promotes the job to exported (invoice status
        corrected) or leaves it queued with the failing checks listed.
        """
        with self._lock:
            job = self._require(job_id)
            if job.state != "needs_review" or not job.invoice:
                raise JobNotReviewable(f"job {job_id} is {job.state}")
            if revision is not None and revision != job.revision:
                raise StaleRevision(
                    f"revision {revision} is stale (current {job.revision})")

            inv = invoice_from_state(job.invoice)
            fields = dict(inv.fields)
            currency_hint = None
            cur = fields.get(CanonicalField.CURRENCY)
            if cur and isinstance(cur.normalized, str):
                currency_hint = cur.normalized

            staged: list[tuple[CanonicalField, Optional[FieldValue], FieldValue]] = []
            for corr in corrections:
                if not isinstance(corr.field, CanonicalField):
                    try:
                        corr.field = CanonicalField(str(corr.field))
                    except ValueError as exc:
                        raise UnknownField(f"unknown field {corr.field!r}") from exc
                normalized = normalize_field(corr.field, corr.new_value,
                                             self.cfg, currency_hint)
                before = fields.get(corr.field)
                after = FieldValue(
                    field=corr.field, raw_text=corr.new_value,
                    normalized=normalized, confidence=1.0,
                    provenance=Provenance.HUMAN,
                    validation=ValidationState.UNCHECKED,
                )
                staged.append((corr.field, before, after))

            for f, _, after in staged:
                fields[f] = after

            interim = ExtractedInvoice(
                fields=fields, line_items=inv.line_items,
                validation_report=inv.validation_report,
                overall_confidence=inv.overall_confidence, status=inv.status)
            report = check_arithmetic(interim, self.cfg.arithmetic_tolerance_minor)

            # Validation states refresh from the new report; confidences are
            # untouched so corrections never lower an existing score.
            rescored = {}
            for f, fv in fields.items():
                arith = arithmetic_status(report, f)
                validation = (ValidationState.UNCHECKED if arith == "n/a"
                              else ValidationState(arith))
                rescored[f] = FieldValue(f, fv.raw_text, fv.normalized,
                                         fv.confidence, fv.provenance,
                                         fv.support, validation)

            overall = overall_confidence(rescored)
            passed = report.all_passed
            if overall >= self.cfg.review_threshold and passed:
                status = InvoiceStatus.CORRECTED
            else:
                status = InvoiceStatus.NEEDS_REVIEW
            updated = ExtractedInvoice(
                fields=rescored, line_items=inv.line_items,
                validation_report=report, overall_confidence=overall,
                status=status)

            for f, before, after in staged:
                self.audit.append(
                    reviewer, f"correction:{f.value}", job.id,
                    before=before.raw_text if before else None,
                    after=after.raw_text)

            if status is InvoiceStatus.CORRECTED:
                self._transition_unlocked(job, "exported", updated)
                self._index_job(job)
            else:
                job.invoice = invoice_to_state(updated)
                job.revision += 1
                self._write_job(job)
            return job, updated
