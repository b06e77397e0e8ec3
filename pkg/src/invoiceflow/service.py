"""REST service: upload, job status, review workflow, export.

A FIFO queue feeds N worker threads; every store mutation goes through the
single-writer JobStore. The review UI (when built) is served statically
under /ui and consumes exactly these endpoints.
"""

from __future__ import annotations

import base64
import binascii
import logging
import queue
import threading
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, Request, UploadFile
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from .export import canonical_dumps, invoice_to_dict, to_csv, to_xlsx
from .ingest import RawDocument, UnknownFormat, rasterize, write_png
from .llm import LlmClient
from .model import InvoiceFlowError, InvoiceStatus, PipelineConfig
from .ocr import OcrEngine
from .pipeline import make_llm_client, process_document
from .store import (
    Correction,
    JobNotReviewable,
    JobRecord,
    JobStore,
    StaleRevision,
    UnknownField,
    UnknownJob,
)
from .validate import NormalizationFailed

logger = logging.getLogger(__name__)

__all__ = ["Service", "create_app"]

_ERROR_STATUS = {
    "UnknownJob": 404,
    "JobNotReviewable": 409,
    "StaleRevision": 409,
    "UnknownField": 400,
    "NormalizationFailed": 422,
    "UnknownFormat": 400,
}


class Service:
    """Owns the store, the queue and the worker pool."""

    def __init__(self, store_dir: str | Path, cfg: Optional[PipelineConfig] = None,
                 engines: Optional[dict[str, OcrEngine]] = None,
                 llm_client: Optional[LlmClient] = None):
        self.cfg = cfg or PipelineConfig()
        self.store = JobStore(store_dir, self.cfg)
        self.engines = engines or {}
        self.llm_client = llm_client if llm_client is not None else make_llm_client(self.cfg)
        self.queue: "queue.Queue[Optional[str]]" = queue.Queue()
        self.workers: list[threading.Thread] = []
        self._stopping = threading.Event()

    # -- worker pool --------------------------------------------------------

    def start(self, workers: Optional[int] = None) -> None:
        count = workers or self.cfg.workers
        self._stopping.clear()
        for i in range(count):
            t = threading.Thread(target=self._worker_loop, name=f"worker-{i}", daemon=True)
            t.start()
            self.workers.append(t)

    def stop(self) -> None:
        """Graceful shutdown: drain in-flight jobs, then stop workers."""
        self._stopping.set()
        for _ in self.workers:
            self.queue.put(None)
        for t in self.workers:
            t.join(timeout=30)
        self.workers.clear()

    def submit(self, filename: str, data: bytes) -> JobRecord:
        job = self.store.create_job(filename, data)
        self.queue.put(job.id)
        return job

    def _worker_loop(self) -> None:
        while True:
            job_id = self.queue.get()
            if job_id is None:
                return
            try:
                self._process_job(job_id)
            except Exception:
                logger.exception("worker crashed on job %s", job_id)
            finally:
                self.queue.task_done()

    def _process_job(self, job_id: str) -> None:
        store = self.store
        job = store.get(job_id)
        try:
            doc = RawDocument.from_bytes(store.raw_bytes(job), job.filename)
            result = process_document(
                doc, self.cfg,
                llm_client=self.llm_client,
                engines=self.engines,
                dedup_index=store.dedup,
                vendor_history=store.vendors,
                audit=store.audit,
                audit_subject=job.id,
                commit=False,
            )
            invoice = result.invoice
            store.transition(job_id, "preprocessed")
            store.transition(job_id, "extracted")
            store.transition(job_id, "validated")
            if invoice.status is InvoiceStatus.REJECTED_DUPLICATE:
                store.transition(job_id, "rejected_duplicate", invoice)
            elif invoice.status is InvoiceStatus.NEEDS_REVIEW:
                store.transition(job_id, "needs_review", invoice)
            else:
                store.transition(job_id, "exported", invoice)
        except Exception as exc:
            logger.warning("job %s failed: %s", job_id, exc)
            try:
                store.transition(job_id, "failed", error=f"{type(exc).__name__}: {exc}")
            except InvoiceFlowError:
                logger.exception("could not mark job %s failed", job_id)

    # -- views ----------------------------------------------------------------

    def job_view(self, job: JobRecord) -> dict:
        view = {
            "job_id": job.id,
            "state": job.state,
            "filename": job.filename,
            "raw_hash": job.raw_hash,
            "revision": job.revision,
            "error": job.error,
            "transitions": job.transitions,
            "invoice": None,
            "validation_report": None,
        }
        if job.invoice:
            from .store import invoice_from_state

            inv = invoice_from_state(job.invoice)
            view["invoice"] = invoice_to_dict(inv)
            view["validation_report"] = view["invoice"].pop("validation_report")
        return view

    def queue_view(self, limit: Optional[int] = None) -> list[dict]:
        items = []
        for job in self.store.review_queue(limit):
            inv = job.invoice
            vendor = (inv["fields"].get("vendor_name") or {}).get("raw")
            total = (inv["fields"].get("total_amount") or {}).get("raw")
            items.append({
                "job_id": job.id,
                "vendor": vendor,
                "total": total,
                "overall_confidence": inv["overall_confidence"],
                "revision": job.revision,
                "filename": job.filename,
            })
        return items


def _error_payload(code: str, message: str, field: Optional[str] = None) -> dict:
    err: dict = {"code": code, "message": message}
    if field:
        err["field"] = field
    return {"error": err}


def create_app(service: Service, ui_dir: Optional[str | Path] = None) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        service.start()
        yield
        service.stop()

    app = FastAPI(title="invoiceflow", lifespan=lifespan)

    async def check_auth(request: Request):
        token = service.cfg.api_token
        if not token:
            return
        supplied = request.headers.get("Authorization", "")
        if supplied != f"Bearer {token}":
            raise InvoiceFlowError("unauthorized")

    @app.exception_handler(InvoiceFlowError)
    async def invoiceflow_error(request: Request, exc: InvoiceFlowError):
        name = type(exc).__name__
        if str(exc) == "unauthorized":
            return JSONResponse(_error_payload("Unauthorized", "bad or missing token"),
                                status_code=401)
        status = _ERROR_STATUS.get(name, 500)
        field = getattr(exc, "field_name", None)
        return JSONResponse(_error_payload(name, str(exc), field), status_code=status)

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.post("/v1/invoices", status_code=202, dependencies=[Depends(check_auth)])
    async def upload(request: Request, file: Optional[UploadFile] = None):
        if file is not None:
            data = await file.read()
            filename = file.filename or "upload"
        else:
            try:
                body = await request.json()
            except Exception:
                return JSONResponse(
                    _error_payload("BadRequest", "expected multipart file or JSON body"),
                    status_code=400)
            try:
                data = base64.b64decode(body["content_base64"], validate=True)
            except (KeyError, binascii.Error) as exc:
                return JSONResponse(
                    _error_payload("BadRequest", f"bad content_base64: {exc}"),
                    status_code=400)
            filename = body.get("filename", "upload")
        if len(data) < 8:
            return JSONResponse(
                _error_payload("BadRequest", "document shorter than 8 bytes"),
                status_code=400)
        job = service.submit(filename, data)
        return {"job_id": job.id}

    @app.get("/v1/invoices/{job_id}", dependencies=[Depends(check_auth)])
    async def get_job(job_id: str):
        return service.job_view(service.store.get(job_id))

    @app.get("/v1/invoices/{job_id}/audit", dependencies=[Depends(check_auth)])
    async def get_audit(job_id: str):
        job = service.store.get(job_id)
        events = service.store.audit.events(subject=job.id)
        return {"job_id": job.id, "events": [
            {"timestamp": e.timestamp, "actor": e.actor, "action": e.action,
             "before": e.before, "after": e.after} for e in events]}

    @app.get("/v1/invoices/{job_id}/page/{page}.png", dependencies=[Depends(check_auth)])
    async def get_page(job_id: str, page: int):
        job = service.store.get(job_id)
        data = service.store.raw_bytes(job)
        try:
            doc = RawDocument.from_bytes(data, job.filename)
            if doc.format == "png" and page == 0:
                return Response(content=data, media_type="image/png")
            pages = rasterize(doc, service.cfg.target_dpi, service.cfg.rasterizer_cmd)
            if page >= len(pages):
                raise UnknownJob(f"no page {page}")
            img = pages[page]
            return Response(content=write_png(img.pixels, dpi=img.dpi),
                            media_type="image/png")
        except InvoiceFlowError as exc:
            return JSONResponse(
                _error_payload("PageUnavailable", str(exc)), status_code=404)

    @app.get("/v1/review/queue", dependencies=[Depends(check_auth)])
    async def review_queue(limit: Optional[int] = None):
        return {"items": service.queue_view(limit)}

    @app.post("/v1/review/{job_id}/corrections", dependencies=[Depends(check_auth)])
    async def post_corrections(job_id: str, body: dict):
        corrections = [
            Correction(field=c.get("field"), new_value=str(c.get("new_value", "")),
                       note=c.get("note"))
            for c in body.get("corrections", [])
        ]
        if not corrections:
            return JSONResponse(
                _error_payload("BadRequest", "no corrections supplied"), status_code=400)
        reviewer = body.get("reviewer", "reviewer")
        revision = body.get("revision")
        job, invoice = service.store.apply_correction(
            job_id, corrections, reviewer, revision)
        return service.job_view(job)

    @app.get("/v1/export", dependencies=[Depends(check_auth)])
    async def export(format: str = "json", status: Optional[str] = None):
        statuses = set(status.split(",")) if status else None
        invoices = service.store.invoices(statuses)
        if format == "csv":
            return Response(content=to_csv(invoices), media_type="text/csv",
                            headers={"Content-Disposition": "attachment; filename=invoices.csv"})
        if format == "xlsx":
            import tempfile

            with tempfile.NamedTemporaryFile(suffix=".xlsx") as tmp:
                to_xlsx(invoices, tmp.name)
                payload = Path(tmp.name).read_bytes()
            return Response(
                content=payload,
                media_type="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet",
                headers={"Content-Disposition": "attachment; filename=invoices.xlsx"})
        if format == "json":
            payload = canonical_dumps([invoice_to_dict(inv) for inv in invoices])
            return Response(content=payload, media_type="application/json")
        return JSONResponse(
            _error_payload("BadRequest", f"unknown format {format}"), status_code=400)

    resolved_ui = Path(ui_dir) if ui_dir else _default_ui_dir()
    if resolved_ui and resolved_ui.is_dir():
        app.mount("/ui", StaticFiles(directory=str(resolved_ui), html=True), name="ui")

    return app


def _default_ui_dir() -> Optional[Path]:
    candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    return candidate if candidate.is_dir() else None
