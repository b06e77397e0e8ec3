"""Command-line entry points: batch processing and the REST service."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from .export import write_output
from .ingest import RawDocument
from .model import DatePolicy, InvoiceFlowError, InvoiceStatus, PipelineConfig
from .ocr import ExternalProcessEngine
from .pipeline import make_llm_client, process_document
from .validate import AuditLog, DedupIndex, VendorHistory

logger = logging.getLogger("invoiceflow")


def _load_config(path: Optional[str]) -> PipelineConfig:
    cfg = PipelineConfig()
    if not path:
        return cfg
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(data) - known
    if unknown:
        raise InvoiceFlowError(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(**data)


def _collect_inputs(inputs: list[str]) -> list[Path]:
    files: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files.extend(sorted(q for q in p.iterdir() if q.is_file()))
        elif p.is_file():
            files.append(p)
        else:
            raise InvoiceFlowError(f"input path not found: {item}")
    return files


def _apply_llm_flag(cfg: PipelineConfig, flag: Optional[str]) -> PipelineConfig:
    if not flag:
        return cfg
    if flag == "live":
        return dataclasses.replace(cfg, llm_mode="live")
    if flag.startswith("replay:"):
        return dataclasses.replace(cfg, llm_mode="replay",
                                   llm_fixture_dir=flag.split(":", 1)[1])
    if flag == "none":
        return dataclasses.replace(cfg, llm_mode="replay", llm_fixture_dir=None)
    raise InvoiceFlowError(f"--llm must be live, replay:<dir> or none, got {flag!r}")


def cmd_process(args: argparse.Namespace) -> int:
    try:
        cfg = _load_config(args.config)
        if args.threshold is not None:
            cfg = dataclasses.replace(cfg, review_threshold=args.threshold)
        cfg = _apply_llm_flag(cfg, args.llm)
        if args.rasterizer_cmd:
            cfg = dataclasses.replace(cfg, rasterizer_cmd=args.rasterizer_cmd)
        if args.date_policy:
            cfg = dataclasses.replace(cfg, date_policy=DatePolicy(args.date_policy))
        cfg = dataclasses.replace(cfg, input_paths=tuple(args.input),
                                  output_path=args.out)
        files = _collect_inputs(args.input)
        if not files:
            raise InvoiceFlowError("no input files found")
        if cfg.llm_mode == "live" and not (cfg.llm_auth_key or os.environ.get("LLM_API_KEY")):
            raise InvoiceFlowError("MissingAuthKey: live LLM mode needs LLM_API_KEY")
        out_parent = Path(args.out).resolve().parent
        if not out_parent.is_dir():
            raise InvoiceFlowError(f"output directory does not exist: {out_parent}")
    except (InvoiceFlowError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    client = make_llm_client(cfg)
    engines = {}
    if args.ocr_cmd:
        engine = ExternalProcessEngine(args.ocr_cmd)
        engines[engine.id] = engine

    dedup = DedupIndex()
    history = VendorHistory()
    audit = AuditLog(Path(args.out).with_suffix(".audit.log")) if args.audit_log else None

    exported = []
    for path in files:
        try:
            result = process_document(
                RawDocument.from_path(path), cfg,
                llm_client=client, engines=engines,
                dedup_index=dedup, vendor_history=history, audit=audit)
        except Exception as exc:
            logger.error("skipping %s: %s: %s", path, type(exc).__name__, exc)
            continue
        invoice = result.invoice
        if invoice.status is InvoiceStatus.REJECTED_DUPLICATE:
            logger.warning("duplicate invoice rejected: %s", path)
            continue
        exported.append(invoice)
        logger.info("processed %s -> %s (confidence %.3f)", path,
                    invoice.status.value, invoice.overall_confidence)

    if not exported:
        print("No data extracted.")
        return 2
    try:
        write_output(exported, args.out)
    except InvoiceFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print("Processing complete.")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        cfg = _load_config(args.config)
        cfg = _apply_llm_flag(cfg, args.llm)
    except (InvoiceFlowError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    import uvicorn

    from .service import Service, create_app

    service = Service(args.store, cfg)
    app = create_app(service, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="invoiceflow",
        description="Automated invoice data extraction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("process", help="batch-process invoices to a structured file")
    p.add_argument("--input", nargs="+", required=True,
                   help="input files and/or directories")
    p.add_argument("--out", required=True,
                   help="output path; format by extension (.xlsx default, .csv, .json, .sql)")
    p.add_argument("--config", help="JSON config file (PipelineConfig fields)")
    p.add_argument("--llm", help="live | replay:<fixture-dir> | none")
    p.add_argument("--threshold", type=float, help="review threshold (0,1]")
    p.add_argument("--ocr-cmd", help="external OCR command template: {input} {output}")
    p.add_argument("--rasterizer-cmd",
                   help="PDF rasterizer template: {input} {dpi} {outdir}")
    p.add_argument("--date-policy", choices=["day_first", "month_first"])
    p.add_argument("--audit-log", action="store_true",
                   help="write an audit trail next to the output file")
    p.set_defaults(func=cmd_process)

    s = sub.add_parser("serve", help="run the REST service")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--store", required=True, help="persistent store directory")
    s.add_argument("--config", help="JSON config file")
    s.add_argument("--llm", help="live | replay:<fixture-dir> | none")
    s.add_argument("--ui-dir", help="directory of review-UI static assets")
    s.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
