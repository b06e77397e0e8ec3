"""Batch extraction over a synthetic corpus with replay LLM fixtures.

Generates 20 invoices, runs the full embedded-text pipeline on each, scores
the run against ground truth and writes xlsx/csv/json exports.
"""

import tempfile
from pathlib import Path

from invoiceflow.corpus import corpus_ids, gen_corpus, score_run
from invoiceflow.export import write_output
from invoiceflow.model import CanonicalField, PipelineConfig
from invoiceflow.pipeline import make_llm_client, process_path

with tempfile.TemporaryDirectory() as tmp:
    corpus = Path(tmp) / "corpus"
    gen_corpus(seed=21, n=20, out_dir=corpus, render_png=False)
    cfg = PipelineConfig(llm_fixture_dir=str(corpus / "fixtures"))
    client = make_llm_client(cfg)

    invoices = []
    for fid in corpus_ids(corpus):
        result = process_path(corpus / fid / "invoice.pdf", cfg, llm_client=client)
        inv = result.invoice
        invoices.append(inv)
        number = inv.normalized(CanonicalField.INVOICE_NUMBER)
        total = inv.normalized(CanonicalField.TOTAL_AMOUNT)
        print(f"{fid}: {number:<14} {str(total):>16} "
              f"{inv.status.value:<13} conf={inv.overall_confidence:.3f} "
              f"({result.duration_ms:.1f} ms)")

    out = Path(tmp) / "out"
    out.mkdir()
    for name in ("invoices.xlsx", "invoices.csv", "invoices.json"):
        write_output(invoices, out / name)
        print("wrote", name, (out / name).stat().st_size, "bytes")

    print("\nscoring the run against ground truth:")
    metrics = score_run(corpus, cfg)
    print(f"  required-field accuracy: {metrics.micro_required_accuracy:.4f}")
    print(f"  invoice accuracy:        {metrics.invoice_accuracy:.4f}")
    print(f"  intervention rate:       {metrics.intervention_rate:.4f}")
    print(f"  latency p50/p95:         {metrics.latency_ms['p50']:.1f}/"
          f"{metrics.latency_ms['p95']:.1f} ms")
