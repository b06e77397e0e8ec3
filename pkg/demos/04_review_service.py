"""The human-review loop against the REST service.

Corrupts one replay fixture so the invoice fails its TOTAL check and lands
in the review queue, then fixes it through the corrections endpoint and
shows the audit trail.
"""

import json
import tempfile
import time
from pathlib import Path

from fastapi.testclient import TestClient

from invoiceflow.corpus import gen_corpus, load_truth
from invoiceflow.ingest import RawDocument, extract_embedded_text
from invoiceflow.llm import build_prompt, prompt_hash
from invoiceflow.model import FIELD_DESCRIPTIONS, PipelineConfig
from invoiceflow.pipeline import document_text
from invoiceflow.service import Service, create_app


def corrupt_total(corpus: Path, fid: str, bad_total: str) -> None:
    doc = RawDocument.from_path(corpus / fid / "invoice.pdf")
    prompt = build_prompt(document_text(extract_embedded_text(doc, dpi=300)).text,
                          FIELD_DESCRIPTIONS)
    path = corpus / "fixtures" / f"{prompt_hash(prompt)}.txt"
    raw = path.read_text(encoding="utf-8")
    body = raw.strip("`").lstrip("json\n") if raw.startswith("```") else raw
    data = json.loads(body)
    data["total_amount"] = bad_total
    path.write_text(json.dumps(data, indent=1), encoding="utf-8")


with tempfile.TemporaryDirectory() as tmp:
    corpus = Path(tmp) / "corpus"
    gen_corpus(seed=33, n=1, out_dir=corpus, render_png=False)
    truth = load_truth(corpus, "inv0000")
    corrupt_total(corpus, "inv0000", "9999.99")

    cfg = PipelineConfig(llm_fixture_dir=str(corpus / "fixtures"))
    service = Service(Path(tmp) / "store", cfg)
    with TestClient(create_app(service)) as client:
        pdf = (corpus / "inv0000" / "invoice.pdf").read_bytes()
        job_id = client.post(
            "/v1/invoices",
            files={"file": ("inv0000.pdf", pdf, "application/pdf")}).json()["job_id"]
        while client.get(f"/v1/invoices/{job_id}").json()["state"] not in (
                "needs_review", "exported", "failed"):
            time.sleep(0.02)

        queue = client.get("/v1/review/queue").json()["items"]
        print("review queue:", [(i["vendor"], i["overall_confidence"]) for i in queue])

        view = client.get(f"/v1/invoices/{job_id}").json()
        failing = [c for c in view["validation_report"] if not c["passed"]]
        print("failing checks:", [c["id"] for c in failing])

        good_total = truth["fields"]["total_amount"]
        print(f"submitting correction: total_amount -> {good_total}")
        fixed = client.post(f"/v1/review/{job_id}/corrections", json={
            "reviewer": "demo-user",
            "revision": view["revision"],
            "corrections": [{"field": "total_amount", "new_value": good_total}],
        }).json()
        print("job state:", fixed["state"], "| invoice status:",
              fixed["invoice"]["status"])

        print("\naudit trail:")
        for event in client.get(f"/v1/invoices/{job_id}/audit").json()["events"]:
            line = f"  {event['timestamp']} {event['actor']:<10} {event['action']}"
            if event.get("before") or event.get("after"):
                line += f" ({event.get('before')} -> {event.get('after')})"
            print(line)
