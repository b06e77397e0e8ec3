import json
from pathlib import Path

import pytest

from invoiceflow.corpus import gen_corpus
from invoiceflow.ingest import RawDocument, extract_embedded_text
from invoiceflow.llm import build_prompt, prompt_hash
from invoiceflow.model import FIELD_DESCRIPTIONS, PipelineConfig
from invoiceflow.pipeline import document_text


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory) -> Path:
    """Six clean invoices with bitmaps; shared read-only across tests."""
    root = tmp_path_factory.mktemp("corpus-small")
    gen_corpus(seed=42, n=6, out_dir=root)
    return root


@pytest.fixture()
def small_cfg(small_corpus) -> PipelineConfig:
    return PipelineConfig(llm_fixture_dir=str(small_corpus / "fixtures"))


def corpus_prompt(corpus_dir: Path, fixture_id: str) -> str:
    doc = RawDocument.from_path(corpus_dir / fixture_id / "invoice.pdf")
    pages = extract_embedded_text(doc, dpi=300)
    return build_prompt(document_text(pages).text, FIELD_DESCRIPTIONS)


def corrupt_fixture(corpus_dir: Path, fixture_id: str, **field_overrides) -> None:
    """Rewrite an invoice's replay fixture with tampered field values."""
    prompt = corpus_prompt(corpus_dir, fixture_id)
    path = corpus_dir / "fixtures" / f"{prompt_hash(prompt)}.txt"
    raw = path.read_text(encoding="utf-8")
    body = raw
    fenced = body.startswith("```")
    if fenced:
        body = "\n".join(body.splitlines()[1:-1])
    data = json.loads(body)
    data.update(field_overrides)
    out = json.dumps(data, indent=1)
    path.write_text(f"```json\n{out}\n```" if fenced else out, encoding="utf-8")
