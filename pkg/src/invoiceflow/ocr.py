"""Pluggable OCR engines behind a confidence-gated cascade.

The cascade tries sources in plan order and accepts the first whose token
confidence clears its gate; the final step always accepts. Built-in mock
engines make the whole image path testable without any external program,
while ExternalProcessEngine shells out to a real OCR command.
"""

from __future__ import annotations

import logging
import random
import shlex
import statistics
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence

from .ingest import Token, write_png
from .model import InvoiceFlowError
from .preprocess import PageImage, QualityReport

logger = logging.getLogger(__name__)

__all__ = [
    "OcrEngine",
    "CascadePlan",
    "CascadeStep",
    "OcrTrace",
    "OcrAttempt",
    "NoEngineConfigured",
    "AllEnginesFailed",
    "select_plan",
    "run_cascade",
    "mean_confidence",
    "MockPerfectEngine",
    "MockNoisyEngine",
    "ExternalProcessEngine",
]

EMBEDDED_SOURCE = "embedded"


class NoEngineConfigured(InvoiceFlowError):
    pass


class AllEnginesFailed(InvoiceFlowError):
    pass


class OcrEngine(Protocol):
    id: str

    def recognize(self, img: PageImage) -> list[Token]: ...


@dataclass(frozen=True)
class CascadeStep:
    source: str          # "embedded" or an engine id
    gate: float          # min confidence metric required to stop here


@dataclass(frozen=True)
class CascadePlan:
    steps: tuple[CascadeStep, ...]

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("cascade plan must have at least one step")
        if self.steps[-1].gate != 0.0:
            raise ValueError("last cascade step must always accept (gate 0)")


@dataclass(frozen=True)
class OcrAttempt:
    source: str
    token_count: int
    mean_confidence: float
    accepted: bool
    elapsed_ms: float
    error: Optional[str] = None


@dataclass(frozen=True)
class OcrTrace:
    attempts: tuple[OcrAttempt, ...] = ()

    @property
    def accepted_source(self) -> Optional[str]:
        for a in self.attempts:
            if a.accepted:
                return a.source
        return None


def mean_confidence(tokens: Sequence[Token]) -> float:
    if not tokens:
        return 0.0
    return sum(t.confidence for t in tokens) / len(tokens)


def median_confidence(tokens: Sequence[Token]) -> float:
    if not tokens:
        return 0.0
    return float(statistics.median(t.confidence for t in tokens))


def select_plan(embedded_tokens: Sequence[Sequence[Token]],
                quality: Optional[QualityReport],
                engine_ids: Sequence[str],
                escalation_threshold: float = 0.80,
                embedded_min_chars_per_page: int = 32,
                low_quality_score: float = 0.40) -> CascadePlan:
    """Choose the recognition route for one document.

    A real text layer (enough characters per page) wins outright; otherwise
    the local engine runs first with the escalation engine behind it, and a
    low quality score promotes the escalation engine to the front.
    """
    page_count = max(1, len(embedded_tokens))
    chars = sum(len(t.text) for page in embedded_tokens for t in page)
    if chars / page_count >= embedded_min_chars_per_page:
        return CascadePlan((CascadeStep(EMBEDDED_SOURCE, 0.0),))

    if not engine_ids:
        raise NoEngineConfigured("image path requires at least one OCR engine")
    if len(engine_ids) == 1:
        return CascadePlan((CascadeStep(engine_ids[0], 0.0),))

    primary, secondary = engine_ids[0], engine_ids[1]
    if quality is not None and quality.score < low_quality_score:
        primary, secondary = secondary, primary
    return CascadePlan((
        CascadeStep(primary, escalation_threshold),
        CascadeStep(secondary, 0.0),
    ))


def run_cascade(plan: CascadePlan,
                pages: Sequence[PageImage],
                engines: dict[str, OcrEngine],
                embedded_tokens: Optional[Sequence[Sequence[Token]]] = None,
                metric: str = "mean") -> tuple[list[Token], OcrTrace]:
    """Execute the plan per document; the first step whose confidence metric
    clears its gate is accepted. Engine failures are recorded and skipped."""
    for step in plan.steps:
        if step.source != EMBEDDED_SOURCE and step.source not in engines:
            raise NoEngineConfigured(f"engine {step.source!r} not registered")
    measure = mean_confidence if metric == "mean" else median_confidence

    attempts: list[OcrAttempt] = []
    accepted: Optional[list[Token]] = None
    for step in plan.steps:
        start = time.perf_counter()
        try:
            if step.source == EMBEDDED_SOURCE:
                tokens = [t for page in (embedded_tokens or []) for t in page]
            else:
                engine = engines[step.source]
                tokens = []
                for page in pages:
                    tokens.extend(engine.recognize(page))
        except Exception as exc:
            elapsed = (time.perf_counter() - start) * 1000.0
            logger.warning("OCR source %s failed: %s", step.source, exc)
            attempts.append(OcrAttempt(step.source, 0, 0.0, False, elapsed, str(exc)))
            continue
        elapsed = (time.perf_counter() - start) * 1000.0
        conf = measure(tokens)
        ok = conf >= step.gate
        attempts.append(OcrAttempt(step.source, len(tokens), conf, ok, elapsed))
        if ok:
            accepted = tokens
            break
    if accepted is None:
        raise AllEnginesFailed(
            f"no cascade step accepted: {[a.source for a in attempts]}")
    return accepted, OcrTrace(tuple(attempts))


# ---------------------------------------------------------------------------
# Built-in engines
# ---------------------------------------------------------------------------

#: DPI the sidecar token boxes are expressed at (the corpus convention).
SIDECAR_DPI = 300


def _load_sidecar(img: PageImage, corpus_dir: Path) -> list[dict]:
    """Ground-truth tokens for a fixture page, addressed by the fixture id
    embedded in the image metadata. Boxes scale to the image's DPI."""
    import json

    fixture_id = img.meta.get("fixture_id")
    if not fixture_id:
        raise InvoiceFlowError("mock engine needs a fixture_id in image metadata")
    sidecar = corpus_dir / fixture_id / "truth.json"
    if not sidecar.is_file():
        raise InvoiceFlowError(f"no ground-truth sidecar at {sidecar}")
    data = json.loads(sidecar.read_text(encoding="utf-8"))
    scale = img.dpi / SIDECAR_DPI
    out = []
    for t in data["tokens"]:
        if t.get("page", 0) != img.page:
            continue
        x0, y0, x1, y1 = t["bbox"]
        out.append({"text": t["text"],
                    "bbox": (x0 * scale, y0 * scale, x1 * scale, y1 * scale)})
    return out


class MockPerfectEngine:
    """Deterministic test engine: emits the fixture's ground-truth tokens at
    confidence 1.0."""

    id = "mock-perfect"

    def __init__(self, corpus_dir: str | Path):
        self.corpus_dir = Path(corpus_dir)

    def recognize(self, img: PageImage) -> list[Token]:
        out = []
        for t in _load_sidecar(img, self.corpus_dir):
            out.append(Token(
                text=t["text"], bbox=tuple(t["bbox"]), page=img.page,
                confidence=1.0, source=f"ocr:{self.id}"))
        return out


#: Characters a corrupted glyph may turn into, chosen to mimic common OCR
#: digit/letter confusions.
_CORRUPTION_ALPHABET = "O0l1I5S8B2Z6GQDEA4U"


class MockNoisyEngine:
    """Seeded character corruption at a fixed rate; confidence = 1 - rate."""

    def __init__(self, corpus_dir: str | Path, rate: float = 0.05, seed: int = 0):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"rate must be in [0,1), got {rate}")
        self.corpus_dir = Path(corpus_dir)
        self.rate = rate
        self.seed = seed
        self.id = f"mock-noisy-{rate:g}"

    def recognize(self, img: PageImage) -> list[Token]:
        rng = random.Random(f"{self.seed}:{img.meta.get('fixture_id', '')}:{img.page}")
        conf = 1.0 - self.rate
        out = []
        for t in _load_sidecar(img, self.corpus_dir):
            chars = list(t["text"])
            for i, ch in enumerate(chars):
                if rng.random() < self.rate:
                    chars[i] = rng.choice(_CORRUPTION_ALPHABET)
            out.append(Token(
                text="".join(chars), bbox=tuple(t["bbox"]), page=img.page,
                confidence=conf, source=f"ocr:{self.id}"))
        return out


class ExternalProcessEngine:
    """Adapter for a real OCR program.

    The command template receives {input} and {output} paths; the program
    must write token TSV. Two layouts are accepted: this package's
    7-column form (page, x0, y0, x1, y1, conf 0-100, text) and the de-facto
    12-column OCR TSV with a header line starting "level" (left/top/width/
    height + conf + text), which the stock tesseract CLI emits.
    """

    def __init__(self, command: str, engine_id: str = "external"):
        self.command = command
        self.id = engine_id

    def recognize(self, img: PageImage) -> list[Token]:
        with tempfile.TemporaryDirectory(prefix="invoiceflow-ocr-") as tmp:
            src = Path(tmp) / "input.png"
            dst = Path(tmp) / "output.tsv"
            src.write_bytes(write_png(img.pixels, dpi=img.dpi))
            rendered = self.command.format(input=str(src), output=str(dst))
            proc = subprocess.run(shlex.split(rendered), capture_output=True)
            if proc.returncode != 0:
                raise InvoiceFlowError(
                    f"OCR command exited {proc.returncode}: "
                    f"{proc.stderr.decode(errors='replace')[:200]}")
            # Some OCR CLIs append their own extension to the output stem.
            if not dst.is_file() and (Path(tmp) / "output.tsv.tsv").is_file():
                dst = Path(tmp) / "output.tsv.tsv"
            if not dst.is_file():
                raise InvoiceFlowError("OCR command produced no TSV output")
            return self._parse_tsv(dst.read_text(encoding="utf-8"), img.page)

    def _parse_tsv(self, payload: str, page: int) -> list[Token]:
        lines = [ln for ln in payload.split("\n") if ln.strip()]
        if not lines:
            return []
        out: list[Token] = []
        if lines[0].split("\t")[0].strip().lower() == "level":
            header = [h.strip().lower() for h in lines[0].split("\t")]
            idx = {name: header.index(name) for name in
                   ("left", "top", "width", "height", "conf", "text")}
            for ln in lines[1:]:
                parts = ln.split("\t")
                if len(parts) < len(header):
                    continue
                text = parts[idx["text"]].strip()
                conf = float(parts[idx["conf"]])
                if not text or conf < 0:
                    continue
                x0, y0 = float(parts[idx["left"]]), float(parts[idx["top"]])
                w, h = float(parts[idx["width"]]), float(parts[idx["height"]])
                if w <= 0 or h <= 0:
                    continue
                out.append(Token(text, (x0, y0, x0 + w, y0 + h), page,
                                 min(1.0, max(0.0, conf / 100.0)),
                                 source=f"ocr:{self.id}"))
            return out
        for ln in lines:
            parts = ln.split("\t")
            if len(parts) < 7:
                continue
            pg, x0, y0, x1, y1, conf = (float(parts[0]), float(parts[1]),
                                        float(parts[2]), float(parts[3]),
                                        float(parts[4]), float(parts[5]))
            text = parts[6]
            if not text.strip() or x1 <= x0 or y1 <= y0:
                continue
            out.append(Token(text, (x0, y0, x1, y1), int(pg),
                             min(1.0, max(0.0, conf / 100.0)),
                             source=f"ocr:{self.id}"))
        return out
