"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete.
"""

import dataclasses
import json
import os
import random
import shutil
import string
import subprocess
import sys
import time
from decimal import Decimal
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from invoiceflow.corpus import (
    char_accuracy,
    corpus_ids,
    gen_corpus,
    load_truth,
    score_run,
)
from invoiceflow.ingest import RawDocument, rasterize
from invoiceflow.llm import Unrepairable, repair_json
from invoiceflow.model import (
    CanonicalField,
    LineItem,
    Money,
    PipelineConfig,
    money_format,
    money_parse,
)
from invoiceflow.ocr import ExternalProcessEngine, MockNoisyEngine
from invoiceflow.pipeline import document_text
from invoiceflow.preprocess import (
    PageImage,
    binarize_otsu,
    estimate_skew_hough,
    preprocess_adaptive,
    rotate,
)
from invoiceflow.store import ALLOWED_TRANSITIONS, JobStore
from invoiceflow.validate import DedupIndex, check_arithmetic_values, normalize_weight


def report(criterion: str, passed: bool, detail: str) -> None:
    print(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    assert passed, f"{criterion}: {detail}"


@pytest.fixture(scope="session")
def corpus100(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("corpus-100")
    gen_corpus(seed=100, n=100, out_dir=root, render_png=False)
    return root


@pytest.fixture(scope="session")
def degraded50(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("corpus-degraded-50")
    gen_corpus(seed=500, n=50, out_dir=root,
               degradation={"skew": 3.0, "noise": 0.05}, png_dpi=120)
    return root


@pytest.fixture(scope="session")
def run100(corpus100):
    cfg = PipelineConfig(llm_fixture_dir=str(corpus100 / "fixtures"))
    start = time.perf_counter()
    result = score_run(corpus100, cfg)
    elapsed = time.perf_counter() - start
    return result, elapsed


class TestEndToEnd:
    def test_field_accuracy_and_runtime(self, run100):
        metrics, elapsed = run100
        acc = metrics.micro_required_accuracy
        report("end-to-end required-field accuracy >= 0.95 (target 0.97)",
               acc >= 0.95,
               f"accuracy={acc:.4f} on {metrics.invoices} invoices")
        report("end-to-end runtime <= 60 s",
               elapsed <= 60.0, f"runtime={elapsed:.2f}s")

    def test_intervention_rate(self, run100):
        metrics, _ = run100
        rate = metrics.intervention_rate
        report("intervention rate <= 0.20 at review threshold 0.85",
               rate <= 0.20, f"rate={rate:.3f}")

    def test_latency_median(self, run100):
        metrics, _ = run100
        p50 = metrics.latency_ms["p50"]
        report("median per-invoice latency <= 2 s (embedded+replay)",
               p50 <= 2000.0, f"p50={p50:.1f}ms p95={metrics.latency_ms['p95']:.1f}ms")


class TestDegradedCharAccuracy:
    def test_mock_noisy_floor(self, degraded50):
        engine = MockNoisyEngine(degraded50, rate=0.03, seed=17)
        scores = []
        for fid in corpus_ids(degraded50):
            truth = load_truth(degraded50, fid)
            doc = RawDocument.from_path(degraded50 / fid / "page.png")
            [img] = rasterize(doc)
            result = preprocess_adaptive(img, target_dpi=truth["png_dpi"])
            assert "deskew" in result.applied
            assert "denoise_median" in result.applied
            tokens = engine.recognize(result.image)
            hyp = document_text([tokens]).text
            scores.append(char_accuracy(truth["full_text"], hyp))
        mean = sum(scores) / len(scores)
        report("degraded-path char accuracy >= 0.92 "
               "(3 deg skew + 5% salt, noisy engine at 0.03)",
               mean >= 0.92, f"mean={mean:.4f} over {len(scores)} bitmaps")

    @pytest.mark.skipif(not os.environ.get("INVOICEFLOW_OCR_CMD"),
                        reason="no external OCR command configured")
    def test_real_engine_floor(self, degraded50):
        engine = ExternalProcessEngine(os.environ["INVOICEFLOW_OCR_CMD"], "external")
        scores = []
        for fid in corpus_ids(degraded50):
            truth = load_truth(degraded50, fid)
            doc = RawDocument.from_path(degraded50 / fid / "page.png")
            [img] = rasterize(doc)
            result = preprocess_adaptive(img, target_dpi=truth["png_dpi"])
            tokens = engine.recognize(result.image)
            hyp = document_text([tokens]).text
            scores.append(char_accuracy(truth["full_text"], hyp))
        mean = sum(scores) / len(scores)
        report("degraded-path char accuracy >= 0.90 (external OCR engine)",
               mean >= 0.90, f"mean={mean:.4f}")


class TestPropertySuites:
    def test_otsu_equals_brute_force(self):
        from test_preprocess import brute_force_otsu

        rng = np.random.default_rng(1234)
        checked = 0
        for _ in range(200):
            shape = (rng.integers(8, 48), rng.integers(8, 48))
            if rng.random() < 0.5:
                px = rng.integers(0, 256, size=shape, dtype=np.uint8)
            else:
                lo, hi = sorted(rng.integers(0, 256, size=2))
                px = rng.integers(lo, hi + 1, size=shape, dtype=np.uint8)
            _, t, degenerate = binarize_otsu(PageImage(px, 150))
            if degenerate:
                continue
            assert t == brute_force_otsu(px)
            checked += 1
        report("Otsu equals exhaustive 256-threshold sweep on >= 200 images",
               checked >= 195, f"{checked} non-degenerate images checked")

    def test_deskew_recovery(self, small_corpus):
        angles = [-10.0, -5.0, -2.0, -0.5, 0.5, 2.0, 5.0, 10.0]
        pages = []
        for fid in corpus_ids(small_corpus)[:5]:
            doc = RawDocument.from_path(small_corpus / fid / "page.png")
            [img] = rasterize(doc)
            pages.append(img)
        total = hits = 0
        worst = 0.0
        for page in pages:
            for theta in angles:
                estimate = estimate_skew_hough(rotate(page, theta))
                err = abs(estimate - theta)
                worst = max(worst, err)
                total += 1
                hits += err <= 0.5
        rate = hits / total
        report("deskew recovery |est-true| <= 0.5 deg on >= 95% of pages",
               rate >= 0.95, f"hit rate={rate:.3f} worst error={worst:.2f} deg")

    def test_arithmetic_oracle_1000(self):
        rng = random.Random(2024)

        def half_up(fr: Fraction) -> int:
            floor = fr.numerator // fr.denominator
            return floor + (1 if fr - floor >= Fraction(1, 2) else 0)

        for trial in range(1000):
            items = []
            for i in range(rng.randint(1, 6)):
                qty = (Fraction(rng.randint(1, 95), 10) if rng.random() < 0.3
                       else Fraction(rng.randint(1, 9)))
                unit = rng.randint(1, 10**9)
                amount = half_up(qty * unit)
                if rng.random() < 0.15:
                    amount += rng.choice([-9, -2, 2, 9])
                items.append(LineItem(
                    f"item{i}", Decimal(qty.numerator) / qty.denominator,
                    Money(unit, "USD"), Money(amount, "USD")))
            subtotal = sum(it.amount.minor_units for it in items)
            if rng.random() < 0.15:
                subtotal += rng.choice([-30, 30])
            rate = Fraction(rng.choice([5, 8, 10, 18, 25]), 100)
            tax = half_up(rate * subtotal)
            if rng.random() < 0.15:
                tax += rng.choice([-4, 4])
            discount = rng.randint(0, 10**4)
            total = subtotal + tax - discount
            if rng.random() < 0.15:
                total += rng.choice([-2, 2])

            values = {
                CanonicalField.SUBTOTAL: Money(subtotal, "USD"),
                CanonicalField.TAX_AMOUNT: Money(tax, "USD"),
                CanonicalField.DISCOUNT_AMOUNT: Money(discount, "USD"),
                CanonicalField.TOTAL_AMOUNT: Money(total, "USD"),
                CanonicalField.TAX_RATE: Decimal(rate.numerator) / rate.denominator,
            }
            got = check_arithmetic_values(values, items)

            line_ok = all(
                abs(half_up(Fraction(it.quantity * it.unit_price.minor_units))
                    - it.amount.minor_units) <= 1 for it in items)
            sub_ok = abs(sum(it.amount.minor_units for it in items) - subtotal) <= len(items)
            tax_ok = abs(half_up(rate * subtotal) - tax) <= 1
            total_ok = abs(subtotal + tax - discount - total) <= 1
            assert got.check("LINE_MATH").passed == line_ok, trial
            assert got.check("SUBTOTAL").passed == sub_ok, trial
            assert got.check("TAX").passed == tax_ok, trial
            assert got.check("TOTAL").passed == total_ok, trial
        report("arithmetic checks equal integer recomputation oracle",
               True, "1000 randomized invoices incl. seeded failures")

    def test_weight_factors_exact(self):
        for value in ["0", "1", "2.5", "3", "7.25", "9999.99"]:
            v = Decimal(value)
            assert normalize_weight(f"{value} qtl") == v * 100
            assert normalize_weight(f"{value} ton") == v * 1000
            assert normalize_weight(f"{value} kg") == v
        report("weight normalization factors exact",
               True, "qtl x100, ton x1000, kg x1")

    def test_repair_json_fuzz(self):
        rng = random.Random(99)
        alphabet = string.printable + "{}[]\"'," * 4
        seeds = ['{"a": 1}', '{"items": [1, 2]}', '```json\n{"x": null}\n```',
                 "{'k': 'v'}", '{"a": 1,}', "no json here"]
        crashes = 0
        for i in range(100_000):
            if i % 3 == 0:
                base = list(rng.choice(seeds))
                for _ in range(rng.randint(0, 4)):
                    pos = rng.randrange(len(base))
                    base[pos] = rng.choice(alphabet)
                raw = "".join(base)
            else:
                raw = "".join(rng.choice(alphabet)
                              for _ in range(rng.randint(0, 48)))
            try:
                fixed = repair_json(raw)
                json.loads(fixed)  # output must be strict
                assert repair_json(fixed) == fixed  # idempotent
            except Unrepairable:
                pass
            except Exception:
                crashes += 1
        valid = '{"a": [1, {"b": null}], "c": "x"}'
        assert repair_json(valid) == valid
        report("repair_json idempotent, identity-on-valid, 1e5-input fuzz",
               crashes == 0, f"{crashes} undefined errors in 100000 inputs")

    def test_dedup_idempotent_order_insensitive(self):
        rng = random.Random(4)
        pairs = [("".join(rng.choices("0123456789abcdef", k=64)),
                  "".join(rng.choices("0123456789abcdef", k=64)))
                 for _ in range(64)]
        a, b = DedupIndex(), DedupIndex()
        for rh, lh in pairs * 2:
            a.insert(rh, lh)
        shuffled = list(pairs)
        rng.shuffle(shuffled)
        for rh, lh in shuffled:
            b.insert(rh, lh)
        ok = (a.raw_hashes == b.raw_hashes
              and a.canonical_hashes == b.canonical_hashes
              and len(a.raw_hashes) == 64)
        report("dedup index idempotent and order-insensitive", ok,
               f"{len(a.raw_hashes)} raw hashes after duplicate inserts")

    def test_money_round_trip_range(self):
        rng = random.Random(6)
        samples = [rng.randint(-10**12, 10**12) for _ in range(20_000)]
        samples += [-10**12, -101, -100, -1, 0, 1, 99, 100, 10**12]
        for minor in samples:
            m = Money(minor, "USD")
            assert money_parse(money_format(m), "USD") == m
        report("money parse/format round-trip over [-1e12, 1e12]",
               True, f"{len(samples)} values")

    def test_csv_xlsx_reparse_exact(self, tmp_path, run100, corpus100):
        import csv as csv_mod
        import io

        from test_export import reparse_xlsx

        from invoiceflow.export import DEFAULT_SCHEMA, to_csv, to_xlsx
        from invoiceflow.model import PipelineConfig
        from invoiceflow.pipeline import make_llm_client, process_path

        cfg = PipelineConfig(llm_fixture_dir=str(corpus100 / "fixtures"))
        client = make_llm_client(cfg)
        invoices = [process_path(corpus100 / fid / "invoice.pdf", cfg,
                                 llm_client=client).invoice
                    for fid in corpus_ids(corpus100)[:10]]

        csv_text = to_csv(invoices)
        rows = list(csv_mod.reader(io.StringIO(csv_text)))
        from invoiceflow.export import _cell_value

        expected = [list(DEFAULT_SCHEMA.columns)]
        for inv in invoices:
            expected.append(["" if _cell_value(inv, c) is None else str(_cell_value(inv, c))
                             for c in DEFAULT_SCHEMA.columns])
        csv_ok = rows == expected

        out = tmp_path / "acc.xlsx"
        to_xlsx(invoices, out)
        _, grid = reparse_xlsx(out)
        xlsx_ok = len(grid) == len(invoices) + 1
        for inv, row in zip(invoices, grid[1:]):
            total = inv.fields.get(CanonicalField.TOTAL_AMOUNT)
            col = chr(ord("A") + DEFAULT_SCHEMA.columns.index("total_amount"))
            if total and isinstance(total.normalized, Money):
                cell = row.get(col)
                want = Decimal(total.normalized.minor_units) / 100
                xlsx_ok = xlsx_ok and cell is not None and Decimal(cell[1]) == want
        report("CSV and XLSX outputs re-parse to the exact source grid",
               csv_ok and xlsx_ok, f"{len(invoices)} invoices round-tripped")

    def test_job_state_machine_replay(self, tmp_path, small_corpus, small_cfg):
        from test_store import run_store_job

        store = JobStore(tmp_path / "store", small_cfg)
        for fid in corpus_ids(small_corpus)[:4]:
            run_store_job(store, small_corpus, fid, small_cfg)
        # also a failure path
        bad = store.create_job("bad.pdf", b"%PDF-1.4 truncated")
        store.transition(bad.id, "failed", error="CorruptPdf")
        illegal = 0
        for job in store.jobs():
            states = [t["state"] for t in job.transitions]
            for a, b in zip(states, states[1:]):
                if b not in ALLOWED_TRANSITIONS[a]:
                    illegal += 1
        report("job state machine replay shows no illegal transitions",
               illegal == 0, f"{len(store.jobs())} jobs replayed")

    def test_kill_and_restart_loses_nothing(self, tmp_path, small_corpus, small_cfg):
        from test_store import run_store_job

        from invoiceflow.model import InvoiceStatus

        root = tmp_path / "store"
        store = JobStore(root, small_cfg)
        accepted, _ = run_store_job(store, small_corpus, "inv0000", small_cfg)
        store.create_job("inflight.pdf",
                         (small_corpus / "inv0001" / "invoice.pdf").read_bytes())
        # "kill": drop the instance, reopen from disk.
        reopened = JobStore(root, small_cfg)
        survived = reopened.get(accepted.id)
        resubmit, inv = run_store_job(reopened, small_corpus, "inv0000", small_cfg)
        ok = (survived.state == "exported" and survived.invoice is not None
              and resubmit.state == "rejected_duplicate"
              and inv.status is InvoiceStatus.REJECTED_DUPLICATE)
        report("kill-and-restart loses no accepted invoice, duplicates none",
               ok, "accepted job survived; resubmit deduplicated")


class TestCliConformance:
    def _run_cli(self, args):
        return subprocess.run([sys.executable, "-m", "invoiceflow.cli", *args],
                              capture_output=True, text=True)

    def test_mixed_directory(self, tmp_path, corpus100):
        mixed = tmp_path / "mixed"
        mixed.mkdir()
        for fid in corpus_ids(corpus100)[:3]:
            shutil.copy(corpus100 / fid / "invoice.pdf", mixed / f"{fid}.pdf")
        (mixed / "imageonly.pdf").write_bytes(
            b"%PDF-1.4\n1 0 obj\n<< /Type /Catalog /Pages 2 0 R >>\nendobj\n"
            b"2 0 obj\n<< /Type /Pages /Kids [3 0 R] /Count 1 >>\nendobj\n"
            b"3 0 obj\n<< /Type /Page /Parent 2 0 R /MediaBox [0 0 612 792] >>\nendobj\n"
            b"trailer\n<< /Size 4 /Root 1 0 R >>\n%%EOF\n")
        (mixed / "corrupt.pdf").write_bytes(b"\x00\x01garbage" * 64)
        out = tmp_path / "batch.xlsx"
        proc = self._run_cli(["process", "--input", str(mixed), "--out", str(out),
                              "--llm", f"replay:{corpus100 / 'fixtures'}"])
        ok = (proc.returncode == 0
              and "Processing complete." in proc.stdout
              and out.exists()
              and "skipping" in proc.stderr
              and "corrupt.pdf" in proc.stderr)
        from test_export import reparse_xlsx

        _, grid = reparse_xlsx(out)
        ok = ok and len(grid) == 4  # header + 3 invoices
        report('CLI mixed directory: exit 0, xlsx written, "Processing complete.", '
               "corrupt file skipped with logged error",
               ok, f"exit={proc.returncode} rows={len(grid) - 1}")

    def test_all_corrupt_directory(self, tmp_path):
        bad = tmp_path / "allbad"
        bad.mkdir()
        (bad / "one.pdf").write_bytes(b"\xff\xfe junk" * 32)
        (bad / "two.pdf").write_bytes(b"\x00" * 256)
        out = tmp_path / "none.xlsx"
        proc = self._run_cli(["process", "--input", str(bad), "--out", str(out)])
        ok = proc.returncode == 2 and "No data extracted." in proc.stdout
        report('CLI all-corrupt directory: exit 2, "No data extracted."',
               ok, f"exit={proc.returncode}")

    def test_missing_auth_key_live_mode(self, tmp_path, corpus100, monkeypatch):
        monkeypatch.delenv("LLM_API_KEY", raising=False)
        src = corpus100 / "inv0000" / "invoice.pdf"
        proc = subprocess.run(
            [sys.executable, "-m", "invoiceflow.cli", "process",
             "--input", str(src), "--out", str(tmp_path / "x.xlsx"), "--llm", "live"],
            capture_output=True, text=True,
            env={k: v for k, v in os.environ.items() if k != "LLM_API_KEY"})
        ok = proc.returncode == 1 and "MissingAuthKey" in proc.stderr
        report("CLI live mode without auth key: exit 1 with MissingAuthKey",
               ok, f"exit={proc.returncode}")
