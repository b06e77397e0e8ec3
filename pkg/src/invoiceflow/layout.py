"""Deterministic structural analysis of a token page.

Tokens cluster into lines and blocks, blocks get header/footer/body/table
regions, a spatial relation graph connects nearest neighbors, and a label
lexicon drives label-value linking. All thresholds live in this module and
can be overridden; they are deliberate, documented constants rather than
learned parameters.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from statistics import median
from typing import Optional, Sequence

from .ingest import Token
from .model import CanonicalField

__all__ = [
    "Line",
    "Block",
    "Edge",
    "LayoutGraph",
    "TableRegion",
    "LayoutLink",
    "PageText",
    "cluster_lines",
    "cluster_blocks",
    "classify_regions",
    "detect_tables",
    "build_graph",
    "link_label_value",
    "assemble_text",
    "analyze_page",
    "DEFAULT_LEXICON",
    "load_lexicon",
    "normalize_label",
]

# Clustering thresholds.
LINE_OVERLAP = 0.5          # vertical overlap vs shorter token height
BLOCK_GAP_FACTOR = 1.5      # max line gap in median line heights
BLOCK_SPAN_OVERLAP = 0.2    # min horizontal span overlap between lines
HEADER_BAND = 0.20          # top fraction of the page
FOOTER_BAND = 0.10          # bottom fraction of the page
GRAPH_Y_OVERLAP = 0.5       # right_of edge gate
GRAPH_X_OVERLAP = 0.3       # below edge gate
TABLE_MIN_ROWS = 3
TABLE_MIN_COLS = 3
TABLE_MIN_NUMERIC_COLS = 2
COLUMN_GAP_CHARS = 0.5      # min whitespace gap, in median char widths

BBox = tuple[float, float, float, float]


@dataclass(frozen=True)
class Line:
    token_ids: tuple[int, ...]
    bbox: BBox


@dataclass(frozen=True)
class Block:
    id: int
    token_ids: tuple[int, ...]
    lines: tuple[Line, ...]
    bbox: BBox
    region: str = "body"      # header | footer | body | table
    role: str = "unknown"     # label | value | mixed | unknown


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    relation: str             # right_of | below | left_of | above
    gap_px: float


@dataclass(frozen=True)
class LayoutGraph:
    nodes: tuple[int, ...]
    edges: tuple[Edge, ...]

    def neighbor(self, block_id: int, relation: str) -> Optional[Edge]:
        for e in self.edges:
            if e.src == block_id and e.relation == relation:
                return e
        return None


@dataclass(frozen=True)
class TableRegion:
    bbox: BBox
    rows: tuple[BBox, ...]
    columns: tuple[tuple[float, float], ...]
    cells: tuple[tuple[tuple[int, ...], ...], ...]
    block_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class LayoutLink:
    field: CanonicalField
    text: str
    block_id: int
    token_ids: tuple[int, ...]
    distance: float


def _union(bboxes: Sequence[BBox]) -> BBox:
    return (min(b[0] for b in bboxes), min(b[1] for b in bboxes),
            max(b[2] for b in bboxes), max(b[3] for b in bboxes))


def _v_overlap(a: BBox, b: BBox) -> float:
    return min(a[3], b[3]) - max(a[1], b[1])


def _h_overlap(a: BBox, b: BBox) -> float:
    return min(a[2], b[2]) - max(a[0], b[0])


class _DisjointSet:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def cluster_lines(tokens: Sequence[Token]) -> list[Line]:
    """Group tokens whose vertical overlap is at least half the shorter
    token's height; lines come back top-to-bottom, tokens left-to-right."""
    n = len(tokens)
    if n == 0:
        return []
    ds = _DisjointSet(n)
    boxes = [t.bbox for t in tokens]
    order = sorted(range(n), key=lambda i: boxes[i][1])
    for oi in range(n):
        i = order[oi]
        for oj in range(oi + 1, n):
            j = order[oj]
            if boxes[j][1] >= boxes[i][3]:
                break
            shorter = min(boxes[i][3] - boxes[i][1], boxes[j][3] - boxes[j][1])
            if shorter > 0 and _v_overlap(boxes[i], boxes[j]) >= LINE_OVERLAP * shorter:
                ds.union(i, j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(ds.find(i), []).append(i)
    lines = []
    for ids in groups.values():
        ids.sort(key=lambda i: (boxes[i][0], boxes[i][1]))
        lines.append(Line(tuple(ids), _union([boxes[i] for i in ids])))
    lines.sort(key=lambda ln: (ln.bbox[1], ln.bbox[0]))
    return lines


def cluster_blocks(lines: Sequence[Line]) -> list[Block]:
    """Merge consecutive lines separated by less than 1.5x the median line
    height when their horizontal spans overlap at least 20%."""
    if not lines:
        return []
    med_h = median(ln.bbox[3] - ln.bbox[1] for ln in lines)
    blocks: list[list[Line]] = []
    for ln in lines:
        if blocks:
            current = blocks[-1]
            cur_box = _union([l.bbox for l in current])
            gap = ln.bbox[1] - cur_box[3]
            span = _h_overlap(cur_box, ln.bbox)
            shorter = min(cur_box[2] - cur_box[0], ln.bbox[2] - ln.bbox[0])
            if gap < BLOCK_GAP_FACTOR * med_h and shorter > 0 and span >= BLOCK_SPAN_OVERLAP * shorter:
                current.append(ln)
                continue
        blocks.append([ln])
    out = []
    for bid, group in enumerate(blocks):
        ids = tuple(i for ln in group for i in ln.token_ids)
        out.append(Block(bid, ids, tuple(group), _union([ln.bbox for ln in group])))
    return out


def classify_regions(blocks: Sequence[Block], page_height: float) -> list[Block]:
    """Band-based header/footer labeling; table regions are set separately."""
    out = []
    for b in blocks:
        if b.region == "table":
            out.append(b)
            continue
        yc = (b.bbox[1] + b.bbox[3]) / 2.0
        if yc < HEADER_BAND * page_height:
            region = "header"
        elif yc > (1.0 - FOOTER_BAND) * page_height:
            region = "footer"
        else:
            region = "body"
        out.append(replace(b, region=region))
    return out


_NUMERIC_CELL = re.compile(r"^[\s$€£₹¥]*-?[\d.,]+%?\s*$")


def _median_char_width(tokens: Sequence[Token], ids: Sequence[int]) -> float:
    widths = []
    for i in ids:
        t = tokens[i]
        if t.text:
            widths.append((t.bbox[2] - t.bbox[0]) / len(t.text))
    return median(widths) if widths else 1.0


def _find_columns(tokens: Sequence[Token], lines: Sequence[Line],
                  char_w: float) -> Optional[list[tuple[float, float]]]:
    """Column x-spans via vertical whitespace gaps common to every line."""
    pad = COLUMN_GAP_CHARS * char_w / 2.0
    x_min = min(ln.bbox[0] for ln in lines)
    x_max = max(ln.bbox[2] for ln in lines)
    # Start with one open interval and subtract every token's padded span.
    gaps: list[tuple[float, float]] = [(x_min, x_max)]
    for ln in lines:
        for i in ln.token_ids:
            t0, t1 = tokens[i].bbox[0] - pad, tokens[i].bbox[2] + pad
            nxt: list[tuple[float, float]] = []
            for g0, g1 in gaps:
                if t1 <= g0 or t0 >= g1:
                    nxt.append((g0, g1))
                    continue
                if t0 > g0:
                    nxt.append((g0, t0))
                if t1 < g1:
                    nxt.append((t1, g1))
            gaps = nxt
            if not gaps:
                break
        if not gaps:
            break
    gaps = [(g0, g1) for g0, g1 in gaps if g1 - g0 >= COLUMN_GAP_CHARS * char_w]
    if len(gaps) < TABLE_MIN_COLS - 1:
        return None
    cuts = [x_min] + [g0 + (g1 - g0) / 2.0 for g0, g1 in sorted(gaps)] + [x_max]
    columns = [(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1)]
    return columns


def _try_table(tokens: Sequence[Token], lines: Sequence[Line]) -> Optional[
        tuple[list[tuple[float, float]], list[list[list[int]]]]]:
    if len(lines) < TABLE_MIN_ROWS:
        return None
    all_ids = [i for ln in lines for i in ln.token_ids]
    char_w = _median_char_width(tokens, all_ids)
    columns = _find_columns(tokens, lines, char_w)
    if columns is None or len(columns) < TABLE_MIN_COLS:
        return None

    grid: list[list[list[int]]] = []
    for ln in lines:
        row: list[list[int]] = [[] for _ in columns]
        for i in ln.token_ids:
            xc = (tokens[i].bbox[0] + tokens[i].bbox[2]) / 2.0
            for ci, (c0, c1) in enumerate(columns):
                if c0 <= xc <= c1:
                    row[ci].append(i)
                    break
            else:
                return None
        if sum(1 for cell in row if cell) < TABLE_MIN_COLS:
            return None
        grid.append(row)

    numeric_cols = 0
    for ci in range(len(columns)):
        texts = [" ".join(tokens[i].text for i in grid[ri][ci])
                 for ri in range(len(grid))]
        texts = [t for t in texts if t]
        if texts and sum(bool(_NUMERIC_CELL.match(t)) for t in texts) * 2 >= len(texts):
            numeric_cols += 1
    if numeric_cols < TABLE_MIN_NUMERIC_COLS:
        return None
    return columns, grid


def detect_tables(blocks: Sequence[Block], tokens: Sequence[Token]) -> list[TableRegion]:
    """Line-item grids: at least 3 consecutive lines sharing at least 3
    whitespace-separated columns, 2 of them numeric-majority."""
    tables = []
    for block in blocks:
        lines = block.lines
        found = None
        span = None
        for length in range(len(lines), TABLE_MIN_ROWS - 1, -1):
            for start in range(0, len(lines) - length + 1):
                candidate = lines[start: start + length]
                result = _try_table(tokens, candidate)
                if result is not None:
                    found = result
                    span = candidate
                    break
            if found:
                break
        if not found:
            continue
        columns, grid = found
        rows = tuple(ln.bbox for ln in span)
        cells = tuple(tuple(tuple(cell) for cell in row) for row in grid)
        tables.append(TableRegion(
            bbox=_union([ln.bbox for ln in span]),
            rows=rows,
            columns=tuple(columns),
            cells=cells,
            block_ids=(block.id,),
        ))
    return tables


def build_graph(blocks: Sequence[Block]) -> LayoutGraph:
    """Nearest-neighbor relations: one right_of / below edge per block,
    with materialized inverses."""
    edges: list[Edge] = []
    for a in blocks:
        best_right: Optional[tuple[float, int]] = None
        best_below: Optional[tuple[float, int]] = None
        for b in blocks:
            if a.id == b.id:
                continue
            shorter_h = min(a.bbox[3] - a.bbox[1], b.bbox[3] - b.bbox[1])
            if (b.bbox[0] >= a.bbox[2] and shorter_h > 0
                    and _v_overlap(a.bbox, b.bbox) >= GRAPH_Y_OVERLAP * shorter_h):
                gap = b.bbox[0] - a.bbox[2]
                if best_right is None or (gap, b.id) < best_right:
                    best_right = (gap, b.id)
            shorter_w = min(a.bbox[2] - a.bbox[0], b.bbox[2] - b.bbox[0])
            if (b.bbox[1] >= a.bbox[3] and shorter_w > 0
                    and _h_overlap(a.bbox, b.bbox) >= GRAPH_X_OVERLAP * shorter_w):
                gap = b.bbox[1] - a.bbox[3]
                if best_below is None or (gap, b.id) < best_below:
                    best_below = (gap, b.id)
        if best_right:
            gap, bid = best_right
            edges.append(Edge(a.id, bid, "right_of", gap))
            edges.append(Edge(bid, a.id, "left_of", gap))
        if best_below:
            gap, bid = best_below
            edges.append(Edge(a.id, bid, "below", gap))
            edges.append(Edge(bid, a.id, "above", gap))
    return LayoutGraph(tuple(b.id for b in blocks), tuple(edges))


# ---------------------------------------------------------------------------
# Label lexicon and linking
# ---------------------------------------------------------------------------

DEFAULT_LEXICON: dict[str, CanonicalField] = {
    "invoice no": CanonicalField.INVOICE_NUMBER,
    "invoice number": CanonicalField.INVOICE_NUMBER,
    "invoice num": CanonicalField.INVOICE_NUMBER,
    "invoice #": CanonicalField.INVOICE_NUMBER,
    "invoice": CanonicalField.INVOICE_NUMBER,
    "inv no": CanonicalField.INVOICE_NUMBER,
    "bill no": CanonicalField.INVOICE_NUMBER,
    "invoice date": CanonicalField.INVOICE_DATE,
    "date of issue": CanonicalField.INVOICE_DATE,
    "issue date": CanonicalField.INVOICE_DATE,
    "date": CanonicalField.INVOICE_DATE,
    "dated": CanonicalField.INVOICE_DATE,
    "due date": CanonicalField.DUE_DATE,
    "payment due": CanonicalField.DUE_DATE,
    "payable by": CanonicalField.DUE_DATE,
    "due": CanonicalField.DUE_DATE,
    "vendor": CanonicalField.VENDOR_NAME,
    "vendor name": CanonicalField.VENDOR_NAME,
    "supplier": CanonicalField.VENDOR_NAME,
    "seller": CanonicalField.VENDOR_NAME,
    "sold by": CanonicalField.VENDOR_NAME,
    "from": CanonicalField.VENDOR_NAME,
    "vendor address": CanonicalField.VENDOR_ADDRESS,
    "bill to": CanonicalField.BILLING_ADDRESS,
    "billed to": CanonicalField.BILLING_ADDRESS,
    "billing address": CanonicalField.BILLING_ADDRESS,
    "invoice to": CanonicalField.BILLING_ADDRESS,
    "ship to": CanonicalField.SHIPPING_ADDRESS,
    "shipping address": CanonicalField.SHIPPING_ADDRESS,
    "deliver to": CanonicalField.SHIPPING_ADDRESS,
    "currency": CanonicalField.CURRENCY,
    "subtotal": CanonicalField.SUBTOTAL,
    "sub total": CanonicalField.SUBTOTAL,
    "net amount": CanonicalField.SUBTOTAL,
    "tax rate": CanonicalField.TAX_RATE,
    "vat rate": CanonicalField.TAX_RATE,
    "gst rate": CanonicalField.TAX_RATE,
    "tax": CanonicalField.TAX_AMOUNT,
    "sales tax": CanonicalField.TAX_AMOUNT,
    "tax amount": CanonicalField.TAX_AMOUNT,
    "vat": CanonicalField.TAX_AMOUNT,
    "gst": CanonicalField.TAX_AMOUNT,
    "discount": CanonicalField.DISCOUNT_AMOUNT,
    "less discount": CanonicalField.DISCOUNT_AMOUNT,
    "total": CanonicalField.TOTAL_AMOUNT,
    "total due": CanonicalField.TOTAL_AMOUNT,
    "total amount": CanonicalField.TOTAL_AMOUNT,
    "amount due": CanonicalField.TOTAL_AMOUNT,
    "grand total": CanonicalField.TOTAL_AMOUNT,
    "balance due": CanonicalField.TOTAL_AMOUNT,
    "weight": CanonicalField.WEIGHT_KG,
    "total weight": CanonicalField.WEIGHT_KG,
    "gross weight": CanonicalField.WEIGHT_KG,
}


def load_lexicon(path: str) -> dict[str, CanonicalField]:
    """Read "phrase<TAB>field" lines, merged over the built-in lexicon."""
    lexicon = dict(DEFAULT_LEXICON)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            phrase, field_name = line.split("\t")
            lexicon[normalize_label(phrase)] = CanonicalField(field_name)
    return lexicon


def normalize_label(text: str) -> str:
    cleaned = re.sub(r"[^\w#\s]", " ", text.lower())
    return re.sub(r"\s+", " ", cleaned).strip()


def _block_text(block: Block, tokens: Sequence[Token]) -> str:
    return " ".join(tokens[i].text for i in block.token_ids)


def _longest_label_prefix(normalized: str, lexicon: dict[str, CanonicalField]
                          ) -> Optional[tuple[str, CanonicalField]]:
    """Longest lexicon phrase matching the text's leading words."""
    best: Optional[tuple[str, CanonicalField]] = None
    for phrase, f in lexicon.items():
        if normalized == phrase or normalized.startswith(phrase + " "):
            if best is None or len(phrase) > len(best[0]):
                best = (phrase, f)
    return best


def link_label_value(graph: LayoutGraph, blocks: Sequence[Block],
                     tokens: Sequence[Token],
                     lexicon: Optional[dict[str, CanonicalField]] = None,
                     ) -> list[LayoutLink]:
    """Pair recognized labels with their values.

    Inline "Label: value" lines split on the first colon (longest lexicon
    phrase wins); otherwise a block whose whole text is a label links to
    its nearest right_of neighbor, falling back to the block below. At
    most one candidate per field survives, nearest first.
    """
    lex = lexicon if lexicon is not None else DEFAULT_LEXICON
    by_id = {b.id: b for b in blocks}
    candidates: list[LayoutLink] = []

    for block in blocks:
        for line in block.lines:
            words = [tokens[i].text for i in line.token_ids]
            raw = " ".join(words)
            if ":" not in raw:
                continue
            left, _ = raw.split(":", 1)
            match = _longest_label_prefix(normalize_label(left), lex)
            if not match:
                continue
            colon_at = raw.index(":")
            pos = 0
            value_ids = []
            inline_value = None
            for i in line.token_ids:
                start = pos
                pos += len(tokens[i].text) + 1
                if start > colon_at:
                    value_ids.append(i)
                elif start <= colon_at < pos - 1:
                    glued = tokens[i].text.split(":", 1)[1]
                    if glued:
                        inline_value = glued
                        value_ids.append(i)
            # The value ends at the first wide horizontal gap: anything
            # beyond belongs to a neighboring column, not this label.
            char_w = _median_char_width(tokens, line.token_ids)
            kept: list[int] = []
            for i in value_ids:
                if kept and tokens[i].bbox[0] - tokens[kept[-1]].bbox[2] > 4 * char_w:
                    break
                kept.append(i)
            parts = []
            for i in kept:
                parts.append(inline_value if (inline_value is not None and i == kept[0]
                                              and ":" in tokens[i].text)
                             else tokens[i].text)
            value = " ".join(parts).strip()
            if not value:
                continue
            candidates.append(LayoutLink(
                match[1], value, block.id, tuple(kept), 0.0))

        raw_block = _block_text(block, tokens)
        if ":" in raw_block:
            continue
        field_match = lex.get(normalize_label(raw_block))
        if field_match is None:
            continue
        target = graph.neighbor(block.id, "right_of") or graph.neighbor(block.id, "below")
        if target is None:
            continue
        value_block = by_id[target.dst]
        value = _block_text(value_block, tokens).strip()
        if not value:
            continue
        candidates.append(LayoutLink(
            field_match, value, value_block.id, value_block.token_ids,
            target.gap_px))

    best: dict[CanonicalField, LayoutLink] = {}
    for cand in candidates:
        prev = best.get(cand.field)
        if prev is None or cand.distance < prev.distance:
            best[cand.field] = cand
    return sorted(best.values(), key=lambda l: l.field.value)


# ---------------------------------------------------------------------------
# Page text assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PageText:
    """Reading-order page text plus the char span each token occupies."""

    text: str
    token_spans: tuple[tuple[int, int, int], ...]   # (start, end, token_id)

    def tokens_in_span(self, start: int, end: int) -> tuple[int, ...]:
        return tuple(tid for s, e, tid in self.token_spans if s < end and start < e)


def assemble_text(tokens: Sequence[Token]) -> PageText:
    """Join tokens line by line, recording each token's character span."""
    lines = cluster_lines(tokens)
    parts: list[str] = []
    spans: list[tuple[int, int, int]] = []
    pos = 0
    for li, line in enumerate(lines):
        if li:
            parts.append("\n")
            pos += 1
        for wi, tid in enumerate(line.token_ids):
            if wi:
                parts.append(" ")
                pos += 1
            word = tokens[tid].text
            spans.append((pos, pos + len(word), tid))
            parts.append(word)
            pos += len(word)
    return PageText("".join(parts), tuple(spans))


@dataclass(frozen=True)
class PageLayout:
    lines: tuple[Line, ...]
    blocks: tuple[Block, ...]
    tables: tuple[TableRegion, ...]
    graph: LayoutGraph
    links: tuple[LayoutLink, ...]
    page_text: PageText


def analyze_page(tokens: Sequence[Token], page_height: float,
                 lexicon: Optional[dict[str, CanonicalField]] = None) -> PageLayout:
    """Full structural pass over one page's tokens."""
    lines = cluster_lines(tokens)
    blocks = cluster_blocks(lines)
    tables = detect_tables(blocks, tokens)
    table_block_ids = {bid for t in tables for bid in t.block_ids}
    blocks = [replace(b, region="table") if b.id in table_block_ids else b
              for b in blocks]
    blocks = classify_regions(blocks, page_height)
    graph = build_graph(blocks)
    links = link_label_value(graph, blocks, tokens, lexicon)
    return PageLayout(tuple(lines), tuple(blocks), tuple(tables), graph,
                      tuple(links), assemble_text(tokens))
