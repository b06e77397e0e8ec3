"""Document intake: format sniffing, embedded PDF text, page rasters.

PDF text extraction works directly over uncompressed (or Flate) content
streams covering the text-object subset the synthetic corpus emits; real
scanned PDFs go down the raster + OCR path instead. A small internal PNG
codec handles grayscale pages, including the text chunks that carry
fixture provenance.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import shlex
import struct
import subprocess
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .model import InvoiceFlowError
from .preprocess import PageImage

logger = logging.getLogger(__name__)

__all__ = [
    "RawDocument",
    "Token",
    "UnknownFormat",
    "CorruptPdf",
    "EncryptedPdf",
    "RasterizerUnavailable",
    "DecodeError",
    "detect_format",
    "extract_embedded_text",
    "rasterize",
    "write_png",
    "read_png",
    "estimate_dpi",
    "reading_order",
]


class UnknownFormat(InvoiceFlowError):
    pass


class CorruptPdf(InvoiceFlowError):
    pass


class EncryptedPdf(InvoiceFlowError):
    pass


class RasterizerUnavailable(InvoiceFlowError):
    pass


class DecodeError(InvoiceFlowError):
    pass


# Fixed-pitch advance per character in font units of the embedded-text
# subset (Courier metrics: 600/1000 em).
CHAR_ADVANCE = 0.6
ASCENT = 0.75
DESCENT = 0.25


@dataclass(frozen=True)
class Token:
    """A positioned text unit in pixel coordinates at the page's DPI."""

    text: str
    bbox: tuple[float, float, float, float]
    page: int
    confidence: float
    source: str = "embedded"

    def __post_init__(self) -> None:
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate bbox {self.bbox} for {self.text!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0,1]")
        if self.source == "embedded" and self.confidence != 1.0:
            raise ValueError("embedded tokens must carry confidence 1.0")


@dataclass(frozen=True)
class RawDocument:
    bytes: bytes
    format: str
    source_path: str
    content_hash: str

    @classmethod
    def from_bytes(cls, data: bytes, source_path: str = "<memory>") -> "RawDocument":
        return cls(
            bytes=data,
            format=detect_format(data),
            source_path=source_path,
            content_hash=hashlib.sha256(data).hexdigest(),
        )

    @classmethod
    def from_path(cls, path: str | Path) -> "RawDocument":
        return cls.from_bytes(Path(path).read_bytes(), str(path))


def detect_format(data: bytes) -> str:
    """Classify by magic bytes only; the extension is never consulted."""
    if len(data) < 8:
        raise UnknownFormat("fewer than 8 bytes")
    if data.startswith(b"%PDF-"):
        return "pdf"
    if data.startswith(b"\x89PNG\r\n\x1a\n"):
        return "png"
    if data.startswith(b"\xff\xd8\xff"):
        return "jpeg"
    if data.startswith(b"II*\x00") or data.startswith(b"MM\x00*"):
        return "tiff"
    raise UnknownFormat(f"unrecognized magic bytes {data[:8]!r}")


# ---------------------------------------------------------------------------
# PDF embedded text
# ---------------------------------------------------------------------------

_OBJ_RE = re.compile(rb"(\d+)\s+(\d+)\s+obj\b(.*?)\bendobj", re.DOTALL)
_STREAM_RE = re.compile(rb"stream\r?\n(.*?)\r?\nendstream", re.DOTALL)
_NUM = rb"[-+]?\d*\.?\d+"


def _parse_pdf_objects(data: bytes) -> dict[int, bytes]:
    objects: dict[int, bytes] = {}
    for m in _OBJ_RE.finditer(data):
        objects[int(m.group(1))] = m.group(3)
    return objects


def _object_stream(body: bytes) -> Optional[bytes]:
    m = _STREAM_RE.search(body)
    if m is None:
        return None
    payload = m.group(1)
    if b"/FlateDecode" in body:
        try:
            payload = zlib.decompress(payload)
        except zlib.error as exc:
            raise CorruptPdf(f"bad Flate stream: {exc}") from exc
    return payload


def _pdf_unescape(raw: bytes) -> str:
    out = bytearray()
    i = 0
    while i < len(raw):
        b = raw[i]
        if b == 0x5C and i + 1 < len(raw):  # backslash
            nxt = raw[i + 1]
            mapping = {0x6E: 10, 0x72: 13, 0x74: 9, 0x62: 8, 0x66: 12,
                       0x28: 40, 0x29: 41, 0x5C: 92}
            if nxt in mapping:
                out.append(mapping[nxt])
                i += 2
                continue
            if 0x30 <= nxt <= 0x37:  # octal escape, up to 3 digits
                j = i + 1
                digits = b""
                while j < len(raw) and len(digits) < 3 and 0x30 <= raw[j] <= 0x37:
                    digits += bytes([raw[j]])
                    j += 1
                out.append(int(digits, 8) & 0xFF)
                i = j
                continue
            i += 1
            continue
        out.append(b)
        i += 1
    return out.decode("latin-1")


_CONTENT_TOKEN = re.compile(
    rb"\((?P<str>(?:\\.|[^\\()])*)\)"      # literal string
    rb"|(?P<num>[-+]?\d*\.?\d+)"
    rb"|(?P<op>[A-Za-z'\"*]+)"
    rb"|(?P<name>/[^\s/<>\[\]()]+)"
    rb"|(?P<delim>[\[\]])"
)


def _emit_words(text: str, x: float, y: float, size: float, page: int,
                page_h_pt: float, scale: float, out: list[Token]) -> float:
    """Split a shown string into word tokens with Courier-metric boxes.

    Returns the x advance past the full string.
    """
    advance = CHAR_ADVANCE * size
    pos = 0
    for m in re.finditer(r"\S+", text):
        word = m.group(0)
        wx0 = x + m.start() * advance
        wx1 = wx0 + len(word) * advance
        y_top = y + ASCENT * size
        y_bot = y - DESCENT * size
        out.append(Token(
            text=word,
            bbox=(wx0 * scale, (page_h_pt - y_top) * scale,
                  wx1 * scale, (page_h_pt - y_bot) * scale),
            page=page,
            confidence=1.0,
            source="embedded",
        ))
        pos = m.end()
    return len(text) * advance


def _tokens_from_content(content: bytes, page: int, page_h_pt: float,
                         dpi: int) -> list[Token]:
    scale = dpi / 72.0
    out: list[Token] = []
    size = 12.0
    leading = 14.0
    line_x = line_y = 0.0
    x = y = 0.0
    stack: list[bytes] = []
    in_array: list = []
    array_mode = False

    for m in _CONTENT_TOKEN.finditer(content):
        kind = m.lastgroup
        if kind == "delim":
            if m.group("delim") == b"[":
                array_mode = True
                in_array = []
            else:
                array_mode = False
            continue
        if kind == "str":
            if array_mode:
                in_array.append(("s", _pdf_unescape(m.group("str"))))
            else:
                stack.append(m.group(0))
            continue
        if kind == "num":
            if array_mode:
                in_array.append(("n", float(m.group("num"))))
            else:
                stack.append(m.group("num"))
            continue
        if kind == "name":
            stack.append(m.group(0))
            continue

        op = m.group("op")
        if op == b"BT":
            line_x = line_y = x = y = 0.0
            stack.clear()
        elif op == b"Tf" and len(stack) >= 1:
            try:
                size = float(stack[-1])
            except ValueError:
                pass
            stack.clear()
        elif op == b"TL" and stack:
            leading = float(stack[-1])
            stack.clear()
        elif op in (b"Td", b"TD") and len(stack) >= 2:
            tx, ty = float(stack[-2]), float(stack[-1])
            if op == b"TD":
                leading = -ty
            line_x += tx
            line_y += ty
            x, y = line_x, line_y
            stack.clear()
        elif op == b"Tm" and len(stack) >= 6:
            line_x, line_y = float(stack[-2]), float(stack[-1])
            x, y = line_x, line_y
            stack.clear()
        elif op == b"T*":
            line_y -= leading
            x, y = line_x, line_y
            stack.clear()
        elif op == b"Tj" and stack:
            text = _pdf_unescape(re.match(rb"\((.*)\)", stack[-1], re.DOTALL).group(1))
            x += _emit_words(text, x, y, size, page, page_h_pt, scale, out)
            stack.clear()
        elif op == b"TJ":
            for kind2, value in in_array:
                if kind2 == "s":
                    x += _emit_words(value, x, y, size, page, page_h_pt, scale, out)
                else:
                    x -= value / 1000.0 * size
            in_array = []
            array_mode = False
            stack.clear()
        elif op == b"'" and stack:
            line_y -= leading
            x, y = line_x, line_y
            text = _pdf_unescape(re.match(rb"\((.*)\)", stack[-1], re.DOTALL).group(1))
            x += _emit_words(text, x, y, size, page, page_h_pt, scale, out)
            stack.clear()
        else:
            stack.clear()
    return out


def reading_order(tokens: list[Token]) -> list[Token]:
    """Sort top-to-bottom by line band, then left-to-right."""
    if not tokens:
        return tokens
    heights = sorted(t.bbox[3] - t.bbox[1] for t in tokens)
    band_tol = max(1.0, 0.5 * heights[len(heights) // 2])
    ordered = sorted(tokens, key=lambda t: (t.bbox[1] + t.bbox[3]) / 2.0)
    bands: list[float] = []
    banded: list[tuple[int, float, Token]] = []
    for t in ordered:
        yc = (t.bbox[1] + t.bbox[3]) / 2.0
        if not bands or yc - bands[-1] > band_tol:
            bands.append(yc)
        banded.append((len(bands) - 1, t.bbox[0], t))
    banded.sort(key=lambda item: (item[0], item[1]))
    return [t for _, _, t in banded]


def extract_embedded_text(doc: RawDocument, dpi: int = 300) -> list[list[Token]]:
    """Per-page embedded tokens in reading order; empty lists for pages
    without text content. Coordinates are pixels at the given DPI."""
    if doc.format != "pdf":
        raise ValueError(f"embedded text requires pdf input, got {doc.format}")
    data = doc.bytes
    if b"%%EOF" not in data[-2048:]:
        raise CorruptPdf("missing %%EOF trailer")
    if re.search(rb"/Encrypt\b", data):
        raise EncryptedPdf("document declares /Encrypt")

    objects = _parse_pdf_objects(data)
    if not objects:
        raise CorruptPdf("no indirect objects found")

    pages: list[tuple[int, bytes]] = []
    for num in sorted(objects):
        body = objects[num]
        if re.search(rb"/Type\s*/Page\b", body):
            pages.append((num, body))
    if not pages:
        raise CorruptPdf("no /Page objects found")

    result: list[list[Token]] = []
    for page_index, (_, body) in enumerate(pages):
        media = re.search(
            rb"/MediaBox\s*\[\s*(%s)\s+(%s)\s+(%s)\s+(%s)\s*\]" % ((_NUM,) * 4), body)
        page_h_pt = float(media.group(4)) if media else 792.0
        content_ref = re.search(rb"/Contents\s+(\d+)\s+\d+\s+R", body)
        tokens: list[Token] = []
        if content_ref is not None:
            content_obj = objects.get(int(content_ref.group(1)))
            if content_obj is not None:
                stream = _object_stream(content_obj)
                if stream:
                    tokens = _tokens_from_content(stream, page_index, page_h_pt, dpi)
        result.append(reading_order(tokens))
    return result


# ---------------------------------------------------------------------------
# PNG codec (8-bit grayscale focus; reads common RGB(A) too)
# ---------------------------------------------------------------------------

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (struct.pack(">I", len(payload)) + tag + payload
            + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF))


def write_png(pixels: np.ndarray, dpi: Optional[int] = None,
              text: Optional[dict[str, str]] = None) -> bytes:
    """Encode a 2-D uint8 array as grayscale PNG with optional DPI and
    tEXt metadata."""
    if pixels.dtype != np.uint8 or pixels.ndim != 2:
        raise ValueError("write_png expects a 2-D uint8 array")
    h, w = pixels.shape
    parts = [_PNG_SIG, _chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0))]
    if dpi:
        ppm = int(round(dpi / 0.0254))
        parts.append(_chunk(b"pHYs", struct.pack(">IIB", ppm, ppm, 1)))
    for key, value in (text or {}).items():
        parts.append(_chunk(b"tEXt", key.encode("latin-1") + b"\x00" + value.encode("latin-1")))
    raw = b"".join(b"\x00" + pixels[row].tobytes() for row in range(h))
    parts.append(_chunk(b"IDAT", zlib.compress(raw, 6)))
    parts.append(_chunk(b"IEND", b""))
    return b"".join(parts)


def _unfilter(kind: int, cur: np.ndarray, prev: np.ndarray, bpp: int) -> np.ndarray:
    out = cur.astype(np.int32)
    if kind == 0:
        return out
    if kind == 2:
        return (out + prev) % 256
    n = len(cur)
    res = np.zeros(n, dtype=np.int32)
    for i in range(n):
        a = res[i - bpp] if i >= bpp else 0
        b = int(prev[i])
        if kind == 1:
            res[i] = (out[i] + a) % 256
        elif kind == 3:
            res[i] = (out[i] + (a + b) // 2) % 256
        elif kind == 4:
            c = int(prev[i - bpp]) if i >= bpp else 0
            p = a + b - c
            pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
            pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
            res[i] = (out[i] + pred) % 256
        else:
            raise DecodeError(f"unsupported PNG filter {kind}")
    return res


def read_png(data: bytes) -> tuple[np.ndarray, Optional[int], dict[str, str]]:
    """Decode PNG to (grayscale uint8 array, dpi, text chunks)."""
    if not data.startswith(_PNG_SIG):
        raise DecodeError("not a PNG")
    pos = 8
    width = height = None
    color_type = bit_depth = None
    dpi = None
    text: dict[str, str] = {}
    idat = bytearray()
    while pos + 8 <= len(data):
        (length,) = struct.unpack(">I", data[pos: pos + 4])
        tag = data[pos + 4: pos + 8]
        payload = data[pos + 8: pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            width, height, bit_depth, color_type, _, _, interlace = struct.unpack(
                ">IIBBBBB", payload)
            if interlace:
                raise DecodeError("interlaced PNG not supported")
        elif tag == b"pHYs":
            ppx, _, unit = struct.unpack(">IIB", payload)
            if unit == 1:
                dpi = int(round(ppx * 0.0254))
        elif tag == b"tEXt":
            key, _, value = payload.partition(b"\x00")
            text[key.decode("latin-1")] = value.decode("latin-1")
        elif tag == b"IDAT":
            idat.extend(payload)
        elif tag == b"IEND":
            break
    if width is None or not idat:
        raise DecodeError("PNG missing IHDR or IDAT")
    if bit_depth != 8 or color_type not in (0, 2, 6):
        raise DecodeError(f"unsupported PNG: depth={bit_depth} color={color_type}")
    channels = {0: 1, 2: 3, 6: 4}[color_type]
    stride = width * channels
    raw = zlib.decompress(bytes(idat))
    if len(raw) < height * (stride + 1):
        raise DecodeError("PNG pixel data truncated")
    rows = np.zeros((height, stride), dtype=np.int32)
    prev = np.zeros(stride, dtype=np.int32)
    for row in range(height):
        start = row * (stride + 1)
        kind = raw[start]
        cur = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=start + 1)
        rows[row] = _unfilter(kind, cur, prev, channels)
        prev = rows[row]
    arr = rows.astype(np.uint8).reshape(height, width, channels)
    if channels == 1:
        gray = arr[:, :, 0]
    else:
        rgb = arr[:, :, :3].astype(np.float32)
        gray = np.clip(np.rint(
            0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]),
            0, 255).astype(np.uint8)
    return gray, dpi, text


def estimate_dpi(width: int, height: int) -> int:
    """Guess DPI of a bare raster: letter width by default, A4 when the
    aspect ratio says so."""
    page_width_in = 8.27 if height / max(width, 1) > 1.4 else 8.5
    return max(1, int(round(width / page_width_in)))


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

def _decode_with_pillow(data: bytes) -> tuple[np.ndarray, Optional[int]]:
    try:
        import io

        from PIL import Image
    except ImportError as exc:
        raise DecodeError("decoding this format requires Pillow") from exc
    with Image.open(io.BytesIO(data)) as im:
        dpi = None
        info_dpi = im.info.get("dpi")
        if info_dpi:
            dpi = int(round(info_dpi[0]))
        gray = np.asarray(im.convert("L"), dtype=np.uint8)
    return gray, dpi


def rasterize(doc: RawDocument, dpi: int = 300,
              rasterizer_cmd: Optional[str] = None) -> list[PageImage]:
    """One grayscale PageImage per page.

    Raster inputs pass through at their native resolution (metadata or
    estimated); PDFs require an external rasterizer command configured via
    argument or the RASTERIZER_CMD environment variable, templated with
    {input}, {dpi} and {outdir}.
    """
    if doc.format == "png":
        gray, native_dpi, text = read_png(doc.bytes)
        resolved = native_dpi or estimate_dpi(gray.shape[1], gray.shape[0])
        return [PageImage(gray, resolved, page=0, meta=dict(text))]

    if doc.format in ("jpeg", "tiff"):
        gray, native_dpi, = _decode_with_pillow(doc.bytes)
        resolved = native_dpi or estimate_dpi(gray.shape[1], gray.shape[0])
        return [PageImage(gray, resolved, page=0)]

    if doc.format == "pdf":
        cmd = rasterizer_cmd or os.environ.get("RASTERIZER_CMD")
        if not cmd:
            raise RasterizerUnavailable(
                "PDF rasterization needs RASTERIZER_CMD ({input} {dpi} {outdir})")
        with tempfile.TemporaryDirectory(prefix="invoiceflow-raster-") as tmp:
            src = Path(tmp) / "input.pdf"
            outdir = Path(tmp) / "pages"
            outdir.mkdir()
            src.write_bytes(doc.bytes)
            rendered = cmd.format(input=str(src), dpi=dpi, outdir=str(outdir))
            proc = subprocess.run(shlex.split(rendered), capture_output=True)
            if proc.returncode != 0:
                raise RasterizerUnavailable(
                    f"rasterizer exited {proc.returncode}: {proc.stderr.decode(errors='replace')[:200]}")
            pages = []
            for idx, png in enumerate(sorted(outdir.glob("*.png"))):
                gray, native_dpi, text = read_png(png.read_bytes())
                pages.append(PageImage(gray, native_dpi or dpi, page=idx, meta=dict(text)))
            if not pages:
                raise RasterizerUnavailable("rasterizer produced no pages")
            return pages

    raise ValueError(f"cannot rasterize format {doc.format}")
