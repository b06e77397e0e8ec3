"""Canonical output schemas: JSON, RFC-4180 CSV, minimal OOXML XLSX, SQL.

Money always serializes as a decimal string with two fraction digits in
text formats and as a numeric cell with a 2-decimal format in XLSX, so
exactness survives every export path.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field as dc_field
from datetime import date
from decimal import Decimal
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .model import (
    CanonicalField,
    ExtractedInvoice,
    FieldValue,
    InvoiceFlowError,
    Money,
    money_format,
)

__all__ = [
    "ExportSchema",
    "DEFAULT_SCHEMA",
    "IoError",
    "to_canonical_json",
    "canonical_dumps",
    "to_csv",
    "to_xlsx",
    "to_sql",
    "write_output",
]


class IoError(InvoiceFlowError):
    pass


@dataclass(frozen=True)
class ExportSchema:
    columns: tuple[str, ...] = (
        "invoice_number", "invoice_date", "due_date", "vendor_name",
        "currency", "subtotal", "tax_amount", "total_amount", "weight_kg",
        "status", "overall_confidence",
    )
    renames: dict[str, str] = dc_field(default_factory=dict)

    def header(self) -> list[str]:
        return [self.renames.get(c, c) for c in self.columns]


DEFAULT_SCHEMA = ExportSchema()

#: Columns rendered as 2-decimal numeric cells in XLSX.
_MONEY_COLUMNS = {"subtotal", "tax_amount", "total_amount"}
_NUMERIC_COLUMNS = _MONEY_COLUMNS | {"weight_kg", "overall_confidence"}


def _cell_value(inv: ExtractedInvoice, column: str):
    if column == "status":
        return inv.status.value
    if column == "overall_confidence":
        return round(inv.overall_confidence, 4)
    fv = inv.fields.get(CanonicalField(column))
    if fv is None or fv.normalized is None:
        return None
    v = fv.normalized
    if isinstance(v, Money):
        return money_format(v)
    if isinstance(v, date):
        return v.isoformat()
    if isinstance(v, Decimal):
        return str(v.normalize()) if v == v.to_integral_value() else str(v)
    return str(v)


def _field_detail(fv: FieldValue) -> dict:
    v = fv.normalized
    if isinstance(v, Money):
        normalized = money_format(v)
    elif isinstance(v, date):
        normalized = v.isoformat()
    elif isinstance(v, Decimal):
        normalized = str(v)
    else:
        normalized = v
    return {
        "raw": fv.raw_text,
        "normalized": normalized,
        "confidence": round(fv.confidence, 4),
        "provenance": fv.provenance.value,
        "validation": fv.validation.value,
    }


def canonical_dumps(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False)


def invoice_to_dict(inv: ExtractedInvoice, schema: ExportSchema = DEFAULT_SCHEMA) -> dict:
    """Plain-dict form with stable key order (schema order first)."""
    out: dict = {}
    for column in schema.columns:
        out[schema.renames.get(column, column)] = _cell_value(inv, column)
    out["line_items"] = [
        {
            "description": item.description,
            "quantity": str(item.quantity),
            "unit_price": money_format(item.unit_price),
            "amount": money_format(item.amount),
        }
        for item in inv.line_items
    ]
    out["field_details"] = {
        f.value: _field_detail(fv) for f, fv in sorted(
            inv.fields.items(), key=lambda kv: kv[0].value)
    }
    out["validation_report"] = [
        {"id": c.id, "passed": c.passed, "skipped": c.skipped, "detail": c.detail}
        for c in inv.validation_report.checks
    ]
    return out


def to_canonical_json(inv: ExtractedInvoice, schema: ExportSchema = DEFAULT_SCHEMA) -> str:
    return canonical_dumps(invoice_to_dict(inv, schema))


# ---------------------------------------------------------------------------
# CSV (RFC 4180)
# ---------------------------------------------------------------------------

def _csv_quote(value: str) -> str:
    if any(ch in value for ch in (",", '"', "\n", "\r")):
        return '"' + value.replace('"', '""') + '"'
    return value


def to_csv(invoices: Sequence[ExtractedInvoice],
           schema: ExportSchema = DEFAULT_SCHEMA) -> str:
    """Header row plus one CRLF-terminated record per invoice."""
    rows = [schema.header()]
    for inv in invoices:
        row = []
        for column in schema.columns:
            v = _cell_value(inv, column)
            row.append("" if v is None else str(v))
        rows.append(row)
    return "".join(",".join(_csv_quote(c) for c in row) + "\r\n" for row in rows)


# ---------------------------------------------------------------------------
# XLSX (minimal OOXML subset)
# ---------------------------------------------------------------------------

_CONTENT_TYPES = """<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<Types xmlns="http://schemas.openxmlformats.org/package/2006/content-types">
<Default Extension="rels" ContentType="application/vnd.openxmlformats-package.relationships+xml"/>
<Default Extension="xml" ContentType="application/xml"/>
<Override PartName="/xl/workbook.xml" ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet.main+xml"/>
<Override PartName="/xl/worksheets/sheet1.xml" ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.worksheet+xml"/>
<Override PartName="/xl/styles.xml" ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.styles+xml"/>
</Types>
"""

_ROOT_RELS = """<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<Relationships xmlns="http://schemas.openxmlformats.org/package/2006/relationships">
<Relationship Id="rId1" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/officeDocument" Target="xl/workbook.xml"/>
</Relationships>
"""

_WORKBOOK = """<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<workbook xmlns="http://schemas.openxmlformats.org/spreadsheetml/2006/main" xmlns:r="http://schemas.openxmlformats.org/officeDocument/2006/relationships">
<sheets><sheet name="Invoices" sheetId="1" r:id="rId1"/></sheets>
</workbook>
"""

_WORKBOOK_RELS = """<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<Relationships xmlns="http://schemas.openxmlformats.org/package/2006/relationships">
<Relationship Id="rId1" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/worksheet" Target="worksheets/sheet1.xml"/>
<Relationship Id="rId2" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/styles" Target="styles.xml"/>
</Relationships>
"""

# Style 1 applies the built-in numeric format 2 ("0.00") for money cells.
_STYLES = """<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<styleSheet xmlns="http://schemas.openxmlformats.org/spreadsheetml/2006/main">
<fonts count="1"><font><sz val="11"/><name val="Calibri"/></font></fonts>
<fills count="1"><fill><patternFill patternType="none"/></fill></fills>
<borders count="1"><border/></borders>
<cellStyleXfs count="1"><xf numFmtId="0" fontId="0" fillId="0" borderId="0"/></cellStyleXfs>
<cellXfs count="2">
<xf numFmtId="0" fontId="0" fillId="0" borderId="0" xfId="0"/>
<xf numFmtId="2" fontId="0" fillId="0" borderId="0" xfId="0" applyNumberFormat="1"/>
</cellXfs>
</styleSheet>
"""


def _col_name(index: int) -> str:
    name = ""
    index += 1
    while index:
        index, rem = divmod(index - 1, 26)
        name = chr(ord("A") + rem) + name
    return name


def _sheet_xml(grid: list[list[tuple[str, object]]]) -> str:
    """grid cells are (kind, value): kind in {s, n, money}."""
    parts = ['<?xml version="1.0" encoding="UTF-8" standalone="yes"?>\n'
             '<worksheet xmlns="http://schemas.openxmlformats.org/spreadsheetml/2006/main">\n'
             "<sheetData>\n"]
    for ri, row in enumerate(grid, start=1):
        parts.append(f'<row r="{ri}">')
        for ci, (kind, value) in enumerate(row):
            if value is None:
                continue
            ref = f"{_col_name(ci)}{ri}"
            if kind == "s":
                text = escape(str(value))
                space = ' xml:space="preserve"' if str(value) != str(value).strip() else ""
                parts.append(f'<c r="{ref}" t="inlineStr"><is><t{space}>{text}</t></is></c>')
            elif kind == "money":
                parts.append(f'<c r="{ref}" s="1"><v>{value}</v></c>')
            else:
                parts.append(f'<c r="{ref}"><v>{value}</v></c>')
        parts.append("</row>\n")
    parts.append("</sheetData>\n</worksheet>\n")
    return "".join(parts)


def _xlsx_grid(invoices: Sequence[ExtractedInvoice],
               schema: ExportSchema) -> list[list[tuple[str, object]]]:
    grid: list[list[tuple[str, object]]] = [
        [("s", h) for h in schema.header()]]
    for inv in invoices:
        row: list[tuple[str, object]] = []
        for column in schema.columns:
            fv = (inv.fields.get(CanonicalField(column))
                  if column not in ("status", "overall_confidence") else None)
            if column in _MONEY_COLUMNS and fv is not None and isinstance(fv.normalized, Money):
                number = Decimal(fv.normalized.minor_units) / 100
                row.append(("money", format(number.normalize(), "f")))
            elif column == "overall_confidence":
                row.append(("n", round(inv.overall_confidence, 4)))
            elif column == "weight_kg" and fv is not None and isinstance(fv.normalized, Decimal):
                row.append(("n", format(fv.normalized.normalize(), "f")))
            else:
                v = _cell_value(inv, column)
                row.append(("s", v) if v is not None else ("s", None))
        grid.append(row)
    return grid


def to_xlsx(invoices: Sequence[ExtractedInvoice], out_path: str | Path,
            schema: ExportSchema = DEFAULT_SCHEMA) -> None:
    """Write a minimal but valid OOXML workbook with one "Invoices" sheet."""
    grid = _xlsx_grid(invoices, schema)
    members = [
        ("[Content_Types].xml", _CONTENT_TYPES),
        ("_rels/.rels", _ROOT_RELS),
        ("xl/workbook.xml", _WORKBOOK),
        ("xl/_rels/workbook.xml.rels", _WORKBOOK_RELS),
        ("xl/styles.xml", _STYLES),
        ("xl/worksheets/sheet1.xml", _sheet_xml(grid)),
    ]
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, payload in members:
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, payload)
    try:
        Path(out_path).write_bytes(buffer.getvalue())
    except OSError as exc:
        raise IoError(f"cannot write {out_path}: {exc}") from exc


# ---------------------------------------------------------------------------
# SQL script (ANSI)
# ---------------------------------------------------------------------------

_SQL_TYPES = {
    "subtotal": "NUMERIC(18,2)",
    "tax_amount": "NUMERIC(18,2)",
    "total_amount": "NUMERIC(18,2)",
    "weight_kg": "NUMERIC(18,3)",
    "overall_confidence": "NUMERIC(6,4)",
}


def _sql_literal(column: str, value) -> str:
    if value is None:
        return "NULL"
    if column in _NUMERIC_COLUMNS:
        return str(value)
    return "'" + str(value).replace("'", "''") + "'"


def to_sql(invoices: Sequence[ExtractedInvoice],
           schema: ExportSchema = DEFAULT_SCHEMA,
           table: str = "invoices") -> str:
    """Dialect-neutral CREATE TABLE plus INSERT statements."""
    cols = schema.header()
    defs = ",\n  ".join(
        f"{c} {_SQL_TYPES.get(orig, 'VARCHAR(255)')}"
        for c, orig in zip(cols, schema.columns))
    lines = [f"CREATE TABLE {table} (\n  {defs}\n);"]
    for inv in invoices:
        values = ", ".join(
            _sql_literal(c, _cell_value(inv, c)) for c in schema.columns)
        lines.append(f"INSERT INTO {table} ({', '.join(cols)}) VALUES ({values});")
    return "\n".join(lines) + "\n"


def write_output(invoices: Sequence[ExtractedInvoice], out_path: str | Path,
                 schema: ExportSchema = DEFAULT_SCHEMA) -> None:
    """Dispatch on the output extension: .xlsx (default), .csv, .json, .sql."""
    path = Path(out_path)
    suffix = path.suffix.lower()
    try:
        if suffix == ".csv":
            path.write_text(to_csv(invoices, schema), encoding="utf-8", newline="")
        elif suffix == ".json":
            payload = [invoice_to_dict(inv, schema) for inv in invoices]
            path.write_text(canonical_dumps(payload), encoding="utf-8")
        elif suffix == ".sql":
            path.write_text(to_sql(invoices, schema), encoding="utf-8")
        else:
            to_xlsx(invoices, path, schema)
            return
    except OSError as exc:
        raise IoError(f"cannot write {out_path}: {exc}") from exc
