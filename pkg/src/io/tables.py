"""Tabular output for every CLI command.

CSV: header row, floats at 15 significant digits, '\\n' line endings, then one
``summary:<key>,<value>`` line per summary entry.
JSON: {"columns", "rows", "summary"} validated against
schemas/table_output.schema.json, 2-space indent, trailing newline.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence

import numpy as np

from src.io.config import validate_document

FORMATS = ("csv", "json")
TABLE_SCHEMA = "table_output.schema.json"


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".15g")
    return str(value)


def _json_cell(value: Any) -> Any:
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        x = float(value)
        return float(format(x, ".15g")) if math.isfinite(x) else None
    return value


def emit_table(rows: Iterable[Sequence[Any]], columns: Sequence[str], fmt: str = "csv",
               path: Optional[Path] = None, summary: Optional[Dict[str, Any]] = None) -> str:
    """Render rows and write them to ``path`` when given; returns the rendered text."""
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, given {fmt!r}")
    rows = [list(r) for r in rows]
    for i, row in enumerate(rows):
        if len(row) != len(columns):
            raise ValueError(f"row {i} has {len(row)} cells, expected {len(columns)}")
    summary = summary or {}

    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])
        for key, value in summary.items():
            writer.writerow([f"summary:{key}", _csv_cell(value)])
        text = buf.getvalue()
    else:
        doc = {
            "columns": list(columns),
            "rows": [[_json_cell(v) for v in row] for row in rows],
            "summary": {k: _json_cell(v) for k, v in summary.items()},
        }
        validate_document(doc, TABLE_SCHEMA, "table output")
        text = json.dumps(doc, indent=2, allow_nan=False) + "\n"

    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            fh.write(text)
    return text
