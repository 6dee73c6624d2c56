"""CSV writing with a fixed numeric format (17 significant digits)."""

from __future__ import annotations

import csv
import math
from pathlib import Path


def format_value(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.17g}"
    if hasattr(v, "item"):  # numpy scalar
        return format_value(v.item())
    return str(v)


def write_rows(path, header, rows, summary=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
        if summary is not None:
            w.writerow([format_value(v) for v in summary])


def read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(Path(path), newline="") as fh:
        data = list(csv.reader(fh))
    if not data:
        raise ValueError(f"{path} is empty")
    return data[0], data[1:]


def numeric_content(path, drop_columns=()) -> list[list[str]]:
    """Rows with the named (volatile) columns removed, for reproducibility checks."""
    header, rows = read_rows(path)
    keep = [i for i, name in enumerate(header) if name not in set(drop_columns)]
    return [[header[i] for i in keep]] + [[r[i] for i in keep if i < len(r)] for r in rows]
