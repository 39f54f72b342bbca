"""CSV readers and writers for datasets."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .base import Dataset

HEADERS = {
    "grouped": ("group", "index", "value"),
    "pelts": ("year", "hare_pelts", "lynx_pelts"),
    "normal": ("index", "value"),
}
INT_COLUMNS = {"group", "index"}


class DataFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def parse_dataset(text: str, kind: str | None = None, **meta) -> Dataset:
    """Parse CSV text; the layout is inferred from the header unless ``kind`` is given."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = tuple(h.strip() for h in next(reader))
    except StopIteration:
        raise DataFormatError("empty file", 1) from None
    detected = next((k for k, h in HEADERS.items() if h == header), None)
    if detected is None:
        raise DataFormatError(f"unrecognised header {','.join(header)!r}", 1)
    if kind is not None and kind != detected:
        raise DataFormatError(f"expected {kind!r} data, header says {detected!r}", 1)
    cols: dict[str, list] = {h: [] for h in header}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataFormatError(f"expected {len(header)} fields, got {len(row)}", lineno)
        for name, raw in zip(header, row):
            try:
                value = float(raw)
            except ValueError:
                raise DataFormatError(f"cannot parse {name}={raw.strip()!r} as a number", lineno) from None
            if not math.isfinite(value):
                raise DataFormatError(f"non-finite {name}", lineno)
            if name in INT_COLUMNS:
                if value != int(value) or value < 0:
                    raise DataFormatError(f"{name} must be a non-negative integer", lineno)
            cols[name].append(value)
    arrays = {k: np.asarray(v, dtype=int if k in INT_COLUMNS else float) for k, v in cols.items()}
    if detected == "grouped":
        # accept 1-based group labels as written by hand
        g = arrays["group"]
        n_groups = meta.pop("n_groups", None)
        if len(g) and g.min() >= 1 and (n_groups is None or g.max() == n_groups):
            arrays["group"] = g - 1
        meta.setdefault("n_groups", n_groups if n_groups is not None else int(arrays["group"].max() + 1 if len(g) else 0))
    if detected == "pelts":
        meta.setdefault("t0", float(arrays["year"].min()) if len(arrays["year"]) else 1900.0)
    return Dataset(detected, arrays, meta)


def read_dataset(path: str | Path, kind: str | None = None, **meta) -> Dataset:
    return parse_dataset(Path(path).read_text(), kind, **meta)


def format_dataset(data: Dataset) -> str:
    header = HEADERS[data.kind]
    lines = [",".join(header)]
    for i in range(len(data)):
        fields = []
        for name in header:
            v = data[name][i]
            if name == "group":
                fields.append(str(int(v) + 1))
            elif name in INT_COLUMNS:
                fields.append(str(int(v)))
            elif name == "year":
                fields.append(f"{v:g}")
            else:
                fields.append(repr(float(v)))
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def write_dataset(data: Dataset, path: str | Path) -> None:
    Path(path).write_text(format_dataset(data))
