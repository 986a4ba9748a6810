"""Lossless CSV/JSON writers and the dataset reader.

Floats are written with 17 significant digits so a parsed value is the same
double that was written. Artifacts are byte-stable for identical inputs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import ConfigError


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def format_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    Path(path).write_text(format_csv(header, rows))


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{_encode(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj: Any, indent: int = 2) -> str:
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj: Any) -> None:
    Path(path).write_text(dumps_json(obj))


def read_dataset_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a header row, numeric feature columns and a final integer label column."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    if len(rows) < 2 or len(rows[0]) < 2:
        raise ConfigError(f"dataset {path} needs a header, >= 1 row and >= 2 columns")
    width = len(rows[0])
    features, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise ConfigError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        try:
            features.append([float(v) for v in row[:-1]])
            label = float(row[-1])
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
        if label != int(label):
            raise ConfigError(f"{path}:{lineno}: label {row[-1]!r} is not an integer")
        labels.append(int(label))
    return np.asarray(features, dtype=float), np.asarray(labels, dtype=float)


def read_matrix_csv(path, header: bool = True) -> np.ndarray:
    """Read a rectangular numeric CSV (e.g. one row of per-point values per round)."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if header:
        rows = rows[1:]
    try:
        data = [[float(v) for v in r] for r in rows]
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if len({len(r) for r in data}) > 1:
        raise ConfigError(f"{path}: rows have differing lengths")
    return np.asarray(data, dtype=float)
