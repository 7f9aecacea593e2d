"""CSV ingestion with deterministic one-hot encoding.

Numeric columns are parsed as reals; anything else becomes a one-hot
group with lexicographic category order, so identical CSV bytes always
produce an identical matrix. Missing and non-finite cells are rejected
with row/column diagnostics rather than imputed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class Dataset:
    """Encoded tabular data ready for the engine."""

    feature_names: list[str]
    matrix: np.ndarray
    encoding: dict = field(default_factory=dict)
    target: np.ndarray | None = None
    target_name: str | None = None
    predictions: np.ndarray | None = None
    prediction_name: str | None = None

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_features(self) -> int:
        return self.matrix.shape[1]


def _parse_cell(cell: str) -> float | None:
    try:
        return float(cell)
    except ValueError:
        return None


def _read_table(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path} is not valid UTF-8: {exc}")
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    if len(set(header)) != len(header):
        dupes = sorted({h for h in header if header.count(h) > 1})
        raise DataError(f"duplicate column headers in {path}: {dupes}")
    if not body:
        raise DataError(f"{path} has a header but no data rows")
    for idx, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: row {idx + 2} has {len(row)} fields, expected {len(header)}")
        for col, cell in zip(header, row):
            if cell.strip() == "":
                raise DataError(f"{path}: empty cell at row {idx + 2}, column {col!r}")
    return header, body


def _numeric_column(name: str, cells: list[str], path) -> np.ndarray:
    out = np.empty(len(cells))
    for idx, cell in enumerate(cells):
        val = _parse_cell(cell)
        if val is None:
            raise DataError(f"{path}: cannot parse {cell!r} as a number at row {idx + 2}, column {name!r}")
        if not math.isfinite(val):
            raise DataError(f"{path}: non-finite value {cell!r} at row {idx + 2}, column {name!r}")
        out[idx] = val
    return out


def load_csv(path, target_col: str | None = None, pred_col: str | None = None) -> Dataset:
    """Load a UTF-8 CSV with a header row into an encoded Dataset.

    ``target_col`` / ``pred_col`` name columns pulled out of the feature
    matrix (both must be numeric).
    """
    header, body = _read_table(path)
    columns = {name: [row[k] for row in body] for k, name in enumerate(header)}

    target = target_name = None
    if target_col is not None:
        if target_col not in columns:
            raise DataError(f"target column {target_col!r} not found in {path}")
        target = _numeric_column(target_col, columns.pop(target_col), path)
        target_name = target_col
    predictions = prediction_name = None
    if pred_col is not None:
        if pred_col not in columns:
            raise DataError(f"prediction column {pred_col!r} not found in {path}")
        predictions = _numeric_column(pred_col, columns.pop(pred_col), path)
        prediction_name = pred_col

    names: list[str] = []
    encoded: list[np.ndarray] = []
    encoding: dict[str, list[str]] = {}
    for name in header:
        if name not in columns:
            continue
        cells = columns[name]
        parsed = [_parse_cell(c) for c in cells]
        if all(v is not None for v in parsed):
            for idx, v in enumerate(parsed):
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite value {cells[idx]!r} at row {idx + 2}, column {name!r}")
            names.append(name)
            encoded.append(np.asarray(parsed))
        else:
            categories = sorted(set(cells))
            encoding[name] = categories
            for cat in categories:
                names.append(f"{name}={cat}")
                encoded.append(np.array([1.0 if c == cat else 0.0 for c in cells]))
    if not encoded:
        raise DataError(f"{path} has no feature columns left after extracting target/prediction")
    matrix = np.stack(encoded, axis=1)
    return Dataset(
        feature_names=names,
        matrix=matrix,
        encoding=encoding,
        target=target,
        target_name=target_name,
        predictions=predictions,
        prediction_name=prediction_name,
    )


def load_prediction_file(path) -> np.ndarray:
    """Read predictions from a single-column CSV (header required)."""
    header, body = _read_table(path)
    if len(header) != 1:
        raise DataError(f"prediction file {path} must have exactly one column, found {len(header)}")
    return _numeric_column(header[0], [row[0] for row in body], path)
