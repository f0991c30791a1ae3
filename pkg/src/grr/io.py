"""CSV ingestion, result persistence and run manifests.

Structured results (fits, bootstraps) are written as JSON with the manifest
embedded; tabular outputs (simulation tables, score tables and curves) are
written as CSV with the manifest in a ``<file>.manifest.json`` sidecar so that
the CSV itself stays a plain rectangular table.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from io import StringIO

import numpy as np

from . import __version__
from .bootstrap import BootstrapResult
from .errors import (
    InvalidInputError,
    OutputExistsError,
    ParseError,
    ResultIOError,
    ZeroVarianceError,
)
from .loss import Dataset
from .optimizer import FitResult

SAMPLE_ALIAS = "@sample"


def sample_csv_path():
    """Path of the bundled sample data set (header ``x1,x2,x3,y``)."""
    return str(resources.files("grr") / "data" / "sample.csv")


def resolve_data_path(path):
    return sample_csv_path() if path == SAMPLE_ALIAS else path


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None = None
    version: str = __version__
    argv: list = field(default_factory=list)
    input_digests: dict = field(default_factory=dict)
    created: str = ""

    @classmethod
    def build(cls, command, config, seed=None, argv=(), inputs=()):
        digests = {os.path.basename(p): file_digest(p) for p in inputs}
        return cls(command, dict(config), seed, __version__, list(argv), digests,
                   datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


# ----------------------------------------------------------------------------- CSV input

def _parse_cell(text, row, col):
    try:
        val = float(text)
    except ValueError:
        raise ParseError(f"row {row}, column {col}: non-numeric cell {text!r}") from None
    if not math.isfinite(val):
        raise ParseError(f"row {row}, column {col}: non-finite value {text!r}")
    return val


def load_csv(path, has_header=True, response_column=None, standardize=False):
    """Read a numeric CSV into a :class:`Dataset`.

    ``response_column`` is a header name or a 0-based index (default: last
    column).  With ``standardize`` every column is centred and scaled to unit
    (population) variance; the record needed to undo it is kept on the dataset.
    Rows and columns in error messages are 1-based, counting the header row.
    """
    path = resolve_data_path(path)
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise ResultIOError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: file is empty")
    header = None
    first_data_row = 1
    if has_header:
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
        first_data_row = 2
        if not rows:
            raise ParseError(f"{path}: no data rows after the header")
    width = len(header) if header else len(rows[0])
    if width < 2:
        raise ParseError(f"{path}: need at least one covariate and a response column")
    values = np.empty((len(rows), width))
    for i, r in enumerate(rows):
        line = i + first_data_row
        if len(r) != width:
            raise ParseError(f"row {line}: expected {width} cells, found {len(r)}")
        for j, cell in enumerate(r):
            values[i, j] = _parse_cell(cell.strip(), line, j + 1)

    if response_column is None:
        y_idx = width - 1
    elif isinstance(response_column, int) or str(response_column).lstrip("-").isdigit():
        y_idx = int(response_column) % width
    else:
        if header is None or response_column not in header:
            raise ParseError(f"{path}: response column {response_column!r} not found")
        y_idx = header.index(response_column)
    x_idx = [j for j in range(width) if j != y_idx]
    names = tuple(header[j] for j in x_idx) if header else tuple(f"x{j + 1}" for j in x_idx)
    X, Y = values[:, x_idx], values[:, y_idx]
    if len(Y) < 2:
        raise ParseError(f"{path}: need at least two data rows")
    record = None
    if standardize:
        xm, xs = X.mean(axis=0), X.std(axis=0)
        ym, ys = float(Y.mean()), float(Y.std())
        if np.any(xs == 0) or ys == 0:
            raise ZeroVarianceError("cannot standardize a constant column")
        X, Y = (X - xm) / xs, (Y - ym) / ys
        record = {"x_mean": xm.tolist(), "x_scale": xs.tolist(), "y_mean": ym, "y_scale": ys}
    return Dataset(X, Y, standardization=record, column_names=names)


def destandardize(beta, record):
    """Coefficients on the original scale of a standardized fit."""
    if record is None:
        return np.asarray(beta, dtype=float)
    return record["y_scale"] * np.asarray(beta, dtype=float) / np.asarray(record["x_scale"])


# ----------------------------------------------------------------------------- output

def _check_target(path, force):
    if os.path.exists(path) and not force:
        raise OutputExistsError(f"{path} exists; pass force=True (--force) to overwrite")
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise ResultIOError(f"cannot write {path}: directory {parent} does not exist")


def _write_text(path, text):
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ResultIOError(f"cannot write {path}: {exc}") from exc


def _dumps(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def manifest_path(path):
    return path + ".manifest.json"


def _result_payload(result):
    if isinstance(result, FitResult):
        return "fit", result.to_dict()
    if isinstance(result, BootstrapResult):
        return "bootstrap", result.to_dict()
    if isinstance(result, dict):
        return result.get("kind", "summary"), result
    raise InvalidInputError(f"cannot serialise {type(result).__name__} as JSON")


def save_result(result, path, manifest=None, force=False, extra=None):
    """Write a fit/bootstrap result (JSON) or a table (CSV) to ``path``.

    Tables are given as ``(header, rows)`` or as a list of objects with a
    ``row()`` method.  Returns the paths written.
    """
    _check_target(path, force)
    mdict = manifest.to_dict() if manifest is not None else None
    if isinstance(result, (FitResult, BootstrapResult, dict)):
        kind, payload = _result_payload(result)
        doc = {"kind": kind, "result": payload, "manifest": mdict}
        if extra:
            doc["extra"] = extra
        _write_text(path, _dumps(doc))
        return [path]
    header, rows = _table_rows(result)
    sink = StringIO()
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    _write_text(path, sink.getvalue())
    written = [path]
    if mdict is not None:
        mp = manifest_path(path)
        _check_target(mp, force)
        _write_text(mp, _dumps(mdict))
        written.append(mp)
    return written


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def _table_rows(table):
    if isinstance(table, tuple) and len(table) == 2:
        header, rows = table
        return list(header), [list(r) for r in rows]
    rows = [t.row() for t in table]
    if not rows:
        raise InvalidInputError("empty table")
    header = list(rows[0])
    return header, [[r[h] for h in header] for r in rows]


def load_result(path):
    """Inverse of :func:`save_result` for JSON outputs: ``(kind, object, manifest)``."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ResultIOError(f"cannot read {path}: {exc}") from exc
    kind, payload = doc.get("kind"), doc.get("result")
    man = RunManifest.from_dict(doc["manifest"]) if doc.get("manifest") else None
    if kind == "fit":
        obj = FitResult.from_dict(payload)
    elif kind == "bootstrap":
        obj = BootstrapResult.from_dict(payload)
    else:
        obj = payload
    return kind, obj, man


def load_table(path):
    """Header and rows of a CSV written by :func:`save_result` (numbers parsed)."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ResultIOError(f"cannot read {path}: {exc}") from exc

    def conv(c):
        try:
            return int(c)
        except ValueError:
            try:
                return float(c)
            except ValueError:
                return c

    return rows[0], [[conv(c) for c in r] for r in rows[1:]]


def load_manifest(path):
    """Manifest embedded in a JSON result or stored beside a CSV output."""
    side = manifest_path(path)
    try:
        if os.path.exists(side):
            with open(side) as fh:
                return RunManifest.from_dict(json.load(fh))
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ResultIOError(f"cannot read a manifest for {path}: {exc}") from exc
    if not doc.get("manifest"):
        raise ResultIOError(f"{path} carries no manifest")
    return RunManifest.from_dict(doc["manifest"])


__all__ = [
    "RunManifest", "load_csv", "destandardize", "save_result", "load_result", "load_table",
    "load_manifest", "manifest_path", "sample_csv_path", "file_digest", "SAMPLE_ALIAS",
]
