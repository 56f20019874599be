"""Delimited-text dataset files with JSON metadata sidecars.

One scenario per row; the header names every input dimension (``xi:<name>``)
and every output selector (``y:<selector>``). Floats are written with repr
so files round-trip bit-exactly and reruns with the same seed are
byte-identical. Metadata (seed, model fingerprint, failure count, ...) lives
in ``<file>.meta.json``.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import DataFileError
from .training import Dataset


def meta_path(path) -> str:
    return str(path) + ".meta.json"


def save_dataset(ds: Dataset, path, meta: dict = None):
    cols = [f"xi:{n}" for n in ds.feature_names] + [f"y:{n}" for n in ds.target_names]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for xi_row, y_row in zip(ds.inputs, ds.targets):
            fh.write(",".join(repr(float(v)) for v in xi_row) + ","
                     + ",".join(repr(float(v)) for v in y_row) + "\n")
    if meta is not None:
        with open(meta_path(path), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
            fh.write("\n")


def load_dataset(path):
    """Returns (Dataset, metadata dict or None)."""
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header:
                raise DataFileError(f"dataset {path} is empty")
            names = header.split(",")
            feature_names = [n[3:] for n in names if n.startswith("xi:")]
            target_names = [n[2:] for n in names if n.startswith("y:")]
            if len(feature_names) + len(target_names) != len(names):
                raise DataFileError(f"dataset {path}: malformed header {header!r}")
            rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    except FileNotFoundError as exc:
        raise DataFileError(f"dataset file not found: {path}") from exc
    except ValueError as exc:
        raise DataFileError(f"dataset {path}: {exc}") from exc
    if rows.shape[1] != len(names):
        raise DataFileError(f"dataset {path}: row width does not match header")
    nf = len(feature_names)
    ds = Dataset(rows[:, :nf], rows[:, nf:], feature_names, target_names)
    meta = None
    if os.path.exists(meta_path(path)):
        with open(meta_path(path), encoding="utf-8") as fh:
            meta = json.load(fh)
    return ds, meta


def save_table(path, header, rows):
    """Small helper for plot-ready tables (same repr-float convention)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
