"""Deterministic CSV helpers shared by every output writer."""
from __future__ import annotations

import csv
import math
import os
from typing import Iterable, Sequence

import numpy as np


def format_value(v) -> str:
    """Locale-independent shortest round-trip text for one cell."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """Write ``rows`` under ``header``; returns the path."""
    path = os.fspath(path)
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
    return path


def read_csv(path):
    """Header plus rows of strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def write_matrix(path, arr: np.ndarray) -> str:
    """Headerless numeric matrix, one row per line."""
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    path = os.fspath(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for row in arr:
            fh.write(",".join(format_value(v) for v in row) + "\n")
    return path


def read_matrix(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
