"""Complex-matrix CSV files.

Layout: one header line ``# R,C`` with the row and column counts, then R rows
of 2*C comma-separated values ``re,im,re,im,...`` (row-major). Values are
written with 17 significant digits so files round-trip bit-exactly.
"""

from pathlib import Path

import numpy as np


def format_float(v: float) -> str:
    return repr(float(v))


def write_complex_csv(path, mtx) -> None:
    mtx = np.atleast_2d(np.asarray(mtx, dtype=complex))
    rows, cols = mtx.shape
    lines = [f"# {rows},{cols}"]
    for row in mtx:
        parts = []
        for v in row:
            parts.append(format_float(v.real))
            parts.append(format_float(v.imag))
        lines.append(",".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")


def read_complex_csv(path) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise ValueError(f"{path}: missing '# rows,cols' header")
    try:
        rows, cols = (int(t) for t in text[0].lstrip("#").split(","))
    except ValueError:
        raise ValueError(f"{path}: malformed header {text[0]!r}") from None
    body = [ln for ln in text[1:] if ln.strip()]
    if len(body) != rows:
        raise ValueError(f"{path}: header says {rows} rows, found {len(body)}")
    vals = np.array([[float(t) for t in ln.split(",")] for ln in body], dtype=float)
    if vals.shape != (rows, 2 * cols):
        raise ValueError(f"{path}: expected {2 * cols} values per row, got {vals.shape[1]}")
    return vals[:, 0::2] + 1j * vals[:, 1::2]
