"""Comma-separated tables with complex values split into re/im columns."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


def format_real(value: float) -> str:
    return f"{float(value):.17g}"


def expand_columns(names: Sequence[str], rows: Sequence[Sequence]) -> tuple[list[str], list[list[str]]]:
    """Splits every column holding a complex value into ``<name>_re`` and ``<name>_im``."""
    rows = [list(r) for r in rows]
    is_complex = [any(isinstance(r[c], (complex, np.complexfloating)) for r in rows) for c in range(len(names))]
    header: list[str] = []
    for name, cplx in zip(names, is_complex):
        header.extend([f"{name}_re", f"{name}_im"] if cplx else [name])
    body = []
    for r in rows:
        out = []
        for value, cplx in zip(r, is_complex):
            if cplx:
                z = complex(value)
                out.extend([format_real(z.real), format_real(z.imag)])
            elif isinstance(value, (float, np.floating)):
                out.append(format_real(value))
            else:
                out.append(str(value))
        body.append(out)
    return header, body


def render_table(names: Sequence[str], rows: Sequence[Sequence], comment: Optional[str] = None) -> str:
    header, body = expand_columns(names, rows)
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(body)
    return buf.getvalue()


def write_table(path, names: Sequence[str], rows: Sequence[Sequence], comment: Optional[str] = None) -> Path:
    path = Path(path)
    path.write_text(render_table(names, rows, comment))
    return path


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Reads a table written by :func:`write_table` as floats; comment lines are skipped."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    return header, data.reshape(-1, len(header))


def tensor_rows(tensor: np.ndarray) -> list[list]:
    """Rows ``(row, re_1, im_1, re_2, im_2, re_3, im_3)`` of a 3x3 complex tensor."""
    tensor = np.asarray(tensor, dtype=complex)
    rows = []
    for i in range(3):
        row: list = [i + 1]
        for j in range(3):
            row.extend([float(tensor[i, j].real), float(tensor[i, j].imag)])
        rows.append(row)
    return rows


TENSOR_COLUMNS = ["row", "re_1", "im_1", "re_2", "im_2", "re_3", "im_3"]


def write_tensor(path, tensor: np.ndarray, comment: Optional[str] = None) -> Path:
    return write_table(path, TENSOR_COLUMNS, tensor_rows(tensor), comment)


def read_tensor(path) -> np.ndarray:
    header, data = read_table(path)
    if header != TENSOR_COLUMNS or data.shape[0] != 3:
        raise ValueError(f"{path} is not a 3x3 tensor table")
    out = np.zeros((3, 3), dtype=complex)
    for row in data:
        i = int(row[0]) - 1
        out[i] = row[1::2] + 1j * row[2::2]
    return out


def tensor_block(tensor: np.ndarray) -> Iterable[str]:
    """Human-readable lines for a 3x3 complex tensor."""
    for row in np.asarray(tensor, dtype=complex):
        yield "  ".join(f"{z.real:+.10f}{z.imag:+.10f}i" for z in row)
