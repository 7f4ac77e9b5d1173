"""Matrix Market coordinate-format reader and writer"""

from __future__ import annotations

import logging
from collections.abc import Iterator
from pathlib import Path
from typing import BinaryIO, TextIO

import numpy as np
import scipy.sparse as sp

from tools.sparse_kernels import CsrMatrix

logger = logging.getLogger(__name__)

BANNER = "%%MatrixMarket"
SUPPORTED_SYMMETRY = ("general", "symmetric")
INDEX_MAX = int(np.iinfo(np.int64).max)


class MatrixMarketError(ValueError):
    """Parse error carrying the 1-based line number of the offending line."""

    def __init__(self, message: str, line_number: int) -> None:
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


def _parse_header(line: str, line_number: int) -> str:
    tokens = line.strip().split()
    if len(tokens) != 5 or tokens[0] != BANNER:
        raise MatrixMarketError("expected '%%MatrixMarket matrix coordinate real general|symmetric'", line_number)
    obj, fmt, field, symmetry = (t.lower() for t in tokens[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError(f"unsupported object/format '{obj} {fmt}'", line_number)
    if field != "real":
        raise MatrixMarketError(f"unsupported field '{field}' (only real)", line_number)
    if symmetry not in SUPPORTED_SYMMETRY:
        raise MatrixMarketError(f"unsupported symmetry '{symmetry}'", line_number)
    return symmetry


def _text_lines(source: BinaryIO | TextIO) -> Iterator[str]:
    for raw in source:
        yield raw.decode("utf-8") if isinstance(raw, bytes) else raw


def read_matrix_market(source: BinaryIO | TextIO) -> CsrMatrix:
    """Read a real coordinate Matrix Market stream into a CsrMatrix.

    Indices are converted to 0-based, duplicates are summed, rows sorted and
    symmetric storage is expanded to general.

    Args:
        source: Byte or text stream positioned at the banner line.

    Returns:
        The assembled CSR operator.
    """
    stream = _text_lines(source)

    line_number = 1
    first = next(stream, "")
    if not first:
        raise MatrixMarketError("empty stream", line_number)
    symmetry = _parse_header(first, line_number)

    size: tuple[int, int, int] | None = None
    size_line = 0
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []

    for raw in stream:
        line_number += 1
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        parts = line.split()
        if size is None:
            if len(parts) != 3:
                raise MatrixMarketError("size line must hold 'rows cols entries'", line_number)
            try:
                size = (int(parts[0]), int(parts[1]), int(parts[2]))
            except ValueError:
                raise MatrixMarketError("non-integer size line", line_number) from None
            if min(size) < 0:
                raise MatrixMarketError("negative size", line_number)
            if max(size) > INDEX_MAX:
                raise MatrixMarketError(f"size exceeds the index range ({INDEX_MAX})", line_number)
            size_line = line_number
            continue
        if len(parts) != 3:
            raise MatrixMarketError("entry must hold 'row col value'", line_number)
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise MatrixMarketError("malformed entry", line_number) from None
        if not (1 <= i <= size[0] and 1 <= j <= size[1]):
            raise MatrixMarketError(f"index ({i}, {j}) outside {size[0]}x{size[1]}", line_number)
        if len(vals) == size[2]:
            raise MatrixMarketError(f"more than {size[2]} entries", line_number)
        rows.append(i - 1)
        cols.append(j - 1)
        vals.append(v)

    if size is None:
        raise MatrixMarketError("missing size line", line_number)
    if len(vals) != size[2]:
        raise MatrixMarketError(f"expected {size[2]} entries, found {len(vals)}", line_number)

    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)
    v = np.asarray(vals, dtype=np.float64)
    if symmetry == "symmetric":
        off = r != c
        r, c, v = np.concatenate((r, c[off])), np.concatenate((c, r[off])), np.concatenate((v, v[off]))

    try:
        coo = sp.coo_matrix((v, (r, c)), shape=(size[0], size[1]))
        matrix = CsrMatrix.from_scipy(coo.tocsr())
    except (OverflowError, MemoryError) as exc:
        raise MatrixMarketError(f"cannot index a {size[0]}x{size[1]} matrix: {exc}", size_line) from exc
    logger.debug("read %dx%d matrix with %d stored entries (%s)", size[0], size[1], matrix.nnz, symmetry)
    return matrix


def load_matrix_market(path: str | Path) -> CsrMatrix:
    with open(path, "rb") as handle:
        return read_matrix_market(handle)


def write_matrix_market(A: CsrMatrix, sink: TextIO) -> None:
    """Write A in general coordinate format with round-trip exact values."""
    sink.write(f"{BANNER} matrix coordinate real general\n")
    sink.write(f"{A.nrows} {A.ncols} {A.nnz}\n")
    for i, j, v in zip(A.row_indices(), A.col_idx, A.values):
        sink.write(f"{i + 1} {j + 1} {float(v)!r}\n")
