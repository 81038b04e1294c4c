"""CSV artifacts with ``#`` metadata headers, and the reference δ/μ_l study table."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from flexqueue.dp import format_threshold

# Reference (Bs, Bd, Bd_hat, relative flexibility) per δ/μ_l for mu_low=3, R=4,
# c=8, h(x)=x^2, beta=1, keyed by arrival rate.
DELTA_RATIOS = (0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0)
REFERENCE_TABLE = {
    2.0: (
        (9, 2, 2, 0.0000),
        (5, 2, 2, 0.0000),
        (4, 2, 2, 0.0000),
        (3, 3, 2, 0.0028),
        (2, 3, 2, 0.0124),
        (2, 3, 2, 0.0231),
        (2, 4, 2, 0.0325),
        (2, 4, 2, 0.0406),
        (1, 4, 2, 0.0487),
        (1, 4, 2, 0.0598),
    ),
    20.0: (
        (9, 1, 1, 0.0000),
        (5, 1, 1, 0.0000),
        (3, 1, 1, 0.0000),
        (1, 2, 1, 0.0581),
        (0, 2, 1, 0.1940),
        (0, 2, 1, 0.3281),
        (0, 2, 1, 0.4584),
        (0, 2, 1, 0.5846),
        (0, 2, 1, 0.7067),
        (0, 2, 1, 0.8243),
    ),
}
REFERENCE_BASE = {"mu_low": 3.0, "R": 4.0, "c": 8.0, "beta": 1.0}
REL_FLEX_TOL = 0.002


def fmt(v) -> str:
    """Stable text form: integers plain, thresholds may be ``inf``, reals to 10 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        if f.is_integer() and abs(f) < 1e15:
            return str(int(f))
        return f"{f:.10g}"
    return str(v)


def fmt_threshold(b: float) -> str:
    return "nan" if math.isnan(b) else format_threshold(b)


def render_csv(columns, rows, meta: dict[str, object] | None = None) -> str:
    buf = io.StringIO()
    for key, value in sorted((meta or {}).items()):
        buf.write(f"# {key} = {fmt(value)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([c if isinstance(c, str) else fmt(c) for c in row])
    return buf.getvalue()


def write_csv(path: str | Path, columns, rows, meta: dict[str, object] | None = None) -> Path:
    path = Path(path)
    path.write_text(render_csv(columns, rows, meta))
    return path


def value_rows(values: np.ndarray):
    """Rows ``x,i,value`` of a value array indexed [x, i]."""
    arr = np.asarray(values)
    return [(x, i, float(arr[x, i])) for x in range(arr.shape[0]) for i in range(arr.shape[1])]


def read_csv(path: str | Path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Inverse of ``write_csv``: metadata dict and data rows."""
    meta, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].partition("=")
            meta[k.strip()] = v.strip()
        else:
            body.append(line)
    return meta, list(csv.DictReader(body))
