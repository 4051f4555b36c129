"""Tabular experiment results and their CSV form.

CSV layout: ``# key = value`` metadata lines (config echo, seed, version),
then a header row, then one row per grid point.  Missing values are empty
fields.  Floats use the shortest round-trip representation so reruns are
byte-identical.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import NumericError

ESTIMATORS = ("ls", "cme", "dm_det", "dm_resamp", "dm_mismatch")
SWEEP_COLUMNS = (
    ["x"]
    + [f"nmse_{e}" for e in ESTIMATORS]
    + [f"se_{e}" for e in ESTIMATORS]
    + [f"time_ms_{e}" for e in ESTIMATORS]
)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


@dataclass
class ExperimentReport:
    kind: str
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    meta: list[tuple[str, str]] = field(default_factory=list)

    def add(self, **values):
        unknown = set(values) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown report columns: {sorted(unknown)}")
        self.rows.append(values)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r.get(name) is None else r[name] for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key, value in self.meta:
            buf.write(f"# {key} = {value}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_cell(r.get(c)) for c in self.columns])
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8", newline="\n")


def read_csv(path_or_text) -> tuple[list[tuple[str, str]], list[dict]]:
    """Parse a report back into ``(meta, rows)``; values stay strings."""
    text = path_or_text
    if not isinstance(path_or_text, str) or "\n" not in path_or_text:
        text = Path(path_or_text).read_text(encoding="utf-8")
    meta, body = [], []
    for line in text.splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition(" = ")
            meta.append((k, v))
        else:
            body.append(line)
    return meta, list(csv.DictReader(body))


def nmse(truth, estimates) -> float:
    """sum ||x_i - xhat_i||^2 / sum ||x_i||^2."""
    return nmse_with_se(truth, estimates)[0]


def nmse_with_se(truth, estimates) -> tuple[float, float]:
    """NMSE and its delta-method standard error (ratio of two sample means)."""
    x = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    xh = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    if x.shape != xh.shape or x.shape[0] < 1:
        raise ValueError(f"nmse: shapes {x.shape} and {xh.shape} must match and be nonempty")
    e = np.sum((x - xh) ** 2, axis=1)
    p = np.sum(x**2, axis=1)
    if p.sum() == 0:
        raise NumericError("nmse: truth has zero energy")
    r = e.sum() / p.sum()
    n = x.shape[0]
    if n < 2:
        return float(r), float("nan")
    # linearized ratio residuals; same as the two-moment delta formula without its overflow
    d = (e - r * p) / p.mean()
    return float(r), float(d.std(ddof=1) / np.sqrt(n))
