"""CSV price ingestion."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, InsufficientDataError
from .market import PriceSeries, compute_log_returns

log = logging.getLogger(__name__)

MAX_BAD_FRACTION = 0.05
_EPOCH = dt.date(1970, 1, 1)


@dataclass
class IngestReport:
    """What was read: per-asset price and return counts, dropped cells and
    skipped (unparseable) line numbers."""

    path: str
    n_rows: int
    prices: dict = field(default_factory=dict)
    returns: dict = field(default_factory=dict)
    missing: dict = field(default_factory=dict)
    bad_lines: list = field(default_factory=list)

    def to_dict(self):
        return {"path": self.path, "n_rows": self.n_rows, "prices": self.prices, "returns": self.returns,
                "missing": self.missing, "bad_lines": self.bad_lines}


def _parse_date(text):
    text = text.strip()
    try:
        return (dt.date.fromisoformat(text[:10]) - _EPOCH).days
    except ValueError:
        pass
    # fall back to a plain numeric time index
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite time {text!r}")
    return value


def _column_map(header, date_column, columns):
    if date_column not in header:
        raise InputError(f"date column {date_column!r} not in header {header}")
    if columns is None:
        mapping = {c: c for c in header if c != date_column}
    elif isinstance(columns, dict):
        mapping = dict(columns)
    else:
        mapping = {c: c for c in columns}
    missing = [c for c in mapping if c not in header]
    if missing:
        raise InputError(f"price columns {missing} not in header {header}")
    if not mapping:
        raise InputError("no price columns to read")
    return mapping


def ingest_csv(path, date_column="date", columns=None):
    """Read one :class:`PriceSeries` per price column.

    ``columns`` is a list of column names or a ``{column: asset_id}`` mapping;
    by default every non-date column is read.  Empty price cells are dropped
    per column and counted.  Rows whose date or a non-empty price cannot be
    parsed are skipped; more than 5% of such rows is an error naming the
    offending line numbers.

    Returns ``(series, report)``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        mapping = _column_map(header, date_column, columns)
        d_idx = header.index(date_column)
        idx = {c: header.index(c) for c in mapping}
        times = []
        values = {c: [] for c in mapping}
        bad = []
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            n_rows += 1
            try:
                if len(row) != len(header):
                    raise ValueError("wrong number of fields")
                t = _parse_date(row[d_idx])
                parsed = {}
                for c, i in idx.items():
                    cell = row[i].strip()
                    parsed[c] = float(cell) if cell else math.nan
            except ValueError:
                bad.append(lineno)
                continue
            times.append(t)
            for c in mapping:
                values[c].append(parsed[c])

    if n_rows == 0:
        raise InsufficientDataError(f"{path}: no data rows")
    if len(bad) > MAX_BAD_FRACTION * n_rows:
        raise InputError(f"{path}: {len(bad)} of {n_rows} rows could not be parsed "
                         f"(limit {MAX_BAD_FRACTION:.0%}); lines {bad}")
    if bad:
        log.warning("%s: skipped %d unparseable rows at lines %s", path, len(bad), bad)

    report = IngestReport(str(path), n_rows, bad_lines=bad)
    t = np.asarray(times, dtype=float)
    order = np.argsort(t, kind="stable")
    series = []
    for c, asset in mapping.items():
        p = np.asarray(values[c], dtype=float)[order]
        ok = np.isfinite(p)
        n_missing = int((~ok).sum())
        if n_missing:
            log.warning("%s: dropped %d missing prices in column %r", path, n_missing, c)
        ps = PriceSeries(asset, t[order][ok], p[ok], n_dropped=n_missing)
        series.append(ps)
        report.prices[asset] = len(ps)
        report.returns[asset] = len(compute_log_returns(ps))
        report.missing[asset] = n_missing
    return series, report


def aligned_returns(series):
    """Log-returns on the timestamps where every series has a price.

    Returns ``(timestamps, matrix)`` with one column per series; the
    timestamps label the end of each return period.
    """
    common = series[0].timestamps
    for s in series[1:]:
        common = np.intersect1d(common, s.timestamps)
    if common.size < 2:
        raise InsufficientDataError("fewer than 2 dates shared by all assets")
    cols = []
    for s in series:
        p = s.prices[np.searchsorted(s.timestamps, common)]
        cols.append(np.diff(np.log(p)))
    return common[1:], np.column_stack(cols)
