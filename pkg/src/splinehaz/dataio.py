"""File formats: survival datasets, replicate records, performance tables.

Datasets are delimited text with a ``time,event[,name...]`` header; comma,
tab, and semicolon delimiters are accepted on read, commas are written.
Floats are serialized with ``repr`` (shortest round-trip form) so files are
reproducible byte for byte across runs; booleans are ``true``/``false``.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import asdict

import numpy as np

from .metrics import RECORD_FIELDS, ReplicateRecord
from .model import SurvivalDataset

_DELIMITERS = (",", "\t", ";")


class DataFormatError(ValueError):
    """Raised when an input file does not match the expected layout."""


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if np.isnan(v):
        return "nan"
    return repr(v)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1"):
        return True
    if t in ("false", "0"):
        return False
    raise DataFormatError(f"expected boolean, got {text!r}")


def read_dataset(path) -> SurvivalDataset:
    """Load a survival dataset from delimited text."""
    with open(path, "r", newline="") as fh:
        head = fh.readline()
        if not head.strip():
            raise DataFormatError(f"{path}: empty file")
        delim = next((d for d in _DELIMITERS if d in head), ",")
        header = [c.strip() for c in head.strip().split(delim)]
        if header[:2] != ["time", "event"]:
            raise DataFormatError(
                f"{path}: header must start with 'time{delim}event', got {header[:2]}")
        cov_names = header[2:]
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(delim)
            if len(parts) != len(header):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    arr = np.asarray(rows)
    try:
        return SurvivalDataset(
            time=arr[:, 0], event=arr[:, 1],
            covariates=arr[:, 2:] if cov_names else None,
            covariate_names=tuple(cov_names))
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def write_dataset(path, dataset: SurvivalDataset) -> None:
    cols = ["time", "event"] + list(dataset.covariate_names
                                    or [f"x{j + 1}" for j in range(dataset.ncov)])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(dataset.n_obs):
            row = [_fmt(dataset.time[i]), _fmt(int(dataset.event[i]))]
            for j in range(dataset.ncov):
                row.append(_fmt(dataset.covariates[i, j]))
            fh.write(",".join(row) + "\n")


def record_to_row(record: ReplicateRecord) -> list[str]:
    d = asdict(record)
    return [_fmt(d[k]) for k in RECORD_FIELDS]


def row_to_record(row: dict[str, str]) -> ReplicateRecord:
    return ReplicateRecord(
        replicate=int(row["replicate"]),
        estimate=float(row["estimate"]),
        post_sd=float(row["post_sd"]),
        ci_low=float(row["ci_low"]),
        ci_high=float(row["ci_high"]),
        converged=_parse_bool(row["converged"]),
        rhat_max=float(row["rhat_max"]),
        ess_bulk_min=float(row["ess_bulk_min"]),
        ess_tail_min=float(row["ess_tail_min"]),
        n_divergent=int(row["n_divergent"]),
        runtime_seconds=float(row["runtime_seconds"]),
    )


def append_record(path, record: ReplicateRecord) -> None:
    """Append one record, creating the file with a header when absent."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(RECORD_FIELDS)
        writer.writerow(record_to_row(record))


def read_records(path) -> list[ReplicateRecord]:
    if not os.path.exists(path):
        return []
    with open(path, "r", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = set(RECORD_FIELDS) - set(reader.fieldnames)
        if missing:
            raise DataFormatError(f"{path}: missing columns {sorted(missing)}")
        try:
            return [row_to_record(row) for row in reader]
        except (ValueError, KeyError) as exc:
            raise DataFormatError(f"{path}: {exc}") from None


def write_records(path, records) -> None:
    """Rewrite the full records file sorted by replicate id."""
    records = sorted(records, key=lambda r: r.replicate)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_FIELDS)
        for rec in records:
            writer.writerow(record_to_row(rec))


def write_table(path, columns, rows) -> None:
    """Write a list of dict rows with a fixed column order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) if not isinstance(row[c], str) else row[c]
                             for c in columns])


def read_table(path) -> list[dict[str, str]]:
    with open(path, "r", newline="") as fh:
        return list(csv.DictReader(fh))


def dataset_to_text(dataset: SurvivalDataset) -> str:
    buf = io.StringIO()
    cols = ["time", "event"] + list(dataset.covariate_names
                                    or [f"x{j + 1}" for j in range(dataset.ncov)])
    buf.write(",".join(cols) + "\n")
    for i in range(dataset.n_obs):
        row = [_fmt(dataset.time[i]), _fmt(int(dataset.event[i]))]
        for j in range(dataset.ncov):
            row.append(_fmt(dataset.covariates[i, j]))
        buf.write(",".join(row) + "\n")
    return buf.getvalue()
