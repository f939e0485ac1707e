"""Areal datasets: in-memory container and the delimited text format.

The file format is comma-separated with a header. Column roles come from the
header names:

``area``
    optional area identifier (1-based), defaults to the row number
``y1``, ``E``
    count response and its expected count (offset)
``y2``, ``N``
    binomial successes and trials
``y3``
    continuous response
``w_<name>``
    continuous confounders
``x_<name>``
    covariates shared by the response predictors

Any response type may be omitted by leaving its columns out.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent datasets."""


@dataclass
class Dataset:
    y1: np.ndarray | None = None
    E: np.ndarray | None = None
    y2: np.ndarray | None = None
    N: np.ndarray | None = None
    y3: np.ndarray | None = None
    w: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    x: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    w_names: list = field(default_factory=list)
    x_names: list = field(default_factory=list)
    area_ids: np.ndarray | None = None

    def __post_init__(self):
        n = self.n
        if self.w.size == 0:
            self.w = np.zeros((n, 0))
        if self.x.size == 0:
            self.x = np.zeros((n, 0))
        self.w = np.asarray(self.w, dtype=float).reshape(n, -1)
        self.x = np.asarray(self.x, dtype=float).reshape(n, -1)
        if not self.w_names:
            self.w_names = [f"w{j + 1}" for j in range(self.w.shape[1])]
        if not self.x_names:
            self.x_names = [f"x{j + 1}" for j in range(self.x.shape[1])]
        if self.area_ids is None:
            self.area_ids = np.arange(1, n + 1)
        self.validate()

    @property
    def n(self) -> int:
        for arr in (self.y1, self.y2, self.y3):
            if arr is not None:
                return len(arr)
        if self.w.ndim == 2 and self.w.shape[0]:
            return self.w.shape[0]
        raise DataError("dataset has no response and no confounder columns")

    @property
    def has_count(self) -> bool:
        return self.y1 is not None

    @property
    def has_binomial(self) -> bool:
        return self.y2 is not None

    @property
    def has_continuous(self) -> bool:
        return self.y3 is not None

    @property
    def q(self) -> int:
        return self.w.shape[1]

    def validate(self) -> None:
        n = self.n
        if (self.y1 is None) != (self.E is None):
            raise DataError("count response needs both y1 and E")
        if (self.y2 is None) != (self.N is None):
            raise DataError("binomial response needs both y2 and N")
        for name in ("y1", "E", "y2", "N", "y3"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (n,):
                raise DataError(f"column {name} has length {arr.shape}, expected {n}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"column {name} contains missing or non-finite values")
            setattr(self, name, arr)
        if self.y1 is not None:
            if np.any(self.y1 < 0) or np.any(self.y1 != np.round(self.y1)):
                raise DataError("y1 must hold nonnegative integers")
            if np.any(self.E <= 0):
                raise DataError("expected counts E must be positive")
            self.y1 = self.y1.astype(np.int64)
        if self.y2 is not None:
            if np.any(self.N != np.round(self.N)) or np.any(self.N < 0):
                raise DataError("N must hold nonnegative integers")
            if np.any(self.y2 != np.round(self.y2)) or np.any(self.y2 < 0) or np.any(self.y2 > self.N):
                raise DataError("y2 must be an integer between 0 and N")
            self.y2 = self.y2.astype(np.int64)
            self.N = self.N.astype(np.int64)
        for name in ("w", "x"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} columns contain missing or non-finite values")


def read_dataset(path) -> Dataset:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(row for row in fh if row.strip() and not row.startswith("#"))
            header = [h.strip() for h in next(reader)]
            rows = [r for r in reader]
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    width = len(header)
    if any(len(r) != width for r in rows):
        raise DataError(f"{path}: ragged rows")
    try:
        table = np.array([[float(v) for v in r] for r in rows], dtype=float).reshape(len(rows), width)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from exc
    cols = {}
    w_names, x_names, w_cols, x_cols = [], [], [], []
    for j, name in enumerate(header):
        if name in ("area", "y1", "E", "y2", "N", "y3"):
            if name in cols:
                raise DataError(f"{path}: duplicate column {name}")
            cols[name] = table[:, j]
        elif name.startswith("w_"):
            w_names.append(name[2:])
            w_cols.append(table[:, j])
        elif name.startswith("x_"):
            x_names.append(name[2:])
            x_cols.append(table[:, j])
        else:
            raise DataError(f"{path}: column {name!r} has no recognised role")
    n = len(rows)
    return Dataset(
        y1=cols.get("y1"),
        E=cols.get("E"),
        y2=cols.get("y2"),
        N=cols.get("N"),
        y3=cols.get("y3"),
        w=np.column_stack(w_cols) if w_cols else np.zeros((n, 0)),
        x=np.column_stack(x_cols) if x_cols else np.zeros((n, 0)),
        w_names=w_names,
        x_names=x_names,
        area_ids=cols["area"].astype(np.int64) if "area" in cols else None,
    )


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_dataset(ds: Dataset, path) -> None:
    header = ["area"]
    columns = [ds.area_ids]
    for name in ("y1", "E", "y2", "N", "y3"):
        arr = getattr(ds, name)
        if arr is not None:
            header.append(name)
            columns.append(arr)
    for j, name in enumerate(ds.w_names):
        header.append(f"w_{name}")
        columns.append(ds.w[:, j])
    for j, name in enumerate(ds.x_names):
        header.append(f"x_{name}")
        columns.append(ds.x[:, j])
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(ds.n):
            writer.writerow([_fmt(c[i]) for c in columns])
