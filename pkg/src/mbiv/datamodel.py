"""Tabular data container, CSV ingestion, transforms and correlation utilities."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, NumericError


@dataclass(frozen=True)
class Dataset:
    """Immutable named column matrix.

    Columns are stored as a single ``(n, p)`` float array. ``transforms`` maps
    every column name to the tuple of transforms applied so far (``"raw"`` is
    implicit and never recorded).
    """

    names: tuple[str, ...]
    values: np.ndarray
    transforms: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        names = tuple(str(s) for s in self.names)
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[1] != len(names):
            raise DataError(
                f"values shape {values.shape} does not match {len(names)} column names"
            )
        if values.shape[0] < 1:
            raise DataError("dataset needs at least one row")
        if any(not s for s in names):
            raise DataError("column names must be non-empty")
        if len(set(names)) != len(names):
            dup = sorted({s for s in names if names.count(s) > 1})
            raise DataError(f"duplicate column names: {dup}")
        if not np.all(np.isfinite(values)):
            r, c = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"non-finite value at row {r + 1}, column {names[c]}")
        values.setflags(write=False)
        tr = {s: tuple(self.transforms.get(s, ())) for s in names}
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "transforms", tr)

    @classmethod
    def from_columns(cls, columns: Mapping[str, Sequence[float]]) -> "Dataset":
        names = list(columns)
        if not names:
            raise DataError("no columns given")
        lengths = {len(columns[k]) for k in names}
        if len(lengths) != 1:
            raise DataError(f"columns have unequal lengths {sorted(lengths)}")
        return cls(tuple(names), np.column_stack([np.asarray(columns[k], float) for k in names]))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown column {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.column(name)

    def matrix(self, names: Iterable[str]) -> np.ndarray:
        idx = [self.index(s) for s in names]
        return self.values[:, idx].reshape(self.n, len(idx))

    def select(self, names: Iterable[str]) -> "Dataset":
        names = list(names)
        return Dataset(tuple(names), self.matrix(names), {s: self.transforms[s] for s in names})

    def rows(self, idx) -> "Dataset":
        return Dataset(self.names, self.values[np.asarray(idx)], self.transforms)

    def _replace(self, cols: Mapping[str, np.ndarray], tag: str) -> "Dataset":
        values = np.array(self.values)
        tr = dict(self.transforms)
        for s, v in cols.items():
            values[:, self.index(s)] = v
            tr[s] = tr[s] + (tag,)
        return Dataset(self.names, values, tr)


@dataclass(frozen=True)
class CorrelationTable:
    names: tuple[str, ...]
    matrix: np.ndarray

    def __getitem__(self, pair: tuple[str, str]) -> float:
        a, b = pair
        return float(self.matrix[self.names.index(a), self.names.index(b)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([""] + list(self.names))
            for s, row in zip(self.names, self.matrix):
                w.writerow([s] + [repr(float(v)) for v in row])


def _parse_cell(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"non-numeric cell {cell!r} at row {row}, column {col}") from None
    if not math.isfinite(v):
        raise DataError(f"non-finite cell {cell!r} at row {row}, column {col}")
    return v


def load_csv(path, header: bool = True) -> Dataset:
    """Read a numeric CSV file.

    Row numbers in error messages count file lines from 1, header included.
    Without a header, columns are named ``v1..vp``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not lines:
        raise DataError(f"{path} is empty")
    if header:
        names = [c.strip() for c in lines[0]]
        body = lines[1:]
        first = 2
        if len(set(names)) != len(names):
            dup = sorted({s for s in names if names.count(s) > 1})
            raise DataError(f"duplicate header names: {dup}")
    else:
        names = [f"v{j + 1}" for j in range(len(lines[0]))]
        body = lines
        first = 1
    if not body:
        raise DataError(f"{path} has no data rows")
    p = len(names)
    out = np.empty((len(body), p))
    for i, row in enumerate(body):
        if len(row) != p:
            raise DataError(f"ragged row {i + first}: expected {p} cells, got {len(row)}")
        for j, cell in enumerate(row):
            out[i, j] = _parse_cell(cell.strip(), i + first, names[j])
    return Dataset(tuple(names), out)


def write_csv(ds: Dataset, path, header: bool = True) -> None:
    # repr gives the shortest string that round-trips the float exactly
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(ds.names)
        for row in ds.values:
            w.writerow([repr(float(v)) for v in row])


def log_transform(ds: Dataset, cols: Iterable[str]) -> Dataset:
    """Replace the named columns by their natural log."""
    new = {}
    for s in cols:
        v = ds.column(s)
        bad = np.flatnonzero(v <= 0)
        if bad.size:
            raise DataError(
                f"column {s!r} has non-positive value {v[bad[0]]!r} at row {bad[0] + 1}"
            )
        new[s] = np.log(v)
    if not new:
        return ds
    return ds._replace(new, "logged")


def standardize(ds: Dataset, cols: Iterable[str] | None = None) -> Dataset:
    """Center and scale columns to sample mean 0 and sample sd 1 (n-1 denominator)."""
    cols = ds.names if cols is None else list(cols)
    new = {}
    for s in cols:
        v = ds.column(s)
        sd = v.std(ddof=1) if ds.n > 1 else 0.0
        if not sd > 0:
            raise NumericError(f"column {s!r} is constant")
        z = (v - v.mean()) / sd
        # second pass removes the rounding residue of the first
        z = (z - z.mean()) / z.std(ddof=1)
        new[s] = z
    if not new:
        return ds
    return ds._replace(new, "standardized")


def skewness(values) -> float:
    """Biased sample skewness m3 / m2**1.5."""
    v = np.asarray(values, dtype=float)
    if v.size < 3:
        raise DataError("skewness needs at least 3 values")
    d = v - v.mean()
    m2 = np.mean(d * d)
    if not m2 > 0:
        raise NumericError("skewness undefined for a constant vector")
    return float(np.mean(d**3) / m2**1.5)


def corr_matrix(ds: Dataset) -> CorrelationTable:
    X = ds.values - ds.values.mean(axis=0)
    ss = np.sqrt(np.sum(X * X, axis=0))
    if np.any(ss == 0):
        raise NumericError(f"constant column {ds.names[int(np.argmin(ss))]!r}")
    Xs = X / ss
    R = Xs.T @ Xs
    R = np.clip((R + R.T) / 2, -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    return CorrelationTable(ds.names, R)


def cov_to_corr(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    d = np.sqrt(np.diag(cov))
    R = cov / np.outer(d, d)
    np.fill_diagonal(R, 1.0)
    return R


def partial_corr(cov, i: int, j: int, Z: Iterable[int] = ()) -> float:
    """Partial correlation of ``i`` and ``j`` given ``Z`` from a covariance matrix.

    Uses the inverse of the covariance submatrix on ``{i, j} | Z``:
    ``-P[0, 1] / sqrt(P[0, 0] * P[1, 1])``.
    """
    Z = list(Z)
    if i == j or i in Z or j in Z:
        raise DataError("i, j and Z must be disjoint")
    idx = [i, j] + Z
    sub = np.asarray(cov, dtype=float)[np.ix_(idx, idx)]
    try:
        P = np.linalg.inv(sub)
    except np.linalg.LinAlgError:
        raise NumericError(f"singular covariance submatrix on {idx}") from None
    if np.linalg.cond(sub) > 1e14:
        raise NumericError(f"singular covariance submatrix on {idx}")
    return float(-P[0, 1] / math.sqrt(P[0, 0] * P[1, 1]))
