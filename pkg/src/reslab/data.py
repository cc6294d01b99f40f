"""Datasets: an input matrix plus scalar labels, and CSV ingestion."""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, EmptyDataset, EmptyInput, ParseError


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray  # (n, d_x)
    y: np.ndarray  # (n,)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] == 0:
            raise EmptyInput("dataset has no examples")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} labels")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains NaN or Inf")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    def permuted(self, order) -> "Dataset":
        order = np.asarray(order)
        return Dataset(self.X[order], self.y[order])


def load_dataset(path) -> Dataset:
    """Read a CSV with header ``x1,...,xd,y``.

    Line numbers in errors count the header as line 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset("file is empty", line=1) from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[-1] != "y":
            raise ParseError(f"header must be x1,...,xd,y; got {','.join(header)}", line=1)
        width = len(header)
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != width:
                raise DimensionError(f"expected {width} fields, found {len(row)}", line=line)
            values = []
            for cell in row:
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"not a number: {cell.strip()!r}", line=line) from None
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value {cell.strip()!r}", line=line)
                values.append(v)
            rows.append(values)
    if not rows:
        raise EmptyDataset("no data rows after the header", line=2)
    arr = np.array(rows)
    return Dataset(arr[:, :-1], arr[:, -1])
