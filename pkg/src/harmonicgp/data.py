"""Datasets and CSV input/output.

CSV files carry a header row and comma-separated values written with 17
significant digits, so emitted floats round-trip bitwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Dataset:
    """Point observations: coordinates plus one value column.

    ``values`` are real targets for regression, {0,1} labels for
    classification, or non-negative integer counts for point-process data
    (with per-point ``exposures``).
    """

    points: np.ndarray
    values: np.ndarray
    exposures: np.ndarray | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if pts.shape[0] != vals.shape[0]:
            raise ValueError(f"{pts.shape[0]} points vs {vals.shape[0]} values")
        if pts.size and not np.isfinite(pts).all():
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)

    @property
    def n(self):
        return self.values.shape[0]


def read_dataset(path, value_column="value"):
    """Read a CSV with columns x, y, <value_column> into a :class:`Dataset`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        cols = {name: k for k, name in enumerate(header)}
        for need in ("x", "y", value_column):
            if need not in cols:
                raise ValueError(f"{path}: missing column {need!r} (header: {header})")
        pts, vals = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                pts.append((float(row[cols["x"]]), float(row[cols["y"]])))
                vals.append(float(row[cols[value_column]]))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: bad row {row!r}: {exc}") from None
    return Dataset(np.array(pts).reshape(-1, 2), np.array(vals))


def read_points(path):
    """Read a CSV with columns x, y into an (n, 2) array."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        cols = {name: k for k, name in enumerate(header)}
        for need in ("x", "y"):
            if need not in cols:
                raise ValueError(f"{path}: missing column {need!r} (header: {header})")
        pts = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                pts.append((float(row[cols["x"]]), float(row[cols["y"]])))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: bad row {row!r}: {exc}") from None
    return np.array(pts).reshape(-1, 2)


def write_csv(path, header, columns):
    """Write columns (equal-length 1D arrays) under the given header names."""
    columns = [np.asarray(c) for c in columns]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def two_moons(n, seed, noise=0.08):
    """Seeded two-interleaved-moons classification sample in the unit square.

    Stands in for the classic banana-shaped benchmark; labels are 0/1 per
    moon. Returns (points (n, 2), labels (n,)).
    """
    rng = np.random.default_rng(seed)
    n1 = n // 2
    n0 = n - n1
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    pts = np.concatenate(
        [
            np.column_stack([np.cos(t0), np.sin(t0)]),
            np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)]),
        ]
    )
    pts += noise * rng.standard_normal(pts.shape)
    labels = np.concatenate([np.zeros(n0), np.ones(n1)])
    # fixed affine map of the construction's bounding box into [0.15, 0.85]^2
    lo = np.array([-1.3, -0.8])
    hi = np.array([2.3, 1.3])
    pts = 0.15 + 0.7 * (pts - lo) / (hi - lo)
    return pts, labels
