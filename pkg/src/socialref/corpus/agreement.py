"""Nominal Krippendorff's alpha for annotator agreement."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from socialref.errors import DataError, InsufficientDataError

RELIABLE_ALPHA = 0.8


@dataclass(frozen=True)
class RatingMatrix:
    """items x annotators category codes; NaN marks a missing rating."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] < 2:
            raise InsufficientDataError("need an items x annotators matrix with >= 2 annotators")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_rows(cls, rows, missing=None):
        return cls(np.array([[np.nan if x is missing else float(x) for x in row] for row in rows]))

    @classmethod
    def from_csv(cls, path):
        """One row per item, one column per annotator; empty cells are missing.
        A header row is skipped when its cells are not numeric."""
        path = Path(path)
        try:
            with path.open(newline="") as fh:
                rows = [r for r in csv.reader(fh) if r]
        except OSError as exc:
            raise DataError(f"cannot read ratings file {path}: {exc}") from exc
        if rows and not all(_numeric(c) for c in rows[0] if c.strip()):
            rows = rows[1:]
        try:
            return cls.from_rows([[float(c) if c.strip() else None for c in r] for r in rows])
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric rating: {exc}") from exc


def _numeric(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def coincidence_matrix(ratings: RatingMatrix):
    v = ratings.values
    present = ~np.isnan(v)
    categories = np.unique(v[present])
    index = {c: i for i, c in enumerate(categories)}
    o = np.zeros((len(categories), len(categories)))
    for row, mask in zip(v, present):
        m = int(mask.sum())
        if m < 2:
            continue
        counts = np.zeros(len(categories))
        for x in row[mask]:
            counts[index[x]] += 1
        o += (np.outer(counts, counts) - np.diag(counts)) / (m - 1)
    return categories, o


def krippendorff_alpha(ratings: RatingMatrix) -> float:
    if not isinstance(ratings, RatingMatrix):
        ratings = RatingMatrix(ratings)
    _, o = coincidence_matrix(ratings)
    n = o.sum()
    if n == 0:
        raise InsufficientDataError("no item carries two or more ratings")
    n_c = o.sum(axis=1)
    observed = n - np.trace(o)
    expected = (n * n - (n_c * n_c).sum()) / (n - 1)
    if expected == 0:
        raise InsufficientDataError("all pairable ratings share one category (no variation)")
    return float(1.0 - observed / expected)
