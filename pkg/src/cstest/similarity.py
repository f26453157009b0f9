"""Gower distance over non-protected attributes and exact k-nearest neighbourhoods.

Per-attribute distance is ``|a - b| / (max - min)`` for continuous, ordinal and
interval attributes and ``1[a != b]`` for categorical ones; the total is their
mean. Zero-range numeric attributes contribute 0. Counterfactual centres can
sit outside the observed range, in which case a numeric term may exceed 1; no
clamping is applied.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

from .data import DatasetTable, IndividualProfile
from .errors import DataError, EmptyPoolError


@dataclass(frozen=True)
class AttributeRange:
    name: str
    kind: str
    lo: float | None = None
    hi: float | None = None

    @property
    def categorical(self) -> bool:
        return self.kind == "categorical"

    @property
    def span(self) -> float:
        return 0.0 if self.categorical else self.hi - self.lo


@dataclass(frozen=True)
class DistanceSpec:
    attributes: tuple[AttributeRange, ...]
    # per categorical attribute: sorted labels, code = position
    categories: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def __post_init__(self):
        if not self.attributes:
            raise DataError("distance needs at least one attribute")
        for a in self.attributes:
            if not a.categorical:
                if a.lo is None or a.hi is None or not (math.isfinite(a.lo) and math.isfinite(a.hi)):
                    raise DataError(f"attribute {a.name!r} needs a finite range")
                if a.hi < a.lo:
                    raise DataError(f"attribute {a.name!r}: max < min")
                if a.hi == a.lo:
                    warnings.warn(f"attribute {a.name!r} has zero range; it never adds distance", stacklevel=3)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def __len__(self) -> int:
        return len(self.attributes)

    @classmethod
    def from_table(cls, table: DatasetTable) -> "DistanceSpec":
        """Use every nonProtected column; ranges are those observed over the whole table."""
        attrs, cats = [], []
        for name in table.non_protected:
            s = table.attribute(name)
            if s.numeric:
                attrs.append(AttributeRange(name, s.kind, s.observed_min, s.observed_max))
            else:
                attrs.append(AttributeRange(name, "categorical"))
                cats.append((name, tuple(sorted(set(table.column(name).tolist())))))
        return cls(tuple(attrs), tuple(cats))

    def _codes(self) -> dict[str, dict[str, int]]:
        return {name: {lab: i for i, lab in enumerate(labels)} for name, labels in self.categories}

    def encode(self, x: Sequence[Any]) -> np.ndarray:
        """Mixed-type vector -> float vector (categorical labels become integer codes)."""
        if len(x) != len(self.attributes):
            raise DataError(f"vector has {len(x)} values, distance expects {len(self.attributes)}")
        codes = self._codes()
        out = np.empty(len(x))
        for j, (a, v) in enumerate(zip(self.attributes, x)):
            if a.categorical:
                try:
                    out[j] = codes[a.name][str(v)]
                except KeyError:
                    raise DataError(f"unknown category {v!r} for attribute {a.name!r}") from None
            else:
                out[j] = float(v)
        return out

    def matrix(self, table: DatasetTable, index: np.ndarray | None = None) -> np.ndarray:
        """Encoded attribute matrix for (a subset of) table rows."""
        idx = np.arange(table.n) if index is None else np.asarray(index)
        codes = self._codes()
        cols = []
        for a in self.attributes:
            col = table.column(a.name)[idx]
            if a.categorical:
                m = codes[a.name]
                try:
                    cols.append(np.fromiter((m[str(v)] for v in col), dtype=np.float64, count=len(col)))
                except KeyError as e:
                    raise DataError(f"unknown category {e.args[0]!r} for attribute {a.name!r}") from None
            else:
                cols.append(col.astype(np.float64))
        return np.column_stack(cols) if cols else np.empty((len(idx), 0))


def gower(spec: DistanceSpec, x1: Sequence[Any], x2: Sequence[Any]) -> float:
    """Gower distance between two raw (mixed-type) attribute vectors."""
    m = len(spec.attributes)
    if len(x1) != m or len(x2) != m:
        raise DataError(f"vectors must have {m} values, got {len(x1)} and {len(x2)}")
    total = 0.0
    for a, u, v in zip(spec.attributes, x1, x2):
        if a.categorical:
            total = total + float(u != v)
            continue
        u, v = float(u), float(v)
        if not (math.isfinite(u) and math.isfinite(v)):
            raise DataError(f"non-finite value for attribute {a.name!r}")
        if a.span > 0:
            total = total + abs(u - v) / a.span
    return total / m


def distances_to(spec: DistanceSpec, center: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Gower distance from an encoded centre to each row of an encoded matrix.

    Summation runs over attributes in the same order as :func:`gower`, so the
    two agree bit for bit.
    """
    center = np.asarray(center, dtype=np.float64)
    if not np.isfinite(center).all():
        raise DataError("non-finite value in centre vector")
    total = np.zeros(points.shape[0])
    for j, a in enumerate(spec.attributes):
        if a.categorical:
            total = total + (points[:, j] != center[j]).astype(np.float64)
        elif a.span > 0:
            total = total + np.abs(center[j] - points[:, j]) / a.span
    return total / len(spec.attributes)


@dataclass(frozen=True)
class CandidatePool:
    row_ids: np.ndarray
    points: np.ndarray

    @classmethod
    def from_table(cls, spec: DistanceSpec, table: DatasetTable, mask: np.ndarray | None = None) -> "CandidatePool":
        idx = np.arange(table.n) if mask is None else np.flatnonzero(mask)
        return cls(table.row_ids[idx], spec.matrix(table, idx))

    @classmethod
    def from_profiles(cls, spec: DistanceSpec, profiles: Iterable[IndividualProfile]) -> "CandidatePool":
        profiles = list(profiles)
        ids = np.asarray([p.row_id for p in profiles], dtype=np.int64)
        pts = np.asarray([spec.encode(p.x) for p in profiles]).reshape(len(profiles), len(spec))
        return cls(ids, pts)

    def __len__(self) -> int:
        return len(self.row_ids)


@dataclass(frozen=True)
class Neighborhood:
    center: Any  # row id (factual centre) or tuple of attribute values (synthetic centre)
    member_ids: np.ndarray
    distances: np.ndarray
    k: int

    @property
    def size(self) -> int:
        return len(self.member_ids)

    @property
    def shortfall(self) -> int:
        return self.k - self.size

    def prefix(self, k: int) -> "Neighborhood":
        return Neighborhood(self.center, self.member_ids[:k], self.distances[:k], k)

    def to_dict(self) -> dict:
        center = self.center if isinstance(self.center, int) else [float(v) for v in self.center]
        return {
            "center": center,
            "k": self.k,
            "size": self.size,
            "member_ids": self.member_ids.tolist(),
            "distances": self.distances.tolist(),
        }


def knn(
    spec: DistanceSpec,
    center: Sequence[Any] | np.ndarray,
    candidates: CandidatePool,
    k: int,
    exclude: Iterable[int] = (),
    *,
    center_label: Any = None,
    encoded: bool = False,
) -> Neighborhood:
    """The ``k`` candidates closest to ``center``; ties go to the smaller row id.

    If fewer than ``k`` candidates remain after exclusion the whole pool is
    returned (``Neighborhood.shortfall`` > 0).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ids, pts = candidates.row_ids, candidates.points
    exclude = list(exclude)
    if exclude:
        keep = ~np.isin(ids, exclude)
        ids, pts = ids[keep], pts[keep]
    if len(ids) == 0:
        who = center_label if center_label is not None else "center"
        raise EmptyPoolError(f"no candidates left for complainant {who}")
    c = np.asarray(center, dtype=np.float64) if encoded else spec.encode(center)
    d = distances_to(spec, c, pts)
    take = min(k, len(ids))
    if take < len(ids):
        kth = np.partition(d, take - 1)[take - 1]
        sel = np.flatnonzero(d <= kth)
    else:
        sel = np.arange(len(ids))
    order = sel[np.lexsort((ids[sel], d[sel]))][:take]
    label = center_label if center_label is not None else tuple(float(v) for v in c)
    return Neighborhood(label, ids[order], d[order], k)
