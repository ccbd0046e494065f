"""Columnar container for conditionally repeated measurement records."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class MeasurementPair:
    """One individual's first measurement and optional conditional second."""

    id: str
    stratum: str
    x1: float
    x2: float | None
    cutoff: float

    def __post_init__(self):
        if not np.isfinite(self.x1):
            raise DomainError("x1 must be finite")
        if self.x2 is not None and not np.isfinite(self.x2):
            raise DomainError("x2 must be finite when present")
        if not (np.isfinite(self.cutoff) and self.cutoff > 0.0):
            raise DomainError("cutoff must be positive")


class PairDataset:
    """Array-backed collection of MeasurementPair records.

    x2 uses NaN for "no second measurement". Iteration and indexing yield
    MeasurementPair objects; the arrays are what the estimators consume.
    """

    def __init__(self, ids, strata, x1, x2, cutoff):
        self.ids = np.asarray(ids, dtype=object)
        self.strata = np.asarray(strata, dtype=object)
        self.x1 = np.asarray(x1, dtype=float)
        self.x2 = np.asarray(x2, dtype=float)
        self.cutoff = np.asarray(cutoff, dtype=float)
        n = len(self.x1)
        for name, arr in (("ids", self.ids), ("strata", self.strata),
                          ("x2", self.x2), ("cutoff", self.cutoff)):
            if len(arr) != n:
                raise DomainError(f"column {name} has length {len(arr)}, expected {n}")
        if n and not np.all(np.isfinite(self.x1)):
            raise DomainError("x1 must be finite in every record")
        if n and not np.all(np.isfinite(self.cutoff) & (self.cutoff > 0.0)):
            raise DomainError("cutoff must be positive in every record")

    # -- collection protocol -------------------------------------------------

    def __len__(self) -> int:
        return len(self.x1)

    def __getitem__(self, i) -> MeasurementPair:
        x2 = self.x2[i]
        return MeasurementPair(
            id=str(self.ids[i]), stratum=str(self.strata[i]),
            x1=float(self.x1[i]), x2=None if np.isnan(x2) else float(x2),
            cutoff=float(self.cutoff[i]),
        )

    def __iter__(self) -> Iterator[MeasurementPair]:
        for i in range(len(self)):
            yield self[i]

    # -- helpers -------------------------------------------------------------

    @property
    def has_x2(self) -> np.ndarray:
        return ~np.isnan(self.x2)

    @property
    def n_pairs(self) -> int:
        return int(self.has_x2.sum())

    def stratum_labels(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.strata:
            seen.setdefault(str(s))
        return list(seen)

    def subset(self, mask) -> "PairDataset":
        return PairDataset(self.ids[mask], self.strata[mask],
                           self.x1[mask], self.x2[mask], self.cutoff[mask])

    def for_stratum(self, stratum: str) -> "PairDataset":
        return self.subset(self.strata == stratum)

    def take(self, idx) -> "PairDataset":
        idx = np.asarray(idx, dtype=int)
        return PairDataset(self.ids[idx], self.strata[idx],
                           self.x1[idx], self.x2[idx], self.cutoff[idx])

    def single_cutoff(self) -> float:
        vals = np.unique(self.cutoff)
        if len(vals) != 1:
            raise DomainError(f"dataset mixes cutoffs {vals}; select one stratum first")
        return float(vals[0])

    def stratum_cutoffs(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for s in self.stratum_labels():
            vals = np.unique(self.cutoff[self.strata == s])
            if len(vals) != 1:
                raise DomainError(f"stratum {s!r} has multiple cutoffs {vals}")
            out[s] = float(vals[0])
        return out

    @classmethod
    def from_records(cls, records: Sequence[MeasurementPair]) -> "PairDataset":
        return cls(
            ids=[r.id for r in records],
            strata=[r.stratum for r in records],
            x1=[r.x1 for r in records],
            x2=[np.nan if r.x2 is None else r.x2 for r in records],
            cutoff=[r.cutoff for r in records],
        )

    @classmethod
    def concat(cls, parts: Sequence["PairDataset"]) -> "PairDataset":
        return cls(
            ids=np.concatenate([p.ids for p in parts]),
            strata=np.concatenate([p.strata for p in parts]),
            x1=np.concatenate([p.x1 for p in parts]),
            x2=np.concatenate([p.x2 for p in parts]),
            cutoff=np.concatenate([p.cutoff for p in parts]),
        )
