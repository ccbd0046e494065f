"""Dataset files and run artifacts.

Datasets are CSV with header ``id,stratum,x1,x2,cutoff``; x2 is empty when
no second measurement was recorded. Run artifacts are JSON documents that
echo the full spec and seed of the command that produced them, so every
result is replayable.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import __version__
from .bayes_engine.model import ModelSpec
from .bayes_engine.sampler import PosteriorDraws
from .data import PairDataset
from .errors import DataFormatError

CSV_HEADER = ["id", "stratum", "x1", "x2", "cutoff"]


@dataclass
class IngestReport:
    n_rows: int
    n_records: int
    n_excluded_above_cutoff: int


def ingest(path: str, retain_above_cutoff: bool = False
           ) -> tuple[PairDataset, IngestReport]:
    """Parse a dataset CSV.

    Rows carrying a second measurement although the first was at or above
    the stratum cutoff contradict the hard-cutoff retest protocol; they are
    counted and dropped unless retain_above_cutoff is set.
    """
    ids, strata, x1s, x2s, cuts = [], [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise DataFormatError(
                f"{path}: header must be {','.join(CSV_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise DataFormatError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            rid, stratum, x1_s, x2_s, cut_s = (c.strip() for c in row)
            try:
                x1 = float(x1_s)
                cut = float(cut_s)
                x2 = float(x2_s) if x2_s else np.nan
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if not np.isfinite(x1):
                raise DataFormatError(f"{path}:{lineno}: x1 must be finite")
            if not (np.isfinite(cut) and cut > 0):
                raise DataFormatError(f"{path}:{lineno}: cutoff must be positive")
            if x2_s and not np.isfinite(x2):
                raise DataFormatError(f"{path}:{lineno}: x2 must be finite when present")
            ids.append(rid)
            strata.append(stratum)
            x1s.append(x1)
            x2s.append(x2)
            cuts.append(cut)
    n_rows = len(ids)
    data = PairDataset(ids, strata, x1s, x2s, cuts)
    # stratum-cutoff consistency (raises with the offending stratum)
    try:
        data.stratum_cutoffs()
    except Exception as exc:
        raise DataFormatError(f"{path}: {exc}") from None
    excluded = 0
    if not retain_above_cutoff:
        bad = data.has_x2 & (data.x1 >= data.cutoff)
        excluded = int(bad.sum())
        if excluded:
            data = data.subset(~bad)
    return data, IngestReport(n_rows=n_rows, n_records=len(data),
                              n_excluded_above_cutoff=excluded)


def write_csv(data: PairDataset, path_or_file) -> None:
    fh = path_or_file if hasattr(path_or_file, "write") else open(
        path_or_file, "w", newline="")
    try:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i in range(len(data)):
            x2 = data.x2[i]
            writer.writerow([data.ids[i], data.strata[i],
                             repr(float(data.x1[i])),
                             "" if np.isnan(x2) else repr(float(x2)),
                             repr(float(data.cutoff[i]))])
    finally:
        if fh is not path_or_file:
            fh.close()


# ---------------------------------------------------------------------------
# Run artifacts
# ---------------------------------------------------------------------------

def _jsonable(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


@dataclass
class RunArtifact:
    command: str
    spec: dict
    seed: int | None
    results: dict
    runtime_s: float
    version: str = __version__
    created_unix: float = field(default_factory=time.time)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(_jsonable({
            "command": self.command,
            "spec": self.spec,
            "seed": self.seed,
            "version": self.version,
            "created_unix": self.created_unix,
            "runtime_s": self.runtime_s,
            "results": self.results,
        }), indent=indent)


# ---------------------------------------------------------------------------
# Fitted-parameter files for the decision surface
# ---------------------------------------------------------------------------

def draws_to_artifact_dict(draws: PosteriorDraws,
                           cutoffs: dict[str, float]) -> dict:
    return {
        "kind": "posterior-draws",
        "model_id": draws.model.model_id,
        "strata": list(draws.model.strata),
        "bounds": {k: list(v) if v is not None else None
                   for k, v in draws.model.bounds.items()},
        "param_names": draws.param_names,
        "draws": draws.draws.tolist(),
        "accept_rate": draws.accept_rate.tolist(),
        "rhat": draws.rhat,
        "ess": draws.ess,
        "converged": draws.converged,
        "seed": draws.seed,
        "warmup": draws.warmup,
        "iters": draws.iters,
        "cutoffs": cutoffs,
    }


def point_params_dict(model_id: str, theta: dict, cutoffs: dict[str, float],
                      bounds: dict | None = None) -> dict:
    return {
        "kind": "point-params",
        "model_id": model_id,
        "strata": list(theta),
        "bounds": {k: list(v) if v is not None else None
                   for k, v in (bounds or {}).items()},
        "theta": theta,
        "cutoffs": cutoffs,
    }


def load_fit_file(path: str):
    """Load a fitted-parameter JSON file.

    Returns (fit, cutoffs) where fit is either a PosteriorDraws or a
    (ModelSpec, theta) pair, matching what the decision module accepts.
    """
    with open(path) as fh:
        doc = json.load(fh)
    kind = doc.get("kind")
    bounds = {k: tuple(v) if v is not None else None
              for k, v in (doc.get("bounds") or {}).items()}
    cutoffs = {k: float(v) for k, v in (doc.get("cutoffs") or {}).items()}
    if kind == "point-params":
        model = ModelSpec(doc["model_id"], strata=tuple(doc["strata"]),
                          bounds=bounds)
        theta = {s: {k: float(v) for k, v in block.items()}
                 for s, block in doc["theta"].items()}
        return (model, theta), cutoffs
    if kind == "posterior-draws":
        model = ModelSpec(doc["model_id"], strata=tuple(doc["strata"]),
                          bounds=bounds)
        draws = PosteriorDraws(
            model=model, param_names=list(doc["param_names"]),
            draws=np.asarray(doc["draws"], dtype=float),
            accept_rate=np.asarray(doc["accept_rate"], dtype=float),
            rhat={k: float(v) for k, v in doc["rhat"].items()},
            ess={k: float(v) for k, v in doc["ess"].items()},
            converged=bool(doc["converged"]), seed=int(doc["seed"]),
            warmup=int(doc["warmup"]), iters=int(doc["iters"]))
        return draws, cutoffs
    raise DataFormatError(f"{path}: unknown fit file kind {kind!r}")
