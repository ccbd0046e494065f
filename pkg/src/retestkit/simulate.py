"""Synthetic conditionally-repeated measurement datasets.

Every generator draws a latent true level T per individual, always records
x1 = T + error, and records x2 = T + error' only when a recheck draw under
the retest policy succeeds. Draws come from a Philox (counter-based)
generator so a given spec + seed reproduces byte-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PairDataset
from .errors import DomainError
from .stats_core import (
    NORMAL,
    NORMAL_MIXTURE,
    SKEW_NORMAL,
    STUDENT_T,
    MeasurementDensity,
    density_from_spec,
)


@dataclass(frozen=True)
class RetestPolicy:
    """Threshold plus recheck-probability form.

    rate = 0 is the hard cutoff (always retest below the threshold);
    rate > 0 gives recheck probability exp(-rate * (cutoff - x1)) below it.
    """

    cutoff: float
    rate: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.cutoff) and self.cutoff > 0.0):
            raise DomainError("cutoff must be positive")
        if not (np.isfinite(self.rate) and self.rate >= 0.0):
            raise DomainError("rate must be >= 0")


def recheck_probability(x1, policy: RetestPolicy):
    """Probability that a first measurement x1 triggers a second one."""
    if policy.rate < 0.0:
        raise DomainError("rate must be >= 0")
    x1 = np.asarray(x1, dtype=float)
    below = x1 < policy.cutoff
    if policy.rate == 0.0:
        p = below.astype(float)
    else:
        # clamp the gap at 0 so the discarded branch cannot overflow
        gap = np.maximum(policy.cutoff - x1, 0.0)
        p = np.where(below, np.exp(-policy.rate * gap), 0.0)
    return float(p) if p.ndim == 0 else p


@dataclass(frozen=True)
class GeneratorSpec:
    """Full recipe for one stratum's synthetic dataset."""

    population: MeasurementDensity
    measurement: MeasurementDensity
    policy: RetestPolicy
    n: int
    seed: int
    stratum: str = "all"

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("n must be >= 1")
        if self.measurement.location != 0.0:
            raise DomainError("measurement error must be centered at 0")


def simulate_pairs(spec: GeneratorSpec) -> PairDataset:
    """Draw n records under the spec; reproducible given the seed."""
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    pop = density_from_spec(spec.population)
    err = density_from_spec(spec.measurement)

    t = pop.rvs(rng, spec.n)
    x1 = t + err.rvs(rng, spec.n)
    p = recheck_probability(x1, spec.policy)
    retest = rng.random(spec.n) < p
    e2 = err.rvs(rng, spec.n)
    x2 = np.where(retest, t + e2, np.nan)

    width = len(str(max(spec.n - 1, 1)))
    ids = np.array([f"{spec.stratum}{i:0{width}d}" for i in range(spec.n)],
                   dtype=object)
    strata = np.full(spec.n, spec.stratum, dtype=object)
    cutoff = np.full(spec.n, spec.policy.cutoff)
    return PairDataset(ids, strata, x1, x2, cutoff)


# ---------------------------------------------------------------------------
# The four data-generating processes of the simulation study
# ---------------------------------------------------------------------------

# per-stratum (M, F) generation parameters for model classes a-d
DGP_PARAMS = {
    "a": {
        "M": dict(population=dict(family=NORMAL, location=14.8, scale=0.55),
                  measurement=dict(family=NORMAL, scale=0.55)),
        "F": dict(population=dict(family=NORMAL, location=13.8, scale=0.60),
                  measurement=dict(family=NORMAL, scale=0.55)),
    },
    "b": {
        "M": dict(population=dict(family=NORMAL, location=14.8, scale=0.55),
                  measurement=dict(family=STUDENT_T, scale=0.55, df=5.0)),
        "F": dict(population=dict(family=NORMAL, location=13.8, scale=0.60),
                  measurement=dict(family=STUDENT_T, scale=0.55, df=5.0)),
    },
    "c": {
        "M": dict(population=dict(family=NORMAL, location=14.8, scale=0.55),
                  measurement=dict(family=NORMAL_MIXTURE, scale=0.45,
                                   scale2=2.0, weight=0.80)),
        "F": dict(population=dict(family=NORMAL, location=13.8, scale=0.60),
                  measurement=dict(family=NORMAL_MIXTURE, scale=0.45,
                                   scale2=2.2, weight=0.80)),
    },
    "d": {
        "M": dict(population=dict(family=SKEW_NORMAL, location=14.8,
                                  scale=0.55, shape=5.0),
                  measurement=dict(family=STUDENT_T, scale=0.55, df=5.0)),
        "F": dict(population=dict(family=SKEW_NORMAL, location=13.8,
                                  scale=0.60, shape=-5.0),
                  measurement=dict(family=STUDENT_T, scale=0.55, df=5.0)),
    },
}

DEFAULT_CUTOFFS = {"M": 13.0, "F": 12.5}


def dgp_stratum_params(model_id: str) -> dict:
    if model_id not in DGP_PARAMS:
        raise DomainError(f"unknown model id {model_id!r}; expected one of a-d")
    return DGP_PARAMS[model_id]


def recovery_cutoffs(model_id: str, retest_fraction: float = 0.2,
                     stratum_params: dict | None = None) -> dict[str, float]:
    """Per-stratum cutoffs placing roughly the requested fraction of first
    measurements below the threshold (normal approximation to the marginal).

    Parameter-recovery studies need enough complete pairs to inform the
    measurement block, so they pick cutoffs from the generating moments
    rather than using the clinical thresholds.
    """
    from scipy.stats import norm

    if not (0.0 < retest_fraction < 1.0):
        raise DomainError("retest_fraction must be in (0, 1)")
    params = stratum_params if stratum_params is not None else dgp_stratum_params(model_id)
    z = norm.ppf(retest_fraction)
    out = {}
    for s, block in params.items():
        pop = density_from_spec(MeasurementDensity(**block["population"]))
        meas = density_from_spec(MeasurementDensity(**block["measurement"]))
        sd = float(np.sqrt(pop.var() + meas.var()))
        out[s] = round(float(pop.mean() + z * sd), 2)
    return out


def simulate_dgp(model_id: str, n: int, seed: int,
                 cutoffs: dict[str, float] | None = None,
                 stratum_params: dict | None = None,
                 rate: float = 0.0) -> PairDataset:
    """Sex-stratified dataset for one of the four generation processes.

    n is the per-stratum record count. stratum_params overrides the default
    generation table and must map stratum -> {population, measurement} blocks.
    """
    params = stratum_params if stratum_params is not None else dgp_stratum_params(model_id)
    cuts = dict(DEFAULT_CUTOFFS if cutoffs is None else cutoffs)
    seeds = np.random.SeedSequence(seed).spawn(len(params))
    parts = []
    for (stratum, block), ss in zip(params.items(), seeds):
        spec = GeneratorSpec(
            population=MeasurementDensity(**block["population"]),
            measurement=MeasurementDensity(**block["measurement"]),
            policy=RetestPolicy(cutoff=cuts[stratum], rate=rate),
            n=n,
            seed=int(ss.generate_state(1)[0]),
            stratum=stratum,
        )
        parts.append(simulate_pairs(spec))
    return PairDataset.concat(parts)
