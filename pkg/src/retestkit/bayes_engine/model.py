"""Hierarchical model classes a-d: parameter blocks, bounds, priors,
and the unconstrained reparameterization used by the sampler.

Model classes (population distribution / measurement error):
    a  normal / normal
    b  normal / Student t
    c  normal / two-component normal mixture (ordered scales)
    d  skew normal / Student t

Each stratum gets an independent copy of the parameter block; strata are
fit jointly but share nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ..data import PairDataset
from ..errors import DomainError
from ..stats_core import (
    Density,
    NormalDist,
    NormalMixtureDist,
    SkewNormalDist,
    StudentTDist,
)

MODEL_IDS = ("a", "b", "c", "d")

# parameter layout per model class; "ordered_after" chains a parameter to lie
# above another one within the same stratum block (mixture identifiability)
_LAYOUT = {
    "a": ("mu", "sigma_pop", "sigma_meas"),
    "b": ("mu", "sigma_pop", "s", "df"),
    "c": ("mu", "sigma_pop", "sigma_meas1", "sigma_meas2", "pi"),
    "d": ("mu_loc", "mu_scale", "mu_skew", "s", "df"),
}

_ORDERED = {"c": {"sigma_meas2": "sigma_meas1"}}

_SCALE_CAP = (0.2, 20.0)
_MIX_CAP = (0.2, 2.0)
_DF_CAP = (2.0, 30.0)


def default_bounds(model_id: str) -> dict[str, tuple | None]:
    """Parameter caps: scales in [0.2, 20] (mixture components and the
    skew-t measurement scale in [0.2, 2]), df in [2, 30], pi in [0, 1],
    skew shape in [-5, 5]; locations unbounded."""
    if model_id == "a":
        return {"mu": None, "sigma_pop": _SCALE_CAP, "sigma_meas": _SCALE_CAP}
    if model_id == "b":
        return {"mu": None, "sigma_pop": _SCALE_CAP, "s": _SCALE_CAP, "df": _DF_CAP}
    if model_id == "c":
        return {"mu": None, "sigma_pop": _SCALE_CAP,
                "sigma_meas1": _MIX_CAP, "sigma_meas2": _MIX_CAP, "pi": (0.0, 1.0)}
    if model_id == "d":
        return {"mu_loc": None, "mu_scale": _SCALE_CAP, "mu_skew": (-5.0, 5.0),
                "s": _MIX_CAP, "df": _DF_CAP}
    raise DomainError(f"unknown model id {model_id!r}")


def default_priors(model_id: str) -> dict[str, tuple]:
    """Weakly informative priors keeping prior-predictive measurements in a
    physiologically plausible band: normal(15, 2) locations, normal(0, 2)
    scales (normal(2, 2) for the wide mixture component), Beta(2, 2) weight,
    Gamma(2, rate 0.1) degrees of freedom."""
    norm15 = ("normal", 15.0, 2.0)
    half2 = ("normal", 0.0, 2.0)
    gamma_df = ("gamma", 2.0, 0.1)
    if model_id == "a":
        return {"mu": norm15, "sigma_pop": half2, "sigma_meas": half2}
    if model_id == "b":
        return {"mu": norm15, "sigma_pop": half2, "s": half2, "df": gamma_df}
    if model_id == "c":
        return {"mu": norm15, "sigma_pop": half2, "sigma_meas1": half2,
                "sigma_meas2": ("normal", 2.0, 2.0), "pi": ("beta", 2.0, 2.0)}
    if model_id == "d":
        return {"mu_loc": norm15, "mu_scale": ("normal", 1.0, 2.0),
                "mu_skew": ("normal", 0.0, 2.0), "s": ("normal", 1.0, 2.0),
                "df": gamma_df}
    raise DomainError(f"unknown model id {model_id!r}")


_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


def _skew_moments_to_params(mean: float, var: float,
                            skewness: float) -> tuple[float, float, float]:
    """Invert (mean, variance, skewness) to skew-normal (loc, scale, shape).

    Skewness is clipped inside the family's attainable range (~0.995).
    """
    b = _SQRT_2_OVER_PI
    g = float(np.clip(skewness, -0.93, 0.93))
    t = np.sign(g) * (2.0 * abs(g) / (4.0 - np.pi)) ** (1.0 / 3.0)
    delta = t / (b * np.sqrt(1.0 + t * t))
    delta = float(np.clip(delta, -0.995, 0.995))
    scale = np.sqrt(var / (1.0 - b * b * delta * delta))
    loc = mean - scale * delta * b
    shape = delta / np.sqrt(1.0 - delta * delta)
    return float(loc), float(scale), float(shape)


def _skew_centered_to_direct(m: float, sd: float,
                             shape: float) -> tuple[float, float, float, float]:
    """Map (population mean, population SD, shape) to skew-normal
    (loc, scale, shape) plus the log-Jacobian of the map.

    The sampler walks the centered coordinates: the direct (loc, scale,
    shape) triple has a curved near-flat ridge (loc, scale and shape can
    trade off while leaving the first two moments unchanged) that defeats
    random-walk proposals, while the centered ones are pinned by the data.
    The map is triangular, so |d(loc, scale, shape)/d(m, sd, shape)| =
    1/sqrt(1 - b^2 delta^2).
    """
    b = _SQRT_2_OVER_PI
    delta = shape / np.sqrt(1.0 + shape * shape)
    root = np.sqrt(1.0 - b * b * delta * delta)
    scale = sd / root
    loc = m - scale * delta * b
    return loc, scale, -np.log(root)


def _skew_direct_to_centered(loc: float, scale: float,
                             shape: float) -> tuple[float, float]:
    b = _SQRT_2_OVER_PI
    delta = shape / np.sqrt(1.0 + shape * shape)
    m = loc + scale * delta * b
    sd = scale * np.sqrt(1.0 - b * b * delta * delta)
    return m, sd


_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _prior_logpdf(kind_params, value: float) -> float:
    # direct formulas: these run once per parameter per posterior evaluation,
    # where scipy.stats dispatch overhead would dominate
    kind = kind_params[0]
    if kind == "normal":
        _, m, sd = kind_params
        z = (value - m) / sd
        return -0.5 * z * z - np.log(sd) - _LOG_SQRT_2PI
    if kind == "gamma":
        _, shape, rate = kind_params
        if value <= 0.0:
            return -np.inf
        return (shape * np.log(rate) - special.gammaln(shape)
                + (shape - 1.0) * np.log(value) - rate * value)
    if kind == "beta":
        _, a, b = kind_params
        if not 0.0 < value < 1.0:
            return -np.inf
        return ((a - 1.0) * np.log(value) + (b - 1.0) * np.log1p(-value)
                - special.betaln(a, b))
    raise DomainError(f"unknown prior kind {kind!r}")


@dataclass(frozen=True)
class PriorSpec:
    """Per-parameter prior families and hyperparameters (proper priors)."""

    params: dict[str, tuple]

    @classmethod
    def defaults(cls, model_id: str, overrides: dict | None = None) -> "PriorSpec":
        p = default_priors(model_id)
        if overrides:
            unknown = set(overrides) - set(p)
            if unknown:
                raise DomainError(f"unknown prior parameters {sorted(unknown)}")
            p.update(overrides)
        return cls(params=p)

    def logpdf(self, name: str, value: float) -> float:
        return _prior_logpdf(self.params[name], value)


@dataclass(frozen=True)
class ModelSpec:
    """One of the four hierarchical model classes with per-stratum blocks."""

    model_id: str
    strata: tuple[str, ...] = ("M", "F")
    bounds: dict = field(default_factory=dict)
    priors: PriorSpec | None = None

    def __post_init__(self):
        if self.model_id not in MODEL_IDS:
            raise DomainError(f"unknown model id {self.model_id!r}")
        if len(self.strata) < 1:
            raise DomainError("at least one stratum required")
        merged = default_bounds(self.model_id)
        unknown = set(self.bounds) - set(merged)
        if unknown:
            raise DomainError(f"unknown bound parameters {sorted(unknown)}")
        merged.update(self.bounds)
        object.__setattr__(self, "bounds", merged)
        if self.priors is None:
            object.__setattr__(self, "priors", PriorSpec.defaults(self.model_id))

    # -- layout ---------------------------------------------------------------

    @property
    def block_names(self) -> tuple[str, ...]:
        return _LAYOUT[self.model_id]

    @property
    def dim(self) -> int:
        return len(self.block_names) * len(self.strata)

    @property
    def flat_names(self) -> list[str]:
        return [f"{s}.{p}" for s in self.strata for p in self.block_names]

    def _ordered_parent(self, name: str) -> str | None:
        return _ORDERED.get(self.model_id, {}).get(name)

    # -- transforms -----------------------------------------------------------

    def to_constrained(self, u: np.ndarray) -> tuple[dict, float]:
        """Map an unconstrained vector to per-stratum parameter dicts,
        returning the summed log-Jacobian of the map.

        For model d the walked coordinates are the centered population
        (mean, SD, shape); the reported mu_loc/mu_scale are derived from
        them (see _skew_centered_to_direct), so the mu_loc/mu_scale bounds
        apply to the centered mean and SD.
        """
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise DomainError(f"expected vector of length {self.dim}")
        theta: dict[str, dict[str, float]] = {}
        log_jac = 0.0
        k = 0
        for s in self.strata:
            block: dict[str, float] = {}
            for name in self.block_names:
                b = self.bounds[name]
                parent = self._ordered_parent(name)
                if b is None:
                    block[name] = float(u[k])
                else:
                    lo, hi = b
                    if parent is not None:
                        lo = block[parent]  # ordered: this one sits above its parent
                    p = special.expit(u[k])
                    block[name] = lo + (hi - lo) * p
                    # log p + log(1-p) written via softplus for tail stability
                    log_jac += (np.log(hi - lo) - np.logaddexp(0.0, -u[k])
                                - np.logaddexp(0.0, u[k]))
                k += 1
            if self.model_id == "d":
                loc, scale, lj = _skew_centered_to_direct(
                    block["mu_loc"], block["mu_scale"], block["mu_skew"])
                block["mu_loc"] = loc
                block["mu_scale"] = scale
                log_jac += lj
            theta[s] = block
        return theta, float(log_jac)

    def _walked_block(self, block: dict) -> dict:
        """Invert derived parameters back to the coordinates the sampler
        walks (identity except for model d's centered population block)."""
        if self.model_id != "d":
            return block
        m, sd = _skew_direct_to_centered(block["mu_loc"], block["mu_scale"],
                                         block["mu_skew"])
        out = dict(block)
        out["mu_loc"] = m
        out["mu_scale"] = sd
        return out

    def from_constrained(self, theta: dict) -> np.ndarray:
        u = np.empty(self.dim)
        k = 0
        for s in self.strata:
            block = self._walked_block(theta[s])
            for name in self.block_names:
                b = self.bounds[name]
                if b is None:
                    u[k] = block[name]
                else:
                    lo, hi = b
                    parent = self._ordered_parent(name)
                    if parent is not None:
                        lo = block[parent]
                    frac = (block[name] - lo) / (hi - lo)
                    if not 0.0 < frac < 1.0:
                        raise DomainError(
                            f"{s}.{name}={block[name]} outside ({lo}, {hi})")
                    u[k] = special.logit(frac)
                k += 1
        return u

    def within_bounds(self, theta: dict) -> bool:
        for s in self.strata:
            try:
                block = self._walked_block(theta[s])
            except (KeyError, TypeError):
                return False
            for name in self.block_names:
                v = block[name]
                if not np.isfinite(v):
                    return False
                b = self.bounds[name]
                if b is not None and not (b[0] <= v <= b[1]):
                    return False
                parent = self._ordered_parent(name)
                if parent is not None and v < block[parent]:
                    return False
        return True

    # -- priors and densities ---------------------------------------------------

    def log_prior(self, theta: dict) -> float:
        total = 0.0
        for s in self.strata:
            for name in self.block_names:
                total += self.priors.logpdf(name, theta[s][name])
        return total

    def make_densities(self, block: dict) -> tuple[Density, Density]:
        """Population and measurement densities for one stratum block."""
        mid = self.model_id
        if mid == "a":
            return (NormalDist(block["mu"], block["sigma_pop"]),
                    NormalDist(0.0, block["sigma_meas"]))
        if mid == "b":
            return (NormalDist(block["mu"], block["sigma_pop"]),
                    StudentTDist(0.0, block["s"], block["df"]))
        if mid == "c":
            return (NormalDist(block["mu"], block["sigma_pop"]),
                    NormalMixtureDist(0.0, block["sigma_meas1"],
                                      block["sigma_meas2"], block["pi"]))
        return (SkewNormalDist(block["mu_loc"], block["mu_scale"], block["mu_skew"]),
                StudentTDist(0.0, block["s"], block["df"]))

    # -- initialization ---------------------------------------------------------

    def init_unconstrained(self, data: PairDataset,
                           rng: np.random.Generator | None = None,
                           jitter: float = 0.0) -> np.ndarray:
        """Moment-based starting point, clipped safely inside the bounds."""
        theta: dict[str, dict[str, float]] = {}
        for s in self.strata:
            sub = data.for_stratum(s)
            m = float(sub.x1.mean()) if len(sub) else 15.0
            v = float(sub.x1.var()) if len(sub) > 1 else 1.0
            v = max(v, 1e-3)
            sd = np.sqrt(v)
            block: dict[str, float] = {}
            if self.model_id in ("a", "b"):
                block["mu"] = m
                block["sigma_pop"] = np.sqrt(0.65 * v)
                key = "sigma_meas" if self.model_id == "a" else "s"
                block[key] = np.sqrt(0.35 * v)
                if self.model_id == "b":
                    block["df"] = 8.0
            elif self.model_id == "c":
                block["mu"] = m
                block["sigma_pop"] = np.sqrt(0.65 * v)
                block["sigma_meas1"] = 0.5 * sd
                block["sigma_meas2"] = 1.5 * sd
                block["pi"] = 0.7
            else:
                # third central moment of x1 belongs to the population part
                # (the error is symmetric); map sample skewness to the direct
                # skew-normal parameters through the centered parameterization
                pop_var = 0.65 * v
                if len(sub) > 2:
                    m3 = float(np.mean((sub.x1 - m) ** 3))
                else:
                    m3 = 0.0
                loc, scale, shape = _skew_moments_to_params(
                    m, pop_var, m3 / pop_var ** 1.5)
                block["mu_loc"] = loc
                block["mu_scale"] = scale
                block["mu_skew"] = shape
                block["s"] = np.sqrt(0.35 * v)
                block["df"] = 8.0
            for name in self.block_names:
                b = self.bounds[name]
                if b is not None:
                    lo, hi = b
                    parent = self._ordered_parent(name)
                    if parent is not None:
                        lo = block[parent]
                    span = hi - lo
                    block[name] = float(np.clip(block[name],
                                                lo + 0.05 * span, hi - 0.05 * span))
            theta[s] = block
        u = self.from_constrained(theta)
        if jitter > 0.0 and rng is not None:
            u = u + jitter * rng.standard_normal(self.dim)
        return u
