"""Actionable outputs of a fitted model: the posterior density of one
person's true level given 1-2 measurements, the probability that the true
level clears a threshold, and strategy-level misclassification tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bayes_engine.sampler import PosteriorDraws
from .errors import DomainError
from .simulate import RetestPolicy, recheck_probability
from .stats_core import Density

GRID_POINTS = 2048
GRID_HALF_WIDTH_SDS = 10.0

STRATEGIES = ("single", "repeat")

# probability band in which a second measurement can still change the call
DEFAULT_INFORMATIVE_BAND = (0.2, 0.8)


@dataclass(frozen=True)
class DecisionReport:
    stratum: str
    x1: float
    x2: float | None
    cutoff: float
    probability_eligible: float
    posterior_mean: float
    posterior_sd: float
    recommendation: str            # accept | defer | retest-informative
    band: tuple[float, float]
    grid: np.ndarray               # latent level values
    prior_density: np.ndarray
    likelihood_density: np.ndarray  # normalized on the grid for plotting
    posterior_density: np.ndarray
    averaged_over_draws: bool
    n_draws: int
    warnings: tuple[str, ...] = field(default=())

    def as_dict(self, include_grid: bool = True) -> dict:
        out = {
            "stratum": self.stratum, "x1": self.x1, "x2": self.x2,
            "cutoff": self.cutoff,
            "probability_eligible": self.probability_eligible,
            "posterior_mean": self.posterior_mean,
            "posterior_sd": self.posterior_sd,
            "recommendation": self.recommendation,
            "band": list(self.band),
            "averaged_over_draws": self.averaged_over_draws,
            "n_draws": self.n_draws,
            "warnings": list(self.warnings),
        }
        if include_grid:
            out["grid"] = self.grid.tolist()
            out["prior_density"] = self.prior_density.tolist()
            out["likelihood_density"] = self.likelihood_density.tolist()
            out["posterior_density"] = self.posterior_density.tolist()
        return out


def _tail_mass(grid: np.ndarray, density: np.ndarray, cutoff: float) -> float:
    """Trapezoid mass above the cutoff with linear interpolation of the
    density at the cutoff itself."""
    if cutoff <= grid[0]:
        return 1.0
    if cutoff >= grid[-1]:
        return 0.0
    i = int(np.searchsorted(grid, cutoff))
    d_at = np.interp(cutoff, grid, density)
    tail = np.trapezoid(density[i:], grid[i:])
    tail += 0.5 * (d_at + density[i]) * (grid[i] - cutoff)
    return float(min(max(tail, 0.0), 1.0))


def _grid_for(pop: Density) -> np.ndarray:
    center = pop.mean()
    half = GRID_HALF_WIDTH_SDS * np.sqrt(pop.var())
    return np.linspace(center - half, center + half, GRID_POINTS)


def _theta_list(fit, stratum: str, n_draws: int):
    """Normalize the fitted-parameter argument to a list of per-stratum
    blocks plus metadata: accepts PosteriorDraws or a plain theta dict."""
    warnings: list[str] = []
    if isinstance(fit, PosteriorDraws):
        model = fit.model
        if stratum not in model.strata:
            raise DomainError(f"stratum {stratum!r} not present in the fit")
        if not fit.converged:
            warnings.append("fit flagged non-converged; results may be unstable")
        idx = fit.thin_indices(n_draws)
        blocks = [fit.theta_at(int(i))[stratum] for i in idx]
        return model, blocks, True, warnings
    model, theta = fit
    if stratum not in theta:
        raise DomainError(f"stratum {stratum!r} not present in the parameters")
    return model, [theta[stratum]], False, warnings


def eligibility_probability(x1: float, x2: float | None, cutoff: float, fit,
                            stratum: str, n_draws: int = 500,
                            band: tuple[float, float] = DEFAULT_INFORMATIVE_BAND
                            ) -> DecisionReport:
    """Posterior probability that the true level is at least the cutoff,
    given one or two measurements.

    fit is either a PosteriorDraws (averaged over up to n_draws thinned
    posterior draws) or a (ModelSpec, theta-dict) pair for point-estimate
    mode. The posterior over the latent level is computed on a wide fixed
    grid; heavy-tailed error families keep real mass far from the
    measurements, hence the +-10 population-SD span.
    """
    if not np.isfinite(x1) or (x2 is not None and not np.isfinite(x2)):
        raise DomainError("measurements must be finite")
    model, blocks, averaged, warnings = _theta_list(fit, stratum, n_draws)

    pop0, _ = model.make_densities(blocks[0])
    grid = _grid_for(pop0)
    xs = [x1] if x2 is None else [x1, x2]

    # draw-averaged joint density p(T, x) on the grid; normalizing at the
    # end yields the mixture posterior with weights p(x | theta_s)
    joint = np.zeros(GRID_POINTS)
    prior = np.zeros(GRID_POINTS)
    like = np.zeros(GRID_POINTS)
    for block in blocks:
        pop, meas = model.make_densities(block)
        lp = pop.logpdf(grid)
        ll = np.zeros(GRID_POINTS)
        for x in xs:
            ll += meas.logpdf(x - grid)
        joint += np.exp(lp + ll)
        prior += np.exp(lp)
        like += np.exp(ll)
    z = np.trapezoid(joint, grid)
    if not (np.isfinite(z) and z > 0.0):
        raise DomainError("posterior density vanished on the entire grid")
    posterior = joint / z
    prior /= len(blocks)
    like_z = np.trapezoid(like, grid)
    like = like / like_z if like_z > 0 else like

    prob = _tail_mass(grid, posterior, cutoff)
    mean = float(np.trapezoid(grid * posterior, grid))
    sd = float(np.sqrt(max(np.trapezoid((grid - mean) ** 2 * posterior, grid), 0.0)))
    if prob >= band[1]:
        recommendation = "accept"
    elif prob <= band[0]:
        recommendation = "defer"
    else:
        recommendation = "retest-informative"
    return DecisionReport(
        stratum=stratum, x1=float(x1), x2=None if x2 is None else float(x2),
        cutoff=float(cutoff), probability_eligible=prob,
        posterior_mean=mean, posterior_sd=sd, recommendation=recommendation,
        band=tuple(band), grid=grid, prior_density=prior,
        likelihood_density=like, posterior_density=posterior,
        averaged_over_draws=averaged, n_draws=len(blocks), warnings=tuple(warnings))


@dataclass(frozen=True)
class MisclassificationRow:
    stratum: str
    strategy: str
    false_deferral_pct: float
    false_bleed_pct: float
    one_minus_ppv_pct: float
    one_minus_npv_pct: float
    n_sim: int

    def as_dict(self) -> dict:
        return {
            "stratum": self.stratum, "strategy": self.strategy,
            "FD_pct": self.false_deferral_pct, "FB_pct": self.false_bleed_pct,
            "one_minus_PPV_pct": self.one_minus_ppv_pct,
            "one_minus_NPV_pct": self.one_minus_npv_pct, "n_sim": self.n_sim,
        }


def _rate(num: float, den: float) -> float:
    # degenerate strategies can have empty cells; report exact zeros, not NaN
    return 0.0 if den == 0.0 else num / den


def misclassification_table(fit, policies: dict[str, RetestPolicy],
                            strategy: str, n_sim: int = 1_000_000,
                            seed: int = 0) -> list[MisclassificationRow]:
    """Monte Carlo misclassification rates per stratum under a strategy.

    Simulates true levels and measurements from the fitted model.
    "single" accepts when the first measurement clears the stratum cutoff;
    "repeat" retests below the cutoff per the policy and accepts when
    either measurement clears it. FD: truly eligible but deferred;
    FB: truly below but accepted (percentages of the whole population).
    """
    if strategy not in STRATEGIES:
        raise DomainError(f"unknown strategy {strategy!r}")
    if n_sim < 10_000:
        raise DomainError("n_sim must be at least 10^4")
    if isinstance(fit, PosteriorDraws):
        model = fit.model
        point = {s: {} for s in model.strata}
        stacked = fit.stacked()
        for j, name in enumerate(fit.param_names):
            s, p = name.split(".", 1)
            point[s][p] = float(stacked[:, j].mean())
    else:
        model, point = fit
    rows = []
    seeds = np.random.SeedSequence(seed).spawn(len(policies))
    for (stratum, policy), ss in zip(policies.items(), seeds):
        if stratum not in point:
            raise DomainError(f"stratum {stratum!r} not present in the fit")
        pop, meas = model.make_densities(point[stratum])
        rng = np.random.Generator(np.random.Philox(key=ss.generate_state(1)[0]))
        c = policy.cutoff
        t = pop.rvs(rng, n_sim)
        x1 = t + meas.rvs(rng, n_sim)
        if strategy == "single":
            accept = x1 >= c
        else:
            p_re = recheck_probability(x1, policy)
            retested = rng.random(n_sim) < p_re
            x2 = np.where(retested, t + meas.rvs(rng, n_sim), np.nan)
            accept = (x1 >= c) | (retested & (x2 >= c))
        eligible = t >= c
        fd = np.mean(eligible & ~accept)
        fb = np.mean(~eligible & accept)
        p_defer = np.mean(~accept)
        p_accept = np.mean(accept)
        rows.append(MisclassificationRow(
            stratum=stratum, strategy=strategy,
            false_deferral_pct=100.0 * fd, false_bleed_pct=100.0 * fb,
            one_minus_ppv_pct=100.0 * _rate(fd, p_defer),
            one_minus_npv_pct=100.0 * _rate(fb, p_accept),
            n_sim=n_sim))
    return rows
