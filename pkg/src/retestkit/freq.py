"""Frequentist decomposition of total variance into population and
measurement components from conditionally repeated pairs.

Three estimators of the first/second-measurement correlation rho:

- naive: half the variance of within-pair differences, biased downward
  under conditional retesting (the bias has the closed form implemented
  in theoretical_naive_bias);
- conditional expectation: uses the downward shift of the two conditional
  means below the cutoff, so it needs to know the cutoff;
- maximum likelihood: root of the cubic score of the truncated bivariate
  normal likelihood, cutoff-free.

All three decompose via sigma_pop^2 = rho * sigma_total^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PairDataset
from .errors import DomainError, EstimationError
from .stats_core import std_normal_lambda

METHODS = ("naive", "conditional_expectation", "mle")

PARAM_NAMES = ("mu_hat", "sigma_total_sq_hat", "rho_hat",
               "sigma_pop_sq_hat", "sigma_meas_sq_hat")


@dataclass(frozen=True)
class FrequentistEstimate:
    method: str
    mu_hat: float
    sigma_total_sq_hat: float
    rho_hat: float
    sigma_pop_sq_hat: float
    sigma_meas_sq_hat: float
    n_pairs: int
    n_total: int
    rho_clamped: bool = False

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "mu_hat": self.mu_hat,
            "sigma_total_sq_hat": self.sigma_total_sq_hat,
            "rho_hat": self.rho_hat,
            "sigma_pop_sq_hat": self.sigma_pop_sq_hat,
            "sigma_meas_sq_hat": self.sigma_meas_sq_hat,
            "n_pairs": self.n_pairs,
            "n_total": self.n_total,
            "rho_clamped": self.rho_clamped,
        }


def _decompose(method, mu, s2_tot, rho, n_pairs, n_total) -> FrequentistEstimate:
    clamped = False
    if rho < 0.0:
        rho, clamped = 0.0, True
    elif rho > 1.0:
        rho, clamped = 1.0, True
    pop = rho * s2_tot
    meas = s2_tot - pop
    # report the recomputed sum (<= 1 ulp from the sample variance) so the
    # decomposition identity pop + meas == total holds exactly
    s2_tot = pop + meas
    return FrequentistEstimate(method=method, mu_hat=float(mu),
                               sigma_total_sq_hat=float(s2_tot),
                               rho_hat=float(rho),
                               sigma_pop_sq_hat=float(pop),
                               sigma_meas_sq_hat=float(meas),
                               n_pairs=int(n_pairs), n_total=int(n_total),
                               rho_clamped=clamped)


def sample_mean_var(data: PairDataset) -> tuple[float, float]:
    """Sample mean and unbiased variance of all first measurements."""
    if len(data) < 2:
        raise EstimationError("need at least 2 records", n=len(data))
    return float(data.x1.mean()), float(data.x1.var(ddof=1))


def naive_sigma_meas_sq(data: PairDataset) -> float:
    """Half the sample variance of x1 - x2 over complete pairs.

    Biased downward when the second measurement is conditional on the
    first falling below a cutoff; see theoretical_naive_bias.
    """
    m = data.has_x2
    if m.sum() < 2:
        raise EstimationError("need at least 2 complete pairs", n_pairs=int(m.sum()))
    delta = data.x1[m] - data.x2[m]
    return float(delta.var(ddof=1) / 2.0)


def theoretical_naive_bias(mu: float, sigma_pop: float, sigma_meas: float,
                           c: float) -> float:
    """Downward bias of the naive estimator under a hard cutoff at c:
    (sigma_meas^4 / (2 sigma_total^2)) * (alpha*lam + lam^2).
    """
    if sigma_pop <= 0.0 or sigma_meas <= 0.0:
        raise DomainError("scales must be positive")
    s2_tot = sigma_pop ** 2 + sigma_meas ** 2
    tf = std_normal_lambda((c - mu) / np.sqrt(s2_tot))
    return sigma_meas ** 4 / (2.0 * s2_tot) * (tf.alpha * tf.lam + tf.lam ** 2)


def estimate_naive(data: PairDataset) -> FrequentistEstimate:
    """Naive decomposition: rho from the (biased) naive measurement variance."""
    mu, s2_tot = sample_mean_var(data)
    meas = naive_sigma_meas_sq(data)
    # degenerate data with no spread at all decomposes to rho = 1
    rho = 1.0 if s2_tot == 0.0 else 1.0 - meas / s2_tot
    return _decompose("naive", mu, s2_tot, rho, data.n_pairs, len(data))


def estimate_rho_ce(data: PairDataset, c: float | None = None) -> FrequentistEstimate:
    """Conditional-expectation estimator.

    rho = 1 - (mean(x2 | retested) - mean(x1 | retested)) / (sigma_total * lam),
    with lam evaluated at the standardized cutoff. Requires the cutoff;
    taken from the dataset when not supplied.
    """
    if c is None:
        c = data.single_cutoff()
    mu, s2_tot = sample_mean_var(data)
    m = data.has_x2
    if m.sum() < 2:
        raise EstimationError("need at least 2 complete pairs", n_pairs=int(m.sum()))
    if s2_tot == 0.0:
        raise EstimationError("total variance is zero", mu=mu)
    s_tot = np.sqrt(s2_tot)
    tf = std_normal_lambda((c - mu) / s_tot)
    shift = float(data.x2[m].mean() - data.x1[m].mean())
    rho = 1.0 - shift / (s_tot * tf.lam)
    return _decompose("conditional_expectation", mu, s2_tot, rho,
                      data.n_pairs, len(data))


def _score_cubic_roots(m11: float, m20: float, m02: float) -> np.ndarray:
    """Real roots in [-1, 1] of rho^3 - (1+rho^2) m11 + rho (m20+m02-1) = 0."""
    roots = np.roots([1.0, -m11, m20 + m02 - 1.0, -m11])
    real = roots[np.abs(roots.imag) < 1e-8].real
    # tolerate roots grazing the boundary
    real = real[(real >= -1.0 - 1e-10) & (real <= 1.0 + 1e-10)]
    return np.clip(real, -1.0, 1.0)


def _pair_profile_loglik(z1: np.ndarray, z2: np.ndarray, rho: float) -> float:
    """Gaussian pair log-likelihood terms that depend on rho (the truncation
    term n*log P(x1 < c) is rho-free and cancels in comparisons)."""
    r = np.clip(rho, -1.0 + 1e-12, 1.0 - 1e-12)
    one_m_r2 = 1.0 - r * r
    q = (z1 * z1 - 2.0 * r * z1 * z2 + z2 * z2) / one_m_r2
    return float(-0.5 * q.sum() - 0.5 * len(z1) * np.log(one_m_r2))


def estimate_rho_mle(data: PairDataset) -> FrequentistEstimate:
    """Maximum-likelihood estimator via the cubic score equation.

    Pairs are standardized by the plug-in (mu, sigma_total) from all first
    measurements. The retest cutoff does not enter the score, so the result
    is identical whatever retest rule produced the pairs.
    """
    mu, s2_tot = sample_mean_var(data)
    m = data.has_x2
    if m.sum() < 2:
        raise EstimationError("need at least 2 complete pairs", n_pairs=int(m.sum()))
    if s2_tot == 0.0:
        raise EstimationError("total variance is zero", mu=mu)
    s_tot = np.sqrt(s2_tot)
    z1 = (data.x1[m] - mu) / s_tot
    z2 = (data.x2[m] - mu) / s_tot
    m11 = float(np.mean(z1 * z2))
    m20 = float(np.mean(z1 * z1))
    m02 = float(np.mean(z2 * z2))
    if not (np.isfinite(m11) and np.isfinite(m20) and np.isfinite(m02)):
        raise EstimationError("non-finite standardized moments",
                              m11=m11, m20=m20, m02=m02)
    cand = _score_cubic_roots(m11, m20, m02)
    if len(cand) == 0:
        raise EstimationError("score cubic has no real root in [-1, 1]",
                              m11=m11, m20=m20, m02=m02)
    if len(cand) == 1:
        rho = float(cand[0])
    else:
        # spurious roots can appear at small n; keep the likelihood-best,
        # breaking ties toward the raw moment m11
        lls = np.array([_pair_profile_loglik(z1, z2, r) for r in cand])
        best = np.flatnonzero(lls >= lls.max() - 1e-9)
        rho = float(cand[best[np.argmin(np.abs(cand[best] - m11))]])
    return _decompose("mle", mu, s2_tot, rho, data.n_pairs, len(data))


_ESTIMATORS = {
    "naive": estimate_naive,
    "ce": estimate_rho_ce,
    "conditional_expectation": estimate_rho_ce,
    "mle": estimate_rho_mle,
}


def get_estimator(method: str):
    try:
        return _ESTIMATORS[method]
    except KeyError:
        raise DomainError(f"unknown method {method!r}; expected one of "
                          f"{sorted(_ESTIMATORS)}") from None


def fit_strata(data: PairDataset, method: str) -> dict[str, FrequentistEstimate]:
    """Run one estimator independently on every stratum."""
    est = get_estimator(method)
    return {s: est(data.for_stratum(s)) for s in data.stratum_labels()}


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BootstrapSummary:
    method: str
    n_replicates: int
    n_failures: int
    mean: dict = field(default_factory=dict)
    sd: dict = field(default_factory=dict)
    q025: dict = field(default_factory=dict)
    q975: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "n_replicates": self.n_replicates,
            "n_failures": self.n_failures,
            "mean": self.mean, "sd": self.sd,
            "q2.5": self.q025, "q97.5": self.q975,
        }


def bootstrap(data: PairDataset, method: str, B: int, seed: int) -> BootstrapSummary:
    """Record-level bootstrap of one estimator.

    Records (pairs intact, x2 missingness preserved) are resampled with
    replacement B times; replicates that raise EstimationError are counted
    and tolerated up to 10% of B.
    """
    if B < 1:
        raise DomainError("B must be >= 1")
    est = get_estimator(method)
    n = len(data)
    seeds = np.random.SeedSequence(seed).spawn(B)
    rows, failures = [], 0
    for ss in seeds:
        rng = np.random.Generator(np.random.Philox(key=ss.generate_state(1)[0]))
        idx = rng.integers(0, n, n)
        try:
            e = est(data.take(idx))
        except EstimationError:
            failures += 1
            continue
        rows.append([getattr(e, p) for p in PARAM_NAMES])
    if failures > 0.10 * B:
        raise EstimationError(
            f"estimator failed in {failures}/{B} bootstrap replicates",
            method=method, failures=failures, B=B)
    arr = np.asarray(rows)
    sd = arr.std(axis=0, ddof=1) if len(arr) > 1 else np.zeros(arr.shape[1])
    lo, hi = np.percentile(arr, [2.5, 97.5], axis=0)
    return BootstrapSummary(
        method=method, n_replicates=len(rows), n_failures=failures,
        mean=dict(zip(PARAM_NAMES, arr.mean(axis=0))),
        sd=dict(zip(PARAM_NAMES, sd)),
        q025=dict(zip(PARAM_NAMES, lo)),
        q975=dict(zip(PARAM_NAMES, hi)),
    )
