"""Adaptive random-walk Metropolis over the marginalized posterior.

The latent per-record levels are integrated out by the likelihood module,
so the chain only walks the handful of top-level parameters. Each sweep
combines scalar Metropolis moves (one per coordinate, Robbins-Monro scales
targeting the 0.44 scalar-move optimum, touching only that coordinate's
stratum likelihood) with per-stratum and global joint moves whose
covariance is learned during warmup and whose step sizes target 0.234.
All adaptation freezes at the end of warmup, so the sampling phase is a
valid Markov chain.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..data import PairDataset
from ..errors import DomainError
from ..stats_core import gauss_hermite
from .likelihood import prepare_arrays, stratum_loglik
from .model import ModelSpec

RHAT_THRESHOLD = 1.05


@dataclass
class PosteriorDraws:
    """Per-chain post-warmup draws on the constrained scale."""

    model: ModelSpec
    param_names: list[str]
    draws: np.ndarray              # (chains, iters, dim)
    accept_rate: np.ndarray        # per chain
    rhat: dict[str, float]
    ess: dict[str, float]
    converged: bool
    seed: int
    warmup: int
    iters: int
    runtime_s: float = 0.0
    warnings: list[str] = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    def stacked(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])

    def flat(self, name: str) -> np.ndarray:
        return self.stacked()[:, self.param_names.index(name)]

    def theta_at(self, i: int) -> dict:
        """Per-stratum parameter dicts for one stacked draw index."""
        row = self.stacked()[i]
        theta: dict[str, dict[str, float]] = {}
        k = 0
        for s in self.model.strata:
            theta[s] = {}
            for name in self.model.block_names:
                theta[s][name] = float(row[k])
                k += 1
        return theta

    def thin_indices(self, count: int) -> np.ndarray:
        total = self.draws.shape[0] * self.draws.shape[1]
        count = min(count, total)
        return np.unique(np.linspace(0, total - 1, count).astype(int))


def split_rhat(chains: np.ndarray) -> float:
    """Gelman-Rubin potential scale reduction on split chains.

    chains: (n_chains, n_draws) post-warmup draws of one parameter.
    """
    n = chains.shape[1] // 2
    if n < 2:
        return np.nan
    halves = np.concatenate([chains[:, :n], chains[:, n:2 * n]], axis=0)
    within = halves.var(axis=1, ddof=1).mean()
    between = n * halves.mean(axis=1).var(ddof=1)
    if within <= 0.0:
        return 1.0 if between == 0.0 else np.inf
    return float(np.sqrt(((n - 1) / n * within + between / n) / within))


def effective_sample_size(chains: np.ndarray) -> float:
    """Autocorrelation ESS with Geyer's initial positive sequence, averaged
    over chains (chains: (n_chains, n_draws))."""
    m, n = chains.shape
    if n < 4:
        return float(m * n)
    centered = chains - chains.mean(axis=1, keepdims=True)
    ess_total = 0.0
    for c in range(m):
        x = centered[c]
        var = x.var()
        if var == 0.0:
            ess_total += n
            continue
        f = np.fft.rfft(x, 2 * n)
        acov = np.fft.irfft(f * np.conj(f))[:n] / n
        rho = acov / acov[0]
        # sum consecutive lag pairs while they stay positive
        tau = 1.0
        for k in range(1, n // 2):
            pair = rho[2 * k - 1] + rho[2 * k]
            if pair < 0.0:
                break
            tau += 2.0 * pair
        ess_total += n / max(tau, 1.0)
    return float(ess_total)


def adaptive_metropolis(log_target, u0: np.ndarray, rng: np.random.Generator,
                        warmup: int, iters: int,
                        target_accept: float = 0.234,
                        initial_step: float = 0.4,
                        initial_scale: float = 0.05) -> tuple[np.ndarray, float]:
    """Generic adaptive random-walk Metropolis.

    During warmup the proposal covariance tracks the running empirical
    covariance of the chain (per-parameter scales and correlations) and a
    global log step size follows Robbins-Monro toward target_accept.
    Returns (post-warmup draws, sampling-phase acceptance rate).
    """
    u = np.asarray(u0, dtype=float).copy()
    dim = len(u)
    lp = log_target(u)
    if not np.isfinite(lp):
        raise DomainError("starting point has non-finite target value")

    log_step = np.log(initial_step)
    chol = np.eye(dim) * initial_scale
    mean = u.copy()
    m2 = np.eye(dim) * 1e-6
    count = 1
    kept = np.empty((iters, dim))
    accepted_sampling = 0
    # one covariance restart once the chain has likely reached the bulk, so
    # the proposal shape is not contaminated by the transient; the shape then
    # freezes before warmup ends so the step size settles against it
    reset_at = warmup // 3
    shape_freeze = int(0.85 * warmup)
    rm_start = 0

    for it in range(warmup + iters):
        prop = u + np.exp(log_step) * (chol @ rng.standard_normal(dim))
        lp_prop = log_target(prop)
        log_alpha = lp_prop - lp
        alpha = 1.0 if log_alpha >= 0.0 else float(np.exp(log_alpha))
        if rng.random() < alpha:
            u, lp = prop, lp_prop
            if it >= warmup:
                accepted_sampling += 1
        if it < warmup:
            log_step += (it - rm_start + 1.0) ** -0.6 * (alpha - target_accept)
            if it == reset_at:
                mean = u.copy()
                m2 = np.eye(dim) * 1e-6
                count = 1
                rm_start = it
            count += 1
            delta = u - mean
            mean += delta / count
            m2 += np.outer(delta, u - mean)
            if count >= 40 and it % 25 == 0 and it < shape_freeze:
                cov = m2 / (count - 1) + 1e-8 * np.eye(dim)
                try:
                    chol = np.linalg.cholesky(cov)
                except np.linalg.LinAlgError:
                    pass
        else:
            kept[it - warmup] = u
    return kept, accepted_sampling / max(iters, 1)


class _StructuredTarget:
    """Log posterior split into per-stratum likelihood terms plus a cheap
    prior+Jacobian term, so componentwise moves only re-evaluate the one
    stratum they touch."""

    def __init__(self, model: ModelSpec, arrays, quad):
        self.model = model
        self.arrays = arrays
        self.quad = quad
        self.block_len = len(model.block_names)

    def split_eval(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        """(prior + Jacobian, per-stratum log likelihood vector)."""
        model = self.model
        try:
            theta, log_jac = model.to_constrained(u)
        except DomainError:
            return -np.inf, np.full(len(model.strata), -np.inf)
        base = model.log_prior(theta) + log_jac
        if not np.isfinite(base):
            return -np.inf, np.full(len(model.strata), -np.inf)
        lls = np.empty(len(model.strata))
        for i, s in enumerate(model.strata):
            try:
                lls[i] = stratum_loglik(model, theta[s], self.arrays[s], self.quad)
            except Exception:
                lls[i] = -np.inf
        return base, lls

    def stratum_of(self, coord: int) -> int:
        return coord // self.block_len


def _run_chain(model: ModelSpec, arrays, quad, warmup: int, iters: int,
               seed, target_accept: float, init_jitter: float,
               data: PairDataset) -> tuple[np.ndarray, float]:
    """One chain of the hybrid sweep sampler.

    Each sweep makes one scalar Metropolis move per coordinate (with a
    Robbins-Monro scale per coordinate) followed by one joint move with the
    covariance learned during warmup. The scalar moves give fast mixing of
    the individually weakly identified parameters; the joint move handles
    their correlations.
    """
    rng = np.random.default_rng(seed)
    dim = model.dim
    target = _StructuredTarget(model, arrays, quad)

    u = model.init_unconstrained(data, rng, jitter=init_jitter)
    base, lls = target.split_eval(u)
    if not np.isfinite(base + lls.sum()):
        u = model.init_unconstrained(data)
        base, lls = target.split_eval(u)
        if not np.isfinite(base + lls.sum()):
            raise DomainError("could not find a finite starting point")

    n_rec = sum(arr.n_records for arr in arrays.values())
    n_strata = len(model.strata)
    blk = target.block_len
    comp_scale = np.full(dim, float(np.clip(3.0 / np.sqrt(max(n_rec, 1)),
                                            0.01, 0.2)))
    comp_target = 0.44                      # scalar-move optimum
    log_step = np.log(0.3)                  # joint-move global scale
    log_step_s = np.full(n_strata, np.log(0.5))  # per-stratum block moves
    chol = np.eye(dim) * comp_scale[0]
    sub_chol = [np.eye(blk) * comp_scale[0] for _ in range(n_strata)]
    mean = u.copy()
    m2 = np.eye(dim) * 1e-6
    count = 1
    reset_at = warmup // 3
    shape_freeze = int(0.85 * warmup)
    rm_start = 0

    kept = np.empty((iters, dim))
    accepted = 0
    proposals = 0

    def eval_stratum_change(prop, si):
        """(prior+jac, stratum loglik, alpha) for a proposal touching one
        stratum only."""
        try:
            theta_p, log_jac_p = model.to_constrained(prop)
            base_p = model.log_prior(theta_p) + log_jac_p
        except DomainError:
            return None
        if not np.isfinite(base_p):
            return None
        s_name = model.strata[si]
        try:
            ll_p = stratum_loglik(model, theta_p[s_name], arrays[s_name], quad)
        except Exception:
            ll_p = -np.inf
        return base_p, ll_p

    for it in range(warmup + iters):
        gamma = (it - rm_start + 1.0) ** -0.6
        # scalar sweep
        for k in range(dim):
            si = target.stratum_of(k)
            prop = u.copy()
            prop[k] += comp_scale[k] * rng.standard_normal()
            res = eval_stratum_change(prop, si)
            if res is None:
                alpha = 0.0
            else:
                base_p, ll_p = res
                log_alpha = (base_p + ll_p) - (base + lls[si])
                alpha = 1.0 if log_alpha >= 0.0 else float(np.exp(max(log_alpha,
                                                                      -700.0)))
            if rng.random() < alpha:
                u, base = prop, base_p
                lls[si] = ll_p
                if it >= warmup:
                    accepted += 1
            if it >= warmup:
                proposals += 1
            else:
                comp_scale[k] *= np.exp(gamma * (alpha - comp_target))

        # per-stratum block moves
        for si in range(n_strata):
            sl = slice(si * blk, (si + 1) * blk)
            prop = u.copy()
            prop[sl] += np.exp(log_step_s[si]) * (sub_chol[si]
                                                  @ rng.standard_normal(blk))
            res = eval_stratum_change(prop, si)
            if res is None:
                alpha = 0.0
            else:
                base_p, ll_p = res
                log_alpha = (base_p + ll_p) - (base + lls[si])
                alpha = 1.0 if log_alpha >= 0.0 else float(np.exp(max(log_alpha,
                                                                      -700.0)))
            if rng.random() < alpha:
                u, base = prop, base_p
                lls[si] = ll_p
                if it >= warmup:
                    accepted += 1
            if it >= warmup:
                proposals += 1
            else:
                log_step_s[si] += gamma * (alpha - target_accept)

        # global joint move
        prop = u + np.exp(log_step) * (chol @ rng.standard_normal(dim))
        base_p, lls_p = target.split_eval(prop)
        log_alpha = (base_p + lls_p.sum()) - (base + lls.sum())
        alpha = 1.0 if log_alpha >= 0.0 else float(np.exp(max(log_alpha, -700.0)))
        if rng.random() < alpha:
            u, base, lls = prop, base_p, lls_p
            if it >= warmup:
                accepted += 1
        if it >= warmup:
            proposals += 1
            kept[it - warmup] = u
        else:
            log_step += gamma * (alpha - target_accept)
            if it == reset_at:
                mean = u.copy()
                m2 = np.eye(dim) * 1e-6
                count = 1
                rm_start = it
            count += 1
            delta = u - mean
            mean += delta / count
            m2 += np.outer(delta, u - mean)
            if count >= 40 and it % 25 == 0 and it < shape_freeze:
                cov = m2 / (count - 1) + 1e-8 * np.eye(dim)
                try:
                    chol = np.linalg.cholesky(cov)
                    for si in range(n_strata):
                        sl = slice(si * blk, (si + 1) * blk)
                        sub_chol[si] = np.linalg.cholesky(cov[sl, sl])
                except np.linalg.LinAlgError:
                    pass
    return kept, accepted / max(proposals, 1)


def fit_mcmc(model: ModelSpec, data: PairDataset, chains: int = 2,
             warmup: int = 500, iters: int = 500, seed: int = 0,
             quad_order: int = 32, target_accept: float = 0.234,
             init_jitter: float = 0.05) -> PosteriorDraws:
    """Fit one hierarchical model by adaptive random-walk Metropolis.

    Returns draws on the constrained scale with split-Rhat and ESS per
    parameter. A fit with any Rhat above 1.05 is returned flagged as
    non-converged rather than discarded.
    """
    if chains < 2:
        raise DomainError("at least 2 chains are required for diagnostics")
    if warmup < 50 or iters < 4:
        raise DomainError("warmup/iters too small to be meaningful")
    arrays = prepare_arrays(data, model)
    for s, arr in arrays.items():
        if arr.n_records == 0:
            raise DomainError(f"stratum {s!r} has no records")
    quad = gauss_hermite(quad_order)
    t0 = time.perf_counter()
    chain_seeds = np.random.SeedSequence(seed).spawn(chains)
    kept, rates = [], []
    for cs in chain_seeds:
        draws_u, rate = _run_chain(model, arrays, quad, warmup, iters,
                                   seed=cs, target_accept=target_accept,
                                   init_jitter=init_jitter, data=data)
        kept.append(draws_u)
        rates.append(rate)
    draws_u = np.stack(kept)  # (chains, iters, dim) unconstrained

    # constrain chain-by-chain
    names = model.flat_names
    draws = np.empty_like(draws_u)
    for c in range(chains):
        for i in range(iters):
            theta, _ = model.to_constrained(draws_u[c, i])
            k = 0
            for s in model.strata:
                for name in model.block_names:
                    draws[c, i, k] = theta[s][name]
                    k += 1

    rhat = {}
    ess = {}
    for j, name in enumerate(names):
        rhat[name] = split_rhat(draws[:, :, j])
        ess[name] = effective_sample_size(draws[:, :, j])
    worst = np.nanmax(list(rhat.values()))
    converged = bool(worst < RHAT_THRESHOLD)
    warnings = [] if converged else [
        f"max split-Rhat {worst:.3f} exceeds {RHAT_THRESHOLD}; treat with caution"]
    return PosteriorDraws(model=model, param_names=names, draws=draws,
                          accept_rate=np.asarray(rates), rhat=rhat, ess=ess,
                          converged=converged, seed=seed, warmup=warmup,
                          iters=iters, runtime_s=time.perf_counter() - t0,
                          warnings=warnings)


def posterior_summary(draws: PosteriorDraws) -> dict:
    """Posterior mean/SD/quantile table plus the per-stratum share of total
    variance attributable to measurement (meas_var / (pop_var + meas_var),
    evaluated per draw through the family variance formulas)."""
    out = {"model_id": draws.model.model_id, "converged": draws.converged,
           "parameters": {}, "measurement_share": {}, "rhat": draws.rhat,
           "ess": draws.ess, "accept_rate": draws.accept_rate.tolist(),
           "warnings": list(draws.warnings)}
    stacked = draws.stacked()
    for j, name in enumerate(draws.param_names):
        col = stacked[:, j]
        q025, q50, q975 = np.percentile(col, [2.5, 50.0, 97.5])
        out["parameters"][name] = {
            "mean": float(col.mean()), "sd": float(col.std(ddof=1)),
            "median": float(q50), "q2.5": float(q025), "q97.5": float(q975),
            "rhat": draws.rhat[name], "ess": draws.ess[name],
        }
    # derived variance shares
    model = draws.model
    n_total = stacked.shape[0]
    block_len = len(model.block_names)
    for si, s in enumerate(model.strata):
        cols = stacked[:, si * block_len:(si + 1) * block_len]
        shares = np.empty(n_total)
        for i in range(n_total):
            block = dict(zip(model.block_names, cols[i]))
            pop, meas = model.make_densities(block)
            mv, pv = meas.var(), pop.var()
            shares[i] = mv / (pv + mv) if np.isfinite(mv) else np.nan
        valid = shares[np.isfinite(shares)]
        if len(valid):
            q025, q975 = np.percentile(valid, [2.5, 97.5])
            out["measurement_share"][s] = {
                "mean": float(valid.mean()), "sd": float(valid.std(ddof=1)),
                "q2.5": float(q025), "q97.5": float(q975),
                "n_finite": int(len(valid)),
            }
        else:
            out["measurement_share"][s] = {"mean": np.nan, "sd": np.nan,
                                           "q2.5": np.nan, "q97.5": np.nan,
                                           "n_finite": 0}
    return out


def measurement_share(sigma_pop_sq: float, s: float, df: float) -> float:
    """Share of total variance due to measurement for the normal-t model:
    s^2 df/(df-2) / (sigma_pop^2 + s^2 df/(df-2))."""
    if df <= 2.0:
        raise DomainError("df must exceed 2 for a finite measurement variance")
    mv = s * s * df / (df - 2.0)
    return mv / (sigma_pop_sq + mv)
