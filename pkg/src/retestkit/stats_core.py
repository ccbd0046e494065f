"""Deterministic probability primitives.

Everything in this module is pure and stateless: truncation factors for the
standard normal, truncated-variance formulas, the equal-marginal bivariate
normal density, the four density families used throughout the toolkit
(normal, location-scale Student t, two-component normal mixture,
skew normal), and Gauss-Hermite quadrature rules.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special

from .errors import DomainError

ArrayLike = Union[float, np.ndarray]

_LOG_2PI = np.log(2.0 * np.pi)
_LOG_SQRT_2PI = 0.5 * _LOG_2PI

NORMAL = "normal"
STUDENT_T = "student_t"
NORMAL_MIXTURE = "normal_mixture"
SKEW_NORMAL = "skew_normal"

FAMILIES = (NORMAL, STUDENT_T, NORMAL_MIXTURE, SKEW_NORMAL)


# ---------------------------------------------------------------------------
# Truncation factors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncationFactors:
    """Standardized cutoff and the ratio phi(alpha)/Phi(alpha)."""

    alpha: ArrayLike
    lam: ArrayLike


def _std_normal_lambda(alpha):
    """Vectorized phi(alpha)/Phi(alpha) with stable left-tail handling.

    Below alpha = -6 the naive ratio runs out of floating range, so the
    ratio is formed in log space (log_ndtr switches to erfc asymptotics
    deep in the tail).
    """
    alpha = np.asarray(alpha, dtype=float)
    log_phi = -0.5 * alpha * alpha - _LOG_SQRT_2PI
    with np.errstate(divide="ignore", over="ignore", under="ignore",
                     invalid="ignore"):
        lam = np.where(
            alpha < -6.0,
            np.exp(log_phi - special.log_ndtr(alpha)),
            np.exp(log_phi) / special.ndtr(alpha),
        )
    return lam


def std_normal_lambda(alpha: ArrayLike) -> TruncationFactors:
    """Return (alpha, lambda) where lambda = phi(alpha)/Phi(alpha).

    lambda is strictly positive, strictly decreasing in alpha, tends to 0
    as alpha -> +inf and to -alpha as alpha -> -inf. Scalar or array alpha.
    """
    arr = np.asarray(alpha, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("alpha must be finite")
    lam = _std_normal_lambda(arr)
    if arr.ndim == 0:
        return TruncationFactors(float(arr), float(lam))
    return TruncationFactors(arr, lam)


def truncated_error_variance(sigma_meas: float, sigma_total: float,
                             alpha: float) -> float:
    """Variance of the first-measurement error given that the first
    measurement fell below the standardized cutoff alpha.

    Equals sigma_meas^2 * [1 - (sigma_meas^2/sigma_total^2)(alpha*lam + lam^2)]
    and lies in (0, sigma_meas^2].
    """
    if not (0.0 < sigma_meas <= sigma_total):
        raise DomainError(
            f"need 0 < sigma_meas <= sigma_total, got {sigma_meas}, {sigma_total}"
        )
    tf = std_normal_lambda(alpha)
    shrink = (sigma_meas / sigma_total) ** 2 * (tf.alpha * tf.lam + tf.lam ** 2)
    return sigma_meas ** 2 * (1.0 - shrink)


def conditional_delta_variance(sigma_meas: float, sigma_total: float,
                               alpha: float) -> float:
    """Variance of the within-pair difference given the first measurement
    fell below the cutoff: truncated_error_variance + sigma_meas^2 exactly.
    """
    return truncated_error_variance(sigma_meas, sigma_total, alpha) + sigma_meas ** 2


def bivariate_normal_logpdf(x1: ArrayLike, x2: ArrayLike, mu: float,
                            sigma_total: float, rho: float) -> ArrayLike:
    """Log density of a bivariate normal with equal marginals
    N(mu, sigma_total^2) and correlation rho.
    """
    if sigma_total <= 0.0:
        raise DomainError("sigma_total must be positive")
    if not abs(rho) < 1.0:
        raise DomainError("|rho| must be < 1")
    z1 = (np.asarray(x1, dtype=float) - mu) / sigma_total
    z2 = (np.asarray(x2, dtype=float) - mu) / sigma_total
    one_m_r2 = 1.0 - rho * rho
    quad = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / one_m_r2
    out = -_LOG_2PI - 2.0 * np.log(sigma_total) - 0.5 * np.log(one_m_r2) - 0.5 * quad
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Density families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasurementDensity:
    """Parameter block for one of the four density families.

    family: "normal" | "student_t" | "normal_mixture" | "skew_normal"
    location: center (g/dL); for the skew normal this is the location
        parameter, not the mean.
    scale: primary scale (g/dL).
    scale2, weight: second component scale and first-component weight
        (mixture only). Components are stored with scale <= scale2; if
        supplied the other way round they are swapped and the weight
        complemented (canonical labeling).
    df: Student-t degrees of freedom, > 2 so the variance exists.
    shape: skew-normal shape parameter.
    """

    family: str
    location: float = 0.0
    scale: float = 1.0
    scale2: float | None = None
    weight: float | None = None
    df: float | None = None
    shape: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if not np.isfinite(self.location):
            raise DomainError("location must be finite")
        if not (np.isfinite(self.scale) and self.scale > 0.0):
            raise DomainError("scale must be positive")
        if self.family == STUDENT_T:
            if self.df is None or not (np.isfinite(self.df) and self.df > 2.0):
                raise DomainError("student_t requires df > 2")
        elif self.family == NORMAL_MIXTURE:
            if self.scale2 is None or self.weight is None:
                raise DomainError("normal_mixture requires scale2 and weight")
            if not (np.isfinite(self.scale2) and self.scale2 > 0.0):
                raise DomainError("scale2 must be positive")
            if not (0.0 <= self.weight <= 1.0):
                raise DomainError("mixture weight must lie in [0, 1]")
            if self.scale > self.scale2:
                s1, s2 = self.scale, self.scale2
                object.__setattr__(self, "scale", s2)
                object.__setattr__(self, "scale2", s1)
                object.__setattr__(self, "weight", 1.0 - self.weight)
        elif self.family == SKEW_NORMAL:
            if self.shape is None or not np.isfinite(self.shape):
                raise DomainError("skew_normal requires a finite shape")

    def dist(self) -> "Density":
        return density_from_spec(self)


class Density:
    """Common interface of the concrete density families.

    logpdf/dlogpdf/d2logpdf operate elementwise; dlogpdf and d2logpdf are
    derivatives with respect to the evaluation point (needed for the
    Laplace-type mode search in the marginal likelihood).
    """

    def logpdf(self, x):
        raise NotImplementedError

    def dlogpdf(self, x):
        raise NotImplementedError

    def d2logpdf(self, x):
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def var(self) -> float:
        raise NotImplementedError

    def rvs(self, rng: np.random.Generator, size):
        raise NotImplementedError


class NormalDist(Density):
    def __init__(self, mu: float, sigma: float):
        if sigma <= 0.0:
            raise DomainError("sigma must be positive")
        self.mu = float(mu)
        self.sigma = float(sigma)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return -0.5 * z * z - np.log(self.sigma) - _LOG_SQRT_2PI

    def dlogpdf(self, x):
        return -(np.asarray(x, dtype=float) - self.mu) / self.sigma ** 2

    def d2logpdf(self, x):
        return np.full_like(np.asarray(x, dtype=float), -1.0 / self.sigma ** 2)

    def mean(self):
        return self.mu

    def var(self):
        return self.sigma ** 2

    def rvs(self, rng, size):
        return rng.normal(self.mu, self.sigma, size)


class StudentTDist(Density):
    """Location-scale Student t."""

    def __init__(self, mu: float, scale: float, df: float):
        if scale <= 0.0 or df <= 0.0:
            raise DomainError("scale and df must be positive")
        self.mu = float(mu)
        self.scale = float(scale)
        self.df = float(df)
        self._lognorm = (special.gammaln((self.df + 1.0) / 2.0)
                         - special.gammaln(self.df / 2.0)
                         - 0.5 * np.log(self.df * np.pi) - np.log(self.scale))

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.scale
        return self._lognorm - (self.df + 1.0) / 2.0 * np.log1p(z * z / self.df)

    def dlogpdf(self, x):
        e = np.asarray(x, dtype=float) - self.mu
        return -(self.df + 1.0) * e / (self.df * self.scale ** 2 + e * e)

    def d2logpdf(self, x):
        e = np.asarray(x, dtype=float) - self.mu
        d = self.df * self.scale ** 2 + e * e
        return -(self.df + 1.0) * (self.df * self.scale ** 2 - e * e) / (d * d)

    def mean(self):
        return self.mu

    def var(self):
        if self.df <= 2.0:
            return np.inf
        return self.scale ** 2 * self.df / (self.df - 2.0)

    def rvs(self, rng, size):
        return self.mu + self.scale * rng.standard_t(self.df, size)


class NormalMixtureDist(Density):
    """Two-component normal mixture with a shared center."""

    def __init__(self, mu: float, scale1: float, scale2: float, weight: float):
        if scale1 <= 0.0 or scale2 <= 0.0:
            raise DomainError("mixture scales must be positive")
        if not (0.0 <= weight <= 1.0):
            raise DomainError("mixture weight must lie in [0, 1]")
        self.mu = float(mu)
        self.scales = (float(scale1), float(scale2))
        self.weights = (float(weight), 1.0 - float(weight))

    def _component_logpdfs(self, x):
        e = np.asarray(x, dtype=float) - self.mu
        out = []
        for s in self.scales:
            z = e / s
            out.append(-0.5 * z * z - np.log(s) - _LOG_SQRT_2PI)
        return e, np.stack(out, axis=-1)

    def logpdf(self, x):
        _, comp = self._component_logpdfs(x)
        logw = np.log(np.maximum(self.weights, 1e-300))
        return special.logsumexp(comp + logw, axis=-1)

    def _responsibilities(self, x):
        _, comp = self._component_logpdfs(x)
        logw = np.log(np.maximum(self.weights, 1e-300))
        lw = comp + logw
        lw -= special.logsumexp(lw, axis=-1, keepdims=True)
        return np.exp(lw)

    def dlogpdf(self, x):
        e = np.asarray(x, dtype=float) - self.mu
        r = self._responsibilities(x)
        inv_v = np.array([1.0 / s ** 2 for s in self.scales])
        return -(r * inv_v).sum(axis=-1) * e

    def d2logpdf(self, x):
        e = np.asarray(x, dtype=float) - self.mu
        r = self._responsibilities(x)
        inv_v = np.array([1.0 / s ** 2 for s in self.scales])
        first = (r * inv_v).sum(axis=-1)
        second = (r * inv_v ** 2).sum(axis=-1) * e * e
        return second - first - (first * e) ** 2

    def mean(self):
        return self.mu

    def var(self):
        return sum(w * s ** 2 for w, s in zip(self.weights, self.scales))

    def rvs(self, rng, size):
        n = int(np.prod(size)) if not np.isscalar(size) else int(size)
        pick = rng.random(n) < self.weights[0]
        draws = np.where(pick,
                         rng.normal(self.mu, self.scales[0], n),
                         rng.normal(self.mu, self.scales[1], n))
        return draws.reshape(size) if not np.isscalar(size) else draws


class SkewNormalDist(Density):
    """Skew normal with location xi, scale omega, shape a."""

    def __init__(self, loc: float, scale: float, shape: float):
        if scale <= 0.0:
            raise DomainError("scale must be positive")
        self.loc = float(loc)
        self.scale = float(scale)
        self.shape = float(shape)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return (np.log(2.0) - 0.5 * z * z - _LOG_SQRT_2PI - np.log(self.scale)
                + special.log_ndtr(self.shape * z))

    def dlogpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        lam = _std_normal_lambda(self.shape * z)
        return (-z + self.shape * lam) / self.scale

    def d2logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        u = self.shape * z
        lam = _std_normal_lambda(u)
        dlam = -lam * (u + lam)
        return (-1.0 + self.shape ** 2 * dlam) / self.scale ** 2

    def _delta(self):
        return self.shape / np.sqrt(1.0 + self.shape ** 2)

    def mean(self):
        return self.loc + self.scale * self._delta() * np.sqrt(2.0 / np.pi)

    def var(self):
        return self.scale ** 2 * (1.0 - 2.0 * self._delta() ** 2 / np.pi)

    def rvs(self, rng, size):
        d = self._delta()
        u0 = rng.standard_normal(size)
        u1 = rng.standard_normal(size)
        z = d * np.abs(u0) + np.sqrt(1.0 - d * d) * u1
        return self.loc + self.scale * z


def density_from_spec(d: MeasurementDensity) -> Density:
    """Instantiate the concrete family for a MeasurementDensity block."""
    if d.family == NORMAL:
        return NormalDist(d.location, d.scale)
    if d.family == STUDENT_T:
        return StudentTDist(d.location, d.scale, d.df)
    if d.family == NORMAL_MIXTURE:
        return NormalMixtureDist(d.location, d.scale, d.scale2, d.weight)
    if d.family == SKEW_NORMAL:
        return SkewNormalDist(d.location, d.scale, d.shape)
    raise DomainError(f"unknown family {d.family!r}")


def density_logpdf(x: ArrayLike, d: MeasurementDensity) -> ArrayLike:
    """Log density of x under the family described by d."""
    out = density_from_spec(d).logpdf(x)
    arr = np.asarray(out)
    return float(arr) if arr.ndim == 0 else out


# ---------------------------------------------------------------------------
# Gauss-Hermite quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Physicists' Gauss-Hermite nodes and weights.

    integrate e^{-x^2} p(x) dx exactly for polynomials up to degree 2n-1;
    weights sum to sqrt(pi).
    """

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return len(self.nodes)


def gauss_hermite(n: int) -> QuadratureRule:
    """Gauss-Hermite rule of order n, 2 <= n <= 256."""
    if not (2 <= int(n) <= 256):
        raise DomainError("quadrature order must be in [2, 256]")
    nodes, weights = special.roots_hermite(int(n))
    return QuadratureRule(nodes=nodes, weights=weights)
