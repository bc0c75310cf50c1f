"""Densities of singular-vector entries and their distribution fits.

The t location-scale density with location mu, scale sigma and shape beta is

    p(x) = Γ((β+1)/2) / (σ √(βπ) Γ(β/2)) · [(β + ((x-μ)/σ)²) / β]^(-(β+1)/2)

Small beta gives heavy tails; as beta grows the density approaches the
normal N(μ, σ²). Fits maximize the exact log-likelihood over
(μ, log σ, log β) with its analytic gradient.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import optimize, special, stats

from .constants import (
    DEFAULT_BIN_RULE,
    MAD_TO_SIGMA,
    MAX_DENSITY_BINS,
    TLS_GRADIENT_TOLERANCE,
    TLS_INITIAL_SHAPE,
    TLS_MAX_ITERATIONS,
    TLS_MAX_SHAPE,
    TLS_MIN_SAMPLE,
    TLS_MIN_SHAPE,
    TLS_RESTART_SHAPE,
    VectorSide,
)
from .exceptions import DegenerateSeriesError, DomainError
from .linalg import SvdResult

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TlsParams:
    """Parameters of a t location-scale density and the fit diagnostics.

    Attributes:
        mu: Location.
        sigma: Scale (> 0).
        beta: Shape / degrees of freedom (> 0).
        loglik: Total log-likelihood of the fitted sample (NaN if not fitted).
        converged: Whether the optimizer met the gradient tolerance.
        iterations: Optimizer iterations used.
        n: Sample size.
    """

    mu: float
    sigma: float
    beta: float
    loglik: float = float("nan")
    converged: bool = True
    iterations: int = 0
    n: int = 0

    @property
    def effectively_normal(self) -> bool:
        """True when the shape sits at the cap, i.e. no heavy tails detected."""
        return self.beta >= TLS_MAX_SHAPE * (1 - 1e-6)

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "sigma": self.sigma,
            "beta": self.beta,
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "n": self.n,
            "effectively_normal": self.effectively_normal,
        }


@dataclass(frozen=True)
class NormalParams:
    """Maximum-likelihood normal fit."""

    mu: float
    sigma: float

    def to_dict(self) -> dict:
        return {"mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """Normalized histogram.

    Attributes:
        bin_edges: Sorted edges, one more than densities.
        densities: Non-negative densities integrating to 1.
        sample_count: Number of samples binned.
    """

    bin_edges: np.ndarray
    densities: np.ndarray
    sample_count: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)


def _check_params(sigma: float, beta: float) -> None:
    if not sigma > 0:
        raise DomainError(f"scale sigma must be > 0, got {sigma}")
    if not beta > 0:
        raise DomainError(f"shape beta must be > 0, got {beta}")


def tls_logpdf(x, params: TlsParams):
    """Log-density of the t location-scale distribution.

    Raises:
        DomainError: If sigma <= 0 or beta <= 0.
    """
    _check_params(params.sigma, params.beta)
    beta = params.beta
    z = (np.asarray(x, dtype=np.float64) - params.mu) / params.sigma
    norm = (
        special.gammaln((beta + 1) / 2)
        - special.gammaln(beta / 2)
        - 0.5 * np.log(beta * np.pi)
        - np.log(params.sigma)
    )
    return norm - (beta + 1) / 2 * np.log1p(z * z / beta)


def tls_pdf(x, params: TlsParams):
    """Density of the t location-scale distribution at x (scalar or array).

    Raises:
        DomainError: If sigma <= 0 or beta <= 0.
    """
    return np.exp(tls_logpdf(x, params))


def sample_tls(params: TlsParams, size: int, seed: int | np.random.Generator) -> np.ndarray:
    """Draws a seeded sample from the t location-scale distribution."""
    _check_params(params.sigma, params.beta)
    rng = np.random.default_rng(seed)
    return stats.t.rvs(params.beta, loc=params.mu, scale=params.sigma, size=size, random_state=rng)


def _negative_loglik(theta: np.ndarray, data: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient in (μ, log σ, log β)."""
    mu, log_sigma, log_beta = theta
    sigma = np.exp(log_sigma)
    beta = np.exp(log_beta)
    z = (data - mu) / sigma
    z2 = z * z
    q = beta + z2
    ll = (
        special.gammaln((beta + 1) / 2)
        - special.gammaln(beta / 2)
        - 0.5 * np.log(beta * np.pi)
        - log_sigma
        - (beta + 1) / 2 * np.log1p(z2 / beta)
    )
    ratio = (beta + 1) / q
    d_mu = ratio * z / sigma
    d_log_sigma = -1.0 + ratio * z2
    d_beta = (
        0.5 * special.digamma((beta + 1) / 2)
        - 0.5 * special.digamma(beta / 2)
        - 0.5 / beta
        - 0.5 * np.log1p(z2 / beta)
        + 0.5 * (beta + 1) * z2 / (beta * q)
    )
    grad = np.array([np.mean(d_mu), np.mean(d_log_sigma), beta * np.mean(d_beta)])
    return -float(np.mean(ll)), -grad


def tls_loglik(data, params: TlsParams) -> float:
    """Total log-likelihood of a sample."""
    return float(np.sum(tls_logpdf(data, params)))


def tls_loglik_gradient(data, params: TlsParams) -> np.ndarray:
    """Gradient of the mean log-likelihood in (μ, log σ, log β)."""
    _check_params(params.sigma, params.beta)
    theta = np.array([params.mu, np.log(params.sigma), np.log(params.beta)])
    _, grad = _negative_loglik(theta, np.asarray(data, dtype=np.float64))
    return -grad


def _maximize(
    sample: np.ndarray, theta0: np.ndarray, max_iterations: int
) -> tuple[np.ndarray, int, bool]:
    """Quasi-Newton search with a Nelder-Mead fallback; returns (θ, iterations, converged)."""
    bounds = [(None, None), (None, None), (np.log(TLS_MIN_SHAPE), np.log(TLS_MAX_SHAPE))]
    result = optimize.minimize(
        _negative_loglik,
        theta0,
        args=(sample,),
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iterations, "gtol": TLS_GRADIENT_TOLERANCE, "ftol": 1e-15},
    )
    if result.success:
        return np.asarray(result.x), int(result.nit), True
    logger.debug("L-BFGS-B did not converge (%s), falling back to Nelder-Mead", result.message)
    fallback = optimize.minimize(
        lambda th: _negative_loglik(
            np.array([th[0], th[1], min(th[2], np.log(TLS_MAX_SHAPE))]), sample
        )[0],
        result.x,
        method="Nelder-Mead",
        options={"maxiter": max_iterations * 10, "xatol": 1e-10, "fatol": 1e-14},
    )
    theta = np.array(fallback.x)
    theta[2] = np.clip(theta[2], np.log(TLS_MIN_SHAPE), np.log(TLS_MAX_SHAPE))
    return theta, int(result.nit) + int(fallback.nit), bool(fallback.success)


def fit_tls(data, max_iterations: int = TLS_MAX_ITERATIONS) -> TlsParams:
    """Maximum-likelihood fit of the t location-scale distribution.

    Starts from the median, the MAD-based scale and beta = 3, runs a bounded
    quasi-Newton search (beta capped at 1e6) and falls back to Nelder–Mead
    when the quasi-Newton search fails. A search that ends at the beta cap
    is repeated from beta = 1 and the better of the two is kept, so a
    heavy-tailed optimum is not missed on small samples.

    Args:
        data: Real sample of size >= 50.
        max_iterations: Optimizer iteration cap.

    Returns:
        Fitted parameters; `converged` is False when the cap was hit.

    Raises:
        DegenerateSeriesError: If the sample is too small or has no spread.
    """
    sample = np.asarray(data, dtype=np.float64).ravel()
    if sample.size < TLS_MIN_SAMPLE:
        raise DegenerateSeriesError(
            f"t location-scale fit needs at least {TLS_MIN_SAMPLE} values, got {sample.size}"
        )
    if not np.all(np.isfinite(sample)):
        raise DomainError("sample has non-finite values")
    median = float(np.median(sample))
    scale0 = MAD_TO_SIGMA * float(np.median(np.abs(sample - median)))
    if scale0 == 0.0:
        scale0 = float(np.std(sample))
    if scale0 == 0.0:
        raise DegenerateSeriesError("sample is constant")

    theta0 = np.array([median, np.log(scale0), np.log(TLS_INITIAL_SHAPE)])
    theta, iterations, converged = _maximize(sample, theta0, max_iterations)
    if theta[2] >= np.log(TLS_MAX_SHAPE) - 1e-9:
        restart = np.array([median, np.log(scale0), np.log(TLS_RESTART_SHAPE)])
        other, more, other_converged = _maximize(sample, restart, max_iterations)
        iterations += more
        better = _negative_loglik(other, sample)[0] < _negative_loglik(theta, sample)[0]
        if other_converged and better:
            logger.debug(
                "Restart from beta = %g found beta = %g", TLS_RESTART_SHAPE, np.exp(other[2])
            )
            theta, converged = other, True

    params = TlsParams(
        mu=float(theta[0]),
        sigma=float(np.exp(theta[1])),
        beta=float(np.exp(theta[2])),
        converged=converged,
        iterations=iterations,
        n=int(sample.size),
    )
    params = TlsParams(
        params.mu, params.sigma, params.beta,
        loglik=tls_loglik(sample, params),
        converged=converged, iterations=iterations, n=params.n,
    )
    if not converged:
        logger.warning("t location-scale fit did not converge after %d iterations", iterations)
    return params


def fit_normal(data) -> NormalParams:
    """Maximum-likelihood normal fit: sample mean and population std.

    Raises:
        DegenerateSeriesError: If the sample has fewer than 2 values or is constant.
    """
    sample = np.asarray(data, dtype=np.float64).ravel()
    if sample.size < 2:
        raise DegenerateSeriesError(f"normal fit needs at least 2 values, got {sample.size}")
    sigma = float(np.std(sample))
    if sigma == 0.0:
        raise DegenerateSeriesError("sample is constant")
    return NormalParams(float(np.mean(sample)), sigma)


def empirical_density(data, bin_rule: str | int = DEFAULT_BIN_RULE) -> DensityEstimate:
    """Histogram density on equal-width bins.

    Args:
        data: Real sample, non-empty.
        bin_rule: A numpy bin rule name ('fd' for Freedman–Diaconis,
            'sturges', 'sqrt', 'auto', ...) or a fixed bin count.

    Returns:
        The density estimate; a sample without spread gets one bin of
        width 1 centered on its value.

    Raises:
        DegenerateSeriesError: If the sample is empty.
    """
    sample = np.asarray(data, dtype=np.float64).ravel()
    if sample.size == 0:
        raise DegenerateSeriesError("cannot estimate a density from an empty sample")
    low, high = float(sample.min()), float(sample.max())
    if low == high:
        edges = np.array([low - 0.5, low + 0.5])
        return DensityEstimate(edges, np.array([1.0]), int(sample.size))
    edges = np.histogram_bin_edges(sample, bins=bin_rule)
    if len(edges) - 1 > MAX_DENSITY_BINS:
        edges = np.linspace(low, high, MAX_DENSITY_BINS + 1)
    densities, edges = np.histogram(sample, bins=edges, density=True)
    return DensityEstimate(edges, densities, int(sample.size))


def collect_entries(decomposition: SvdResult, side: VectorSide) -> np.ndarray:
    """Pools all N² entries of the left (U) or right (V) singular vectors."""
    matrix = decomposition.u if side is VectorSide.LEFT else decomposition.v
    return np.asarray(matrix, dtype=np.float64).ravel()


def density_table(
    data, bin_rule: str | int = DEFAULT_BIN_RULE, tls: TlsParams | None = None
) -> pd.DataFrame:
    """Plot-ready density comparison of a sample.

    Args:
        data: Real sample.
        bin_rule: Histogram bin rule.
        tls: Pre-computed t location-scale fit; fitted here when omitted.

    Returns:
        One row per bin: bin_center, empirical, normal_fit, tls_fit.
    """
    sample = np.asarray(data, dtype=np.float64).ravel()
    density = empirical_density(sample, bin_rule)
    normal = fit_normal(sample)
    tls = tls or fit_tls(sample)
    centers = density.centers
    return pd.DataFrame(
        {
            "bin_center": centers,
            "empirical": density.densities,
            "normal_fit": stats.norm.pdf(centers, loc=normal.mu, scale=normal.sigma),
            "tls_fit": tls_pdf(centers, tls),
        }
    )
