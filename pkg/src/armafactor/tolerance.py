"""Radius of the Itakura-Saito confidence ball around the periodogram."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DeltaTooLarge, NotPositiveDefinite, QuantileUnstable
from .estimate import (
    POSITIVITY_MARGIN,
    TimeSeries,
    bauer_factorize,
    filter_ma,
    regularize,
    sample_covariances,
)
from .specalg import FrequencyGrid, SpectralDensity, grid_integral, is_divergence, resolve_grid

DEFAULT_TRIALS = 200


@dataclass(frozen=True, eq=False)
class DeltaReport:
    alpha: float
    delta_alpha: float
    delta_max: float
    trials: int
    divergence_samples: np.ndarray

    @property
    def too_large(self) -> bool:
        return self.delta_alpha >= self.delta_max

    def quantile(self, alpha: float) -> float:
        return order_statistic(self.divergence_samples, alpha)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "delta_alpha": self.delta_alpha,
            "delta_max": self.delta_max,
            "trials": self.trials,
            "too_large": self.too_large,
            "divergence_samples": [float(v) for v in self.divergence_samples],
        }


def delta_max(phi_hat: SpectralDensity, grid: FrequencyGrid | None = None) -> float:
    """``int log |phi_hat diag(phi_hat^{-1})|``: distance to the nearest diagonal spectrum."""
    grid = grid or FrequencyGrid()
    vals = phi_hat.on_grid(grid)
    try:
        chol = np.linalg.cholesky(vals)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("spectrum is not positive definite on the grid") from None
    logdet = 2 * np.sum(np.log(np.abs(np.diagonal(chol, axis1=1, axis2=2))), axis=1)
    inv_diag = np.diagonal(np.linalg.inv(vals), axis1=1, axis2=2).real
    return float(grid_integral(logdet + np.sum(np.log(inv_diag), axis=1)))


def order_statistic(samples: np.ndarray, alpha: float) -> float:
    """Sample alpha-quantile as the order statistic of index ``ceil(alpha * K)``."""
    s = np.sort(np.asarray(samples))
    k = max(1, math.ceil(alpha * s.size))
    return float(s[k - 1])


def _trial(phi_hat: SpectralDensity, w: np.ndarray, N: int, seed: int,
           grid: FrequencyGrid, margin: float) -> float:
    rng = np.random.default_rng(seed)
    y = TimeSeries(filter_ma(w, rng.standard_normal((N, phi_hat.m))))
    phi_r, _ = regularize(SpectralDensity(sample_covariances(y, phi_hat.n)), grid, margin)
    return is_divergence(phi_hat, phi_r, grid)


def estimate_delta_alpha(phi_hat: SpectralDensity, N: int, alpha: float = 0.5,
                         trials: int = DEFAULT_TRIALS, rng: np.random.Generator | int | None = None,
                         grid: FrequencyGrid | None = None, workers: int = 1,
                         margin: float = POSITIVITY_MARGIN) -> DeltaReport:
    """Parametric resampling estimate of the ball radius.

    Paths of length ``N`` are drawn from the minimum-phase factor of
    ``phi_hat``; each gives a resampled periodogram and one realization of
    ``S(phi_hat || phi_r)``.  The radius is the alpha-quantile of these.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if trials < 50:
        raise ValueError("at least 50 trials required")
    if N <= phi_hat.n:
        raise ValueError("sample length must exceed the order")
    if trials < 200:
        warnings.warn(f"only {trials} trials; quantile may be unstable", QuantileUnstable)
    grid = grid or FrequencyGrid()
    rng = np.random.default_rng(rng)
    seeds = rng.integers(0, 2**63, size=trials)
    w = bauer_factorize(phi_hat, grid=grid)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            samples = list(pool.map(lambda s: _trial(phi_hat, w, N, int(s), grid, margin), seeds))
    else:
        samples = [_trial(phi_hat, w, N, int(s), grid, margin) for s in seeds]
    samples = np.sort(np.array(samples))
    dmax = delta_max(phi_hat, resolve_grid(phi_hat, grid=grid))
    report = DeltaReport(alpha, order_statistic(samples, alpha), dmax, trials, samples)
    if report.too_large:
        warnings.warn(f"delta_alpha={report.delta_alpha:.3g} >= delta_max={dmax:.3g}; "
                      "the trivial diagonal solution is feasible", DeltaTooLarge)
    return report
