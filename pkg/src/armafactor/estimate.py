"""Raw spectral estimation, spectral factorization and MA factor simulation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cholesky_banded

from .errors import FactorizationDiverged, InsufficientData, NotPositiveDefinite
from .specalg import FrequencyGrid, SpectralDensity

POSITIVITY_MARGIN = 1e-6
POSITIVITY_CHECK_GRID = 4096  # the minimum eigenvalue is searched on at least this many nodes
BAUER_TOL = 1e-4
BAUER_CAP = 512
ROOT_RADIUS = 0.95


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """``N`` samples of an ``m``-channel series; ``values`` has shape ``(N, m)``."""

    values: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError(f"expected (N, m) samples, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("time series contains non-finite values")
        if self.names is not None and len(self.names) != v.shape[1]:
            raise ValueError("one name per channel required")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def split(self, n_train: int) -> tuple["TimeSeries", "TimeSeries"]:
        return (TimeSeries(self.values[:n_train], self.names),
                TimeSeries(self.values[n_train:], self.names))


@dataclass(frozen=True, eq=False)
class MAFactorModel:
    """``y(t) = W_L(z) u(t) + W_D(z) w(t)`` with diagonal ``W_D`` lags.

    ``wl`` has shape ``(n+1, m, r)`` and ``wd`` shape ``(n+1, m, m)``.
    """

    wl: np.ndarray
    wd: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        wl = np.array(self.wl, dtype=float)
        wd = np.array(self.wd, dtype=float)
        if wl.ndim != 3 or wd.ndim != 3 or wl.shape[:2] != wd.shape[:2]:
            raise ValueError("inconsistent factor shapes")
        if wd.shape[1] != wd.shape[2]:
            raise ValueError("W_D lags must be square")
        if np.any(wd * (1 - np.eye(wd.shape[1]))):
            raise ValueError("W_D lags must be diagonal")
        if wl.shape[2] > wl.shape[1]:
            raise ValueError("more factors than channels")
        object.__setattr__(self, "wl", wl)
        object.__setattr__(self, "wd", wd)

    @property
    def m(self) -> int:
        return self.wl.shape[1]

    @property
    def r(self) -> int:
        return self.wl.shape[2]

    @property
    def n(self) -> int:
        return self.wl.shape[0] - 1

    def phi_l(self) -> SpectralDensity:
        return SpectralDensity(_factor_lags(self.wl))

    def phi_d(self) -> SpectralDensity:
        return SpectralDensity(_factor_lags(self.wd))

    def phi(self) -> SpectralDensity:
        return self.phi_l() + self.phi_d()


def _factor_lags(w: np.ndarray) -> np.ndarray:
    """Lags ``R_k = sum_l W_{l+k} W_l^T`` of ``W W^*``."""
    n1 = w.shape[0]
    return np.stack([sum(w[l + k] @ w[l].T for l in range(n1 - k)) for k in range(n1)])


def sample_covariances(y: TimeSeries, n: int) -> np.ndarray:
    """Biased lags ``R_j = (1/N) sum_t y(t+j) y(t)^T`` for ``j = 0..n``."""
    N = y.N
    if N <= n:
        raise InsufficientData(f"need more than {n} samples, got {N}")
    v = y.values
    out = np.stack([v[j:].T @ v[:N - j] for j in range(n + 1)]) / N
    out[0] = 0.5 * (out[0] + out[0].T)
    return out


def truncated_periodogram(y: TimeSeries, n: int, grid: FrequencyGrid | None = None,
                          margin: float = POSITIVITY_MARGIN) -> tuple[SpectralDensity, float]:
    """Truncated periodogram of order ``n``, shifted if needed to be positive.

    Returns the estimate and the shift ``eps`` added to the zero lag.
    """
    grid = grid or FrequencyGrid()
    phi = SpectralDensity(sample_covariances(y, n))
    return regularize(phi, grid, margin)


def regularize(phi: SpectralDensity, grid: FrequencyGrid,
               margin: float = POSITIVITY_MARGIN) -> tuple[SpectralDensity, float]:
    check = FrequencyGrid(max(grid.size, POSITIVITY_CHECK_GRID))
    lam_min = float(np.linalg.eigvalsh(phi.on_grid(check)).min())
    scale = np.trace(phi.coeffs[0]) / phi.m
    if lam_min > margin * scale:
        return phi, 0.0
    eps = abs(lam_min) + margin * scale
    return phi.shifted(eps), eps


def _banded_toeplitz(lags: np.ndarray, blocks: int) -> np.ndarray:
    """Lower band storage of the ``blocks``-block Toeplitz moment matrix."""
    n1, m, _ = lags.shape
    size = blocks * m
    width = n1 * m
    d = np.arange(width)[:, None]
    c = np.arange(size)[None, :]
    r = c + d
    k = r // m - c // m
    ok = (r < size) & (k < n1)
    ab = np.zeros((width, size))
    ab[ok] = lags[k[ok], (r % m)[ok], np.broadcast_to(c % m, r.shape)[ok]]
    return ab


def _bauer_step(lags: np.ndarray, blocks: int) -> np.ndarray:
    n1, m, _ = lags.shape
    try:
        cb = cholesky_banded(_banded_toeplitz(lags, blocks), lower=True)
    except LinAlgError:
        raise NotPositiveDefinite("moment matrix is not positive definite") from None
    last = (blocks - 1) * m
    w = np.zeros((n1, m, m))
    for k in range(n1):
        col0 = last - k * m
        for a in range(m):
            for b in range(m):
                d = k * m + a - b
                if d >= 0:
                    w[k, a, b] = cb[d, col0 + b]
    return w


def factor_spectrum(w: np.ndarray) -> SpectralDensity:
    """``W W^*`` for MA coefficients ``W_0..W_n``."""
    return SpectralDensity(_factor_lags(w))


def factor_residual(w: np.ndarray, phi: SpectralDensity, grid: FrequencyGrid) -> float:
    """``sup_g ||W W^* - phi|| / sup_g ||phi||`` (Frobenius norms)."""
    vals = phi.on_grid(grid)
    diff = factor_spectrum(w).on_grid(grid) - vals
    return float(np.linalg.norm(diff, axis=(1, 2)).max() / np.linalg.norm(vals, axis=(1, 2)).max())


def bauer_factorize(phi: SpectralDensity, K: int | None = None, grid: FrequencyGrid | None = None,
                    tol: float = BAUER_TOL, cap: int = BAUER_CAP) -> np.ndarray:
    """Minimum-phase MA factor ``W_0..W_n`` of ``phi`` by Bauer's method.

    The last block row of the Cholesky factor of a ``K``-block Toeplitz
    moment matrix converges to the factor as ``K`` grows; ``K`` is doubled
    until the reconstruction residual is below ``tol``.  ``W_0`` comes out
    lower triangular with positive diagonal.
    """
    grid = grid or FrequencyGrid()
    if np.linalg.eigvalsh(phi.on_grid(grid)).min() <= 0:
        raise NotPositiveDefinite("spectrum must be positive definite on the grid")
    K = K or max(32, 8 * (phi.n + 1))
    while True:
        K = min(K, cap)
        w = _bauer_step(phi.coeffs, K)
        res = factor_residual(w, phi, grid)
        if res <= tol:
            return w
        if K >= cap:
            raise FactorizationDiverged(f"residual {res:.2e} above {tol:.0e} at K={K}")
        K *= 2


def filter_ma(coeffs: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """``sum_k C_k e(t-k)`` with zero pre-sample noise; ``noise`` is ``(N, q)``."""
    N = noise.shape[0]
    out = np.zeros((N, coeffs.shape[1]))
    for k in range(min(coeffs.shape[0], N)):
        out[k:] += noise[:N - k] @ coeffs[k].T
    return out


def simulate_ma(model: MAFactorModel, N: int, rng: np.random.Generator) -> TimeSeries:
    """Sample path of length ``N`` started from zero initial conditions."""
    if N < 1:
        raise ValueError("N must be positive")
    u = rng.standard_normal((N, model.r))
    w = rng.standard_normal((N, model.m))
    return TimeSeries(filter_ma(model.wl, u) + filter_ma(model.wd, w))


def random_polynomial(n: int, rng: np.random.Generator, radius: float = ROOT_RADIUS) -> np.ndarray:
    """Real coefficients of ``g prod (1 - z_i z^{-1})`` with ``|z_i| <= radius``.

    Roots come in pairs that are complex conjugate with probability 1/2 and
    real otherwise; the gain ``g`` is standard normal.
    """
    roots = []
    for _ in range(n // 2):
        if rng.random() < 0.5:
            rad = radius * np.sqrt(rng.random())
            ang = np.pi * rng.random()
            roots += [rad * np.exp(1j * ang), rad * np.exp(-1j * ang)]
        else:
            roots += list(rng.uniform(-radius, radius, size=2))
    if n % 2:
        roots.append(rng.uniform(-radius, radius))
    gain = rng.standard_normal()
    return gain * np.real(np.poly(roots)) if roots else np.array([gain])


def random_factor_model(m: int, r: int, n: int, rng: np.random.Generator) -> MAFactorModel:
    """Random MA factor model with every entry polynomial's zeros in the 0.95-disc."""
    if r > m or n < 1:
        raise ValueError("need r <= m and n >= 1")
    wl = np.zeros((n + 1, m, r))
    wd = np.zeros((n + 1, m, m))
    for i in range(m):
        for j in range(r):
            wl[:, i, j] = random_polynomial(n, rng)
    for i in range(m):
        wd[:, i, i] = random_polynomial(n, rng)
    return MAFactorModel(wl, wd)
