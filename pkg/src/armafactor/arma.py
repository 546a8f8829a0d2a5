"""Two-step ARMA factor identification, one-step prediction and fit metric."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .dual import AdmmSettings, search_lambda_full
from .errors import (
    InsufficientData,
    SingularFactor,
    SingularNormalEquations,
    UnstableAR,
    UnstableARWarning,
    ZeroVarianceChannel,
)
from .estimate import (
    MAFactorModel,
    TimeSeries,
    bauer_factorize,
    sample_covariances,
    simulate_ma,
    truncated_periodogram,
)
from .recovery import NULL_TOL, FactorReport, PrimalSolution, factor_report, recover_primal
from .specalg import (
    SOLVER_GRID,
    FrequencyGrid,
    SpectralDensity,
    inverse_fourier_coeffs,
    log_det_integral,
    resolve_grid,
)
from .tolerance import DEFAULT_TRIALS, DeltaReport, estimate_delta_alpha

GN_MAX_ITERS = 20
# periodogram margin for the identification pipeline; with 1e-6 the resampled
# periodograms are nearly singular at m ~ 10 and the radius exceeds delta_max
IDENTIFY_MARGIN = 1e-2
GN_TOL = 1e-10
COND_LIMIT = 1e12
MIN_SAMPLES = 30


@dataclass(frozen=True)
class IdentifySettings:
    """Everything the pipeline needs besides the data and the orders."""

    admm: AdmmSettings = field(default_factory=AdmmSettings)
    grid_size: int = SOLVER_GRID
    trials: int = DEFAULT_TRIALS
    tau: float = NULL_TOL
    seed: int = 0
    margin: float = IDENTIFY_MARGIN
    workers: int = 1
    # "iv": lagged-instrument equations, consistent under MA(n) noise;
    # "ls": least squares on the stacked prediction error
    ar_method: str = "iv"
    ar_refine: bool = True
    strict: bool = False

    def __post_init__(self):
        if self.grid_size < 8:
            raise ValueError("grid_size too small")
        if self.trials < 50:
            raise ValueError("at least 50 trials required")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned value")
        if self.ar_method not in ("iv", "ls"):
            raise ValueError("ar_method must be 'iv' or 'ls'")
        if self.workers < 1:
            raise ValueError("workers must be positive")

    @property
    def grid(self) -> FrequencyGrid:
        return FrequencyGrid(self.grid_size)


# -- AR step ------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ARFit:
    a: np.ndarray
    method: str
    refine_iterations: int = 0
    stable: bool = True

    def to_dict(self) -> dict:
        return {"a": [float(v) for v in self.a], "method": self.method,
                "refine_iterations": self.refine_iterations, "stable": self.stable}


def is_stable(a) -> bool:
    """All zeros of ``sum_k a_k z^{-k}`` strictly inside the unit circle."""
    a = np.asarray(a, dtype=float)
    return len(a) <= 1 or bool(np.all(np.abs(np.roots(a)) < 1.0))


def _lagged(v: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Target ``y(t)`` and regressors ``y(t-1..t-p)`` for ``t = p..N-1``."""
    N = v.shape[0]
    target = v[p:]
    regs = np.stack([v[p - k:N - k] for k in range(1, p + 1)], axis=-1)
    return target, regs


def _solve_normal(g: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if np.linalg.cond(g) > COND_LIMIT:
        raise SingularNormalEquations("normal equations are singular")
    return np.linalg.solve(g, rhs)


def _ls(v: np.ndarray, p: int, weight: np.ndarray | None = None) -> np.ndarray:
    target, regs = _lagged(v, p)
    if weight is None:
        g = np.einsum("tik,tij->kj", regs, regs)
        rhs = np.einsum("tik,ti->k", regs, target)
    else:
        g = np.einsum("tik,il,tlj->kj", regs, weight, regs)
        rhs = np.einsum("tik,il,tl->k", regs, weight, target)
    return np.concatenate([[1.0], -_solve_normal(g, rhs)])


def _residuals(v: np.ndarray, a: np.ndarray) -> np.ndarray:
    p = len(a) - 1
    target, regs = _lagged(v, p)
    return target + regs @ a[1:]


def _logdet_cov(e: np.ndarray) -> float:
    return float(np.linalg.slogdet(e.T @ e / e.shape[0])[1])


def _refine(v: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, int]:
    """Gauss-Newton on ``log det`` of the residual covariance.

    For residuals linear in ``a`` each step is a weighted least-squares
    solve with the current covariance inverse; steps are halved until the
    criterion decreases.
    """
    crit = _logdet_cov(_residuals(v, a))
    it = 0
    for it in range(1, GN_MAX_ITERS + 1):
        e = _residuals(v, a)
        sigma = e.T @ e / e.shape[0]
        full = _ls(v, len(a) - 1, np.linalg.inv(sigma))
        step = full - a
        t = 1.0
        while t > 1e-6:
            cand = a + t * step
            c = _logdet_cov(_residuals(v, cand))
            if c < crit:
                break
            t *= 0.5
        else:
            break
        gain = crit - c
        a, crit = cand, c
        if gain < GN_TOL * max(1.0, abs(crit)):
            break
    return a, it


def _iv(y: TimeSeries, p: int, n: int) -> np.ndarray:
    """Scalar AR coefficients from ``R(n+j) + sum_k a_k R(n+j-k) = 0``, ``j = 1..p``.

    Past ``n`` lags the moving-average part no longer correlates with the
    instruments, so the equations hold for the population lags.
    """
    lags = sample_covariances(y, n + p)

    def lag(k):
        return lags[k] if k >= 0 else lags[-k].T

    a_rows = np.stack([np.stack([lag(n + j - k).ravel() for k in range(1, p + 1)], axis=-1)
                       for j in range(1, p + 1)]).reshape(-1, p)
    rhs = -np.concatenate([lag(n + j).ravel() for j in range(1, p + 1)])
    return np.concatenate([[1.0], -_solve_normal(a_rows.T @ a_rows, -a_rows.T @ rhs)])


def fit_ar(y: TimeSeries, p: int, method: str = "ls", n: int = 0, refine: bool = True) -> ARFit:
    """Scalar AR polynomial ``a`` with ``a_0 = 1`` shared by all channels."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    if p == 0:
        return ARFit(np.ones(1), method)
    if y.N <= 10 * p:
        raise InsufficientData(f"need more than {10 * p} samples for p={p}")
    v = y.values
    it = 0
    if method == "ls":
        a = _ls(v, p)
        if refine:
            a, it = _refine(v, a)
    elif method == "iv":
        if y.N <= n + p:
            raise InsufficientData("series shorter than n + p")
        a = _iv(y, p, n)
    else:
        raise ValueError(f"unknown AR method {method!r}")
    stable = is_stable(a)
    if not stable:
        warnings.warn("estimated AR polynomial is unstable", UnstableARWarning)
    return ARFit(a, method, it, stable)


def estimate_ar(y: TimeSeries, p: int, method: str = "ls", n: int = 0, refine: bool = True) -> np.ndarray:
    return fit_ar(y, p, method, n, refine).a


def ar_filter(y: TimeSeries, a) -> TimeSeries:
    """``sum_k a_k y(t-k)`` with zero initial conditions."""
    a = np.asarray(a, dtype=float)
    return TimeSeries(lfilter(a, [1.0], y.values, axis=0), y.names)


def ar_inverse_filter(y: TimeSeries, a) -> TimeSeries:
    a = np.asarray(a, dtype=float)
    return TimeSeries(lfilter([1.0], a, y.values, axis=0), y.names)


def random_ar_polynomial(p: int, rng: np.random.Generator, radius: float = 0.9) -> np.ndarray:
    """Monic real polynomial with zeros drawn uniformly in a disc."""
    roots = []
    for _ in range(p // 2):
        rad, ang = radius * np.sqrt(rng.random()), np.pi * rng.random()
        roots += [rad * np.exp(1j * ang), rad * np.exp(-1j * ang)]
    if p % 2:
        roots.append(rng.uniform(-radius, radius))
    return np.real(np.poly(roots)) if roots else np.ones(1)


def simulate_arma(model: MAFactorModel, a, N: int, rng: np.random.Generator) -> TimeSeries:
    """``a(z) y = W_L u + W_D w`` from zero initial conditions."""
    return ar_inverse_filter(simulate_ma(model, N, rng), a)


# -- MA step ------------------------------------------------------------------------------

def identify_ma(y: TimeSeries, n: int, alpha: float = 0.5,
                settings: IdentifySettings | None = None) -> tuple[PrimalSolution, FactorReport, DeltaReport]:
    """Periodogram, radius, dual search, primal recovery and factor count."""
    st = settings or IdentifySettings()
    if y.N <= max(n, MIN_SAMPLES):
        raise InsufficientData(f"need more than {max(n, MIN_SAMPLES)} samples")
    grid = st.grid
    phi_hat, eps = truncated_periodogram(y, n, grid, st.margin)
    rep = estimate_delta_alpha(phi_hat, y.N, alpha, st.trials, st.seed, grid, st.workers, st.margin)
    fine = resolve_grid(phi_hat, n, grid)
    P = inverse_fourier_coeffs(phi_hat, n, fine)
    c = log_det_integral(phi_hat, fine)
    search = search_lambda_full(P, c, rep.delta_alpha, st.admm, st.workers)
    sol = recover_primal(search.result, P, phi_hat, rep.delta_alpha, fine, st.tau, st.strict)
    sol.diagnostics.update({
        "epsilon": eps,
        "lambda_bracket": list(search.bracket),
        "lambda_evaluations": search.evaluations,
        "lambda_on_boundary": search.on_boundary,
        "admm_iterations": search.result.iterations,
        "admm_converged": search.result.converged,
        "c_phi": c,
        "integration_grid": fine.size,
    })
    return sol, factor_report(sol.PhiL, grid), rep


@dataclass(eq=False)
class ARMAFactorModel:
    a: np.ndarray
    phi: SpectralDensity
    phi_l: SpectralDensity
    phi_d: SpectralDensity
    w_ma: np.ndarray  # (n+1, m, m) minimum-phase factor of phi
    r_hat: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.phi.m

    @property
    def n(self) -> int:
        return self.phi.n

    @property
    def p(self) -> int:
        return len(self.a) - 1

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "p": self.p,
            "a": [float(v) for v in self.a],
            "Phi_coeffs": _lags_to_list(self.phi.coeffs),
            "PhiL_coeffs": _lags_to_list(self.phi_l.coeffs),
            "PhiD_coeffs": _lags_to_list(self.phi_d.coeffs),
            "W_MA_coeffs": _lags_to_list(self.w_ma),
            "r_hat": int(self.r_hat),
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ARMAFactorModel":
        return cls(
            a=np.array(d["a"], dtype=float),
            phi=SpectralDensity(np.array(d["Phi_coeffs"], dtype=float)),
            phi_l=SpectralDensity(np.array(d["PhiL_coeffs"], dtype=float)),
            phi_d=SpectralDensity(np.array(d["PhiD_coeffs"], dtype=float)),
            w_ma=np.array(d["W_MA_coeffs"], dtype=float),
            r_hat=int(d["r_hat"]),
            diagnostics=dict(d.get("diagnostics", {})),
        )

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ARMAFactorModel":
        return cls.from_dict(json.loads(text))


def _lags_to_list(c: np.ndarray) -> list:
    return [[[float(v) for v in row] for row in block] for block in np.asarray(c)]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, shortest round-trip floats."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)


@dataclass(eq=False)
class ARMAIdentification:
    model: ARMAFactorModel
    primal: PrimalSolution
    factors: FactorReport
    delta: DeltaReport
    ar: ARFit


def identify_arma(y: TimeSeries, n: int, p: int, alpha: float = 0.5,
                  settings: IdentifySettings | None = None) -> ARMAIdentification:
    """AR polynomial first, then the MA factor analysis of the filtered data."""
    st = settings or IdentifySettings()
    ar = fit_ar(y, p, st.ar_method, n, st.ar_refine)
    y_ma = ar_filter(y, ar.a) if p else y
    sol, rep, drep = identify_ma(y_ma, n, alpha, st)
    w = bauer_factorize(sol.Phi, grid=st.grid)
    diag = dict(sol.diagnostics)
    diag.update({"ar": ar.to_dict(), "delta": {k: v for k, v in drep.to_dict().items()
                                               if k != "divergence_samples"},
                 "s": list(rep.s), "rule": rep.rule})
    model = ARMAFactorModel(ar.a, sol.Phi, sol.PhiL, sol.PhiD, w, rep.r_hat, diag)
    return ARMAIdentification(model, sol, rep, drep, ar)


# -- prediction ---------------------------------------------------------------------------

def one_step_predict(model: ARMAFactorModel, y_val: TimeSeries) -> np.ndarray:
    """``y(t|t-1)`` from ``a(z) y = W(z) e`` with zero pre-sample values."""
    a = np.asarray(model.a, dtype=float)
    if not is_stable(a):
        raise UnstableAR("AR polynomial is unstable")
    w = np.asarray(model.w_ma, dtype=float)
    w0 = w[0]
    if np.linalg.cond(w0) > COND_LIMIT:
        raise SingularFactor("leading MA coefficient is singular")
    w0_inv = np.linalg.inv(w0)
    v = y_val.values
    N, m = v.shape
    p, n = len(a) - 1, w.shape[0] - 1
    # the autoregressive part is a plain convolution of past data
    past = np.zeros((N, m))
    for k in range(1, p + 1):
        past[k:] -= a[k] * v[:N - k]
    pred = np.zeros((N, m))
    e = np.zeros((N, m))
    for t in range(N):
        acc = past[t].copy()
        for k in range(1, min(n, t) + 1):
            acc += w[k] @ e[t - k]
        pred[t] = acc
        e[t] = w0_inv @ (v[t] - acc)
    return pred


@dataclass(frozen=True, eq=False)
class PredictionReport:
    fit: np.ndarray
    predicted: np.ndarray
    means: np.ndarray

    def to_dict(self) -> dict:
        return {"fit": [float(v) for v in self.fit], "means": [float(v) for v in self.means]}


def fit_percent(y_val: TimeSeries, y_hat: np.ndarray) -> PredictionReport:
    """Per-channel ``100 (1 - RMS(y - y_hat) / RMS(y - mean y))``."""
    v = y_val.values
    y_hat = np.asarray(y_hat, dtype=float)
    if y_hat.size != v.size:
        raise ValueError("prediction and data lengths differ")
    y_hat = y_hat.reshape(v.shape)
    means = v.mean(axis=0)
    spread = np.sqrt(np.mean((v - means) ** 2, axis=0))
    if np.any(spread <= 0):
        raise ZeroVarianceChannel("a validation channel has zero variance")
    err = np.sqrt(np.mean((v - y_hat) ** 2, axis=0))
    return PredictionReport(100.0 * (1.0 - err / spread), y_hat, means)


def oracle_model(model: MAFactorModel, a=None) -> ARMAFactorModel:
    """Predictor built from a known factor model."""
    a = np.ones(1) if a is None else np.asarray(a, dtype=float)
    phi = model.phi()
    return ARMAFactorModel(a, phi, model.phi_l(), model.phi_d(), bauer_factorize(phi), model.r)

