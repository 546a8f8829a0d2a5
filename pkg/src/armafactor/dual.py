"""ADMM solver for the dual of the trace-norm factor problem.

For a fixed multiplier ``lam`` the dual variables are ``W`` (symmetric
``m x m``) and ``Z`` (a block row with hollow blocks).  The constraints are

    W > 0,   W <= Q(lam, Z),   W <= R(lam),   T_{1:n,1:n}(Z + lam P) > 0

where ``Q`` and ``R`` are Schur complements of ``T(Z + lam P)`` and
``I + T(lam P)``.  The slack ``Y = Q - W >= 0`` is split off and handled by
ADMM; the ``(W, Z)`` block is updated by one projected gradient step with
Armijo backtracking.  The outer multiplier is found by a dichotomous search
over a convex one-dimensional function.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import brentq

from .barrier import BarrierSettings, solve_barrier
from .errors import (
    BlockNotPD,
    BracketInvalid,
    ArmaFactorError,
    InfeasibleStart,
    MaxItersExceeded,
    NotPositiveDefinite,
)
from .specalg import BlockRow, adjoint_blocks, ofd, toeplitz_blocks

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdmmSettings:
    """Solver constants; the defaults follow the published experiments."""

    rho: float = 0.05
    eps_abs: float = 1e-4
    eps_rel: float = 1e-4
    beta_step: float = 0.5
    armijo_c: float = 1e-4
    max_iters: int = 20000
    a: float = 0.1
    b: float = 200.0
    l: float = 7.0
    h: float = 3.0
    # relative tolerance of the slope root-finding that polishes the
    # dichotomous bracket; 0 disables the polish
    refine_rtol: float = 1e-7
    max_backtracks: int = 60
    # "barrier" solves the fixed-lam problem by an interior-point method and
    # runs the ADMM from there; "none" runs the ADMM from the default start
    presolve: str = "barrier"
    barrier_gap: float = 1e-9

    def __post_init__(self):
        if not 0 < self.beta_step < 1:
            raise ValueError("beta_step must lie in (0, 1)")
        if not 0 < self.h < self.l / 2:
            raise ValueError("need 0 < h < l/2")
        if not 0 < self.a < self.b:
            raise ValueError("need 0 < a < b")
        if self.presolve not in ("barrier", "none"):
            raise ValueError("presolve must be 'barrier' or 'none'")
        if self.rho <= 0 or self.eps_abs < 0 or self.eps_rel < 0 or self.max_iters < 1:
            raise ValueError("invalid ADMM constants")

    @classmethod
    def from_dict(cls, d: dict) -> "AdmmSettings":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown solver settings: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class DualPoint:
    lam: float
    W: np.ndarray
    Z: np.ndarray  # (n+1, m, m), hollow blocks
    Y: np.ndarray
    M: np.ndarray

    def copy(self) -> "DualPoint":
        return DualPoint(self.lam, self.W.copy(), self.Z.copy(), self.Y.copy(), self.M.copy())


@dataclass(eq=False)
class DualSolveResult:
    point: DualPoint
    J: float
    iterations: int
    history: list = field(repr=False)
    c_phi: float
    delta: float
    P: BlockRow = field(repr=False)
    converged: bool = True
    barrier_steps: int = 0

    @property
    def lam(self) -> float:
        return self.point.lam


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _chol_ok(a: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(a)
        return True
    except np.linalg.LinAlgError:
        return False


def psd_part(a: np.ndarray) -> np.ndarray:
    """Projection onto the positive semidefinite cone."""
    w, v = np.linalg.eigh(_sym(a))
    return _sym((v * np.maximum(w, 0.0)) @ v.T)


def _schur(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Schur complement of the (0,0) block of ``T(h)`` and ``F = T_{11}^{-1} T_{01}^T``."""
    n1, m, _ = h.shape
    if n1 == 1:
        return _sym(h[0]), np.zeros((0, m))
    b = np.concatenate(list(h[1:]), axis=1)
    c = toeplitz_blocks(h[:-1])
    try:
        cf = cho_factor(c, lower=True)
    except LinAlgError:
        raise BlockNotPD("T_{1:n,1:n} is not positive definite") from None
    f = cho_solve(cf, b.T)
    return _sym(h[0] - b @ f), f


def _lift(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``[I; -F] G [I, -F^T]`` as a dense ``m(n+1)`` matrix."""
    kt = np.vstack([np.eye(g.shape[0]), -f])
    return kt @ g @ kt.T


def schur_Q(lam: float, Z: BlockRow | np.ndarray, P: BlockRow | np.ndarray) -> np.ndarray:
    z = Z.blocks if isinstance(Z, BlockRow) else np.asarray(Z)
    p = P.blocks if isinstance(P, BlockRow) else np.asarray(P)
    return _schur(z + lam * p)[0]


def _schur_R(lam: float, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n1, m, _ = p.shape
    if n1 == 1:
        return _sym(np.eye(m) + lam * p[0]), np.zeros((0, m))
    b = lam * np.concatenate(list(p[1:]), axis=1)
    c = np.eye(m * (n1 - 1)) + lam * toeplitz_blocks(p[:-1])
    try:
        cf = cho_factor(c, lower=True)
    except LinAlgError:
        raise BlockNotPD("I + T_{1:n,1:n}(lam P) is not positive definite") from None
    f = cho_solve(cf, b.T)
    return _sym(np.eye(m) + lam * p[0] - b @ f), f


def schur_R(lam: float, P: BlockRow | np.ndarray) -> np.ndarray:
    p = P.blocks if isinstance(P, BlockRow) else np.asarray(P)
    return _schur_R(lam, p)[0]


def _logdet(w: np.ndarray) -> float:
    try:
        c = np.linalg.cholesky(w)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("W must be positive definite") from None
    return 2.0 * float(np.sum(np.log(np.diag(c))))


def dual_objective(lam: float, W: np.ndarray, c_phi: float, delta: float) -> float:
    """``J = lam (-log|W / lam| - int log|phi_hat| + delta)``."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    m = W.shape[0]
    return lam * (-(_logdet(W) - m * math.log(lam)) - c_phi + delta)


class FixedLambdaProblem:
    """Augmented Lagrangian machinery for one value of the multiplier."""

    def __init__(self, lam: float, P: BlockRow | np.ndarray, c_phi: float, delta: float,
                 rho: float = 0.05):
        self.lam = float(lam)
        self.p = P.blocks if isinstance(P, BlockRow) else np.asarray(P, dtype=float)
        self.m = self.p.shape[1]
        self.n = self.p.shape[0] - 1
        self.c_phi = float(c_phi)
        self.delta = float(delta)
        self.rho = float(rho)
        self.R, self.fR = _schur_R(self.lam, self.p)

    def schur(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _schur(z + self.lam * self.p)

    def project_w(self, a: np.ndarray) -> np.ndarray:
        """Projection onto ``{S : S <= R(lam)}``."""
        return _sym(self.R - psd_part(self.R - a))

    def objective(self, w, z, y, mult, q=None) -> float:
        if q is None:
            q = self.schur(z)[0]
        rp = y - q + w
        return (dual_objective(self.lam, w, self.c_phi, self.delta)
                + float(np.sum(mult * rp)) + 0.5 * self.rho * float(np.sum(rp * rp)))

    def gradients(self, w, z, y, mult, parts=None) -> tuple[np.ndarray, np.ndarray]:
        q, f = parts if parts is not None else self.schur(z)
        rp = y - q + w
        try:
            winv = np.linalg.inv(np.linalg.cholesky(w))
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite("W must be positive definite") from None
        gw = _sym(-self.lam * (winv.T @ winv) + mult + self.rho * rp)
        g = _sym(-(mult + self.rho * rp))
        gz = adjoint_blocks(_lift(f, g), self.m)
        return gw, gz

    def lifted_norm(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.linalg.norm(adjoint_blocks(_lift(f, g), self.m)))

    def initial_point(self) -> DualPoint:
        m = self.m
        z = np.zeros_like(self.p)
        q, _ = self.schur(z)
        eq = np.linalg.eigvalsh(q)[0]
        er = np.linalg.eigvalsh(self.R)[0]
        if eq > 0 and er > 0:
            w = 0.5 * min(eq, er) * np.eye(m)
        elif er > 0:
            w = 1e-3 * er * np.eye(m)
        else:
            raise InfeasibleStart("R(lam) is not positive definite")
        y = psd_part(q - w)
        return DualPoint(self.lam, w, z, y, np.zeros((m, m)))

    def adapt(self, point: DualPoint) -> DualPoint | None:
        """Move a point from another multiplier into this feasible set, if possible."""
        w = self.project_w(point.W)
        z = ofd(point.Z)
        if not _chol_ok(w):
            return None
        try:
            q, _ = self.schur(z)
        except BlockNotPD:
            return None
        return DualPoint(self.lam, w, z, psd_part(q - w), point.M.copy())


def aug_lagrangian_gradients(state: DualPoint, P: BlockRow, rho: float,
                             c_phi: float = 0.0, delta: float = 0.0):
    """Gradients of the augmented Lagrangian in ``W`` and ``Z`` at ``state``."""
    prob = FixedLambdaProblem(state.lam, P, c_phi, delta, rho)
    gw, gz = prob.gradients(state.W, np.asarray(state.Z), state.Y, state.M)
    return gw, BlockRow(gz)


def aug_lagrangian(state: DualPoint, P: BlockRow, rho: float,
                   c_phi: float = 0.0, delta: float = 0.0) -> float:
    prob = FixedLambdaProblem(state.lam, P, c_phi, delta, rho)
    return prob.objective(state.W, np.asarray(state.Z), state.Y, state.M)


def admm_solve_fixed_lambda(lam: float, P: BlockRow, c_phi: float, delta: float,
                            settings: AdmmSettings | None = None,
                            warm_start: DualPoint | None = None,
                            strict: bool = False) -> DualSolveResult:
    """Minimize ``J(lam, W, Z)`` over the feasible set for a fixed ``lam``."""
    st = settings or AdmmSettings()
    prob = FixedLambdaProblem(lam, P, c_phi, delta, st.rho)
    m, n = prob.m, prob.n
    rho = st.rho

    point = None
    barrier_steps = 0
    if st.presolve == "barrier":
        sol = solve_barrier(prob.lam, prob.p, prob.R, BarrierSettings(gap_rtol=st.barrier_gap))
        barrier_steps = sol.newton_steps
        q0, _ = prob.schur(sol.Z)
        point = DualPoint(prob.lam, sol.W, sol.Z, psd_part(q0 - sol.W), sol.M)
    elif warm_start is not None:
        point = prob.adapt(warm_start)
    if point is None:
        point = prob.initial_point()
    w, z, y, mult = point.W, point.Z, point.Y, point.M
    q, f = prob.schur(z)
    certified = (w, z, y, mult) if barrier_steps else None

    history = []
    converged = False
    it = 0
    for it in range(1, st.max_iters + 1):
        gw, gz = prob.gradients(w, z, y, mult, (q, f))
        f0 = prob.objective(w, z, y, mult, q)
        t = 1.0
        for _ in range(st.max_backtracks):
            w1 = prob.project_w(w - t * gw)
            z1 = ofd(z - t * gz)
            if _chol_ok(w1):
                try:
                    q1, f1 = prob.schur(z1)
                except BlockNotPD:
                    t *= st.beta_step
                    continue
                decrease = float(np.sum(gw * (w1 - w)) + np.sum(gz * (z1 - z)))
                if prob.objective(w1, z1, y, mult, q1) <= f0 + st.armijo_c * decrease:
                    break
            t *= st.beta_step
        else:
            w1, z1, q1, f1 = w, z, q, f
        w, z, q, f = w1, z1, q1, f1

        y_new = psd_part(q - w - mult / rho)
        rp = y_new - q + w
        mult = _sym(mult + rho * rp)
        r_primal = float(np.linalg.norm(rp))
        r_dual = prob.lifted_norm(f, rho * (y_new - y))
        y = y_new
        history.append((r_primal, r_dual))

        tol_p = m * st.eps_abs + st.eps_rel * max(np.linalg.norm(w), np.linalg.norm(q),
                                                  np.linalg.norm(y))
        tol_d = m * math.sqrt(n + 1) * st.eps_abs + st.eps_rel * prob.lifted_norm(f, mult)
        if r_primal <= tol_p and r_dual <= tol_d:
            converged = True
            if it == 1 and certified is not None:
                # the sweep certifies the presolved point; keep it unmoved
                w, z, y, mult = certified
            break

    point = DualPoint(prob.lam, w, z, y, mult)
    J = dual_objective(prob.lam, w, c_phi, delta)
    if not converged:
        msg = f"ADMM hit max_iters={st.max_iters} at lam={lam:.4g}"
        if strict:
            raise MaxItersExceeded(msg)
        warnings.warn(msg, RuntimeWarning)
    P = P if isinstance(P, BlockRow) else BlockRow(P)
    return DualSolveResult(point, J, it, history, float(c_phi), float(delta), P, converged,
                           barrier_steps)


# -- multiplier search --------------------------------------------------------

def dichotomous_search(g, a: float, b: float, l: float, h: float,
                       evaluate_pair=None) -> tuple[float, float, list]:
    """Shrink ``[a, b]`` around the minimizer of a convex ``g`` until ``b - a < l``.

    ``evaluate_pair`` may be supplied to evaluate ``g`` at the two probe
    points (e.g. concurrently); it must return values in input order.
    """
    if not 0 < h < l / 2:
        raise ValueError("need 0 < h < l/2")
    trace = []
    pair = evaluate_pair or (lambda pts: [g(x) for x in pts])
    while b - a >= l:
        mid = 0.5 * (a + b)
        ta, tb = mid - h, mid + h
        ga, gb = pair([ta, tb])
        trace.append((ta, ga, tb, gb))
        if ga < gb:
            b = tb
        else:
            a = ta
    return a, b, trace


def lambda_slope(res: DualSolveResult) -> float:
    """Derivative of ``g(lam) = min_{W,Z} J`` by the envelope theorem.

    Uses the ADMM multiplier ``M`` of ``W <= Q`` and ``N = lam W^{-1} - M`` of
    ``W <= R``; equals ``delta`` minus the divergence of the primal point
    these multipliers define.
    """
    pt = res.point
    p = res.P.blocks
    m = p.shape[1]
    lam = pt.lam
    _, f = _schur(pt.Z + lam * p)
    _, f_r = _schur_R(lam, p)
    n_mult = _sym(lam * np.linalg.inv(pt.W) - pt.M)
    x = _lift(f, pt.M) + _lift(f_r, n_mult)
    tp = toeplitz_blocks(p)
    logdet_w = _logdet(pt.W)
    return (-(logdet_w - m * math.log(lam)) - res.c_phi + res.delta + m
            - float(np.sum(x * tp)))


@dataclass(eq=False)
class LambdaSearch:
    lam: float
    result: DualSolveResult
    bracket: tuple[float, float]
    trace: list
    evaluations: int
    on_boundary: bool


def search_lambda(P: BlockRow, c_phi: float, delta: float,
                  settings: AdmmSettings | None = None, workers: int = 1) -> tuple[float, DualSolveResult]:
    out = search_lambda_full(P, c_phi, delta, settings, workers)
    return out.lam, out.result


def search_lambda_full(P: BlockRow, c_phi: float, delta: float,
                       settings: AdmmSettings | None = None, workers: int = 1) -> LambdaSearch:
    """Dichotomous search for the optimal multiplier, then slope polishing.

    ``g`` is evaluated by warm-started ADMM solves.  Warm starts are taken
    from evaluations completed in earlier rounds only, so the result does not
    depend on ``workers``.
    """
    st = settings or AdmmSettings()
    cache: dict[float, DualSolveResult] = {}

    def solve(lam: float, snapshot=None) -> DualSolveResult:
        if lam in cache:
            return cache[lam]
        pool = cache if snapshot is None else snapshot
        warm = None
        if pool:
            near = min(pool, key=lambda x: abs(math.log(x / lam)))
            warm = pool[near].point
        res = admm_solve_fixed_lambda(lam, P, c_phi, delta, st, warm)
        return res

    def g(lam: float) -> float:
        res = solve(lam)
        cache[lam] = res
        return res.J

    def pair(pts):
        snap = dict(cache)
        if workers > 1:
            with ThreadPoolExecutor(min(workers, 2)) as ex:
                results = list(ex.map(lambda x: solve(x, snap), pts))
        else:
            results = [solve(x, snap) for x in pts]
        for x, r in zip(pts, results):
            cache[x] = r
        return [r.J for r in results]

    def safe_pair(pts):
        try:
            return pair(pts)
        except ArmaFactorError as exc:
            raise BracketInvalid(f"g not evaluable on {pts}: {exc}") from exc

    a, b = st.a, st.b
    lo, hi, trace = dichotomous_search(g, a, b, st.l, st.h, safe_pair)
    if hi >= b:
        # minimizer may lie beyond the bracket: one tenfold expansion
        lo, hi, more = dichotomous_search(g, lo, 10 * b, st.l, st.h, safe_pair)
        trace += more
    lam0 = 0.5 * (lo + hi)
    on_boundary = False
    if st.refine_rtol > 0:
        lam0, on_boundary = _polish(lambda x: lambda_slope(_cached(cache, solve, x)),
                                    lo, hi, st, cache, solve)
    final = _cached(cache, solve, lam0)
    return LambdaSearch(lam0, final, (lo, hi), trace, len(cache), on_boundary)


def _cached(cache, solve, lam):
    if lam not in cache:
        cache[lam] = solve(lam)
    return cache[lam]


def _polish(slope, lo, hi, st: AdmmSettings, cache, solve) -> tuple[float, bool]:
    """Root of the slope of ``g`` near ``[lo, hi]``; clamps at a tiny multiplier."""
    floor = 1e-6 * st.a
    s_lo = slope(lo)
    while s_lo > 0 and lo > floor:
        hi, lo = lo, max(lo / 4, floor)
        s_lo = slope(lo)
    if s_lo > 0:
        log.info("constraint inactive down to lam=%.3g", lo)
        return lo, True
    s_hi = slope(hi)
    while s_hi < 0:
        lo, s_lo = hi, s_hi
        hi = 2 * hi
        if hi > 1e4 * st.b:
            raise BracketInvalid("slope stays negative; multiplier unbounded")
        s_hi = slope(hi)
    root = brentq(slope, lo, hi, xtol=st.refine_rtol * lo, rtol=st.refine_rtol, maxiter=100)
    return float(root), False
