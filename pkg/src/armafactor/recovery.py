"""Primal solution from the dual optimum, and the factor-count report.

Complementary slackness gives ``V (X - L) = 0`` and ``U L = 0``, so
``D = X - L`` lives on ker V and ``L`` on ker U.  The coefficient matrices
of both factorizations are fixed by small linear systems built from the
zero block ``X_00 = lam W^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dual import DualSolveResult
from .errors import NotPositiveDefinite, RecoveryInconsistent
from .specalg import (
    BlockRow,
    FrequencyGrid,
    SpectralDensity,
    SymBlockMatrix,
    build_from_sym,
    is_divergence,
    log_det_integral,
    toeplitz_blocks,
)

NULL_TOL = 1e-6
CLIP = -1e-8
KKT_TOL = 1e-4
OFD_TOL = 1e-6
GAP_TOL = 1e-3
PROFILE_FLOOR = 0.02
PROFILE_EPS = 1e-6
SKIP_LEVEL = 1e-12


@dataclass(frozen=True, eq=False)
class PrimalSolution:
    X: SymBlockMatrix
    L: SymBlockMatrix
    D: SymBlockMatrix
    X00: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def Phi(self) -> SpectralDensity:
        return build_from_sym(self.X)

    @property
    def PhiL(self) -> SpectralDensity:
        return build_from_sym(self.L)

    @property
    def PhiD(self) -> SpectralDensity:
        return build_from_sym(self.D)


@dataclass(frozen=True)
class FactorReport:
    s: tuple[float, ...]
    r_hat: int
    rule: str = "ratio"

    def to_dict(self) -> dict:
        return {"s": list(self.s), "r_hat": self.r_hat, "rule": self.rule}


def nullspace_basis(a: np.ndarray, tau: float = NULL_TOL, scale: float | None = None) -> np.ndarray:
    """Orthonormal eigenvectors of ``a`` with ``|eig| <= tau * max |eig|``.

    ``scale`` replaces ``max |eig|`` when ``a`` is a difference of larger
    terms, so that cancellation down to roundoff still counts as zero.
    """
    a = np.asarray(a, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    if scale is None:
        scale = float(np.max(np.abs(vals))) if vals.size else 0.0
    return vecs[:, np.abs(vals) <= tau * scale]


def _sym_basis(k: int) -> np.ndarray:
    """Frobenius-orthonormal basis of ``k x k`` symmetric matrices."""
    out = []
    for i in range(k):
        for j in range(i, k):
            e = np.zeros((k, k))
            if i == j:
                e[i, i] = 1.0
            else:
                e[i, j] = e[j, i] = np.sqrt(0.5)
            out.append(e)
    return np.array(out).reshape(-1, k, k)


def _congruence_matrix(y: np.ndarray, picks: list) -> np.ndarray:
    """Rows: picked entries of ``y E_c y^T`` over the symmetric basis ``E_c``."""
    k = y.shape[1]
    if k == 0:
        return np.zeros((len(picks), 0))
    basis = _sym_basis(k)
    rows, cols = np.array(picks).T
    return np.einsum("pa,cab,pb->pc", y[rows], basis, y[cols], optimize=True)


def _to_matrix(coef: np.ndarray, k: int) -> np.ndarray:
    return np.tensordot(coef, _sym_basis(k), 1) if k else np.zeros((0, 0))


def _lstsq(a: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, float]:
    if a.shape[1] == 0:
        return np.zeros(0), float(np.linalg.norm(rhs))
    coef = np.linalg.lstsq(a, rhs, rcond=None)[0]
    return coef, float(np.linalg.norm(a @ coef - rhs))


def _joint(a_lu, a_du, a_dz, trace_row, x_up, trace, kl, kd):
    """Min-norm ``(Q_L, Q_D)`` for the zero block, the D constraints and ``tr L``."""
    nl, nd = kl * (kl + 1) // 2, kd * (kd + 1) // 2
    a = np.block([[a_lu, a_du],
                  [np.zeros((len(a_dz), nl)), a_dz],
                  [trace_row[None, :], np.zeros((1, nd))]])
    c, res = _lstsq(a, np.concatenate([x_up, np.zeros(len(a_dz)), [trace]]))
    return _clip(_to_matrix(c[:nl], kl)), _clip(_to_matrix(c[nl:], kd)), res


def _structured(yl, a_lu, V, x00, trace, m, n1):
    """Joint solve with D parametrized by per-channel blocks.

    ``D = sum_i S_i d_i S_i^T`` with ``S_i`` picking channel ``i`` at every
    lag, so D is block-diagonal by construction; ``V D = 0`` enters as
    least-squares rows instead of through a basis of ker V.
    """
    kl = yl.shape[1]
    nl, nb = kl * (kl + 1) // 2, n1 * (n1 + 1) // 2
    size = n1 * m
    basis = _sym_basis(n1)
    cols = []
    for i in range(m):
        idx = np.arange(n1) * m + i
        for e in basis:
            d = np.zeros((size, size))
            d[np.ix_(idx, idx)] = e
            cols.append(d)
    cols = np.array(cols).reshape(m * nb, size, size)
    vn = V / max(float(np.linalg.norm(V, 2)), 1e-300)
    upper = [(i, j) for i in range(m) for j in range(i, m)]
    rows_x = np.array([[c[i, j] for c in cols] for i, j in upper])
    rows_v = np.einsum("ab,cbd->adc", vn, cols).reshape(size * size, -1)
    trace_row = _sym_coords(yl.T @ yl) if kl else np.zeros(0)
    a = np.block([[a_lu, rows_x],
                  [np.zeros((size * size, nl)), rows_v],
                  [trace_row[None, :], np.zeros((1, m * nb))]])
    rhs = np.concatenate([[x00[i, j] for i, j in upper], np.zeros(size * size), [trace]])
    c, res = _lstsq(a, rhs)
    ql = _clip(_to_matrix(c[:nl], kl))
    D = np.zeros((size, size))
    for i in range(m):
        idx = np.arange(n1) * m + i
        D[np.ix_(idx, idx)] = _clip(_to_matrix(c[nl + i * nb:nl + (i + 1) * nb], n1))
    return ql, D, res


def _sym_coords(q: np.ndarray) -> np.ndarray:
    k = q.shape[0]
    return np.tensordot(_sym_basis(k), q, ((1, 2), (0, 1)))


def _clip(q: np.ndarray) -> np.ndarray:
    if q.size == 0:
        return q
    vals, vecs = np.linalg.eigh(0.5 * (q + q.T))
    vals = np.where(vals < CLIP * max(1.0, float(np.abs(vals).max())), 0.0, np.maximum(vals, 0.0))
    return (vecs * vals) @ vecs.T


def recover_primal(result: DualSolveResult, P: BlockRow, phi_hat: SpectralDensity,
                   delta: float, grid: FrequencyGrid | None = None,
                   tau: float = NULL_TOL, strict: bool = True) -> PrimalSolution:
    """Rebuild ``(X, L, D)`` from a converged dual point.

    With ``strict`` a failed consistency check raises RecoveryInconsistent;
    otherwise it is only recorded in the diagnostics.
    """
    grid = grid or FrequencyGrid()
    pt = result.point
    lam, w, z = pt.lam, pt.W, pt.Z
    p = P.blocks
    n1, m, _ = p.shape
    size = n1 * m
    try:
        np.linalg.cholesky(w)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("W is not positive definite") from None

    lift_w = np.zeros((size, size))
    lift_w[:m, :m] = w
    tp = toeplitz_blocks(p)
    V = lam * tp + toeplitz_blocks(z) - lift_w
    U = np.eye(size) + lam * tp - lift_w
    V, U = 0.5 * (V + V.T), 0.5 * (U + U.T)
    x00 = lam * np.linalg.inv(w)
    x00 = 0.5 * (x00 + x00.T)

    big = np.linalg.norm(lam * tp, 2)
    yl = nullspace_basis(U, tau, max(np.linalg.norm(U, 2), 1.0 + big))
    yd = nullspace_basis(V, tau, max(np.linalg.norm(V, 2), big))
    scale = max(1.0, float(np.linalg.norm(x00)))

    off = [(i, j) for i in range(m) for j in range(i + 1, m)]
    upper = [(i, j) for i in range(m) for j in range(i, m)]
    hollow = [(h * m + i, k * m + j) for h in range(n1) for k in range(h, n1)
              for i in range(m) for j in range(m) if i != j and (h < k or i < j)]
    kl, kd = yl.shape[1], yd.shape[1]
    a_lo = _congruence_matrix(yl, off)
    a_lu = _congruence_matrix(yl, upper)
    a_du = _congruence_matrix(yd, upper)
    a_dh = _congruence_matrix(yd, hollow)
    x_off = np.array([x00[i, j] for i, j in off])
    x_up = np.array([x00[i, j] for i, j in upper])

    # L from the off-diagonal entries of the zero block, then D from the rest
    cl, res_l = _lstsq(a_lo, x_off)
    ql = _clip(_to_matrix(cl, kl))
    lu = _congruence_matrix(yl, upper) @ _sym_coords(ql) if kl else np.zeros(len(upper))
    cd, res_d = _lstsq(np.vstack([a_dh, a_du]),
                       np.concatenate([np.zeros(len(hollow)), x_up - lu]))
    qd = _clip(_to_matrix(cd, kd))
    big_v, big_u = max(np.linalg.norm(V), big), max(np.linalg.norm(U), 1.0 + big)

    def check(L, D):
        x = L + D
        return [
            _rel(V @ D, big_v, D) <= KKT_TOL,
            _rel(U @ L, big_u, L) <= KKT_TOL,
            np.linalg.norm(x[:m, :m] - x00) <= KKT_TOL * scale,
            _max_ofd(D, m) <= OFD_TOL * max(float(np.linalg.norm(D)), 1e-300),
            abs(float(np.trace(L)) + result.J) <= GAP_TOL * (1 + abs(result.J)),
        ]

    method = "sequential"
    L, D = yl @ ql @ yl.T, yd @ qd @ yd.T
    if not all(check(L, D)):
        # the split of the zero block between L and D is not fixed by its
        # off-diagonal part alone; solve for both at once, adding zero duality
        # gap tr(L) = -J to fix the split
        trace_row = _sym_coords(yl.T @ yl) if kl else np.zeros(0)
        ql, qd, res_d = _joint(a_lu, a_du, a_dh, trace_row, x_up, -result.J, kl, kd)
        res_l, method = 0.0, "joint"
        L, D = yl @ ql @ yl.T, yd @ qd @ yd.T
        if not all(check(L, D)):
            # ill-conditioned: small errors in the basis of ker V leak into
            # the off-diagonal entries of D; impose the block structure exactly
            ql, D, res_d = _structured(yl, a_lu, V, x00, -result.J, m, n1)
            method = "structured"
            L = yl @ ql @ yl.T
    X = L + D

    rank_v = size - yd.shape[1]
    diag = {
        "lam": lam,
        "J": result.J,
        "trace_L": float(np.trace(L)),
        "duality_gap": abs(float(np.trace(L)) + result.J),
        "residual_L": res_l,
        "residual_D": res_d,
        "slack_VD": float(np.linalg.norm(V @ D)),
        "slack_UL": float(np.linalg.norm(U @ L)),
        # V and U are differences of terms of size |lam T(P)|; relative slack
        # is measured against that size
        "slack_VD_rel": _rel(V @ D, big_v, D),
        "slack_UL_rel": _rel(U @ L, big_u, L),
        "x00_mismatch": float(np.linalg.norm(X[:m, :m] - x00)) / scale,
        "norm_V": float(np.linalg.norm(V)),
        "norm_U": float(np.linalg.norm(U)),
        "rank_V": rank_v,
        "dim_ker_V": int(yd.shape[1]),
        "dim_ker_U": int(yl.shape[1]),
        "underdetermined_L": kl * (kl + 1) // 2 > len(off),
        "method": method,
        "ofd_D": _max_ofd(D, m),
    }
    Xs, Ls, Ds = SymBlockMatrix(X, m), SymBlockMatrix(L, m), SymBlockMatrix(D, m)
    phi = build_from_sym(Xs)
    try:
        diag["divergence"] = is_divergence(phi, phi_hat, grid)
        diag["jk_gap"] = abs(log_det_integral(phi, grid) - float(np.linalg.slogdet(x00)[1]))
    except Exception as exc:  # noqa: BLE001 - recorded, not fatal here
        diag["divergence"] = float("nan")
        diag["jk_gap"] = float("nan")
        diag["divergence_error"] = str(exc)

    problems = []
    labels = ("V D", "U L", "X00", "off-diagonal D", "duality gap")
    problems += [f"{name} check failed" for name, ok in zip(labels, check(L, D)) if not ok]
    if rank_v < m * (n1 - 1):
        problems.append(f"rank V = {rank_v} < {m * (n1 - 1)}")
    diag["consistent"] = not problems
    if problems and strict:
        raise RecoveryInconsistent("; ".join(problems))
    return PrimalSolution(Xs, Ls, Ds, x00, diag)


def _rel(prod: np.ndarray, scale: float, b: np.ndarray) -> float:
    nb = float(np.linalg.norm(b))
    return float(np.linalg.norm(prod)) / (scale * nb) if nb > 0 else 0.0


def _max_ofd(d: np.ndarray, m: int) -> float:
    n1 = d.shape[0] // m
    worst = 0.0
    for h in range(n1):
        for k in range(n1):
            b = d[h * m:(h + 1) * m, k * m:(k + 1) * m].copy()
            np.fill_diagonal(b, 0.0)
            worst = max(worst, float(np.linalg.norm(b)))
    return worst


def singular_value_profile(phi_l: SpectralDensity, grid: FrequencyGrid | None = None,
                           count: int | None = None) -> tuple[float, ...]:
    """``s_j``: grid mean of ``sigma_j / sigma_1`` of ``phi_l``."""
    grid = grid or FrequencyGrid()
    count = phi_l.m if count is None else count
    sv = np.maximum(np.linalg.eigvalsh(phi_l.on_grid(grid))[:, ::-1], 0.0)
    top = sv[:, 0]
    mean = float(top.mean())
    keep = top > SKIP_LEVEL * mean if mean > 0 else np.zeros_like(top, dtype=bool)
    ratios = np.zeros_like(sv)
    ratios[keep] = sv[keep] / top[keep, None]
    s = ratios.sum(axis=0) / grid.size
    if keep.any():
        s = s / s[0]  # nodes are skipped only where phi_l vanishes
    return tuple(float(v) for v in s[:count])


def estimate_factor_count(s) -> int:
    """Largest ratio ``s_j / (s_{j+1} + eps)`` among ``s_j >= 0.02``."""
    s = np.asarray(s, dtype=float)
    if s.size == 0 or not np.any(s > 0):
        return 0
    nxt = np.append(s[1:], 0.0)
    ratio = np.where(s >= PROFILE_FLOOR, s / (nxt + PROFILE_EPS), -np.inf)
    return int(np.argmax(ratio)) + 1


def factor_report(phi_l: SpectralDensity, grid: FrequencyGrid | None = None) -> FactorReport:
    s = singular_value_profile(phi_l, grid)
    return FactorReport(s, estimate_factor_count(s))
