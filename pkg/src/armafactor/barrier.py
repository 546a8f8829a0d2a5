"""Log-barrier Newton method for the dual problem at a fixed multiplier.

Solves

    min  -lam log|W|
    s.t. T(Z + lam P) - diag(W, 0) >= 0,   R(lam) - W >= 0,   Z hollow

by following the central path of

    F_mu(W, Z) = -lam log|W| - mu log|T(Z + lam P) - diag(W, 0)| - mu log|R - W|

with damped Newton steps.  At a central point the constraint multipliers
are ``mu (Q - W)^{-1}`` and ``mu (R - W)^{-1}`` and the duality gap is
``mu (m(n+1) + m)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InfeasibleStart, MaxItersExceeded
from .specalg import toeplitz_blocks

# dense basis tensors beyond this many entries are refused
MAX_BASIS_ENTRIES = 50_000_000


@dataclass(frozen=True)
class BarrierSettings:
    gap_rtol: float = 1e-9
    mu_factor: float = 0.1
    newton_tol: float = 1e-9
    max_newton: int = 2000
    armijo_c: float = 0.25
    beta_step: float = 0.5


@dataclass(eq=False)
class BarrierSolution:
    W: np.ndarray
    Z: np.ndarray
    M: np.ndarray  # multiplier of W <= Q(lam, Z)
    N: np.ndarray  # multiplier of W <= R(lam)
    XV: np.ndarray  # multiplier of T(Z + lam P) - diag(W, 0) >= 0
    mu: float
    gap: float
    newton_steps: int


@lru_cache(maxsize=32)
def _bases(m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates for symmetric ``W`` and for ``Z`` with hollow blocks and symmetric ``Z_0``."""
    iu, ju = np.triu_indices(m)
    wb = np.zeros((iu.size, m, m))
    wb[np.arange(iu.size), iu, ju] = 1.0
    wb[np.arange(iu.size), ju, iu] = 1.0
    rows = []
    for k in range(n + 1):
        for i in range(m):
            for j in range(m):
                if i != j and (k > 0 or i < j):
                    rows.append((k, i, j))
    zb = np.zeros((len(rows), n + 1, m, m))
    for r, (k, i, j) in enumerate(rows):
        zb[r, k, i, j] = 1.0
        if k == 0:
            zb[r, k, j, i] = 1.0
    wb.setflags(write=False)
    zb.setflags(write=False)
    return wb, zb


class _Problem:
    def __init__(self, lam: float, p: np.ndarray, R: np.ndarray):
        n1, m, _ = p.shape
        self.lam, self.m, self.n1 = lam, m, n1
        size = n1 * m
        wb, zb = _bases(m, n1 - 1)
        self.kw, k = len(wb), len(wb) + len(zb)
        if k * size * size > MAX_BASIS_ENTRIES:
            raise MemoryError(f"barrier solver too large for m={m}, n={n1 - 1}")
        self.wb, self.zb = wb, zb
        self.AW = np.zeros((k, m, m))
        self.AW[:self.kw] = wb
        self.AV = np.zeros((k, size, size))
        self.AV[:self.kw, :m, :m] = -wb
        for i, b in enumerate(zb):
            self.AV[self.kw + i] = toeplitz_blocks(b)
        self.V0 = lam * toeplitz_blocks(p)
        self.R = R

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (np.tensordot(x[:self.kw], self.wb, 1),
                np.tensordot(x[self.kw:], self.zb, 1))

    def pack(self, w: np.ndarray, z: np.ndarray) -> np.ndarray:
        iu = np.triu_indices(self.m)
        zs = [z[k, i, j] for k in range(self.n1) for i in range(self.m) for j in range(self.m)
              if i != j and (k > 0 or i < j)]
        return np.concatenate([w[iu], np.array(zs)])

    def terms(self, x):
        w, _ = self.unpack(x)
        v = self.V0 + np.tensordot(x, self.AV, 1)
        return w, v, self.R - w

    def value(self, x: np.ndarray, mu: float) -> float:
        out = 0.0
        for s, c in zip(self.terms(x), (self.lam, mu, mu)):
            try:
                chol = np.linalg.cholesky(s)
            except np.linalg.LinAlgError:
                return math.inf
            out -= 2.0 * c * float(np.sum(np.log(np.diag(chol))))
        return out

    def derivatives(self, x: np.ndarray, mu: float) -> tuple[np.ndarray, np.ndarray]:
        """Gradient and Hessian of ``F_mu``."""
        w, v, rw = self.terms(x)
        kw = self.kw
        g = np.zeros(x.size)
        h = np.zeros((x.size, x.size))
        for s, a, c, sl in ((w, self.AW[:kw], self.lam, slice(0, kw)),
                            (v, self.AV, mu, slice(None)),
                            (rw, -self.AW[:kw], mu, slice(0, kw))):
            li = np.linalg.inv(np.linalg.cholesky(s))
            gk = li @ a @ li.T
            g[sl] -= c * np.trace(gk, axis1=1, axis2=2)
            flat = gk.reshape(len(a), -1)
            h[sl, sl] += c * (flat @ flat.T)
        return g, h


def _start(prob: _Problem, p: np.ndarray) -> np.ndarray:
    m = prob.m
    z = np.zeros((prob.n1, m, m))
    try:
        tp = np.linalg.inv(toeplitz_blocks(prob.lam * p))
        q0 = np.linalg.inv(tp[:m, :m])
    except np.linalg.LinAlgError:
        raise InfeasibleStart("T(lam P) is singular") from None
    floor = min(np.linalg.eigvalsh(q0)[0], np.linalg.eigvalsh(prob.R)[0])
    if floor <= 0:
        raise InfeasibleStart("no strictly feasible point with Z = 0")
    return prob.pack(0.5 * floor * np.eye(m), z)


def solve_barrier(lam: float, p: np.ndarray, R: np.ndarray,
                  settings: BarrierSettings | None = None) -> BarrierSolution:
    """Central-path solve.

    The primal point comes from the last stage.  Multipliers use the
    Newton-corrected estimate ``mu (S^{-1} - S^{-1} dS S^{-1})``, which
    satisfies the linearized stationarity conditions, taken from the stage
    that best balances that residual against the duality gap: for very small
    ``mu`` the slacks fall to the roundoff level of ``R - W`` and the
    estimate degrades.
    """
    st = settings or BarrierSettings()
    prob = _Problem(lam, p, R)
    m, size = prob.m, prob.n1 * prob.m
    x = _start(prob, p)
    mu = lam
    steps = 0
    target = st.gap_rtol * max(1.0, lam * m)
    best, best_err = None, math.inf
    while True:
        x, dx, k = _center(prob, x, mu, st)
        steps += k
        if steps > st.max_newton:
            raise MaxItersExceeded("barrier Newton iterations exhausted")
        mults, resid, wnorm = _multipliers(prob, x, dx, mu)
        err = resid + mu * (size + m) / max(wnorm, 1.0)
        if err < best_err:
            best, best_err = mults, err
        if mu * (size + m) <= target:
            break
        mu *= st.mu_factor
    w, z = prob.unpack(x)
    xv, xr = best
    return BarrierSolution(w, z, xv[:m, :m].copy(), xr, xv, mu, mu * (size + m), steps)


def _multipliers(prob: _Problem, x: np.ndarray, dx: np.ndarray, mu: float):
    m = prob.m
    w, v, rw = prob.terms(x)
    dw, _ = prob.unpack(dx)
    dv = prob.terms(dx)[1] - prob.V0
    vi = np.linalg.inv(v)
    ri = np.linalg.inv(rw)
    wi = np.linalg.inv(w)
    xv = mu * (vi - vi @ dv @ vi)
    xr = mu * (ri + ri @ dw @ ri)
    xv = 0.5 * (xv + xv.T)
    xr = 0.5 * (xr + xr.T)
    resid = float(np.linalg.norm(-prob.lam * wi + xv[:m, :m] + xr))
    return (xv, xr), resid, float(np.linalg.norm(w))


def _center(prob: _Problem, x: np.ndarray, mu: float, st: BarrierSettings):
    """Damped Newton on ``F_mu``; returns the point, the last Newton step and the count."""
    steps = 0
    for _ in range(st.max_newton):
        g, h = prob.derivatives(x, mu)
        try:
            dx = -np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            dx = -np.linalg.lstsq(h, g, rcond=None)[0]
        dec = -float(g @ dx)
        f0 = prob.value(x, mu)
        # the absolute floor sits above roundoff in F
        if dec <= 2.0 * max(st.newton_tol * mu, 1e-13 * (1.0 + abs(f0))):
            break
        t = 1.0
        while prob.value(x + t * dx, mu) > f0 - st.armijo_c * t * dec:
            t *= st.beta_step
            if t < 1e-12:
                return x, dx, steps
        x = x + t * dx
        steps += 1
    return x, dx, steps
