"""Independent convex-solver references for the dual and primal problems."""

import cvxpy as cp
import numpy as np

from armafactor.specalg import toeplitz_blocks


def _toeplitz_expr(blocks):
    n1 = len(blocks)
    rows = []
    for i in range(n1):
        rows.append([blocks[j - i] if j >= i else blocks[i - j].T for j in range(n1)])
    return cp.bmat(rows)


def dual_fixed_lambda(lam, p, c_phi, delta):
    """min over (W, Z) of lam(-log|W/lam| - c + delta) with both LMIs; returns (J, W)."""
    n1, m, _ = p.shape
    W = cp.Variable((m, m), symmetric=True)
    zs = []
    for _ in range(n1):
        zs.append(cp.Variable((m, m)))
    cons = [cp.diag(z) == 0 for z in zs]
    cons.append(zs[0] == zs[0].T)
    pad = np.zeros((m * (n1 - 1), m * (n1 - 1)))
    lift = cp.bmat([[W, np.zeros((m, m * (n1 - 1)))],
                    [np.zeros((m * (n1 - 1), m)), pad]]) if n1 > 1 else W
    tz = _toeplitz_expr([zs[k] + lam * p[k] for k in range(n1)])
    tr = np.eye(m * n1) + lam * toeplitz_blocks(p)
    cons += [tz - lift >> 0, tr - lift >> 0]
    obj = lam * (-cp.log_det(W) + m * np.log(lam) - c_phi + delta)
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value, W.value


def primal(p, c_phi, delta):
    """min tr(L) over (X, L) with the divergence written through X_00; returns (value, X, L)."""
    n1, m, _ = p.shape
    size = n1 * m
    X = cp.Variable((size, size), symmetric=True)
    L = cp.Variable((size, size), symmetric=True)
    D = X - L
    cons = [L >> 0, D >> 0]
    for j in range(n1):
        lag = sum(D[h * m:(h + 1) * m, (h + j) * m:(h + j + 1) * m] for h in range(n1 - j))
        for a in range(m):
            for b in range(m):
                if a != b:
                    cons.append(lag[a, b] == 0)
    tp = toeplitz_blocks(p)
    div = -cp.log_det(X[:m, :m]) + c_phi + cp.trace(X @ tp) - m
    cons.append(div <= delta)
    prob = cp.Problem(cp.Minimize(cp.trace(L)), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value, X.value, L.value
