import warnings

import numpy as np
import pytest

from armafactor.dual import search_lambda_full
from armafactor.estimate import random_factor_model, simulate_ma, truncated_periodogram
from armafactor.recovery import (
    estimate_factor_count,
    factor_report,
    nullspace_basis,
    recover_primal,
    singular_value_profile,
)
from armafactor.specalg import (
    FrequencyGrid,
    SpectralDensity,
    SymBlockMatrix,
    build_from_sym,
    inverse_fourier_coeffs,
    is_divergence,
    log_det_integral,
    toeplitz_blocks,
)
from armafactor.tolerance import delta_max, estimate_delta_alpha

from oracles import primal

GRID = FrequencyGrid()


def solve_instance(m, r, n, N, seed, delta=None, frac=0.1):
    model = random_factor_model(m, r, max(n, 1), np.random.default_rng(seed))
    y = simulate_ma(model, N, np.random.default_rng(seed + 500))
    phi, _ = truncated_periodogram(y, n, GRID)
    P = inverse_fourier_coeffs(phi, n, GRID)
    c = log_det_integral(phi, GRID)
    if delta is None:
        delta = frac * delta_max(phi, GRID)
    search = search_lambda_full(P, c, delta)
    return search, P, c, phi, delta


# -- null spaces ------------------------------------------------------------------------

def test_nullspace_identity():
    assert nullspace_basis(np.eye(4)).shape == (4, 0)


def test_nullspace_diag():
    b = nullspace_basis(np.diag([1.0, 0.0]))
    assert b.shape == (2, 1)
    np.testing.assert_allclose(np.abs(b[:, 0]), [0.0, 1.0])


@pytest.mark.parametrize("rank", [0, 1, 3, 5])
def test_nullspace_dimension(rank):
    rng = np.random.default_rng(rank)
    b = rng.standard_normal((6, rank))
    basis = nullspace_basis(b @ b.T)
    assert basis.shape[1] == 6 - rank
    np.testing.assert_allclose(basis.T @ basis, np.eye(6 - rank), atol=1e-12)
    if rank:
        assert np.linalg.norm(b.T @ basis) <= 1e-8 * np.linalg.norm(b)


# -- profile and count ---------------------------------------------------------------------

def test_profile_rank_one():
    v = np.array([1.0, 2.0, -1.0])
    s = singular_value_profile(SpectralDensity([np.outer(v, v)]), GRID)
    assert s[0] == pytest.approx(1.0)
    assert s[1] == pytest.approx(0.0, abs=1e-12)


def test_profile_identity():
    s = singular_value_profile(SpectralDensity([np.eye(3)]), GRID)
    np.testing.assert_allclose(s, [1.0, 1.0, 1.0])


def test_profile_zero():
    s = singular_value_profile(SpectralDensity([np.zeros((3, 3))]), GRID)
    assert s == (0.0, 0.0, 0.0)
    assert estimate_factor_count(s) == 0


@pytest.mark.parametrize("seed", range(3))
def test_profile_rank_two_model(seed):
    model = random_factor_model(6, 2, 2, np.random.default_rng(seed))
    s = singular_value_profile(model.phi_l(), GRID)
    assert s[1] >= 0.1
    assert s[2] <= 0.01
    assert all(a >= b for a, b in zip(s, s[1:]))
    assert estimate_factor_count(s) == 2


def test_count_examples():
    assert estimate_factor_count([1.0, 0.9, 0.01, 0.005, 0.001]) == 2
    assert estimate_factor_count([1.0, 0.0, 0.0, 0.0]) == 1
    assert estimate_factor_count([1.0, 1.0, 1.0]) == 3
    assert estimate_factor_count([]) == 0


def test_count_floor():
    # below the floor a large ratio is ignored
    assert estimate_factor_count([1.0, 0.3, 0.01, 0.0]) == 2


def test_factor_report_dict():
    rep = factor_report(SpectralDensity([np.diag([2.0, 0.0])]), GRID)
    assert rep.to_dict() == {"s": [1.0, 0.0], "r_hat": 1, "rule": "ratio"}


# -- recovery ------------------------------------------------------------------------------

@pytest.fixture(scope="module", params=[(2, 1, 0, 1), (2, 1, 0, 3), (2, 1, 1, 1), (3, 1, 1, 2), (3, 1, 1, 3)])
def recovered(request):
    m, r, n, seed = request.param
    search, P, c, phi, delta = solve_instance(m, r, n, 3000, seed)
    sol = recover_primal(search.result, P, phi, delta, GRID)
    return search, P, c, phi, delta, sol


def test_recovery_zero_gap(recovered):
    search, *_, sol = recovered
    J = search.result.J
    assert abs(np.trace(sol.L.data) + J) <= 1e-3 * (1 + abs(J))


def test_recovery_matches_primal_oracle(recovered):
    search, P, c, phi, delta, sol = recovered
    value, _, L = primal(P.blocks, c, delta)
    assert abs(np.trace(sol.L.data) - value) <= 1e-2
    m = phi.m
    # the optimal X need not be canonical, so the spectral divergence can sit
    # strictly inside the ball; it must agree with the reference solution
    X = build_from_sym(SymBlockMatrix(_, m))
    assert sol.diagnostics["divergence"] == pytest.approx(is_divergence(X, phi, GRID), abs=1e-3)
    ref = build_from_sym(SymBlockMatrix(L, m)).coeffs
    assert np.linalg.norm(sol.PhiL.coeffs - ref) <= 1e-2 * max(1.0, np.linalg.norm(ref))


def test_recovery_kkt(recovered):
    search, P, c, phi, delta, sol = recovered
    d = sol.diagnostics
    m, n1 = phi.m, P.n + 1
    X, L, D = sol.X.data, sol.L.data, sol.D.data
    np.testing.assert_allclose(D, X - L, atol=1e-12)
    assert d["slack_VD_rel"] <= 1e-4
    assert d["slack_UL_rel"] <= 1e-4
    assert d["rank_V"] >= m * (n1 - 1)
    assert d["dim_ker_U"] <= d["dim_ker_V"] + m * n1
    assert d["dim_ker_V"] <= m
    assert d["ofd_D"] <= 1e-6 * max(np.linalg.norm(D), 1e-12)
    assert d["divergence"] <= delta + 1e-3
    assert d["x00_mismatch"] <= 1e-4
    np.testing.assert_allclose(sol.X00, sol.X.data[:m, :m], atol=1e-4 * np.linalg.norm(sol.X00))
    assert np.linalg.eigvalsh(L)[0] >= -1e-8 * max(1.0, np.linalg.norm(L))
    assert np.linalg.eigvalsh(D)[0] >= -1e-8 * max(1.0, np.linalg.norm(D))
    assert d["consistent"]


def test_recovery_x00(recovered):
    search, *_, sol = recovered
    pt = search.result.point
    np.testing.assert_allclose(sol.X00, pt.lam * np.linalg.inv(pt.W), rtol=1e-12)


def test_phi_d_diagonal(recovered):
    *_, sol = recovered
    vals = sol.PhiD.on_grid(GRID)
    off = vals - np.einsum("gii->gi", vals)[:, :, None] * np.eye(vals.shape[1])
    assert np.abs(off).max() <= 1e-6 * max(1.0, np.abs(vals).max())


def test_trivial_regime_diagonal_spectrum():
    rng = np.random.default_rng(3)
    phi = SpectralDensity(np.stack([np.diag(rng.uniform(1, 2, 3)), np.diag(rng.uniform(-.3, .3, 3))]))
    P = inverse_fourier_coeffs(phi, 1, GRID)
    c = log_det_integral(phi, GRID)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        search = search_lambda_full(P, c, 0.05)
    assert search.on_boundary
    sol = recover_primal(search.result, P, phi, 0.05, GRID, strict=False)
    assert np.linalg.norm(sol.L.data) <= 1e-6
    np.testing.assert_allclose(sol.D.data, sol.X.data)
    assert factor_report(sol.PhiL, GRID).r_hat == 0


@pytest.mark.slow
def test_rank_one_pipeline():
    model = random_factor_model(6, 1, 1, np.random.default_rng(1))
    y = simulate_ma(model, 20000, np.random.default_rng(501))
    phi, _ = truncated_periodogram(y, 1, GRID)
    delta = estimate_delta_alpha(phi, 20000, rng=0, grid=GRID).delta_alpha
    search, P, c, phi, delta = solve_instance(6, 1, 1, 20000, 1, delta=delta)
    sol = recover_primal(search.result, P, phi, delta, GRID)
    assert factor_report(sol.PhiL, GRID).r_hat == 1


def test_recovery_not_pd():
    search, P, c, phi, delta = solve_instance(2, 1, 0, 2000, 0)
    bad = search.result
    bad.point = bad.point.copy()
    bad.point.W = -bad.point.W
    from armafactor.errors import NotPositiveDefinite
    with pytest.raises(NotPositiveDefinite):
        recover_primal(bad, P, phi, delta, GRID)


def test_recovery_matches_toeplitz_structure(recovered):
    search, P, c, phi, delta, sol = recovered
    # <X, T(P)> enters the divergence: active constraint in matrix form
    m = phi.m
    tp = toeplitz_blocks(P.blocks)
    div = (-np.linalg.slogdet(sol.X00)[1] + c + np.sum(sol.X.data * tp) - m)
    if np.linalg.norm(sol.L.data) > 1e-6:
        assert div == pytest.approx(delta, abs=1e-4)
