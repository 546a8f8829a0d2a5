"""Trigonometric matrix polynomials and block-Toeplitz operators.

Conventions
-----------
A spectral density of order ``n`` on ``m`` channels is stored by its
nonnegative lags only::

    Phi(theta) = R_0 + sum_{k=1}^n (R_k e^{-i theta k} + R_k^T e^{i theta k})

A block row ``Y = [Y_0 ... Y_n]`` (``Y_0`` symmetric) generates the symmetric
block-Toeplitz matrix ``T(Y)`` whose block ``(i, j)`` is ``Y_{j-i}`` for
``j >= i``.  ``D`` is the adjoint of ``T`` for the Frobenius inner products,
and ``Phi = Delta X Delta^*`` with ``Delta = [I, e^{i theta} I, ..., e^{i n theta} I]``.

Integrals over the unit circle are taken w.r.t. ``d theta / 2 pi`` and
approximated on a uniform grid, which is exact for trigonometric polynomials
of degree below the grid size.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateSpectrum, NotPositiveDefinite

SOLVER_GRID = 512
ACCEPTANCE_GRID = 4096
RESOLVE_RTOL = 1e-6
RESOLVE_CAP = 2**18


def _as_blocks(blocks) -> np.ndarray:
    arr = np.array(blocks, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValueError(f"expected (n+1, m, m) blocks, got shape {arr.shape}")
    arr[0] = 0.5 * (arr[0] + arr[0].T)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SpectralDensity:
    """Element of Q_{m,n}; ``coeffs[k]`` multiplies ``e^{-i theta k}``."""

    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _as_blocks(self.coeffs))

    @property
    def m(self) -> int:
        return self.coeffs.shape[1]

    @property
    def n(self) -> int:
        return self.coeffs.shape[0] - 1

    def __call__(self, theta):
        return eval_spectrum(self, theta)

    def on_grid(self, grid: "FrequencyGrid") -> np.ndarray:
        """Samples of shape ``(G, m, m)``."""
        return _eval_many(self.coeffs, grid.nodes)

    def __add__(self, other: "SpectralDensity") -> "SpectralDensity":
        n = max(self.n, other.n)
        return SpectralDensity(_pad(self.coeffs, n) + _pad(other.coeffs, n))

    def __sub__(self, other: "SpectralDensity") -> "SpectralDensity":
        n = max(self.n, other.n)
        return SpectralDensity(_pad(self.coeffs, n) - _pad(other.coeffs, n))

    def __mul__(self, scale: float) -> "SpectralDensity":
        return SpectralDensity(self.coeffs * scale)

    __rmul__ = __mul__

    def shifted(self, eps: float) -> "SpectralDensity":
        """``Phi + eps I``."""
        c = self.coeffs.copy()
        c[0] += eps * np.eye(self.m)
        return SpectralDensity(c)

    def is_diagonal(self, tol: float = 0.0) -> bool:
        off = self.coeffs * (1 - np.eye(self.m))
        return bool(np.abs(off).max(initial=0.0) <= tol)


def _pad(coeffs: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n + 1,) + coeffs.shape[1:])
    out[: coeffs.shape[0]] = coeffs
    return out


@dataclass(frozen=True, eq=False)
class BlockRow:
    """Element of M_{m,n}: ``[Y_0 Y_1 ... Y_n]`` with ``Y_0`` symmetric."""

    blocks: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "blocks", _as_blocks(self.blocks))

    @property
    def m(self) -> int:
        return self.blocks.shape[1]

    @property
    def n(self) -> int:
        return self.blocks.shape[0] - 1

    def __getitem__(self, k: int) -> np.ndarray:
        return self.blocks[k]

    def inner(self, other: "BlockRow") -> float:
        return float(np.sum(self.blocks * other.blocks))

    def norm(self) -> float:
        return float(np.linalg.norm(self.blocks))

    def __add__(self, other: "BlockRow") -> "BlockRow":
        return BlockRow(self.blocks + other.blocks)

    def __sub__(self, other: "BlockRow") -> "BlockRow":
        return BlockRow(self.blocks - other.blocks)

    def __mul__(self, scale: float) -> "BlockRow":
        return BlockRow(self.blocks * scale)

    __rmul__ = __mul__

    @classmethod
    def zeros(cls, m: int, n: int) -> "BlockRow":
        return cls(np.zeros((n + 1, m, m)))


@dataclass(frozen=True, eq=False)
class SymBlockMatrix:
    """Symmetric ``m(n+1)`` square matrix addressed by ``m x m`` blocks."""

    data: np.ndarray
    m: int

    def __post_init__(self):
        a = np.array(self.data, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] % self.m:
            raise ValueError(f"shape {a.shape} is not a square multiple of m={self.m}")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    @property
    def n(self) -> int:
        return self.data.shape[0] // self.m - 1

    def block(self, i: int, j: int) -> np.ndarray:
        m = self.m
        return self.data[i * m:(i + 1) * m, j * m:(j + 1) * m]

    def inner(self, other: "SymBlockMatrix") -> float:
        return float(np.sum(self.data * other.data))

    def __add__(self, other: "SymBlockMatrix") -> "SymBlockMatrix":
        return SymBlockMatrix(self.data + other.data, self.m)

    def __sub__(self, other: "SymBlockMatrix") -> "SymBlockMatrix":
        return SymBlockMatrix(self.data - other.data, self.m)

    def __mul__(self, scale: float) -> "SymBlockMatrix":
        return SymBlockMatrix(self.data * scale, self.m)

    __rmul__ = __mul__


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform nodes ``theta_g = -pi + 2 pi g / G`` with weights ``1/G``."""

    size: int = SOLVER_GRID

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("grid needs at least two nodes")

    @cached_property
    def nodes(self) -> np.ndarray:
        return -np.pi + 2 * np.pi * np.arange(self.size) / self.size

    def check_order(self, n: int, factor: int = 2) -> None:
        if self.size < factor * (n + 1):
            raise ValueError(
                f"grid of size {self.size} too coarse for order {n} (need {factor * (n + 1)})")


# -- evaluation ---------------------------------------------------------------

def _eval_many(coeffs: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    n = coeffs.shape[0] - 1
    out = np.broadcast_to(coeffs[0].astype(complex), (thetas.size,) + coeffs.shape[1:]).copy()
    if n:
        phase = np.exp(-1j * np.outer(thetas, np.arange(1, n + 1)))
        s = np.einsum("gk,kab->gab", phase, coeffs[1:])
        out += s + np.conj(s).transpose(0, 2, 1)
    return out


def eval_spectrum(s: SpectralDensity, theta: float) -> np.ndarray:
    """Hermitian ``m x m`` value of ``s`` at angle ``theta``."""
    return _eval_many(s.coeffs, np.array([theta]))[0]


def shift_operator(m: int, n: int, theta: float) -> np.ndarray:
    """``Delta(e^{i theta}) = [I, e^{i theta} I, ..., e^{i n theta} I]``."""
    return np.kron(np.exp(1j * theta * np.arange(n + 1))[None, :], np.eye(m))


def grid_integral(samples: np.ndarray) -> np.ndarray:
    """Normalized integral ``(1/G) sum_g f(theta_g)`` along the first axis."""
    return np.mean(np.asarray(samples), axis=0)


# -- block-Toeplitz operators ------------------------------------------------

def toeplitz_blocks(blocks: np.ndarray) -> np.ndarray:
    """Dense symmetric block-Toeplitz matrix from a first block row array."""
    n1, m, _ = blocks.shape
    out = np.empty((n1 * m, n1 * m))
    for i in range(n1):
        for j in range(n1):
            b = blocks[j - i] if j >= i else blocks[i - j].T
            out[i * m:(i + 1) * m, j * m:(j + 1) * m] = b
    return out


def adjoint_blocks(x: np.ndarray, m: int) -> np.ndarray:
    """Array form of ``D``: ``[sum_h X_hh, 2 sum_h X_{h,h+1}, ...]``."""
    n1 = x.shape[0] // m
    out = np.zeros((n1, m, m))
    for h in range(n1):
        for j in range(n1 - h):
            out[j] += x[h * m:(h + 1) * m, (h + j) * m:(h + j + 1) * m]
    out[1:] *= 2
    out[0] = 0.5 * (out[0] + out[0].T)
    return out


def lag_sums(x: np.ndarray, m: int) -> np.ndarray:
    """``R_k = sum_h X_{h,h+k}``, the lag coefficients of ``Delta X Delta^*``."""
    out = adjoint_blocks(x, m)
    out[1:] *= 0.5
    return out


def toeplitz_T(y: BlockRow) -> SymBlockMatrix:
    return SymBlockMatrix(toeplitz_blocks(y.blocks), y.m)


def adjoint_D(x: SymBlockMatrix) -> BlockRow:
    return BlockRow(adjoint_blocks(x.data, x.m))


def ofd(a: np.ndarray) -> np.ndarray:
    """Zero the diagonal of the last two axes."""
    a = np.array(a, dtype=float)
    idx = np.arange(a.shape[-1])
    a[..., idx, idx] = 0.0
    return a


def ofd_block(z: BlockRow) -> BlockRow:
    return BlockRow(ofd(z.blocks))


def build_from_sym(x: SymBlockMatrix) -> SpectralDensity:
    """Coefficients of ``Delta X Delta^*``."""
    return SpectralDensity(lag_sums(x.data, x.m))


# -- functionals on a grid --------------------------------------------------

def _pd_cholesky(samples: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(samples)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(f"{what} is not positive definite on the grid") from None


def is_divergence(phi: SpectralDensity, phi_hat: SpectralDensity,
                  grid: FrequencyGrid | None = None) -> float:
    """Itakura-Saito divergence ``S(phi || phi_hat)``.

    Per node this is ``sum(mu - log mu - 1)`` over the generalized eigenvalues
    ``mu`` of ``(phi, phi_hat)``, which is nonnegative term by term.
    """
    grid = grid or FrequencyGrid()
    a = phi.on_grid(grid)
    b = phi_hat.on_grid(grid)
    _pd_cholesky(a, "first argument")
    lb = _pd_cholesky(b, "reference spectrum")
    y = np.linalg.solve(lb, a)
    c = np.linalg.solve(lb, np.conj(y).transpose(0, 2, 1))
    mu = np.linalg.eigvalsh(c)
    if np.any(mu <= 0):
        raise NotPositiveDefinite("first argument is not positive definite on the grid")
    return float(grid_integral(np.sum(mu - np.log(mu) - 1.0, axis=1)))


def inverse_fourier_coeffs(phi_hat: SpectralDensity, n: int | None = None,
                           grid: FrequencyGrid | None = None) -> BlockRow:
    """Lags ``P_0 ... P_n`` of ``phi_hat^{-1} = sum_k P_k e^{-i theta k}``."""
    grid = grid or FrequencyGrid()
    n = phi_hat.n if n is None else n
    grid.check_order(n, factor=64)
    samples = phi_hat.on_grid(grid)
    _pd_cholesky(samples, "spectrum")
    inv = np.linalg.inv(samples)
    phase = np.exp(1j * np.outer(grid.nodes, np.arange(n + 1)))
    coeffs = np.einsum("gk,gab->kab", phase, inv).real / grid.size
    return BlockRow(coeffs)


def log_det_integral(phi: SpectralDensity, grid: FrequencyGrid | None = None,
                     floor: float = 1e-12, max_clamped: float = 0.01) -> float:
    """Grid approximation of ``int log|phi|``.

    Eigenvalues below ``floor`` times the mean eigenvalue are raised to that
    level; more than ``max_clamped`` affected nodes raise DegenerateSpectrum.
    """
    grid = grid or FrequencyGrid()
    eig = np.linalg.eigvalsh(phi.on_grid(grid))
    level = floor * max(float(np.mean(eig)), np.finfo(float).tiny)
    low = eig < level
    if np.mean(np.any(low, axis=1)) > max_clamped:
        raise DegenerateSpectrum(
            f"{int(np.any(low, axis=1).sum())} of {grid.size} nodes are (near) singular")
    return float(grid_integral(np.sum(np.log(np.maximum(eig, level)), axis=1)))


def resolve_grid(phi_hat: SpectralDensity, n: int | None = None, grid: FrequencyGrid | None = None,
                 rtol: float = RESOLVE_RTOL, cap: int = RESOLVE_CAP) -> FrequencyGrid:
    """Smallest doubling of ``grid`` on which ``P`` and ``int log|phi_hat|`` have settled.

    A nearly singular ``phi_hat`` has an inverse with narrow peaks that a
    coarse grid misses; both quantities then depend strongly on the grid.
    Stops at ``cap`` nodes.
    """
    grid = grid or FrequencyGrid()
    n = phi_hat.n if n is None else n
    size = max(grid.size, 64 * (n + 1))
    p = inverse_fourier_coeffs(phi_hat, n, FrequencyGrid(size)).blocks
    c = log_det_integral(phi_hat, FrequencyGrid(size))
    while size < cap:
        finer = FrequencyGrid(2 * size)
        p2 = inverse_fourier_coeffs(phi_hat, n, finer).blocks
        c2 = log_det_integral(phi_hat, finer)
        settled = (np.abs(p2 - p).max() <= rtol * np.abs(p2).max()
                   and abs(c2 - c) <= rtol * (1 + abs(c2)))
        size, p, c = 2 * size, p2, c2
        if settled:
            # the previous grid already agreed with this one
            return FrequencyGrid(size // 2)
    return FrequencyGrid(size)
