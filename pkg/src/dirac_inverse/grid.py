"""Uniform grids, sampled matrix functions and the numerical kernels built on them.

Every grid function is stored as an array of shape ``(n + 1, rows, cols)``.
Operators acting on ``r``-row grid functions are dense block matrices of
size ``(n + 1) * r``; block ``(k, l)`` couples sample ``k`` of the output to
sample ``l`` of the input, and a grid function is flattened by stacking its
samples vertically (``samples.reshape((n + 1) * r, cols)``).

Quadrature is the composite trapezoid rule throughout.  Discrete L2 adjoints
are obtained by passing to *weighted coordinates*: a sample vector ``f`` is
replaced by ``W^{1/2} f`` and an operator ``M`` by ``W^{1/2} M W^{-1/2}``,
where ``W`` holds the trapezoid weights.  In those coordinates the L2 adjoint
is the plain conjugate transpose.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import lapack

from .errors import DomainError, FactorizationError, ShapeError


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``x_k = k * delta`` on ``[0, T]`` with ``n`` subintervals."""

    T: float
    n: int

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n > 0):
            raise DomainError("n must be positive")
        if not (np.isfinite(self.T) and self.T > 0):
            raise DomainError("T must be positive")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "n", int(self.n))

    @property
    def delta(self) -> float:
        return self.T / self.n

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.delta

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.delta

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self)

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.T, self.n * factor)

    def leading(self, k: int) -> "Grid":
        """Grid on ``[0, x_k]`` made of the first ``k + 1`` points."""
        if not 0 < k <= self.n:
            raise DomainError(f"leading grid index must lie in 1..{self.n}")
        return Grid(k * self.delta, k)


def trapezoid_weights(grid: Grid) -> np.ndarray:
    """Composite trapezoid weights: ``delta/2`` at the endpoints, ``delta`` inside."""
    w = np.full(grid.n + 1, grid.delta)
    w[0] = w[-1] = 0.5 * grid.delta
    return w


class GridMatrixFunction:
    """A matrix-valued function sampled at the points of a :class:`Grid`.

    The sample array is copied and frozen on construction.
    """

    __slots__ = ("grid", "_samples")

    def __init__(self, grid: Grid, samples):
        arr = np.array(samples, dtype=complex)
        if arr.ndim == 1:
            arr = arr[:, None, None]
        if arr.ndim != 3:
            raise ShapeError("samples must have shape (n + 1, rows, cols)")
        if arr.shape[0] != grid.n + 1:
            raise ShapeError(
                f"expected {grid.n + 1} samples, got {arr.shape[0]}")
        if arr.shape[1] == 0 or arr.shape[2] == 0:
            raise ShapeError("matrix shape must be positive")
        arr.setflags(write=False)
        self.grid = grid
        self._samples = arr

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    @property
    def rows(self) -> int:
        return self._samples.shape[1]

    @property
    def cols(self) -> int:
        return self._samples.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def __len__(self):
        return self._samples.shape[0]

    def __getitem__(self, k):
        return self._samples[k]

    def __repr__(self):
        return (f"GridMatrixFunction(T={self.grid.T}, n={self.grid.n}, "
                f"shape={self.shape})")

    def midpoint_values(self) -> np.ndarray:
        """Linear interpolants at the cell midpoints, shape ``(n, rows, cols)``."""
        s = self._samples
        return 0.5 * (s[1:] + s[:-1])

    def __call__(self, x) -> np.ndarray:
        """Piecewise-linear interpolation at arbitrary points of ``[0, T]``."""
        x = np.asarray(x, dtype=float)
        flat = self._samples.reshape(len(self), -1)
        pts = self.grid.points
        out = np.empty(x.shape + (flat.shape[1],), dtype=complex)
        for c in range(flat.shape[1]):
            out[..., c] = (np.interp(x, pts, flat[:, c].real)
                           + 1j * np.interp(x, pts, flat[:, c].imag))
        return out.reshape(x.shape + self.shape)

    def map(self, func) -> "GridMatrixFunction":
        return GridMatrixFunction(self.grid, func(self._samples))

    def adjoint(self) -> "GridMatrixFunction":
        return GridMatrixFunction(self.grid, dagger(self._samples))

    def sup_norm(self) -> float:
        """Max over the grid of the spectral norm of the samples."""
        return float(np.max(np.linalg.norm(self._samples, ord=2, axis=(1, 2))))

    def stacked(self) -> np.ndarray:
        """Samples stacked vertically into a ``((n + 1) * rows, cols)`` array."""
        return self._samples.reshape(-1, self.cols)

    @classmethod
    def from_stacked(cls, grid: Grid, stacked, rows: int):
        stacked = np.asarray(stacked)
        return cls(grid, stacked.reshape(grid.n + 1, rows, -1))

    @classmethod
    def from_callable(cls, grid: Grid, func):
        return cls(grid, np.stack([np.atleast_2d(func(x)) for x in grid.points]))


def dagger(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def sup_norm(samples: np.ndarray) -> float:
    samples = np.asarray(samples)
    if samples.ndim == 2:
        return float(np.linalg.norm(samples, 2))
    return float(np.max(np.linalg.norm(samples, ord=2, axis=(-2, -1))))


def matrix_exponential(M) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a Pade core.

    Accepts a single square matrix or a stack ``(..., d, d)``.
    """
    M = np.asarray(M)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ShapeError(f"matrix_exponential needs square input, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DomainError("matrix_exponential: non-finite entries")
    if M.shape[-1] == 0:
        return M.astype(complex)
    return scipy.linalg.expm(M.astype(complex))


def _eval_coeff(coeff: Callable, x: np.ndarray) -> np.ndarray:
    out = np.asarray(coeff(x))
    if out.ndim == 3 and out.shape[0] == len(x):
        return out
    # not vectorized: evaluate pointwise
    return np.stack([np.asarray(coeff(xi)) for xi in x])


def propagate(step_generators: np.ndarray, init) -> np.ndarray:
    """Accumulate ``y_{k+1} = exp(G_k) y_k`` from precomputed generators ``G_k``."""
    props = matrix_exponential(step_generators)
    return accumulate(props, init)


def accumulate(propagators: np.ndarray, init) -> np.ndarray:
    """Ordered product ``y_{k+1} = P_k y_k`` with ``y_0 = init``."""
    init = np.asarray(init, dtype=complex)
    out = np.empty((len(propagators) + 1,) + init.shape, dtype=complex)
    out[0] = init
    y = init
    for k, p in enumerate(propagators):
        y = p @ y
        out[k + 1] = y
    return out


def solve_linear_ode(coeff: Callable, grid: Grid, init) -> GridMatrixFunction:
    """Solve ``y' = C(x) y`` with the midpoint exponential (second-order Magnus) rule.

    ``coeff`` is called once with the array of cell midpoints and should
    return the stacked coefficients ``(n, d, d)``; a scalar-only callable is
    evaluated pointwise instead.
    """
    init = np.atleast_2d(np.asarray(init, dtype=complex))
    C = _eval_coeff(coeff, grid.midpoints)
    if C.shape[1:] != (init.shape[0], init.shape[0]):
        raise ShapeError(
            f"coefficient shape {C.shape[1:]} does not match init {init.shape}")
    return GridMatrixFunction(grid, propagate(grid.delta * C, init))


def trapezoid_matrix(grid: Grid) -> np.ndarray:
    """Scalar ``(n+1) x (n+1)`` matrix of the causal trapezoid rule for ``int_0^{x_k}``."""
    n = grid.n
    Wm = np.tril(np.full((n + 1, n + 1), grid.delta))
    Wm[:, 0] *= 0.5
    Wm[np.arange(n + 1), np.arange(n + 1)] *= 0.5
    Wm[0, 0] = 0.0
    return Wm


def integration_operator(grid: Grid, scale: complex = 1.0, r: int = 1) -> np.ndarray:
    """Block matrix of ``scale * int_0^x . dt`` on ``r``-row grid functions."""
    return np.kron(scale * trapezoid_matrix(grid), np.eye(r))


def volterra_matrix(kernel: np.ndarray, grid: Grid) -> np.ndarray:
    """Discretize ``f -> int_0^x k(x, t) f(t) dt`` from kernel samples ``(n+1, n+1, r, s)``.

    Only the lower triangle ``t <= x`` of the kernel is read.
    """
    kernel = np.asarray(kernel)
    Wm = trapezoid_matrix(grid)
    n1, _, r, s = kernel.shape
    blocks = kernel * Wm[:, :, None, None]
    return blocks.transpose(0, 2, 1, 3).reshape(n1 * r, n1 * s)


def fredholm_matrix(kernel: np.ndarray, grid: Grid) -> np.ndarray:
    """Discretize ``f -> int_0^T k(x, t) f(t) dt`` from full kernel samples."""
    kernel = np.asarray(kernel)
    w = trapezoid_weights(grid)
    n1, _, r, s = kernel.shape
    blocks = kernel * w[None, :, None, None]
    return blocks.transpose(0, 2, 1, 3).reshape(n1 * r, n1 * s)


def block_sqrt_weights(grid: Grid, r: int) -> np.ndarray:
    return np.repeat(np.sqrt(trapezoid_weights(grid)), r)


def to_weighted(M: np.ndarray, grid: Grid, r: int) -> np.ndarray:
    """Sample-space operator on ``r``-row functions to weighted coordinates."""
    q = block_sqrt_weights(grid, r)
    return q[:, None] * M / q[None, :]


def from_weighted(M: np.ndarray, grid: Grid, r: int) -> np.ndarray:
    q = block_sqrt_weights(grid, r)
    return M * q[None, :] / q[:, None]


def l2_operator_norm(M: np.ndarray, grid: Grid, r: int) -> float:
    """L2 operator norm of a sample-space operator on ``r``-row grid functions."""
    return float(np.linalg.norm(to_weighted(M, grid, r), 2))


def cholesky_lower(S) -> np.ndarray:
    """Lower Cholesky factor ``L`` with ``S = L L^*``.

    ``S`` must be Hermitian to 1e-10 relative.  The leading ``k x k`` block of
    ``L`` factors the leading block of ``S``.
    """
    S = np.asarray(S, dtype=complex)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeError("cholesky_lower needs a square matrix")
    scale = max(np.linalg.norm(S, np.inf), np.finfo(float).tiny)
    asym = np.linalg.norm(S - S.conj().T, np.inf)
    if asym > 1e-10 * scale:
        raise DomainError(f"matrix is not Hermitian (asymmetry {asym:.3e})")
    L, info = lapack.zpotrf(0.5 * (S + S.conj().T), lower=1, clean=1)
    if info > 0:
        raise FactorizationError(
            f"matrix is not positive definite: pivot {info - 1} is nonpositive",
            pivot=info - 1)
    if info < 0:
        raise DomainError(f"zpotrf rejected argument {-info}")
    return L


_FD4_EDGE = (np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0,
             np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0)


def finite_difference(f: GridMatrixFunction, order: int = 2) -> GridMatrixFunction:
    """Derivative estimate: central inside, one-sided at the ends.

    ``order=2`` (default) uses three-point stencils; ``order=4`` uses the
    five-point central stencil with fourth-order one-sided stencils on the
    two outermost points at each end.
    """
    n = f.grid.n
    h = f.grid.delta
    if order == 2:
        if n < 2:
            raise DomainError("finite_difference needs n >= 2")
        return GridMatrixFunction(f.grid, np.gradient(f.samples, h, axis=0, edge_order=2))
    if order != 4:
        raise DomainError("finite_difference supports order 2 or 4")
    if n < 4:
        raise DomainError("fourth-order finite_difference needs n >= 4")
    y = f.samples
    d = np.empty_like(y)
    d[2:-2] = (y[:-4] - 8 * y[1:-3] + 8 * y[3:-1] - y[4:]) / (12 * h)
    head, rev = y[:5], y[::-1][:5]
    for i, c in enumerate(_FD4_EDGE):
        d[i] = np.tensordot(c, head, 1) / h
        d[n - i] = -np.tensordot(c, rev, 1) / h
    return GridMatrixFunction(f.grid, d)


def cumulative_integral(samples: np.ndarray, grid: Grid) -> np.ndarray:
    """Running trapezoid integral ``int_0^{x_k}`` along axis 0, starting at 0."""
    return cumulative_trapezoid(samples, dx=grid.delta, axis=0, initial=0)
