"""Direct problem for the Dirac-type system ``y' = i (z j + j V(x)) y``.

``V = [[0, v], [v^*, 0]]`` with an ``m1 x m2`` block ``v`` and
``j = diag(I_{m1}, -I_{m2})``.  This module computes the fundamental
solution ``u(x, z)`` normalized by ``u(0, z) = I``, the block rows of
``u(x, 0)``, the Hamiltonian ``gamma^* gamma`` and Mobius-transform
approximants of the Weyl function.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConditioningError, DomainError, ShapeError
from .grid import (Grid, GridMatrixFunction, dagger,
                   finite_difference, solve_linear_ode)


def signature_matrix(m1: int, m2: int) -> np.ndarray:
    return np.diag(np.concatenate([np.ones(m1), -np.ones(m2)])).astype(complex)


class DiracPotential:
    """The ``m1 x m2`` potential block ``v`` sampled on a grid."""

    def __init__(self, v: GridMatrixFunction, name: str = "sampled"):
        if not np.all(np.isfinite(v.samples)):
            raise DomainError("potential samples must be finite")
        self.v = v
        self.name = name

    @property
    def grid(self) -> Grid:
        return self.v.grid

    @property
    def m1(self) -> int:
        return self.v.rows

    @property
    def m2(self) -> int:
        return self.v.cols

    @property
    def m(self) -> int:
        return self.m1 + self.m2

    @property
    def j(self) -> np.ndarray:
        return signature_matrix(self.m1, self.m2)

    def __repr__(self):
        return (f"DiracPotential({self.name}, m1={self.m1}, m2={self.m2}, "
                f"T={self.grid.T}, n={self.grid.n})")

    @classmethod
    def zero(cls, grid: Grid, m1: int = 1, m2: int = 1):
        return cls(GridMatrixFunction(grid, np.zeros((grid.n + 1, m1, m2))), "zero")

    @classmethod
    def constant(cls, grid: Grid, c):
        c = np.atleast_2d(np.asarray(c, dtype=complex))
        samples = np.broadcast_to(c, (grid.n + 1,) + c.shape)
        return cls(GridMatrixFunction(grid, samples), "constant")

    @classmethod
    def from_callable(cls, grid: Grid, func, name: str = "callable"):
        return cls(GridMatrixFunction.from_callable(grid, func), name)

    def on_grid(self, grid: Grid) -> "DiracPotential":
        """Resample (linear interpolation) onto another grid over ``[0, grid.T]``."""
        if grid == self.grid:
            return self
        if grid.T > self.grid.T * (1 + 1e-12):
            raise DomainError("cannot resample beyond the potential's interval")
        return DiracPotential(GridMatrixFunction(grid, self.v(grid.points)), self.name)

    def full_matrix(self, v_samples: np.ndarray) -> np.ndarray:
        """Assemble ``V = [[0, v], [v^*, 0]]`` for stacked ``v`` samples."""
        k = v_samples.shape[0]
        out = np.zeros((k, self.m, self.m), dtype=complex)
        out[:, :self.m1, self.m1:] = v_samples
        out[:, self.m1:, :self.m1] = dagger(v_samples)
        return out

    def sup_norm(self) -> float:
        return self.v.sup_norm()


@dataclass(frozen=True)
class BlockRows:
    """Block rows ``beta = [I 0] u(x, 0)`` and ``gamma = [0 I] u(x, 0)``."""

    beta: GridMatrixFunction
    gamma: GridMatrixFunction

    def __post_init__(self):
        m1, m = self.beta.shape
        m2 = self.gamma.rows
        if self.gamma.cols != m or m1 + m2 != m:
            raise ShapeError("beta must be m1 x m and gamma m2 x m with m = m1 + m2")

    @property
    def m1(self) -> int:
        return self.beta.rows

    @property
    def m2(self) -> int:
        return self.gamma.rows

    @property
    def grid(self) -> Grid:
        return self.gamma.grid

    @property
    def gamma1(self) -> GridMatrixFunction:
        return GridMatrixFunction(self.grid, self.gamma.samples[:, :, :self.m1])

    @property
    def gamma2(self) -> GridMatrixFunction:
        return GridMatrixFunction(self.grid, self.gamma.samples[:, :, self.m1:])

    def j_residuals(self) -> dict:
        """Sup-norm residuals of ``beta j beta^* = I``, ``gamma j gamma^* = -I``,
        ``beta j gamma^* = 0`` and ``gamma' j gamma^* = 0``."""
        j = signature_matrix(self.m1, self.m2)
        b, g = self.beta.samples, self.gamma.samples
        dg = finite_difference(self.gamma, order=4).samples
        return {
            "beta_j_beta": _sup(b @ j @ dagger(b) - np.eye(self.m1)),
            "gamma_j_gamma": _sup(g @ j @ dagger(g) + np.eye(self.m2)),
            "beta_j_gamma": _sup(b @ j @ dagger(g)),
            "dgamma_j_gamma": _sup(dg @ j @ dagger(g)),
        }


def _sup(a) -> float:
    return float(np.max(np.linalg.norm(a, ord=2, axis=(-2, -1))))


@dataclass(frozen=True)
class PropertyJMatrix:
    """A constant ``m x m1`` matrix ``P`` with ``P^* P > 0`` and ``P^* j P >= 0``."""

    P: np.ndarray
    m1: int
    m2: int

    def __post_init__(self):
        P = np.asarray(self.P, dtype=complex)
        if P.shape != (self.m1 + self.m2, self.m1):
            raise ShapeError(f"P must be {(self.m1 + self.m2, self.m1)}, got {P.shape}")
        j = signature_matrix(self.m1, self.m2)
        gram = np.linalg.eigvalsh(dagger(P) @ P)
        form = np.linalg.eigvalsh(dagger(P) @ j @ P)
        if gram.min() <= 1e-14 * max(gram.max(), 1.0):
            raise DomainError("P^* P must be positive definite")
        if form.min() < -1e-12 * max(gram.max(), 1.0):
            raise DomainError("P^* j P must be positive semidefinite")
        object.__setattr__(self, "P", P)

    @classmethod
    def default(cls, m1: int, m2: int):
        return cls(np.vstack([np.eye(m1), np.zeros((m2, m1))]), m1, m2)


@dataclass(frozen=True)
class WeylLineSamples:
    """Values of the ``m2 x m1`` Weyl function on the line ``Im z = eta``.

    ``xi`` is a symmetric uniform grid on ``[-a, a]`` including both ends.
    """

    eta: float
    xi: np.ndarray
    phi: np.ndarray
    truncation_scale: float = 0.0
    tol: float = 1e-6
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        phi = np.asarray(self.phi, dtype=complex)
        if self.eta <= 0:
            raise DomainError("eta must be positive")
        if phi.ndim != 3 or phi.shape[0] != xi.shape[0]:
            raise ShapeError("phi must have shape (len(xi), m2, m1)")
        if xi.size < 3 or (xi.size - 1) % 2:
            raise DomainError("xi grid needs an even number of intervals")
        step = np.diff(xi)
        if not np.allclose(step, step[0], rtol=1e-9, atol=0) or step[0] <= 0:
            raise DomainError("xi grid must be uniform and increasing")
        if not np.isclose(xi[0], -xi[-1], rtol=1e-12, atol=1e-12 * abs(xi[-1])):
            raise DomainError("xi grid must be symmetric")
        norms = np.linalg.norm(phi, ord=2, axis=(1, 2))
        if norms.max(initial=0.0) > 1 + self.tol:
            raise DomainError(
                f"Weyl samples are not non-expansive (max norm {norms.max():.6g})")
        xi.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "phi", phi)

    @property
    def a(self) -> float:
        return float(self.xi[-1])

    @property
    def count(self) -> int:
        return self.xi.size - 1

    @property
    def z(self) -> np.ndarray:
        return self.xi + 1j * self.eta

    @property
    def m2(self) -> int:
        return self.phi.shape[1]

    @property
    def m1(self) -> int:
        return self.phi.shape[2]


def _check_grid(V: DiracPotential, grid: Grid | None) -> Grid:
    if grid is None:
        return V.grid
    if grid != V.grid:
        raise DomainError(f"grid {grid} does not match the potential's grid {V.grid}")
    return grid


def fundamental_solution(V: DiracPotential, z: complex, grid: Grid | None = None
                         ) -> GridMatrixFunction:
    """``u(x, z)`` on the grid, from the midpoint exponential rule."""
    grid = _check_grid(V, grid)
    j = V.j
    jV_mid = j @ V.full_matrix(V.v.midpoint_values())
    coeff = 1j * (z * j[None] + jV_mid)
    return solve_linear_ode(lambda x: coeff, grid, np.eye(V.m))


def dirac_step_propagators(V: DiracPotential, zs, upto: int | None = None) -> np.ndarray:
    """Exact exponentials ``exp(i delta (z j + j V_mid))`` for many ``z`` at once.

    Uses ``(z j + j V)^2 = z^2 I - diag(v v^*, v^* v)``, so the exponential is
    ``cos(delta s) + i sin(delta s)/s (z j + j V)`` with ``s^2`` the square
    above; only a Hermitian eigendecomposition per step is needed.
    Returns an array ``(steps, len(zs), m, m)``.
    """
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    grid = V.grid
    delta = grid.delta
    m1, m = V.m1, V.m
    j = np.diag(V.j).real
    v_mid = V.v.midpoint_values()
    if upto is not None:
        v_mid = v_mid[:upto]
    Vm = V.full_matrix(v_mid)
    jV = j[None, :, None] * Vm
    D = np.zeros_like(Vm)
    D[:, :m1, :m1] = v_mid @ dagger(v_mid)
    D[:, m1:, m1:] = dagger(v_mid) @ v_mid
    lam, U = np.linalg.eigh(D)
    out = np.empty((len(v_mid), len(zs), m, m), dtype=complex)
    z2 = zs ** 2
    for k in range(len(v_mid)):
        s = np.sqrt(z2[:, None] - lam[k][None, :])
        c = np.cos(delta * s)
        sn = delta * np.sinc(delta * s / np.pi)
        Uk = U[k]
        Ch = np.einsum("ab,zb,cb->zac", Uk, c, Uk.conj())
        Sh = np.einsum("ab,zb,cb->zac", Uk, sn, Uk.conj())
        X = zs[:, None, None] * np.diag(j)[None] + jV[k][None]
        out[k] = Ch + 1j * Sh @ X
    return out


def endpoint_solution(V: DiracPotential, zs, upto: int | None = None) -> np.ndarray:
    """``u(x_upto, z)`` for an array of ``z`` (default ``x_upto = T``)."""
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    props = dirac_step_propagators(V, zs, upto)
    u = np.broadcast_to(np.eye(V.m, dtype=complex), (len(zs), V.m, V.m)).copy()
    for p in props:
        u = p @ u
    return u


def block_rows(V: DiracPotential, grid: Grid | None = None) -> BlockRows:
    u = fundamental_solution(V, 0.0, grid).samples
    g = V.grid
    return BlockRows(GridMatrixFunction(g, u[:, :V.m1, :]),
                     GridMatrixFunction(g, u[:, V.m1:, :]))


def hamiltonian(br: BlockRows) -> GridMatrixFunction:
    g = br.gamma.samples
    H = dagger(g) @ g
    return GridMatrixFunction(br.grid, 0.5 * (H + dagger(H)))


def mobius(u: np.ndarray, P: PropertyJMatrix, cond_max: float = 1e13) -> np.ndarray:
    """Mobius value ``[0 I] u^{-1} P ([I 0] u^{-1} P)^{-1}`` for stacked ``u``."""
    m1 = P.m1
    w = np.linalg.inv(u) @ P.P
    top, bottom = w[..., :m1, :], w[..., m1:, :]
    cond = np.linalg.cond(top)
    worst = float(np.max(cond))
    if not np.isfinite(worst) or worst > cond_max:
        raise ConditioningError(
            f"[I 0] u^-1 P is numerically singular (condition number {worst:.3e})", worst)
    return bottom @ np.linalg.inv(top)


def weyl_approximant(V: DiracPotential, z: complex, T: float | None = None,
                     P: PropertyJMatrix | None = None) -> np.ndarray:
    """Approximant ``phi(T, z, P)`` of the Weyl function (``m2 x m1``).

    For a potential that vanishes beyond ``T`` this is the exact Weyl function
    of the half-line system (for the default ``P``).
    """
    if np.imag(z) <= 0:
        raise DomainError("weyl_approximant needs Im z > 0")
    return weyl_values(V, np.array([z]), T, P)[0]


def _upto(V: DiracPotential, T: float | None) -> int:
    if T is None:
        return V.grid.n
    k = T / V.grid.delta
    if abs(k - round(k)) > 1e-9 * max(1.0, k) or not 0 < round(k) <= V.grid.n:
        raise DomainError(f"T={T} must be a grid point in (0, {V.grid.T}]")
    return int(round(k))


def weyl_values(V: DiracPotential, zs, T: float | None = None,
                P: PropertyJMatrix | None = None) -> np.ndarray:
    """Vectorized :func:`weyl_approximant` over an array of ``z``."""
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    if np.any(zs.imag <= 0):
        raise DomainError("Weyl approximants need Im z > 0")
    P = P or PropertyJMatrix.default(V.m1, V.m2)
    u = endpoint_solution(V, zs, _upto(V, T))
    return mobius(u, P)


def weyl_line(V: DiracPotential, eta: float, a: float, count: int,
              T: float | None = None, workers: int = 1,
              P: PropertyJMatrix | None = None) -> WeylLineSamples:
    """Sample the Weyl approximant at ``xi + i eta`` for ``count + 1`` uniform ``xi``.

    ``workers > 1`` splits the ``xi`` grid into chunks evaluated in threads;
    results do not depend on the split.
    """
    if eta <= 0:
        raise DomainError("eta must be positive")
    if a <= 0:
        raise DomainError("a must be positive")
    if count <= 0 or count % 2:
        raise DomainError("count must be a positive even integer")
    xi = np.linspace(-a, a, count + 1)
    xi[count // 2] = 0.0
    zs = xi + 1j * eta
    if workers > 1:
        chunks = np.array_split(zs, workers)
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda c: weyl_values(V, c, T, P), chunks))
        phi = np.concatenate(parts)
    else:
        phi = weyl_values(V, zs, T, P)
    T_eff = V.grid.T if T is None else T
    return WeylLineSamples(eta, xi, phi, truncation_scale=float(np.exp(-2 * eta * T_eff)),
                           meta={"T": T_eff, "potential": V.name})
