"""Similarity to the integration operator, the S-node and its transfer matrix.

A semi-separable operator ``K = F(x) int_0^x G(t) . dt`` with ``F G = I_r``
is similar to ``int_0^x`` through a lower triangular operator
``E = rho (I + int_0^x N(x, t) . dt)``.  The kernel ``N`` is a series of
iterated double integrals of ``kappa(x, t) = mu(x) nu(t)``.  For the Dirac
system ``F = gamma`` and ``G = -j gamma^*``; after normalization
``E^{-1} gamma_2 = I`` the operator ``E`` produces the S-node
``{A, S, Pi}`` with ``A = -i int_0^x``, ``S = E^{-1} E^{-*}`` and
``Pi = [Phi_1, I]``, ``Phi_1 = E^{-1} gamma_1``.

Operator matrices act on stacked samples (see :mod:`dirac_inverse.grid`);
the S-node itself is stored in weighted coordinates, where discrete L2
adjoints are conjugate transposes.  ``Pi`` therefore carries the square
roots of the trapezoid weights on its block rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.linalg

from .direct import BlockRows, DiracPotential, block_rows, fundamental_solution, signature_matrix
from .errors import (ConditioningError, DomainError, FactorizationError, InversionError, SeriesError,
                     ShapeError, SNodeError)
from .grid import (Grid, GridMatrixFunction, block_sqrt_weights, cholesky_lower,
                   cumulative_integral, dagger, finite_difference, from_weighted,
                   integration_operator, l2_operator_norm, solve_linear_ode, to_weighted,
                   trapezoid_weights, volterra_matrix)


@dataclass(frozen=True)
class KernelFactors:
    """Factors entering the similarity construction for ``K = F int G``.

    ``mu = rho^{-1} F' u1t`` and ``nu = -u1t^{-1} (G F' G + G') rho`` with
    ``rho' = F' G rho`` and ``u1t' = -G F' u1t``, both normalized by the
    identity at ``x = 0``.
    """

    F: GridMatrixFunction
    G: GridMatrixFunction
    mu: GridMatrixFunction
    nu: GridMatrixFunction
    rho: GridMatrixFunction
    u1tilde: GridMatrixFunction

    @property
    def r(self) -> int:
        return self.F.rows

    @property
    def p(self) -> int:
        return self.F.cols

    @property
    def grid(self) -> Grid:
        return self.F.grid

    def identity_residual(self) -> float:
        """``max_x || F(x) G(x) - I_r ||``."""
        return float(np.max(np.linalg.norm(
            self.F.samples @ self.G.samples - np.eye(self.r), ord=2, axis=(1, 2))))


def _interp_coeff(samples: np.ndarray):
    mid = 0.5 * (samples[1:] + samples[:-1])
    return lambda x: mid


def kernel_factors(F: GridMatrixFunction, G: GridMatrixFunction,
                   dF: GridMatrixFunction | None = None,
                   dG: GridMatrixFunction | None = None,
                   rho_identity: bool = False, tol: float = 1e-8) -> KernelFactors:
    """Build ``rho``, ``u1tilde``, ``mu`` and ``nu`` from sampled ``F`` and ``G``.

    Derivatives default to second-order finite differences.  With
    ``rho_identity`` the multiplier is taken to be exactly ``I`` (valid when
    ``F' G = 0``) instead of integrating its equation.
    """
    if F.grid != G.grid:
        raise DomainError("F and G must share a grid")
    r, p = F.shape
    if G.shape != (p, r):
        raise ShapeError(f"G must be {(p, r)}, got {G.shape}")
    grid = F.grid
    res = np.max(np.linalg.norm(F.samples @ G.samples - np.eye(r), ord=2, axis=(1, 2)))
    if res > tol:
        raise DomainError(f"F G = I violated by {res:.3e}")
    dF = finite_difference(F) if dF is None else dF
    dG = finite_difference(G) if dG is None else dG
    Fp, Gs, Gp = dF.samples, G.samples, dG.samples
    if rho_identity:
        rho = np.broadcast_to(np.eye(r, dtype=complex), (grid.n + 1, r, r))
    else:
        rho = solve_linear_ode(_interp_coeff(Fp @ Gs), grid, np.eye(r)).samples
    u1t = solve_linear_ode(_interp_coeff(-Gs @ Fp), grid, np.eye(p)).samples
    mu = np.linalg.solve(rho, Fp @ u1t)
    nu = -np.linalg.solve(u1t, (Gs @ Fp @ Gs + Gp) @ rho)
    mk = lambda a: GridMatrixFunction(grid, a)
    return KernelFactors(F, G, mk(mu), mk(nu), mk(rho), mk(u1t))


@dataclass(frozen=True)
class KernelSeries:
    """Summed kernel ``N(x_a, x_b)`` (lower triangle) with convergence data."""

    N: np.ndarray
    terms: int
    tail: float
    term_norms: tuple
    C0: float
    C1: float


def _first_term(mu, nu, grid):
    n1 = grid.n + 1
    r = mu.shape[1]
    kap = np.zeros((n1, n1, r, r), dtype=complex)
    idx = np.arange(n1)
    for d in range(n1):
        P = mu[d:] @ nu[:n1 - d]
        kap[d + idx[:n1 - d], idx[:n1 - d]] = cumulative_integral(P, grid)
    return kap


def _next_term(mu, nu, kap, grid):
    n1 = grid.n + 1
    r, p = mu.shape[1], mu.shape[2]
    idx = np.arange(n1)
    # W(y_c, tau_e) = int_{tau}^{y} nu(s) kappa_k(s, tau) ds
    W = np.zeros((n1, n1, p, r), dtype=complex)
    for e in range(n1):
        Q = nu[e:] @ kap[e:, e]
        W[e:, e] = cumulative_integral(Q, grid)
    out = np.zeros_like(kap)
    # kappa_{k+1}(x, t) = int_{x-t}^{x} mu(y) W(y, y - (x - t)) dy
    for d in range(n1):
        i = idx[:n1 - d]
        R = mu[d:] @ W[d + i, i]
        out[d + i, i] = cumulative_integral(R, grid)
    return out


def _lower_sup(kap):
    return float(np.max(np.linalg.norm(kap, ord=2, axis=(2, 3))))


def kernel_series(kf: KernelFactors, tol: float = 1e-12, max_terms: int = 200) -> KernelSeries:
    """Sum ``N = kappa_1 + kappa_2 + ...`` of iterated kernels of ``mu(x) nu(t)``.

    Stops once the factorial tail bound ``C0 q^K / K! e^q`` with
    ``q = C1 T`` drops below ``tol``; ``C0 = max ||kappa_1||`` and
    ``C1 = T max||mu|| max||nu||``.
    """
    grid = kf.grid
    mu, nu = kf.mu.samples, kf.nu.samples
    kap = _first_term(mu, nu, grid)
    N = kap.copy()
    C0 = _lower_sup(kap)
    C1 = grid.T * kf.mu.sup_norm() * kf.nu.sup_norm()
    q = C1 * grid.T
    norms = [C0]
    k = 1
    tail = C0 * q * np.exp(q)
    while tail > tol:
        if k >= max_terms:
            raise SeriesError(
                f"kernel series did not converge in {max_terms} terms "
                f"(tail estimate {tail:.3e})", tail)
        kap = _next_term(mu, nu, kap, grid)
        N += kap
        norms.append(_lower_sup(kap))
        k += 1
        tail = C0 * q ** k / factorial(k) * np.exp(q)
    return KernelSeries(N, k, float(tail), tuple(norms), C0, C1)


class TriangularKernelOperator:
    """Discrete lower triangular operator on ``r``-row grid functions.

    ``matrix`` is the sample-space block matrix; for operators of the form
    ``rho (I + int_0^x N(x, t) . dt)`` the kernel and multiplier are kept too.
    """

    def __init__(self, grid: Grid, r: int, matrix: np.ndarray,
                 N: np.ndarray | None = None, rho: np.ndarray | None = None):
        size = (grid.n + 1) * r
        if matrix.shape != (size, size):
            raise ShapeError(f"operator matrix must be {size} x {size}")
        self.grid = grid
        self.r = r
        self.matrix = matrix
        self.N = N
        self.rho = rho

    @classmethod
    def from_kernel(cls, grid: Grid, N: np.ndarray, rho: np.ndarray | None = None):
        r = N.shape[2]
        M = np.eye((grid.n + 1) * r, dtype=complex) + volterra_matrix(N, grid)
        if rho is not None:
            M = scipy.linalg.block_diag(*rho) @ M
        return cls(grid, r, M, N, rho)

    @classmethod
    def convolution(cls, grid: Grid, E0: np.ndarray):
        """``I + int_0^x E0(x - t) . dt`` from samples of ``E0`` on the grid."""
        n1 = grid.n + 1
        a = np.arange(n1)
        diff = a[:, None] - a[None, :]
        kern = E0[np.clip(diff, 0, None)] * (diff >= 0)[:, :, None, None]
        return cls.from_kernel(grid, kern)

    def __matmul__(self, other: "TriangularKernelOperator") -> "TriangularKernelOperator":
        if other.grid != self.grid or other.r != self.r:
            raise ShapeError("operators must act on the same space")
        return TriangularKernelOperator(self.grid, self.r, self.matrix @ other.matrix)

    def is_causal(self) -> bool:
        blocks = self.blocks()
        n1 = self.grid.n + 1
        upper = np.triu(np.ones((n1, n1), bool), 1)
        return bool(np.all(blocks[upper] == 0))

    def blocks(self) -> np.ndarray:
        n1, r = self.grid.n + 1, self.r
        return self.matrix.reshape(n1, r, n1, r).transpose(0, 2, 1, 3)

    def apply(self, f: GridMatrixFunction) -> GridMatrixFunction:
        return GridMatrixFunction.from_stacked(self.grid, self.matrix @ f.stacked(), self.r)

    def solve(self, f: GridMatrixFunction) -> GridMatrixFunction:
        """``E^{-1} f`` by forward block substitution."""
        if f.rows != self.r:
            raise ShapeError("row count mismatch")
        n1, r = self.grid.n + 1, self.r
        B = self.blocks()
        y = np.empty((n1, r, f.cols), dtype=complex)
        rhs = f.samples
        for k in range(n1):
            acc = rhs[k] - np.einsum("lij,ljc->ic", B[k, :k], y[:k]) if k else rhs[k]
            diag = B[k, k]
            if np.linalg.cond(diag) > 1e12:
                raise InversionError(f"singular diagonal block at grid index {k}")
            y[k] = np.linalg.solve(diag, acc)
        return GridMatrixFunction(self.grid, y)

    def condition_number(self) -> float:
        return float(np.linalg.cond(to_weighted(self.matrix, self.grid, self.r)))


def constant_function(grid: Grid, r: int) -> GridMatrixFunction:
    return GridMatrixFunction(grid, np.broadcast_to(np.eye(r, dtype=complex),
                                                    (grid.n + 1, r, r)))


@dataclass
class SimilarityResult:
    Etilde: TriangularKernelOperator
    factors: KernelFactors
    series: KernelSeries
    rho_deviation: float


def build_similarity_operator(br: BlockRows, tol: float = 1e-12) -> SimilarityResult:
    """Construct the operator ``Etilde`` with ``K Etilde = Etilde A`` for the Dirac data.

    ``F = gamma``, ``G = -j gamma^*``; the multiplier ``rho`` is the identity
    (``gamma' j gamma^* = 0``) and its integrated value is returned only as a
    diagnostic deviation.
    """
    grid = br.grid
    j = signature_matrix(br.m1, br.m2)
    F = br.gamma
    G = GridMatrixFunction(grid, -j @ dagger(F.samples))
    dF = finite_difference(F)
    dG = GridMatrixFunction(grid, -j @ dagger(dF.samples))
    kf = kernel_factors(F, G, dF, dG, rho_identity=True)
    rho_int = solve_linear_ode(_interp_coeff(dF.samples @ G.samples), grid,
                               np.eye(br.m2)).samples
    rho_dev = float(np.max(np.abs(rho_int - np.eye(br.m2))))
    series = kernel_series(kf, tol)
    Et = TriangularKernelOperator.from_kernel(grid, series.N)
    return SimilarityResult(Et, kf, series, rho_dev)


@dataclass
class NormalizedSimilarity:
    E: TriangularKernelOperator
    E0: GridMatrixFunction
    residual: float


def normalize_similarity(Etilde: TriangularKernelOperator,
                         gamma2: GridMatrixFunction) -> NormalizedSimilarity:
    """Multiply ``Etilde`` by ``E0 = I + int E0(x - t) . dt``, ``E0 = (Etilde^{-1} gamma2)'``.

    The result satisfies ``E^{-1} gamma2 = I`` up to discretization error,
    which is returned as ``residual`` (sup norm).
    """
    grid = Etilde.grid
    y = Etilde.solve(gamma2)
    E0 = finite_difference(y)
    E = Etilde @ TriangularKernelOperator.convolution(grid, E0.samples)
    check = E.solve(gamma2).samples - np.eye(gamma2.rows)
    res = float(np.max(np.linalg.norm(check, ord=2, axis=(1, 2))))
    return NormalizedSimilarity(E, E0, res)


def phi1_from_gamma(E: TriangularKernelOperator, gamma1: GridMatrixFunction
                    ) -> tuple[GridMatrixFunction, float]:
    """``Phi_1 = E^{-1} gamma_1`` with ``Phi_1(0) = 0`` enforced.

    Returns the function and the norm of the value at 0 before snapping.
    """
    phi = np.array(E.solve(gamma1).samples)
    dev = float(np.linalg.norm(phi[0], 2))
    phi[0] = 0.0
    return GridMatrixFunction(E.grid, phi), dev


def dirac_kernel_operator(br: BlockRows) -> np.ndarray:
    """Sample-space matrix of ``K = i int_0^x gamma(x) j gamma(t)^* . dt``."""
    j = signature_matrix(br.m1, br.m2)
    g = br.gamma.samples
    kern = 1j * np.einsum("aij,jk,blk->abil", g, j, g.conj())
    return volterra_matrix(kern, br.grid)


def similarity_residual(br: BlockRows, E: TriangularKernelOperator) -> float:
    """Relative L2 residual ``||K E - E A|| / ||E||``."""
    grid = br.grid
    K = dirac_kernel_operator(br)
    A = integration_operator(grid, -1j, br.m2)
    R = K @ E.matrix - E.matrix @ A
    return l2_operator_norm(R, grid, br.m2) / l2_operator_norm(E.matrix, grid, br.m2)


@dataclass
class DiscreteSNode:
    """Weighted-coordinate discretization of ``{A, S, Pi}``.

    ``A``, ``S`` are ``(n+1) m2`` square, ``Pi`` is ``(n+1) m2 x m``.
    ``L`` is the lower Cholesky factor of ``S``.
    """

    grid: Grid
    m1: int
    m2: int
    A: np.ndarray
    S: np.ndarray
    Pi: np.ndarray
    Phi1: GridMatrixFunction
    L: np.ndarray
    source: str
    identity_residual: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.m1 + self.m2

    @property
    def j(self) -> np.ndarray:
        return signature_matrix(self.m1, self.m2)

    def cholesky_rows(self) -> np.ndarray:
        """Blocks ``Y_k`` of ``L^{-1} Pi``, shape ``(n+1, m2, m)``."""
        Y = scipy.linalg.solve_triangular(self.L, self.Pi, lower=True)
        return Y.reshape(self.grid.n + 1, self.m2, self.m)

    def quadratic_form(self) -> np.ndarray:
        """``Pi^* P_k^* S_k^{-1} P_k Pi`` for every leading block ``k``."""
        Y = self.cholesky_rows()
        return np.cumsum(dagger(Y) @ Y, axis=0)


def pi_samples(Phi1: GridMatrixFunction) -> np.ndarray:
    """Sample blocks ``[Phi_1(x_k), I]`` of ``Pi``."""
    n1, m2, m1 = Phi1.samples.shape
    out = np.zeros((n1, m2, m1 + m2), dtype=complex)
    out[:, :, :m1] = Phi1.samples
    out[:, :, m1:] = np.eye(m2)
    return out


def operator_identity_residual(A: np.ndarray, S: np.ndarray, Pi: np.ndarray,
                               j: np.ndarray) -> float:
    """``||A S - S A^* - i Pi j Pi^*|| / ||S||`` in the spectral norm."""
    R = A @ S - S @ A.conj().T - 1j * Pi @ j @ Pi.conj().T
    return float(np.linalg.norm(R, 2) / np.linalg.norm(S, 2))


def S_from_E(E: TriangularKernelOperator) -> np.ndarray:
    """Weighted-coordinate ``S = E^{-1} E^{-*}``."""
    Ew = to_weighted(E.matrix, E.grid, E.r)
    X = np.linalg.solve(Ew, np.eye(Ew.shape[0]))
    S = X @ X.conj().T
    return 0.5 * (S + S.conj().T)


def assemble_snode(Phi1: GridMatrixFunction, grid: Grid | None = None,
                   s_source="from_E", E: TriangularKernelOperator | None = None,
                   S: np.ndarray | None = None) -> DiscreteSNode:
    """Assemble the discrete S-node for a given ``Phi_1``.

    ``s_source`` is ``"from_E"`` (needs ``E``), ``"closed_form"`` (builds ``S``
    from ``Phi_1'``) or ``"given"`` (uses ``S`` as passed, weighted coordinates).
    """
    grid = Phi1.grid if grid is None else grid
    if grid != Phi1.grid:
        raise DomainError("Phi1 grid mismatch")
    m2, m1 = Phi1.shape
    if np.linalg.norm(Phi1.samples[0]) > 1e-12:
        raise DomainError("Phi1(0) must vanish")
    q = block_sqrt_weights(grid, m2)
    Pi = q[:, None] * pi_samples(Phi1).reshape(-1, m1 + m2)
    A = to_weighted(integration_operator(grid, -1j, m2), grid, m2)
    if s_source == "from_E":
        if E is None:
            raise DomainError("from_E needs the similarity operator E")
        S = S_from_E(E)
    elif s_source in ("closed_form", "from_closed_form"):
        from .inverse import build_S_closed_form
        S = build_S_closed_form(Phi1)
        s_source = "closed_form"
    elif s_source == "given":
        if S is None:
            raise DomainError("s_source='given' needs S")
    else:
        raise DomainError(f"unknown S source {s_source!r}")
    try:
        L = cholesky_lower(S)
    except FactorizationError as exc:
        raise SNodeError(f"S is not positive definite (pivot {exc.pivot})") from exc
    j = signature_matrix(m1, m2)
    res = operator_identity_residual(A, S, Pi, j)
    return DiscreteSNode(grid, m1, m2, A, S, Pi, Phi1, L, s_source, res)


def transfer_matrix_path(snode: DiscreteSNode, z: complex) -> np.ndarray:
    """``w_A(x_k, z)`` at every grid point, shape ``(n+1, m, m)``.

    The reduced quantity ``Pi^* P^* S_xi^{-1} (I - z A_xi)^{-1} P Pi`` is
    accumulated block by block through the Cholesky factor of ``S``; the
    per-point increments are then integrated with the trapezoid rule of
    ``[0, x_k]``, so the leading block of size ``k`` represents ``xi = x_k``.
    """
    grid = snode.grid
    n1, m2, m = grid.n + 1, snode.m2, snode.m
    Y = snode.cholesky_rows()
    if z == 0:
        return np.broadcast_to(np.eye(m, dtype=complex), (n1, m, m)).copy()
    M = np.eye(n1 * m2) - z * snode.A
    Z = scipy.linalg.solve_triangular(M, snode.Pi, lower=True)
    Z = scipy.linalg.solve_triangular(snode.L, Z, lower=True).reshape(n1, m2, m)
    density = (dagger(Y) @ Z) / trapezoid_weights(grid)[:, None, None]
    F = cumulative_integral(density, grid)
    return np.eye(m) + 1j * z * snode.j[None] @ F


def transfer_matrix(snode: DiscreteSNode, xi: float, z: complex) -> np.ndarray:
    """``w_A(xi, z)`` from the reductions of ``{A, S, Pi}`` to ``[0, xi]``.

    The leading blocks of the sample-space operators are taken and the
    quadrature row/column of the endpoint ``xi`` is given its trapezoid
    weight on ``[0, xi]``, so the pairing ``Pi^* P_xi^* ...`` is the L2 pairing
    of the sub-interval.  ``xi`` must be a grid point ``> 0``.
    """
    grid = snode.grid
    k = xi / grid.delta
    if abs(k - round(k)) > 1e-9 * max(k, 1) or not 0 < round(k) <= grid.n:
        raise DomainError("xi must be a positive grid point")
    k = int(round(k))
    m2, m = snode.m2, snode.m
    size = (k + 1) * m2
    sub = grid.leading(k)
    w_loc = trapezoid_weights(sub)
    ratio = np.repeat(w_loc / trapezoid_weights(grid)[:k + 1], m2)
    S_op = from_weighted(snode.S, grid, m2)[:size, :size]
    S_k = np.eye(size) + (S_op - np.eye(size)) * ratio[None, :]
    A_k = integration_operator(sub, -1j, m2)
    Pi_k = pi_samples(snode.Phi1)[:k + 1].reshape(size, m)
    try:
        f = np.linalg.solve(np.eye(size) - z * A_k, Pi_k)
        g = np.linalg.solve(S_k, f).reshape(k + 1, m2, m)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"reduced S-node solve failed at xi={xi}: {exc}") from exc
    pair = np.einsum("a,aij,ajk->ik", w_loc, dagger(Pi_k.reshape(k + 1, m2, m)), g)
    return np.eye(m) + 1j * z * snode.j @ pair


def check_representation(V: DiracPotential, snode: DiscreteSNode, z: complex,
                         grid: Grid | None = None, br: BlockRows | None = None) -> dict:
    """Residuals of ``u(x,z) = e^{ixz} u(x,0) w_A(x,2z)`` and of ``w' = i z j gamma^* gamma w``."""
    grid = V.grid if grid is None else grid
    if grid != snode.grid:
        raise DomainError("S-node grid does not match")
    u = fundamental_solution(V, z, grid).samples
    u0 = fundamental_solution(V, 0.0, grid).samples
    wA2 = transfer_matrix_path(snode, 2 * z)
    x = grid.points
    rep = u - np.exp(1j * x * z)[:, None, None] * (u0 @ wA2)
    rep_res = float(np.max(np.linalg.norm(rep, ord=2, axis=(1, 2))))
    br = br or block_rows(V, grid)
    g = br.gamma.samples
    wA = transfer_matrix_path(snode, z)
    dw = finite_difference(GridMatrixFunction(grid, wA)).samples
    ode = dw - 1j * z * snode.j[None] @ dagger(g) @ g @ wA
    ode_res = float(np.max(np.linalg.norm(ode, ord=2, axis=(1, 2))))
    return {"representation": rep_res, "ode": ode_res,
            "w_at_origin": float(np.linalg.norm(wA[0] - np.eye(snode.m), 2))}


@dataclass
class SimilarityPath:
    """All intermediate objects of the direct similarity construction."""

    br: BlockRows
    similarity: SimilarityResult
    normalized: NormalizedSimilarity
    Phi1: GridMatrixFunction
    phi1_origin_deviation: float

    @property
    def E(self) -> TriangularKernelOperator:
        return self.normalized.E


def similarity_path(V: DiracPotential, tol: float = 1e-12) -> SimilarityPath:
    """Block rows, ``Etilde``, ``E`` and ``Phi_1 = E^{-1} gamma_1`` for a potential."""
    br = block_rows(V)
    sim = build_similarity_operator(br, tol)
    norm = normalize_similarity(sim.Etilde, br.gamma2)
    phi, dev = phi1_from_gamma(norm.E, br.gamma1)
    return SimilarityPath(br, sim, norm, phi, dev)
