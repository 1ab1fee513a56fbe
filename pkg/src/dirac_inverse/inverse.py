"""Recovery of the potential from Weyl-function data.

The chain runs: Weyl samples on a line ``Im z = eta`` give ``Phi_1`` by an
inverse Fourier transform; ``Phi_1'`` gives ``S`` in closed form; the
Cholesky factor of ``S`` gives the Hamiltonian ``H = gamma^* gamma``; its
blocks give the Schur coefficient ``chi = gamma_2^{-1} gamma_1``; two linear
ODEs rebuild ``gamma`` and ``beta``; finally ``v = i beta' j gamma^*``.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .direct import (DiracPotential, WeylLineSamples, signature_matrix,
                     weyl_values)
from .errors import (DataQualityError, DegenerateHamiltonianError, DiracError,
                     DomainError, FactorizationError, InversionError, ShapeError,
                     StageError)
from .grid import (Grid, GridMatrixFunction, cholesky_lower, cumulative_integral, dagger,
                   finite_difference, solve_linear_ode, trapezoid_weights)
from .snode import assemble_snode


class AccuracyWarning(UserWarning):
    """Emitted when a quadrature is expected to be inaccurate."""


@dataclass(frozen=True)
class ReconstructionParams:
    """Numerical parameters of the inverse chain.

    ``eta`` defaults to ``2 / T``.  ``taper`` is the fraction of
    ``[-a, a]`` at each end covered by a cosine roll-off (0 disables it).
    """

    T: float = 1.0
    n: int = 512
    eta: float | None = None
    a: float = 200.0
    n_xi: int = 4096
    taper: float = 0.0
    tol_pd: float = 1e-12

    def __post_init__(self):
        if self.n <= 0:
            raise DomainError("n must be positive")
        if self.T <= 0:
            raise DomainError("T must be positive")
        if self.eta is None:
            object.__setattr__(self, "eta", 2.0 / self.T)
        if self.eta <= 0:
            raise DomainError("eta must be positive")
        if self.a <= 0:
            raise DomainError("a must be positive")
        if self.n_xi <= 0 or self.n_xi % 2:
            raise DomainError("n_xi must be a positive even integer")
        if not 0 <= self.taper < 0.5:
            raise DomainError("taper fraction must lie in [0, 0.5)")
        if self.tol_pd < 0:
            raise DomainError("tol_pd must be nonnegative")

    @property
    def grid(self) -> Grid:
        return Grid(self.T, self.n)


@dataclass(frozen=True)
class HamiltonianPath:
    H: GridMatrixFunction
    m1: int
    m2: int

    def __post_init__(self):
        Hs = self.H.samples
        if self.H.shape != (self.m1 + self.m2,) * 2:
            raise ShapeError("H must be m x m")
        scale = max(1.0, float(np.max(np.abs(Hs))))
        if np.max(np.abs(Hs - dagger(Hs))) > 1e-10 * scale:
            raise DomainError("H is not Hermitian")

    @property
    def psd_margin(self) -> float:
        """Smallest eigenvalue of ``H`` over the grid."""
        return float(np.min(np.linalg.eigvalsh(self.H.samples)))

    @property
    def H22(self) -> np.ndarray:
        return self.H.samples[:, self.m1:, self.m1:]

    @property
    def H21(self) -> np.ndarray:
        return self.H.samples[:, self.m1:, :self.m1]


@dataclass(frozen=True)
class SchurCoefficientPath:
    chi: GridMatrixFunction

    def __post_init__(self):
        if self.max_norm >= 1:
            raise DegenerateHamiltonianError(
                f"Schur coefficient is not strictly contractive (norm {self.max_norm:.6g})",
                float(self.chi.grid.points[int(np.argmax(self.norms))]))

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.chi.samples, ord=2, axis=(1, 2))

    @property
    def max_norm(self) -> float:
        return float(np.max(self.norms))


def _taper_weights(xi: np.ndarray, a: float, fraction: float) -> np.ndarray:
    if fraction == 0:
        return np.ones_like(xi)
    start = (1 - fraction) * a
    t = np.clip((np.abs(xi) - start) / (fraction * a), 0.0, 1.0)
    return 0.5 * (1 + np.cos(np.pi * t))


def aliasing_bound(eta: float, dxi: float) -> float:
    """Relative size of the first periodic image left by the ``xi`` trapezoid rule."""
    return float(np.exp(-2 * np.pi * eta / dxi))


def phi1_from_weyl(samples: WeylLineSamples, grid: Grid, taper: float = 0.0,
                   warn_above: float = 1e-6) -> tuple[GridMatrixFunction, dict]:
    """Inverse Fourier transform of Weyl samples to ``Phi_1`` on ``grid``.

    ``Phi_1(y) = (1/pi) e^{2 y eta} int e^{-2 i y xi} phi(xi + i eta)
    / (2 i (xi + i eta)) d xi`` by the trapezoid rule over the samples.

    Returns
    -------
    Phi1 : GridMatrixFunction
        Values with ``Phi_1(0)`` snapped to zero.
    info : dict
        ``origin_deviation`` (value at 0 before snapping) and
        ``aliasing_bound``.
    """
    xi, eta = samples.xi, samples.eta
    dxi = xi[1] - xi[0]
    bound = aliasing_bound(eta, dxi)
    if np.pi / dxi <= grid.T:
        bound = float("inf")
    if bound > warn_above:
        warnings.warn(f"xi step {dxi:.3g} is coarse for eta={eta}: aliasing bound "
                      f"{bound:.3e}", AccuracyWarning, stacklevel=2)
    w = np.full(xi.size, dxi)
    w[0] = w[-1] = 0.5 * dxi
    w *= _taper_weights(xi, samples.a, taper)
    z = samples.z
    integrand = samples.phi * (w / (2j * z))[:, None, None]
    y = grid.points
    kern = np.exp(-2j * np.outer(y, xi))
    vals = np.tensordot(kern, integrand, axes=(1, 0))
    vals *= (np.exp(2 * y * eta) / np.pi)[:, None, None]
    dev = float(np.linalg.norm(vals[0], 2))
    vals[0] = 0.0
    return GridMatrixFunction(grid, vals), {"origin_deviation": dev,
                                            "aliasing_bound": bound}


def weyl_from_phi1(Phi1: GridMatrixFunction, z: complex, T: float | None = None,
                   return_scale: bool = False):
    """``2 i z int_0^T e^{2 i x z} Phi_1(x) dx`` by the trapezoid rule.

    ``T`` must be a grid point and defaults to the grid length.  With
    ``return_scale`` the truncation scale ``exp(-2 Im z T)`` is returned too.
    """
    if np.imag(z) <= 0:
        raise DomainError("weyl_from_phi1 needs Im z > 0")
    grid = Phi1.grid
    T = grid.T if T is None else T
    k = T / grid.delta
    if abs(k - round(k)) > 1e-9 * max(1.0, k) or not 0 < round(k) <= grid.n:
        raise DomainError(f"T={T} must be a grid point in (0, {grid.T}]")
    k = int(round(k))
    sub = grid.leading(k)
    w = trapezoid_weights(sub) * np.exp(2j * sub.points * z)
    val = 2j * z * np.tensordot(w, Phi1.samples[:k + 1], axes=(0, 0))
    if return_scale:
        return val, float(np.exp(-2 * np.imag(z) * T))
    return val


def S_kernel(Phi1: GridMatrixFunction) -> np.ndarray:
    """Samples of ``s(x_a, x_b)``, shape ``(n+1, n+1, m2, m2)``.

    On ``x >= t`` the kernel is ``-int_0^t Phi_1'(s + x - t) Phi_1'(s)^* ds``;
    the other triangle is its conjugate transpose.
    """
    grid = Phi1.grid
    n1, m2 = grid.n + 1, Phi1.rows
    dP = finite_difference(Phi1).samples
    s = np.zeros((n1, n1, m2, m2), dtype=complex)
    idx = np.arange(n1)
    for d in range(n1):
        i = idx[:n1 - d]
        P = dP[d:] @ dagger(dP[:n1 - d])
        s[d + i, i] = -cumulative_integral(P, grid)
    for d in range(1, n1):
        i = idx[:n1 - d]
        s[i, d + i] = dagger(s[d + i, i])
    return s


def build_S_closed_form(Phi1: GridMatrixFunction, tol_pd: float = 0.0,
                        report: dict | None = None) -> np.ndarray:
    """Weighted-coordinate ``S = I + int_0^T s(x, t) . dt`` from ``Phi_1``.

    Raises
    ------
    DataQualityError
        If ``S`` is not positive definite (smallest Cholesky pivot at most
        ``tol_pd``).
    """
    grid = Phi1.grid
    n1, m2 = grid.n + 1, Phi1.rows
    s = S_kernel(Phi1)
    q = np.sqrt(trapezoid_weights(grid))
    blocks = q[:, None, None, None] * s * q[None, :, None, None]
    S = np.eye(n1 * m2) + blocks.transpose(0, 2, 1, 3).reshape(n1 * m2, n1 * m2)
    asym = float(np.max(np.abs(S - S.conj().T)))
    S = 0.5 * (S + S.conj().T)
    try:
        L = cholesky_lower(S)
    except FactorizationError as exc:
        raise DataQualityError(
            f"closed-form S is not positive definite (pivot {exc.pivot}); "
            "Phi_1 is too noisy or the grid too coarse") from exc
    pivot = float(np.min(np.abs(np.diag(L))) ** 2)
    if pivot <= tol_pd:
        raise DataQualityError(f"closed-form S has pivot {pivot:.3e} <= {tol_pd:.3e}")
    if report is not None:
        report.update(S_asymmetry=asym, S_min_pivot=pivot)
    return S


def hamiltonian_from_snode(S: np.ndarray, Pi: np.ndarray, grid: Grid,
                           m1: int | None = None) -> HamiltonianPath:
    """``H(x_k) = Y_k^* Y_k / w_k`` with ``Y = L^{-1} Pi`` and ``S = L L^*``.

    ``S`` and ``Pi`` are in weighted coordinates (``Pi`` block rows carry
    ``sqrt(w_k)``).
    """
    n1 = grid.n + 1
    m = Pi.shape[1]
    m2 = Pi.shape[0] // n1
    m1 = m - m2 if m1 is None else m1
    L = cholesky_lower(S)
    Y = scipy.linalg.solve_triangular(L, Pi, lower=True).reshape(n1, m2, m)
    H = dagger(Y) @ Y / trapezoid_weights(grid)[:, None, None]
    H = 0.5 * (H + dagger(H))
    return HamiltonianPath(GridMatrixFunction(grid, H), m1, m2)


def schur_coefficient(H: HamiltonianPath, tol: float = 1e-12) -> SchurCoefficientPath:
    """``chi = H_22^{-1} H_21`` pointwise."""
    H22 = H.H22
    ev = np.linalg.eigvalsh(H22)[:, 0]
    bad = np.nonzero(ev <= tol * max(1.0, float(np.max(np.abs(H22)))))[0]
    if bad.size:
        x = float(H.H.grid.points[bad[0]])
        raise DegenerateHamiltonianError(
            f"lower-right block of H is singular at x={x:.6g}", x)
    chi = np.linalg.solve(H22, H.H21)
    return SchurCoefficientPath(GridMatrixFunction(H.H.grid, chi))


def _mid(samples: np.ndarray):
    mid = 0.5 * (samples[1:] + samples[:-1])
    return lambda x: mid


def _right_ode(C: np.ndarray, grid: Grid, size: int) -> np.ndarray:
    """Solve ``Y' = Y C`` with ``Y(0) = I`` through the transposed system."""
    Ct = np.swapaxes(C, 1, 2)
    Yt = solve_linear_ode(_mid(Ct), grid, np.eye(size)).samples
    return np.swapaxes(Yt, 1, 2)


def recover_gamma(chi: SchurCoefficientPath, grid: Grid | None = None,
                  cond_max: float = 1e12) -> GridMatrixFunction:
    """``gamma = [gamma_2 chi, gamma_2]`` from ``gamma_2' = gamma_2 chi' chi^* (I - chi chi^*)^{-1}``."""
    c = chi.chi
    grid = c.grid if grid is None else grid
    m2, m1 = c.shape
    X = c.samples
    R = np.eye(m2) - X @ dagger(X)
    if np.max(np.linalg.cond(R)) > cond_max:
        raise InversionError("I - chi chi^* is numerically singular")
    dX = finite_difference(c).samples
    C = dX @ dagger(X) @ np.linalg.inv(R)
    g2 = _right_ode(C, grid, m2)
    gamma = np.concatenate([g2 @ X, g2], axis=2)
    return GridMatrixFunction(grid, gamma)


def recover_beta(gamma: GridMatrixFunction, m1: int) -> GridMatrixFunction:
    """``beta = beta_1 [I, gamma_1^* gamma_2^{-*}]`` with ``beta_1(0) = I``."""
    grid = gamma.grid
    m2 = gamma.rows
    j = signature_matrix(m1, m2)
    g = gamma.samples
    g1, g2 = g[:, :, :m1], g[:, :, m1:]
    bt = np.empty((grid.n + 1, m1, m1 + m2), dtype=complex)
    bt[:, :, :m1] = np.eye(m1)
    bt[:, :, m1:] = dagger(np.linalg.solve(g2, g1))
    G = bt @ j @ dagger(bt)
    ev = np.linalg.eigvalsh(0.5 * (G + dagger(G)))[:, 0]
    if np.any(ev <= 0):
        k = int(np.argmax(ev <= 0))
        raise InversionError(
            f"beta-tilde j beta-tilde^* is not positive definite at x={grid.points[k]:.6g}")
    dbt = finite_difference(GridMatrixFunction(grid, bt)).samples
    C = -(dbt @ j @ dagger(bt)) @ np.linalg.inv(G)
    b1 = _right_ode(C, grid, m1)
    return GridMatrixFunction(grid, b1 @ bt)


@dataclass
class RecoveredPotential:
    V: DiracPotential
    consistency_residual: float
    beta_prime_j_beta: float


def recover_potential(beta: GridMatrixFunction, gamma: GridMatrixFunction) -> RecoveredPotential:
    """``v = i beta' j gamma^*`` and the residual of ``beta' = i v gamma``."""
    m1, m2 = beta.rows, gamma.rows
    j = signature_matrix(m1, m2)
    db = finite_difference(beta).samples
    g = gamma.samples
    v = 1j * db @ j @ dagger(g)
    res = float(np.max(np.linalg.norm(db - 1j * v @ g, ord=2, axis=(1, 2))))
    bjb = float(np.max(np.linalg.norm(db @ j @ dagger(beta.samples), ord=2, axis=(1, 2))))
    V = DiracPotential(GridMatrixFunction(beta.grid, v), name="recovered")
    return RecoveredPotential(V, res, bjb)


@dataclass
class InverseResult:
    V: DiracPotential
    Phi1: GridMatrixFunction
    H: HamiltonianPath
    chi: SchurCoefficientPath
    gamma: GridMatrixFunction
    beta: GridMatrixFunction
    diagnostics: dict = field(default_factory=dict)


def _sup(a) -> float:
    return float(np.max(np.linalg.norm(a, ord=2, axis=(-2, -1))))


def inverse_pipeline(data, params: ReconstructionParams) -> InverseResult:
    """Run the whole chain from Weyl samples (or a ready ``Phi_1``) to ``v``.

    Any failure is re-raised as :class:`StageError` naming the stage and
    carrying the diagnostics gathered so far.
    """
    grid = params.grid
    diag: dict = {"timings": {}}
    stage = "phi1_from_weyl"

    def timed(name, fn, *args, **kw):
        nonlocal stage
        stage = name
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        diag["timings"][name] = time.perf_counter() - t0
        return out

    try:
        if isinstance(data, WeylLineSamples):
            Phi1, info = timed("phi1_from_weyl", phi1_from_weyl, data, grid, params.taper)
            diag["phi1_origin_deviation"] = info["origin_deviation"]
            diag["aliasing_bound"] = info["aliasing_bound"]
        elif isinstance(data, GridMatrixFunction):
            if data.grid != grid:
                raise DomainError(f"Phi1 grid {data.grid} does not match {grid}")
            Phi1 = data
            diag["phi1_origin_deviation"] = float(np.linalg.norm(data.samples[0], 2))
            if diag["phi1_origin_deviation"] > 0:
                arr = np.array(data.samples)
                arr[0] = 0
                Phi1 = GridMatrixFunction(grid, arr)
        else:
            raise DomainError("input must be WeylLineSamples or a Phi1 GridMatrixFunction")
        m2, m1 = Phi1.shape
        rep: dict = {}
        S = timed("build_S_closed_form", build_S_closed_form, Phi1, params.tol_pd, rep)
        diag.update(rep)
        node = timed("assemble_snode", assemble_snode, Phi1, grid, "given", S=S)
        diag["S_identity_residual"] = node.identity_residual
        H = timed("hamiltonian_from_snode", hamiltonian_from_snode, node.S, node.Pi, grid, m1)
        diag["H_psd_margin"] = H.psd_margin
        chi = timed("schur_coefficient", schur_coefficient, H)
        diag["chi_margin"] = 1.0 - chi.max_norm
        gamma = timed("recover_gamma", recover_gamma, chi, grid)
        j = signature_matrix(m1, m2)
        g = gamma.samples
        diag["gamma_j_gamma_residual"] = _sup(g @ j @ dagger(g) + np.eye(m2))
        beta = timed("recover_beta", recover_beta, gamma, m1)
        b = beta.samples
        diag["beta_j_beta_residual"] = _sup(b @ j @ dagger(b) - np.eye(m1))
        diag["beta_j_gamma_residual"] = _sup(b @ j @ dagger(g))
        rec = timed("recover_potential", recover_potential, beta, gamma)
        diag["consistency_residual"] = rec.consistency_residual
        diag["beta_prime_j_beta_residual"] = rec.beta_prime_j_beta
    except DiracError as exc:
        raise StageError(stage, exc, diag) from exc
    except np.linalg.LinAlgError as exc:
        raise StageError(stage, exc, diag) from exc
    return InverseResult(rec.V, Phi1, H, chi, gamma, beta, diag)


def relative_sup_error(V_rec: DiracPotential, V_true: DiracPotential) -> float:
    """``||v_rec - v_true||_inf / ||v_true||_inf`` (absolute if ``v_true = 0``)."""
    if V_rec.grid != V_true.grid:
        V_true = V_true.on_grid(V_rec.grid)
    diff = _sup(V_rec.v.samples - V_true.v.samples)
    ref = V_true.sup_norm()
    return diff / ref if ref > 0 else diff


@dataclass
class BorgMarchenkoReport:
    heights: np.ndarray
    ray_slope: float
    differences: np.ndarray
    weighted: dict
    growth: dict

    def bounded(self, zeta: float, factor: float = 10.0) -> bool:
        w = self.weighted[zeta]
        return bool(np.max(w) <= factor * w[0])

    def grows(self, zeta: float, factor: float = 10.0) -> bool:
        return bool(self.growth[zeta] >= factor)


def borg_marchenko_experiment(v1: DiracPotential, v2: DiracPotential, ray_slope: float,
                              heights, zetas=(0.4, 0.6), T: float | None = None
                              ) -> BorgMarchenkoReport:
    """Weighted Weyl differences ``||phi_1(z) - phi_2(z)|| e^{2 zeta Im z}`` along a ray.

    ``z = (c + i) h`` for each height ``h``.  ``growth[zeta]`` is the ratio of
    the weighted difference at the last height to the one at the first.
    """
    if v1.grid != v2.grid:
        raise DomainError("potentials must share a grid")
    h = np.asarray(heights, dtype=float)
    zs = (ray_slope + 1j) * h
    d = np.linalg.norm(weyl_values(v1, zs, T) - weyl_values(v2, zs, T), ord=2, axis=(1, 2))
    weighted = {float(zt): d * np.exp(2 * zt * h) for zt in zetas}
    growth = {zt: float(w[-1] / w[0]) if w[0] > 0 else float("nan")
              for zt, w in weighted.items()}
    return BorgMarchenkoReport(h, ray_slope, d, weighted, growth)
