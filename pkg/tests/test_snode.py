from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dirac_inverse import presets
from dirac_inverse.direct import DiracPotential, block_rows
from dirac_inverse.errors import DomainError, InversionError, SeriesError, SNodeError
from dirac_inverse.grid import Grid, GridMatrixFunction, dagger, volterra_matrix
from dirac_inverse.snode import (KernelFactors, S_from_E, TriangularKernelOperator, _first_term,
                                 _next_term, assemble_snode, build_similarity_operator, check_representation,
                                 kernel_factors, kernel_series, normalize_similarity,
                                 similarity_residual, transfer_matrix, transfer_matrix_path)


def const(grid, value, shape=(1, 1)):
    return GridMatrixFunction(grid, np.full((grid.n + 1, *shape), value, dtype=complex))


def factors(mu, nu):
    one = GridMatrixFunction(mu.grid, np.broadcast_to(np.eye(mu.rows), (mu.grid.n + 1,
                                                                        mu.rows, mu.rows)))
    return KernelFactors(one, one, mu, nu, one, one)


def brute_kernel_terms(mu, nu, x, K):
    """Iterated kernels by direct trapezoid sums over each integration segment."""
    n1 = len(x)
    h = x[1] - x[0]

    def trap(vals):
        if len(vals) < 2:
            return 0.0
        return h * (sum(vals) - 0.5 * (vals[0] + vals[-1]))

    k1 = np.zeros((n1, n1), dtype=complex)
    for a in range(n1):
        for b in range(a + 1):
            d = a - b
            k1[a, b] = trap([mu[d + i] * nu[i] for i in range(b + 1)])
    terms = [k1]
    for _ in range(K - 1):
        prev = terms[-1]
        W = np.zeros((n1, n1), dtype=complex)
        for c in range(n1):
            for e in range(c + 1):
                W[c, e] = trap([nu[s] * prev[s, e] for s in range(e, c + 1)])
        nxt = np.zeros_like(prev)
        for a in range(n1):
            for b in range(a + 1):
                d = a - b
                nxt[a, b] = trap([mu[d + i] * W[d + i, i] for i in range(b + 1)])
        terms.append(nxt)
    return terms


class TestKernelSeries:
    def test_zero_mu_gives_empty_series(self):
        g = Grid(1.0, 8)
        ks = kernel_series(factors(const(g, 0.0), const(g, 1.0)))
        assert np.all(ks.N == 0)
        assert ks.tail == 0

    def test_unit_factors_first_two_terms(self):
        g = Grid(1.0, 32)
        one = const(g, 1.0)
        ks = kernel_series(factors(one, one))
        X, Tt = np.meshgrid(g.points, g.points, indexing="ij")
        low = X >= Tt
        # kappa_1 = t, kappa_2 = (x - t) t^2 / 2 ; the trapezoid rule is exact here
        k1 = _first_term(one.samples, one.samples, g)
        k2 = _next_term(one.samples, one.samples, k1, g)
        assert np.allclose(k1[..., 0, 0][low], Tt[low], atol=1e-14)
        assert np.allclose(k2[..., 0, 0][low], ((X - Tt) * Tt ** 2 / 2)[low], atol=1e-14)
        assert ks.C0 == pytest.approx(1.0)
        assert ks.terms > 2

    def test_series_matches_brute_force_loops(self):
        g = Grid(1.0, 7)
        x = g.points
        mu = 0.8 * np.cos(2 * x) + 0.3j * x
        nu = 1.1 - 0.5 * x ** 2
        ks = kernel_series(factors(GridMatrixFunction(g, mu), GridMatrixFunction(g, nu)),
                           tol=1e-15)
        ref = sum(brute_kernel_terms(mu, nu, x, ks.terms))
        low = np.tril(np.ones((8, 8), bool))
        assert np.allclose(ks.N[..., 0, 0][low], ref[low], atol=1e-13)
        assert np.all(ks.N[..., 0, 0][~low] == 0)

    @pytest.mark.parametrize("z", [0.7, -1.2, 0.5 + 1j])
    def test_unit_factors_against_ode_oracle(self, z):
        # g = (I + int N) e^{z t} solves g'' - z g' - g = 0, g(0) = 1, g'(0) = z
        errs = []
        for n in (64, 128):
            g = Grid(1.0, n)
            one = const(g, 1.0)
            N = kernel_series(factors(one, one)).N
            x = g.points
            e = np.exp(z * x)
            h = e + volterra_matrix(N, g) @ e
            l1, l2 = np.roots([1, -z, -1])
            ref = ((l2 - z) * np.exp(l1 * x) + (z - l1) * np.exp(l2 * x)) / (l2 - l1)
            errs.append(np.max(abs(h - ref)))
        assert errs[1] <= 1e-4
        assert errs[0] / errs[1] >= 3.5

    def test_term_bound_by_induction(self):
        g = Grid(1.0, 32)
        ks = kernel_series(factors(const(g, 1.5), const(g, -0.8)))
        for k, nk in enumerate(ks.term_norms):
            assert nk <= ks.C0 * ks.C1 ** k / factorial(k) * (1 + 1e-9)

    def test_non_convergence_raises(self):
        g = Grid(1.0, 8)
        big = const(g, 8.0)
        with pytest.raises(SeriesError) as info:
            kernel_series(factors(big, big), max_terms=5)
        assert info.value.tail > 0


class TestKernelFactors:
    def test_identity_violation(self):
        g = Grid(1.0, 4)
        with pytest.raises(DomainError):
            kernel_factors(const(g, 2.0), const(g, 1.0))

    def test_mu_vanishes_for_constant_F(self):
        g = Grid(1.0, 8)
        kf = kernel_factors(const(g, 1.0), const(g, 1.0))
        assert np.allclose(kf.mu.samples, 0)
        assert kf.identity_residual() == 0

    def test_dirac_rho_is_identity(self, path_cache):
        _, path = path_cache("sine", 256)
        assert path.similarity.rho_deviation <= 1e-4


class TestSimilarity:
    def test_zero_potential_is_trivial(self):
        br = block_rows(DiracPotential.zero(Grid(1.0, 16), 2, 1))
        sim = build_similarity_operator(br)
        assert sim.series.terms == 1
        assert np.allclose(sim.Etilde.matrix, np.eye(17))

    def test_causal_and_well_conditioned(self, path_cache):
        _, path = path_cache("rectangular", 128)
        assert path.similarity.Etilde.is_causal()
        assert path.E.is_causal()
        assert path.similarity.Etilde.condition_number() < 10

    def test_residual_is_second_order(self, path_cache):
        res = [similarity_residual(p.br, p.E) for p in
               (path_cache("sine", n)[1] for n in (64, 128))]
        assert res[0] / res[1] >= 3.5
        assert res[1] <= 10 * Grid(1.0, 128).delta

    def test_normalization(self, path_cache):
        _, path = path_cache("sine", 128)
        assert path.normalized.residual <= 1e-4
        g2 = path.E.apply(GridMatrixFunction(path.E.grid, np.ones((129, 1, 1))))
        assert np.max(abs(g2.samples - path.br.gamma2.samples)) <= 1e-4

    def test_phi1_origin(self, path_cache):
        _, path = path_cache("sine", 128)
        assert path.Phi1.samples[0] == 0
        assert path.phi1_origin_deviation <= 1e-10

    def test_solve_inverts_apply(self, path_cache):
        _, path = path_cache("rectangular", 64)
        f = path.br.gamma1
        assert np.allclose(path.E.apply(path.E.solve(f)).samples, f.samples, atol=1e-12)

    def test_singular_diagonal_rejected(self):
        g = Grid(1.0, 2)
        op = TriangularKernelOperator(g, 1, np.diag([1.0, 0.0, 1.0]).astype(complex))
        with pytest.raises(InversionError):
            op.solve(GridMatrixFunction(g, np.ones((3, 1, 1))))

    def test_normalize_zero(self):
        g = Grid(1.0, 8)
        Et = TriangularKernelOperator(g, 1, np.eye(9, dtype=complex))
        ns = normalize_similarity(Et, const(g, 1.0))
        assert ns.residual == 0
        assert np.allclose(ns.E.matrix, np.eye(9))


class TestSNode:
    def test_zero_phi_residual_in_corner_blocks(self):
        g = Grid(1.0, 64)
        node = assemble_snode(GridMatrixFunction(g, np.zeros((65, 1, 1))), s_source="closed_form")
        R = node.A @ node.S - node.S @ node.A.conj().T - 1j * node.Pi @ node.j @ node.Pi.conj().T
        inner = R.copy()
        inner[0, 0] = inner[-1, -1] = 0
        assert np.max(abs(inner)) <= 1e-12
        assert node.identity_residual == pytest.approx(g.delta / 2, rel=1e-9)

    @pytest.mark.parametrize("source", ["from_E", "closed_form"])
    def test_identity_residual_first_order(self, path_cache, source):
        _, path = path_cache("sine", 128)
        node = assemble_snode(path.Phi1, s_source=source, E=path.E)
        assert node.identity_residual <= 10 * path.E.grid.delta

    def test_S_sources_agree(self, path_cache):
        _, path = path_cache("rectangular", 128)
        a = assemble_snode(path.Phi1, s_source="from_E", E=path.E).S
        b = assemble_snode(path.Phi1, s_source="closed_form").S
        assert np.linalg.norm(a - b, 2) / np.linalg.norm(a, 2) <= Grid(1.0, 128).delta

    def test_argument_errors(self, path_cache):
        _, path = path_cache("sine", 64)
        with pytest.raises(DomainError):
            assemble_snode(path.Phi1, s_source="from_E")
        with pytest.raises(DomainError):
            assemble_snode(path.Phi1, s_source="bogus")
        bad = GridMatrixFunction(path.Phi1.grid, path.Phi1.samples + 1.0)
        with pytest.raises(DomainError):
            assemble_snode(bad, s_source="closed_form")

    def test_indefinite_S_rejected(self):
        g = Grid(1.0, 4)
        phi = GridMatrixFunction(g, np.zeros((5, 1, 1)))
        with pytest.raises(SNodeError):
            assemble_snode(phi, s_source="given", S=-np.eye(5))

    def test_quadratic_form_monotone(self, path_cache):
        _, path = path_cache("sine", 64)
        node = assemble_snode(path.Phi1, s_source="from_E", E=path.E)
        Q = node.quadratic_form()
        steps = np.diff(Q, axis=0)
        assert np.min(np.linalg.eigvalsh(steps)) >= -1e-12


@pytest.fixture(scope="module")
def node(path_cache):
    _, path = path_cache("rectangular", 128)
    return assemble_snode(path.Phi1, s_source="from_E", E=path.E)


class TestTransferMatrix:
    def test_identity_at_origin_and_zero(self, node):
        w = transfer_matrix_path(node, 1 + 1j)
        assert np.allclose(w[0], np.eye(3))
        assert np.allclose(transfer_matrix_path(node, 0), np.eye(3))

    def test_j_unitary_for_real_z(self, node):
        w = transfer_matrix_path(node, 2.0)
        dev = dagger(w) @ node.j @ w - node.j
        assert np.max(np.linalg.norm(dev, ord=2, axis=(1, 2))) <= 20 * node.grid.delta

    @settings(max_examples=10, deadline=None)
    @given(st.floats(-3, 3), st.floats(0.1, 3))
    def test_j_contractive_in_upper_half_plane(self, node, re, im):
        w = transfer_matrix_path(node, re + 1j * im)[-1]
        ev = np.linalg.eigvalsh(node.j - dagger(w) @ node.j @ w)
        assert ev.min() >= -1e-2

    def test_literal_reduction_matches_path(self, node):
        w = transfer_matrix_path(node, 1 + 0.5j)
        for k in (32, 96, 128):
            wk = transfer_matrix(node, node.grid.points[k], 1 + 0.5j)
            assert np.linalg.norm(wk - w[k], 2) <= 1e-3

    def test_literal_reduction_rejects_off_grid(self, node):
        with pytest.raises(DomainError):
            transfer_matrix(node, 0.0, 1j)
        with pytest.raises(DomainError):
            transfer_matrix(node, 0.1234567, 1j)


class TestRepresentation:
    @pytest.mark.parametrize("name", ["sine", "rectangular"])
    def test_second_order(self, path_cache, name):
        res = []
        for n in (64, 128):
            V, path = path_cache(name, n)
            node = assemble_snode(path.Phi1, s_source="from_E", E=path.E)
            res.append(check_representation(V, node, 1 + 0.5j, br=path.br))
        assert res[0]["representation"] / res[1]["representation"] >= 3.5
        assert res[1]["representation"] <= 1e-3
        assert res[1]["w_at_origin"] <= 1e-14

    def test_zero_potential(self):
        res = []
        for n in (128, 256):
            V = DiracPotential.zero(Grid(1.0, n))
            node = assemble_snode(GridMatrixFunction(V.grid, np.zeros((n + 1, 1, 1))),
                                  s_source="closed_form")
            res.append(check_representation(V, node, 1j)["representation"])
        assert res[0] / res[1] == pytest.approx(4, rel=0.05)

    def test_grid_mismatch(self, path_cache):
        V, path = path_cache("sine", 64)
        node = assemble_snode(path.Phi1, s_source="from_E", E=path.E)
        with pytest.raises(DomainError):
            check_representation(presets.sine(Grid(1.0, 32)), node, 1j)


def test_S_from_E_hermitian_positive(path_cache):
    _, path = path_cache("sine", 64)
    S = S_from_E(path.E)
    assert np.array_equal(S, S.conj().T)
    assert np.linalg.eigvalsh(S).min() > 0
