import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from dirac_inverse import presets
from dirac_inverse.direct import (BlockRows, DiracPotential, PropertyJMatrix, WeylLineSamples,
                                  block_rows, dirac_step_propagators, fundamental_solution,
                                  hamiltonian, mobius, signature_matrix, weyl_approximant,
                                  weyl_line, weyl_values)
from dirac_inverse.errors import ConditioningError, DomainError, ShapeError
from dirac_inverse.grid import Grid, GridMatrixFunction, dagger


def sup(a):
    return float(np.max(np.linalg.norm(a, ord=2, axis=(-2, -1))))


@pytest.fixture(scope="module")
def sine512():
    return presets.sine(Grid(1.0, 512))


class TestSignature:
    def test_involution(self):
        j = signature_matrix(2, 3)
        assert np.array_equal(j @ j, np.eye(5))
        assert np.array_equal(j, j.conj().T)


class TestPotential:
    def test_constant_and_zero(self):
        g = Grid(1.0, 4)
        V = DiracPotential.constant(g, [[0.3, 0.1]])
        assert (V.m1, V.m2, V.m) == (1, 2, 3)
        Z = DiracPotential.zero(g, 2, 1)
        assert Z.sup_norm() == 0

    def test_full_matrix_is_hermitian(self):
        V = presets.rectangular(Grid(1.0, 8))
        F = V.full_matrix(V.v.samples)
        assert np.allclose(F, dagger(F))
        assert np.allclose(F[:, :2, :2], 0) and np.allclose(F[:, 2:, 2:], 0)

    def test_non_finite_rejected(self):
        with pytest.raises(DomainError):
            DiracPotential(GridMatrixFunction(Grid(1.0, 2), [0.0, np.inf, 0.0]))

    def test_resampling(self):
        V = presets.sine(Grid(1.0, 64))
        W = V.on_grid(Grid(1.0, 128))
        assert np.allclose(W.v.samples[::2], V.v.samples)
        with pytest.raises(DomainError):
            V.on_grid(Grid(2.0, 10))


class TestFundamentalSolution:
    @pytest.mark.parametrize("z", [0.0, 1.3, -4.0])
    def test_zero_potential_is_diagonal_exponential(self, z):
        g = Grid(1.0, 16)
        u = fundamental_solution(DiracPotential.zero(g, 2, 1), z).samples
        x = g.points
        ref = np.zeros_like(u)
        ref[:, 0, 0] = ref[:, 1, 1] = np.exp(1j * z * x)
        ref[:, 2, 2] = np.exp(-1j * z * x)
        assert np.allclose(u, ref, atol=1e-13)

    def test_constant_potential_matches_expm(self):
        g = Grid(1.0, 32)
        c = np.array([[0.4], [-0.2j]])
        V = DiracPotential.constant(g, c)
        z = 0.7 + 0.2j
        u = fundamental_solution(V, z).samples
        X = z * V.j + V.j @ V.full_matrix(c[None])[0]
        for k in (5, 32):
            assert np.allclose(u[k], scipy.linalg.expm(1j * g.points[k] * X), atol=1e-12)

    @pytest.mark.parametrize("z", [0.0, 2.5])
    def test_j_unitarity_for_real_z(self, sine512, z):
        u = fundamental_solution(sine512, z).samples
        j = sine512.j
        assert sup(dagger(u) @ j @ u - j) <= 1e-9

    def test_inverse_identity(self):
        V = presets.rectangular(Grid(1.0, 64))
        z = 0.4 + 0.9j
        u = fundamental_solution(V, z).samples
        ub = fundamental_solution(V, np.conj(z)).samples
        j = V.j
        assert sup(np.linalg.inv(u) - j @ dagger(ub) @ j) <= 1e-11

    def test_fast_propagators_match_generic_stepper(self):
        V = presets.rectangular(Grid(1.0, 40))
        zs = np.array([0.0, 1.5 + 0.3j, -3 + 2j])
        props = dirac_step_propagators(V, zs)
        for i, z in enumerate(zs):
            u = np.eye(3, dtype=complex)
            for p in props[:, i]:
                u = p @ u
            assert np.allclose(u, fundamental_solution(V, z).samples[-1], atol=1e-12)

    def test_second_order_convergence(self):
        ends = [fundamental_solution(presets.sine(Grid(1.0, n)), 1 + 1j).samples[-1]
                for n in (32, 64, 128)]
        ratio = np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])
        assert ratio >= 3.5

    def test_grid_mismatch(self, sine512):
        with pytest.raises(DomainError):
            fundamental_solution(sine512, 1.0, Grid(1.0, 10))


class TestBlockRows:
    def test_zero_potential(self):
        br = block_rows(DiracPotential.zero(Grid(1.0, 8), 2, 1))
        assert np.allclose(br.beta.samples, np.eye(3)[:2])
        assert np.allclose(br.gamma.samples, np.eye(3)[2:])

    @pytest.mark.parametrize("make", [presets.sine, presets.rectangular])
    def test_j_identities(self, make):
        res = block_rows(make(Grid(1.0, 512))).j_residuals()
        assert res["beta_j_gamma"] <= 1e-8
        assert res["beta_j_beta"] <= 1e-8 and res["gamma_j_gamma"] <= 1e-8
        assert res["dgamma_j_gamma"] <= 1e-6

    def test_shape_validation(self):
        g = Grid(1.0, 2)
        with pytest.raises(ShapeError):
            BlockRows(GridMatrixFunction(g, np.zeros((3, 1, 2))),
                      GridMatrixFunction(g, np.zeros((3, 1, 3))))


class TestHamiltonian:
    def test_zero(self):
        H = hamiltonian(block_rows(DiracPotential.zero(Grid(1.0, 4), 1, 2))).samples
        assert np.allclose(H, np.diag([0, 1, 1]))

    def test_psd(self, sine512):
        H = hamiltonian(block_rows(sine512)).samples
        assert np.allclose(H, dagger(H))
        assert np.min(np.linalg.eigvalsh(H)) >= -1e-10

    def test_refinement(self):
        Hs = [hamiltonian(block_rows(presets.sine(Grid(1.0, n)))).samples for n in (64, 128, 256)]
        e1 = sup(Hs[0] - Hs[1][::2])
        e2 = sup(Hs[1] - Hs[2][::2])
        assert e1 / e2 >= 3.5


class TestPropertyJ:
    def test_default(self):
        P = PropertyJMatrix.default(2, 1)
        assert np.array_equal(P.P, np.eye(3)[:, :2])

    def test_violations(self):
        with pytest.raises(DomainError):
            PropertyJMatrix(np.array([[0.0], [1.0]]), 1, 1)
        with pytest.raises(ShapeError):
            PropertyJMatrix(np.eye(3), 1, 1)


class TestWeyl:
    def test_zero_potential(self):
        V = DiracPotential.zero(Grid(1.0, 8), 2, 2)
        assert np.allclose(weyl_approximant(V, 1 + 2j), 0)

    def test_constant_potential_against_expm(self):
        g = Grid(1.0, 64)
        V = DiracPotential.constant(g, 0.3)
        z = 3j
        X = z * V.j + V.j @ V.full_matrix(np.array([[[0.3]]]))[0]
        u = scipy.linalg.expm(1j * X)
        w = np.linalg.inv(u)[:, :1]
        ref = w[1:] @ np.linalg.inv(w[:1])
        assert np.allclose(weyl_approximant(V, z), ref, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-30, 30), st.floats(1, 20))
    def test_non_expansive(self, re, im):
        V = presets.rectangular(Grid(1.0, 64))
        assert np.linalg.norm(weyl_approximant(V, re + 1j * im), 2) <= 1 + 1e-8

    def test_nested_convergence(self):
        g = Grid(8.0, 2048)
        V = DiracPotential.from_callable(g, lambda x: 0.5 * np.sin(2 * np.pi * x))
        d = np.linalg.norm(weyl_approximant(V, 2j, 4.0) - weyl_approximant(V, 2j, 8.0))
        assert d <= 1e-6
        d1 = np.linalg.norm(weyl_approximant(V, 2j, 1.0) - weyl_approximant(V, 2j, 8.0))
        d2 = np.linalg.norm(weyl_approximant(V, 2j, 2.0) - weyl_approximant(V, 2j, 8.0))
        assert d2 < d1

    def test_T_must_be_grid_point(self, sine512):
        with pytest.raises(DomainError):
            weyl_approximant(sine512, 1j, 0.3333)
        with pytest.raises(DomainError):
            weyl_approximant(sine512, 1.0)

    def test_singular_mobius_block(self):
        u = np.array([[[0.0, 1.0], [1.0, 0.0]]])
        with pytest.raises(ConditioningError):
            mobius(u, PropertyJMatrix.default(1, 1))


class TestWeylLine:
    def test_conjugate_symmetry_for_real_potential(self):
        # real v: phi(-conj z) = -conj(phi(z)), so the line is odd-conjugate in xi
        s = weyl_line(presets.sine(Grid(1.0, 64)), 2.0, 20.0, 40)
        assert np.allclose(s.phi[::-1], -np.conj(s.phi), atol=1e-14)

    def test_threads_match_sequential_bitwise(self):
        V = presets.rectangular(Grid(1.0, 32))
        a = weyl_line(V, 1.5, 10.0, 64)
        b = weyl_line(V, 1.5, 10.0, 64, workers=3)
        assert np.array_equal(a.phi, b.phi)

    def test_zero_and_metadata(self):
        s = weyl_line(DiracPotential.zero(Grid(1.0, 8)), 2.0, 5.0, 10)
        assert np.all(s.phi == 0)
        assert s.count == 10 and s.a == 5.0 and s.xi[5] == 0.0
        assert s.truncation_scale == pytest.approx(np.exp(-4.0))

    def test_vectorized_matches_single(self):
        V = presets.sine(Grid(1.0, 32))
        zs = [1j, 2 + 1j]
        vals = weyl_values(V, zs)
        for z, v in zip(zs, vals):
            assert np.array_equal(v, weyl_approximant(V, z))

    @pytest.mark.parametrize("kw", [dict(eta=0, a=1, count=4), dict(eta=1, a=1, count=5),
                                    dict(eta=1, a=-1, count=4)])
    def test_argument_checks(self, kw):
        with pytest.raises(DomainError):
            weyl_line(DiracPotential.zero(Grid(1.0, 4)), **kw)

    def test_samples_validation(self):
        xi = np.linspace(-1, 1, 5)
        with pytest.raises(DomainError):
            WeylLineSamples(1.0, xi, np.full((5, 1, 1), 2.0))
        with pytest.raises(DomainError):
            WeylLineSamples(1.0, np.linspace(-1, 2, 5), np.zeros((5, 1, 1)))
        with pytest.raises(ShapeError):
            WeylLineSamples(1.0, xi, np.zeros((4, 1, 1)))
