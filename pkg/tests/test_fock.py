import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bec_optomech.errors import DimensionError, LabelError, TruncationError
from bec_optomech.fock import (
    DensityOperator,
    ModeSpace,
    StateVector,
    coherent_amplitudes,
    coherent_state,
    displacement_matrix,
    displacement_operator,
    fidelity,
    join_modes,
    mode_annihilation,
    number_operator,
    number_state,
    parity_expectation,
    policy_dim,
    quadrature_density,
    quadrature_operator,
    quadrature_wavefunction,
    quadrature_wavefunctions,
    random_density,
    reduce_mode,
    reduced_overlap,
    unitarity_defect,
)

# <X|n> with X = (c + c^dag)/2, from mpmath Hermite polynomials at 40 digits
PSI_ORACLE = [
    (0, 0.3, 0.81636340301583784),
    (1, -0.4, -0.60893775341548493),
    (4, 1.2, 0.06987977439306463),
    (10, 2.5, 0.16264763072315807),
    (30, -3.0, -0.37045359224973338),
]


def single(dim, label="atom"):
    return ModeSpace.single(label, dim)


class TestModeSpace:
    def test_total_dim(self):
        assert ModeSpace.joint(3, 5).total_dim == 15

    def test_rejects_small_dim(self):
        with pytest.raises(DimensionError):
            ModeSpace((1,), ("atom",))

    def test_rejects_duplicate_labels(self):
        with pytest.raises(LabelError):
            ModeSpace((2, 2), ("atom", "atom"))

    def test_unknown_label(self):
        with pytest.raises(LabelError):
            ModeSpace.joint(2, 2).index("mirror")

    def test_policy_dim(self):
        assert policy_dim(2.0) == 36
        assert policy_dim(0) == 20


class TestStates:
    def test_number_state_basis(self):
        s = number_state(single(8), "atom", 0)
        assert s.amplitudes[0] == 1 and np.count_nonzero(s.amplitudes) == 1
        assert number_state(single(8), "atom", 7).amplitudes[7] == 1
        with pytest.raises(DimensionError):
            number_state(single(8), "atom", 8)

    def test_wrong_length(self):
        with pytest.raises(DimensionError):
            StateVector(single(4), np.ones(5))

    def test_coherent_vacuum(self):
        s = coherent_state(single(6), "atom", 0)
        assert s.amplitudes[0] == 1 and s.norm_leakage == 0

    def test_coherent_mean_and_leakage(self):
        s = coherent_state(single(40), "atom", 2.0)
        assert s.norm_leakage < 1e-12
        assert abs(np.arange(40) @ s.populations() - 4.0) < 1e-10

    def test_coherent_truncation_error(self):
        with pytest.raises(TruncationError):
            coherent_state(single(6), "atom", 2.0)
        # tail beyond n = 5 for mean 4
        _, tail = coherent_amplitudes(2.0, 6)
        assert abs(tail - 0.21486961) < 1e-8

    def test_coherent_amplitudes_oracle(self):
        alpha = 1.3 - 0.7j
        amps, _ = coherent_amplitudes(alpha, 25)
        a = mpmath.mpc(alpha)
        for n in (0, 1, 5, 12, 24):
            ref = mpmath.exp(-abs(a) ** 2 / 2) * a**n / mpmath.sqrt(mpmath.factorial(n))
            assert abs(amps[n] - complex(ref)) < 1e-15

    def test_density_invariants(self):
        with pytest.raises(ValueError):
            DensityOperator(single(2), np.array([[1, 1], [0, 0]]))
        rho = random_density(6, seed=1)
        assert rho.is_physical()


class TestOperators:
    def test_annihilation_entries(self):
        a = mode_annihilation(single(3), "atom").dense()
        ref = np.array([[0, 1, 0], [0, 0, math.sqrt(2)], [0, 0, 0]])
        assert np.allclose(a, ref, atol=0)

    def test_number_operator_eigen(self):
        sp = single(7)
        n = number_operator(sp, "atom")
        s = number_state(sp, "atom", 4)
        assert np.allclose(n.apply(s).amplitudes, 4 * s.amplitudes)

    def test_annihilation_on_coherent(self):
        alpha = 0.8 + 0.5j
        sp = single(60)
        s = coherent_state(sp, "atom", alpha)
        out = mode_annihilation(sp, "atom").apply(s).amplitudes
        assert np.max(np.abs(out - alpha * s.amplitudes)) < 1e-12

    def test_joint_embedding_order(self):
        sp = ModeSpace.joint(2, 3)
        a = mode_annihilation(sp, "atom").dense()
        c = mode_annihilation(sp, "cavity").dense()
        assert np.allclose(a, np.kron([[0, 1], [0, 0]], np.eye(3)))
        assert np.allclose(a @ c, c @ a)

    def test_quadrature_vacuum_variance(self):
        sp = single(10, "cavity")
        x = quadrature_operator(sp, "cavity")
        vac = number_state(sp, "cavity", 0)
        assert abs(vac.expect(x @ x) - 0.25) < 1e-15


class TestDisplacement:
    def test_zero_is_identity(self):
        assert np.array_equal(displacement_matrix(9, 0), np.eye(9))

    @pytest.mark.parametrize("beta", [0.4, 1.5 - 0.5j, -2j, 3.0 + 1.0j])
    def test_vacuum_to_coherent(self, beta):
        dim = policy_dim(beta)
        d = displacement_operator(single(dim), "atom", beta)
        amps, _ = coherent_amplitudes(beta, dim)
        half = dim // 2
        assert np.max(np.abs(d.dense()[:half, 0] - amps[:half])) < 1e-9

    def test_inverse_pair(self):
        d1 = displacement_matrix(40, 1.2 + 0.3j)
        d2 = displacement_matrix(40, -1.2 - 0.3j)
        assert np.max(np.abs(d1 @ d2 - np.eye(40))) < 1e-9

    def test_unitarity_defect(self):
        d = displacement_operator(single(50), "atom", 2.0)
        assert unitarity_defect(d) < 1e-9

    def test_too_large_beta(self):
        with pytest.raises(TruncationError):
            displacement_operator(single(10), "atom", 2.0)

    def test_matches_taylor_series_oracle(self):
        # direct power series of the anti-Hermitian generator in extended precision
        dim, beta = 12, 0.7 - 0.4j
        a = mpmath.matrix(dim, dim)
        for n in range(1, dim):
            a[n - 1, n] = mpmath.sqrt(n)
        b = mpmath.mpc(beta)
        gen = b * a.H - mpmath.conj(b) * a
        ref = mpmath.expm(gen)
        got = displacement_matrix(dim, beta)
        err = max(abs(complex(ref[i, j]) - got[i, j]) for i in range(dim) for j in range(dim))
        assert err < 1e-13

    @settings(max_examples=25, deadline=None)
    @given(
        r=st.floats(0.0, 2.5),
        phi=st.floats(-math.pi, math.pi),
    )
    def test_group_law_on_low_subspace(self, r, phi):
        beta = r * complex(math.cos(phi), math.sin(phi))
        dim = policy_dim(2 * r) + 10
        d = displacement_matrix(dim, beta)
        dd = displacement_matrix(dim, 2 * beta)
        low = 8
        assert np.max(np.abs((d @ d)[:low, :low] - dd[:low, :low])) < 1e-9


class TestComposition:
    def test_join_vacua(self):
        j = join_modes(number_state(single(3), "atom", 0), number_state(single(4, "cavity"), "cavity", 0))
        assert j.space.labels == ("atom", "cavity")
        assert j.tensor()[0, 0] == 1

    def test_atom_first(self):
        cav = coherent_state(single(30, "cavity"), "cavity", 1.0)
        atom = coherent_state(single(25), "atom", 0.5)
        j = join_modes(cav, atom)
        assert j.space.labels == ("atom", "cavity")
        assert abs(j.norm() - 1) < 1e-12
        assert j.norm_leakage == pytest.approx(cav.norm_leakage + atom.norm_leakage)

    def test_label_collision(self):
        with pytest.raises(LabelError):
            join_modes(number_state(single(3), "atom", 0), number_state(single(3), "atom", 1))

    def test_round_trip(self):
        a = coherent_state(single(22), "atom", 0.3 + 0.8j)
        c = coherent_state(single(26, "cavity"), "cavity", -1.1)
        j = join_modes(a, c)
        assert np.max(np.abs(reduce_mode(j, "atom").matrix - a.density().matrix)) < 1e-12
        assert np.max(np.abs(reduce_mode(j.density(), "cavity").matrix - c.density().matrix)) < 1e-12
        assert reduce_mode(j, "atom").purity() == pytest.approx(1.0, abs=1e-10)

    def test_bell_state(self):
        amps = np.array([1, 0, 0, 1]) / math.sqrt(2)
        bell = StateVector(ModeSpace.joint(2, 2), amps)
        assert np.allclose(reduce_mode(bell, "atom").matrix, np.eye(2) / 2)

    def test_reduced_overlap(self):
        amps = np.array([1, 0, 0, 1j]) / math.sqrt(2)
        s = StateVector(ModeSpace.joint(2, 2), amps)
        target = number_state(single(2), "atom", 1)
        assert reduced_overlap(s, "atom", target) == pytest.approx(0.5)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_partial_trace_positive(self, seed):
        rng = np.random.default_rng(seed)
        g = rng.normal(size=(12, 12)) + 1j * rng.normal(size=(12, 12))
        rho = DensityOperator(ModeSpace.joint(3, 4), g @ g.conj().T / np.trace(g @ g.conj().T).real)
        red = reduce_mode(rho, "cavity")
        assert abs(red.trace - 1) < 1e-12
        assert red.eigenvalues().min() > -1e-10


class TestQuadrature:
    @pytest.mark.parametrize("n,x,ref", PSI_ORACLE)
    def test_hermite_oracle(self, n, x, ref):
        assert quadrature_wavefunction(n, x) == pytest.approx(ref, abs=1e-14)

    def test_peak(self):
        assert quadrature_wavefunction(0, 0.0) == pytest.approx((2 / math.pi) ** 0.25, abs=1e-15)

    def test_normalized(self):
        x = np.linspace(-12, 12, 24001)
        psi = quadrature_wavefunctions(30, x)
        norms = np.trapezoid(psi**2, x, axis=1)
        assert np.max(np.abs(norms - 1)) < 1e-8

    def test_recurrence_residual(self):
        x = np.linspace(-4, 4, 81)
        psi = quadrature_wavefunctions(20, x)
        for n in range(1, 20):
            res = psi[n + 1] - (2 * x * math.sqrt(2) * psi[n] / math.sqrt(2 * (n + 1)) - math.sqrt(n / (n + 1)) * psi[n - 1])
            assert np.max(np.abs(res)) < 1e-12

    def test_large_x_no_overflow(self):
        vals = quadrature_wavefunctions(400, [0.0, 15.0, -40.0])
        assert np.all(np.isfinite(vals))

    @pytest.mark.parametrize("gamma", [0.0, 1.5, -2.0, 3.0])
    def test_coherent_density(self, gamma):
        s = coherent_state(single(policy_dim(gamma), "cavity"), "cavity", gamma)
        x = np.linspace(-3 + gamma, 3 + gamma, 41)
        ref = math.sqrt(2 / math.pi) * np.exp(-2 * (x - gamma) ** 2)
        assert np.max(np.abs(quadrature_density(s, x) - ref)) < 1e-8

    def test_density_operator_form(self):
        rho = random_density(5, seed=4, label="cavity")
        x = np.linspace(-4, 4, 8001)
        assert np.trapezoid(quadrature_density(rho, x), x) == pytest.approx(1.0, abs=1e-8)


class TestParityFidelity:
    def test_parity(self):
        sp = single(30)
        assert parity_expectation(number_state(sp, "atom", 0)) == 1
        assert parity_expectation(number_state(sp, "atom", 1)) == -1
        alpha = 1.1 - 0.4j
        coh = coherent_state(sp, "atom", alpha)
        assert parity_expectation(coh.density()) == pytest.approx(math.exp(-2 * abs(alpha) ** 2), abs=1e-12)

    def test_fidelity(self):
        sp = single(40)
        a = coherent_state(sp, "atom", 1.2)
        b = coherent_state(sp, "atom", -1.2)
        assert fidelity(a, a) == pytest.approx(1)
        assert fidelity(number_state(sp, "atom", 1), number_state(sp, "atom", 2)) == 0
        assert fidelity(a, b) == pytest.approx(math.exp(-4 * 1.44), rel=1e-10)
        assert fidelity(a.density(), b) == pytest.approx(fidelity(a, b), rel=1e-10)

    def test_fidelity_global_phase(self):
        a = coherent_state(single(20), "atom", 0.5)
        b = StateVector(a.space, 1j * a.amplitudes)
        assert fidelity(a, b) == pytest.approx(1.0, abs=1e-15)

    def test_fidelity_space_mismatch(self):
        with pytest.raises(DimensionError):
            fidelity(number_state(single(3), "atom", 0), number_state(single(4), "atom", 0))
