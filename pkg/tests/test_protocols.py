import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bec_optomech.dynamics import SystemParams, analytic_state, eta, joint_space_for
from bec_optomech.errors import (
    ConditioningError,
    DegenerateContrastError,
    DimensionError,
    ProtocolConstraintError,
    TruncationError,
    UndefinedConditionalError,
)
from bec_optomech.fock import (
    ModeSpace,
    coherent_state,
    fidelity,
    number_state,
    policy_dim,
    quadrature_wavefunctions,
    random_density,
    reduce_mode,
)
from bec_optomech.protocols import (
    WIGNER_BOUND,
    CatSpec,
    MeasurementRecord,
    WignerPoint,
    _counting_sector_sum,
    _sector_transfer,
    cat_target,
    coherent_quadrature_density,
    conditional_quadrature_collapse,
    cosine_law,
    counting_estimator,
    counting_residual,
    displaced_density,
    displaced_number_statistics,
    gaussian_sector_weights,
    parity_readout,
    parity_residual,
    photon_number_distribution,
    quadrature_distribution,
    sector_photon_distribution,
    solve_counting_constraint,
    solve_parity_constraint,
    wigner_direct,
    wigner_grid,
    wigner_reconstruct_counting,
    wigner_reconstruct_parity,
)

from oracles import cat_components, fock_wigner, poisson_phase_sum, superposition_amplitudes, superposition_wigner

ATOM = ModeSpace.single("atom", 30)

# mpmath oracle, 40 digits: W of the alpha = 1 cat
CAT1_W = {
    0: 0.086157117207394519,
    0.5: 0.19660080868381185,
    1j: -0.053543823430981041,
    1 + 1j: 0.034268618694104726,
    -0.7 + 0.3j: 0.40890692291425085,
    2: 0.043078563451550379,
}
# P_a(n) of the alpha = 2 cat displaced by 4 and by 4i
CAT2_PA_REAL = {3: 0.097683407407484125, 4: 0.097683407414698769, 5: 0.078146725983704451,
                20: 0.0006372309703468408, 35: 0.033168324550651134, 36: 0.033168324550651134,
                37: 0.032271883346579481}
CAT2_PA_IMAG = {10: 0.0033186048105805994, 11: 0.01549063514917077, 12: 0.035025029098630964,
                13: 0.046634533359860362, 14: 0.033956140519187136, 15: 0.0068212250658958811,
                16: 0.0052871235986236076}
CAT2_AMPS = [0.13533528323661269, 0.27067056647322538j, 0.3827859860416437,
             0.44200318416631864j, 0.44200318416631864, 0.39533966642689887j]


@pytest.fixture(scope="module")
def cat1():
    return cat_target(CatSpec.from_revival(1.0), ATOM)


@pytest.fixture(scope="module")
def cat2():
    return cat_target(CatSpec.from_revival(2.0), ModeSpace.single("atom", 40))


class TestCat:
    def test_spec(self):
        spec = CatSpec.from_revival(2.0, 4)
        assert spec.Lambda == 0.25 and spec.tau == 8 * math.pi

    def test_spec_validation(self):
        with pytest.raises(ProtocolConstraintError):
            CatSpec(2.0, 1, 0.3)
        with pytest.raises(ValueError):
            CatSpec(2.0, 0, 0.5)

    def test_amplitudes(self, cat2):
        assert np.max(np.abs(cat2.amplitudes[:6] - CAT2_AMPS)) < 1e-15

    def test_amplitudes_against_mpmath(self):
        comps = cat_components(1.5 - 0.5j)
        ref = superposition_amplitudes(comps, 40)
        got = cat_target(CatSpec.from_revival(1.5 - 0.5j), ModeSpace.single("atom", 40)).amplitudes
        assert np.max(np.abs(got - ref)) < 1e-14

    def test_zero_amplitude_is_vacuum(self):
        vac = cat_target(CatSpec.from_revival(0.0), ModeSpace.single("atom", 5))
        assert np.allclose(vac.amplitudes, [1, 0, 0, 0, 0])

    def test_truncation(self):
        with pytest.raises(TruncationError):
            cat_target(CatSpec.from_revival(3.0), ModeSpace.single("atom", 15))

    def test_needs_single_mode(self):
        with pytest.raises(DimensionError):
            cat_target(CatSpec.from_revival(1.0), ModeSpace.joint(5, 5))

    @pytest.mark.parametrize("m", [1, 2])
    def test_revival_produces_cat(self, m):
        spec = CatSpec.from_revival(1.0, m)
        space = joint_space_for(policy_dim(1.0), spec.Lambda)
        joint = analytic_state(1.0, SystemParams.from_lambda(spec.Lambda), spec.tau, space).state
        atom = reduce_mode(joint, "atom")
        target = cat_target(spec, ModeSpace.single("atom", space.dims[0]))
        assert fidelity(atom, target) >= 1 - 1e-12

    def test_poisson_statistics_kept(self, cat2):
        # odd and even components interfere only in phase: |c_n|^2 is Poisson(4)
        n = np.arange(40)
        pois = np.exp(-4.0) * 4.0**n / np.array([math.factorial(k) for k in n], dtype=float)
        assert np.max(np.abs(np.abs(cat2.amplitudes) ** 2 - pois)) < 1e-15


class TestCollapse:
    def setup_method(self):
        self.p = SystemParams.from_lambda(0.5)
        self.space = joint_space_for(policy_dim(1.0), 0.5)
        self.joint = analytic_state(1.0, self.p, math.pi, self.space).state

    def test_density_integrates_to_one(self):
        # trapezoid is spectrally accurate for this smooth, fast-decaying mixture
        xs = np.linspace(-4, 12, 321)
        dens = [conditional_quadrature_collapse(self.joint, x)[1] for x in xs]
        assert np.trapezoid(dens, xs) == pytest.approx(1.0, abs=1e-9)

    def test_full_convention_same_state(self):
        a, da = conditional_quadrature_collapse(self.joint, 1.3, "half")
        b, db = conditional_quadrature_collapse(self.joint, 2.6, "full")
        assert np.allclose(a.amplitudes, b.amplitudes, atol=1e-15)
        assert db == pytest.approx(0.5 * da)

    def test_gaussian_weights_match(self):
        prior = np.abs(analytic_state(1.0, self.p, 0.0, self.space).state.tensor()[:, 0]) ** 2
        for x in (-0.3, 0.5, 1.0, 2.2):
            atom, _ = conditional_quadrature_collapse(self.joint, x)
            w = gaussian_sector_weights(x, 0.5, math.pi, self.space.dims[0] - 1, prior)
            assert np.max(np.abs(np.abs(atom.amplitudes) ** 2 - w)) < 1e-12

    def test_sharp_collapse(self):
        # Lambda = 2: sector peaks at 2 Lambda m sit 4 apart, far beyond sigma = 1/8
        p = SystemParams.from_lambda(2.0)
        space = joint_space_for(12, 2.0)
        joint = analytic_state(np.ones(12), p, math.pi, space).state
        for m in range(4):
            atom, _ = conditional_quadrature_collapse(joint, 4 * m)
            assert abs(atom.amplitudes[m]) ** 2 >= 1 - 1e-12

    def test_weak_coupling_no_collapse(self):
        p = SystemParams.from_lambda(0.125)
        space = joint_space_for(policy_dim(1.0), 0.125)
        joint = analytic_state(1.0, p, math.pi, space).state
        atom, _ = conditional_quadrature_collapse(joint, 0.25)
        assert np.max(np.abs(atom.amplitudes) ** 2) < 0.5

    def test_phase_and_width(self):
        # weights are exp(-(n - n0)^2 / 2 sigma^2) with sigma = 1/(4 Lambda), n0 = X/(2 Lambda)
        w = np.array(gaussian_sector_weights(5.1, 0.25, math.pi, 30))
        n = np.arange(31)
        mean = w @ n
        assert mean == pytest.approx(5.1 / 0.5, abs=1e-6)
        assert w @ (n - mean) ** 2 == pytest.approx(1.0, rel=1e-3)

    def test_even_pi_rejected(self):
        with pytest.raises(ValueError):
            gaussian_sector_weights(1.0, 0.5, 2 * math.pi, 10)
        with pytest.raises(ValueError):
            conditional_quadrature_collapse(self.joint, 1.0, "quarter")

    def test_zero_density(self):
        with pytest.raises(UndefinedConditionalError):
            conditional_quadrature_collapse(self.joint, 60.0)

    def test_needs_joint(self):
        with pytest.raises(DimensionError):
            conditional_quadrature_collapse(coherent_state(ATOM, "atom", 1.0), 0.0)


class TestNumberStatistics:
    def test_frozen_values(self, cat2):
        real = dict(displaced_number_statistics(cat2, 4))
        imag = dict(displaced_number_statistics(cat2, 4j))
        for n, ref in CAT2_PA_REAL.items():
            assert real[n] == pytest.approx(ref, rel=1e-10)
        for n, ref in CAT2_PA_IMAG.items():
            assert imag[n] == pytest.approx(ref, rel=1e-10)

    def test_normalized(self, cat2):
        assert sum(p for _, p in displaced_number_statistics(cat2, 3 - 2j)) == pytest.approx(1, abs=1e-12)

    def test_coherent_displacement(self):
        # D(b)|g> is |g + b> up to phase
        pa = np.array([p for _, p in displaced_number_statistics(coherent_state(ATOM, "atom", 0.5), 1.0 + 1j)])
        n = np.arange(pa.size)
        mu = abs(1.5 + 1j) ** 2
        ref = np.exp(-mu + n * math.log(mu) - np.array([math.lgamma(k + 1) for k in n]))
        assert np.max(np.abs(pa - ref)) < 1e-13

    def test_displaced_density_hermitian_unit_trace(self):
        rho = random_density(8, 3, seed=5)
        mat, leak = displaced_density(rho, 1.7 - 0.4j)
        assert np.allclose(mat, mat.conj().T, atol=0)
        assert np.trace(mat).real == pytest.approx(1, abs=1e-14)
        assert leak <= 1e-10

    def test_photon_record(self, cat1):
        rec = photon_number_distribution(cat1, 0.3, 0.7, math.pi)
        assert rec.kind == "photon_number"
        assert rec.weights.sum() == pytest.approx(1, abs=1e-10)

    def test_sector_numeric_matches_poisson(self):
        a = sector_photon_distribution(0.6, 2.0, 3, 60)
        b = sector_photon_distribution(0.6, 2.0, 3, 60, evolution="numeric")
        assert np.max(np.abs(a - b)) < 1e-10


class TestQuadratureDistribution:
    def test_coherent_density(self):
        xs = np.linspace(-3, 5, 4001)
        d = coherent_quadrature_density(1 + 2j, xs)
        assert np.trapezoid(d, xs) == pytest.approx(1, abs=1e-12)
        assert np.trapezoid(d * xs, xs) == pytest.approx(1, abs=1e-12)
        assert np.trapezoid(d * (xs - 1) ** 2, xs) == pytest.approx(0.25, abs=1e-12)

    def test_matches_joint_pipeline(self, cat1):
        # displace, evolve the joint state and read the cavity X density directly
        beta, lam = 0.4 - 0.2j, 0.5
        xs = np.linspace(-2, 6, 41)
        rec = quadrature_distribution(cat1, beta, lam, math.pi, xs)
        mat, _ = displaced_density(cat1, beta)
        keep = 24  # displaced weight beyond |23> is below 1e-18
        assert np.real(np.trace(mat[:keep, :keep])) > 1 - 1e-15
        vals, vecs = np.linalg.eigh(mat[:keep, :keep])
        space = joint_space_for(keep, lam)
        phi = quadrature_wavefunctions(space.dims[1] - 1, xs)
        ref = np.zeros_like(xs)
        for w, v in zip(vals, vecs.T):
            if w < 1e-14:
                continue
            joint = analytic_state(v, SystemParams.from_lambda(lam), math.pi, space).state
            ref += w * np.sum(np.abs(joint.tensor() @ phi) ** 2, axis=0)
        assert np.max(np.abs(rec.weights - ref)) < 1e-8

    def test_tau_guard(self, cat1):
        with pytest.raises(ProtocolConstraintError):
            quadrature_distribution(cat1, 0, 0.5, 2.0, [0.0])
        rec = quadrature_distribution(cat1, 0, 0.5, 2.0, [0.0, 1.0], allow_any_tau=True)
        assert rec.kind == "quadrature"

    def test_record_validation(self):
        with pytest.raises(DimensionError):
            MeasurementRecord("quadrature", [0, 1], [0.5])
        with pytest.raises(TruncationError):
            MeasurementRecord("photon_number", [0, 1], [0.5, 0.4])
        with pytest.raises(ValueError):
            MeasurementRecord("heterodyne", [0], [1.0])


class TestConstraints:
    def test_counting_solution(self):
        lam, tau, res = solve_counting_constraint(tau=math.pi)
        assert lam == pytest.approx(math.sqrt(math.pi) / 2, rel=1e-15)
        assert abs(res) < 1e-12
        lam2, tau2, _ = solve_counting_constraint(Lambda=1.5)
        assert counting_residual(1.5, tau2) == pytest.approx(0, abs=1e-12)

    def test_parity_solution(self):
        lam, _, res = solve_parity_constraint(tau=math.pi)
        assert lam == pytest.approx(math.pi / 4, rel=1e-15)
        _, tau, _ = solve_parity_constraint(Lambda=1.0)
        assert parity_residual(1.0, tau) == pytest.approx(0, abs=1e-12)

    def test_violations(self):
        with pytest.raises(ProtocolConstraintError):
            solve_counting_constraint(0.5, math.pi)
        with pytest.raises(ProtocolConstraintError):
            solve_counting_constraint(Lambda=0.5)
        with pytest.raises(ProtocolConstraintError):
            solve_parity_constraint(Lambda=0.5)
        with pytest.raises(ProtocolConstraintError):
            solve_parity_constraint(tau=0.0)
        with pytest.raises(ValueError):
            solve_parity_constraint()

    def test_reconstruction_enforces(self, cat1):
        with pytest.raises(ProtocolConstraintError):
            wigner_reconstruct_parity(cat1, 0, Lambda=1.0, tau=math.pi)
        with pytest.raises(ProtocolConstraintError):
            wigner_reconstruct_counting(cat1, 0, Lambda=1.0, tau=math.pi)


class TestCountingSum:
    @pytest.mark.parametrize("x", [0.0, 0.3, math.pi, 4 * math.pi, 100.0, 49 * math.pi, 900.0])
    def test_against_closed_form(self, x):
        assert abs(_counting_sector_sum(x) - poisson_phase_sum(x)) < 1e-13

    def test_tail_dropped(self):
        w = [0.5, 0.5 - 1e-13, 1e-13]
        # the last sector's mean is absurd; it is dropped inside the tail budget
        assert counting_estimator(w, [0.0, math.pi, 1e9]) == pytest.approx(0.5 - (0.5 - 1e-13), abs=1e-12)


class TestWignerDirect:
    def test_vacuum(self):
        assert wigner_direct(number_state(ATOM, "atom", 0), 0).value == pytest.approx(WIGNER_BOUND, abs=1e-15)

    def test_coherent(self):
        w = wigner_direct(coherent_state(ATOM, "atom", 1 + 0.5j), 0.3 - 0.4j).value
        assert w == pytest.approx(0.047284028455734978, rel=1e-12)

    @pytest.mark.parametrize("n,r", [(1, 0.5), (3, 0.7), (5, 1.1)])
    def test_fock(self, n, r):
        w = wigner_direct(number_state(ATOM, "atom", n), r * cmath.exp(0.3j)).value
        assert w == pytest.approx(fock_wigner(n, r), abs=1e-13)

    def test_cat_frozen(self, cat1):
        for beta, ref in CAT1_W.items():
            assert wigner_direct(cat1, beta).value == pytest.approx(ref, abs=1e-13)

    def test_cat_mpmath(self):
        comps = cat_components(0.8j)
        state = cat_target(CatSpec.from_revival(0.8j), ATOM)
        for beta in (0.1, -0.6 + 0.2j, 1.2j):
            assert wigner_direct(state, beta).value == pytest.approx(superposition_wigner(comps, beta), abs=1e-13)

    def test_bound(self):
        with pytest.raises(ConditioningError):
            WignerPoint(0, 0.7, "direct")
        with pytest.raises(ValueError):
            WignerPoint(0, 0.1, "heterodyne")

    def test_fringes_change_sign(self):
        # cat interference along the imaginary axis
        state = cat_target(CatSpec.from_revival(2.0), ModeSpace.single("atom", 40))
        vals = [wigner_direct(state, 1j * y).value for y in np.linspace(0, 1.5, 16)]
        assert np.sum(np.diff(np.sign(vals)) != 0) >= 2

    def test_grid_layout(self, cat1):
        pts = wigner_grid(cat1, [-1, 0, 1], [0.5, -0.5])
        assert [p.beta for p in pts[:3]] == [-1 + 0.5j, 0.5j, 1 + 0.5j]
        with pytest.raises(ValueError):
            wigner_grid(cat1, [0], [0], method="tomography")


class TestReconstruction:
    @pytest.mark.parametrize("beta", list(CAT1_W))
    def test_counting_cat_frozen(self, cat1, beta):
        pt = wigner_reconstruct_counting(cat1, beta, tau=math.pi)
        assert pt.value == pytest.approx(CAT1_W[beta], abs=1e-10)
        assert pt.imag_residual <= 1e-8

    @pytest.mark.parametrize("beta", list(CAT1_W))
    def test_parity_cat_frozen(self, cat1, beta):
        pt = wigner_reconstruct_parity(cat1, beta, tau=math.pi)
        assert pt.value == pytest.approx(CAT1_W[beta], abs=1e-10)

    @settings(max_examples=8, deadline=None)
    @given(seed=st.integers(0, 10_000), re=st.floats(-1.5, 1.5), im=st.floats(-1.5, 1.5))
    def test_random_state_equivalence(self, seed, re, im):
        rho = random_density(6, 3, seed=seed)
        beta = complex(re, im)
        ref = wigner_direct(rho, beta).value
        assert wigner_reconstruct_parity(rho, beta, Lambda=1.0).value == pytest.approx(ref, abs=1e-10)
        assert wigner_reconstruct_counting(rho, beta, Lambda=1.2).value == pytest.approx(ref, abs=1e-10)

    def test_degenerate_contrast(self, cat1):
        with pytest.raises(DegenerateContrastError):
            wigner_reconstruct_parity(cat1, 0, tau=math.pi, rho0=0.5, rho1=0.5)

    def test_reversed_contrast(self, cat1):
        pt = wigner_reconstruct_parity(cat1, 0.5, tau=math.pi, rho0=0.8, rho1=0.2)
        assert pt.value == pytest.approx(CAT1_W[0.5], abs=1e-10)


class TestCosineLaw:
    @pytest.mark.parametrize("lam,tau", [(0.3, 1.0), (0.9, 2.5), (1.7, 4.0)])
    def test_blockade_model(self, cat1, lam, tau):
        p0, p1 = parity_readout(cat1, 0.2 + 0.1j, lam, tau, 0.3, 0.7)
        assert p1 - p0 == pytest.approx(cosine_law(cat1, 0.2 + 0.1j, lam, tau, 0.3, 0.7), abs=1e-12)

    def test_transfer_probabilities(self):
        lam, tau, m = 0.4, 1.3, 3
        g = abs(lam * m * eta(tau))
        t = _sector_transfer(lam, tau, m, "blockade")
        assert np.allclose(t, [[math.cos(g) ** 2, math.sin(g) ** 2], [math.sin(g) ** 2, math.cos(g) ** 2]], atol=1e-14)

    def test_oscillator_model_breaks_cosine_law(self):
        # in the full oscillator |0> -> |1> has probability |g|^2 exp(-|g|^2), not sin^2 |g|
        lam, tau, m = 0.5, math.pi, 1
        t = _sector_transfer(lam, tau, m, "oscillator")
        g2 = abs(lam * m * eta(tau)) ** 2
        assert t[1, 0] == pytest.approx(g2 * math.exp(-g2), abs=1e-10)
        assert abs(t[1, 0] - math.sin(math.sqrt(g2)) ** 2) > 0.1

    def test_unknown_model(self):
        with pytest.raises(ValueError):
            _sector_transfer(0.5, 1.0, 1, "mirror")

    def test_readout_validation(self, cat1):
        with pytest.raises(ValueError):
            parity_readout(cat1, 0, 1.0, 1.0, 0.6, 0.6)
