"""State engineering and tomography of the condensate through the cavity.

Conventions used throughout:

* quadrature X = (c + c^dag) / 2, so a coherent state |g> has the X density
  sqrt(2/pi) exp(-2 (X - Re g)^2);
* physical displacement of the atoms by a reference amplitude b maps
  rho -> D(b) rho D(-b);
* W(beta) = (2/pi) sum_n (-1)^n <n| D(-beta) rho D(beta) |n>.

The reconstruction protocols read W at phase-space point beta, which means
mixing with a reference of amplitude -beta before the coupling is switched on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import mpmath
import numpy as np
from scipy.linalg import expm
from scipy.stats import poisson

from .dynamics import SystemParams, eta, propagate_sector, sector_hamiltonian
from .errors import (
    ConditioningError,
    DegenerateContrastError,
    DimensionError,
    ProtocolConstraintError,
    TruncationError,
    UndefinedConditionalError,
)
from .fock import (
    LEAKAGE_BUDGET,
    DensityOperator,
    ModeSpace,
    StateVector,
    coherent_amplitudes,
    displacement_matrix,
    policy_dim,
    quadrature_wavefunctions,
)

CONSTRAINT_TOL = 1e-9
IMAG_RESIDUAL_TOL = 1e-8
WIGNER_BOUND = 2.0 / math.pi
SECTOR_TAIL = 1e-12
CAVITY_MODELS = ("blockade", "oscillator", "blockade-exact")


# --------------------------------------------------------------------------- types


@dataclass(frozen=True)
class CatSpec:
    """Two-component cat reached at tau = 2 pi m_revival when Lambda^2 = 1 / (4 m_revival)."""

    alpha: complex
    m_revival: int
    Lambda: float

    def __post_init__(self):
        if int(self.m_revival) != self.m_revival or self.m_revival < 1:
            raise ValueError("m_revival must be a positive integer")
        if abs(4 * self.m_revival * self.Lambda**2 - 1.0) > 1e-12:
            raise ProtocolConstraintError(
                f"Lambda={self.Lambda} does not satisfy Lambda^2 = 1/(4 m) for m={self.m_revival}"
            )
        object.__setattr__(self, "alpha", complex(self.alpha))

    @classmethod
    def from_revival(cls, alpha: complex, m_revival: int = 1) -> "CatSpec":
        return cls(alpha=alpha, m_revival=m_revival, Lambda=1.0 / (2.0 * math.sqrt(m_revival)))

    @property
    def tau(self) -> float:
        return 2.0 * math.pi * self.m_revival


@dataclass(frozen=True)
class WignerPoint:
    beta: complex
    value: float
    method: str
    constraint_residual: float = 0.0
    imag_residual: float = 0.0

    def __post_init__(self):
        if self.method not in ("direct", "counting", "parity"):
            raise ValueError(f"unknown Wigner method {self.method!r}")
        if abs(self.value) > WIGNER_BOUND + 1e-9:
            raise ConditioningError(f"|W({self.beta})| = {abs(self.value):.6g} exceeds 2/pi")


@dataclass
class MeasurementRecord:
    """Outcome values with their probabilities (photon numbers) or densities (quadrature)."""

    kind: str
    values: np.ndarray
    weights: np.ndarray
    context: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("photon_number", "quadrature"):
            raise ValueError(f"unknown record kind {self.kind!r}")
        self.values = np.asarray(self.values)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.values.shape != self.weights.shape:
            raise DimensionError("values and weights differ in length")
        if np.any(self.weights < -1e-15):
            raise ValueError("negative probability in measurement record")
        if self.kind == "photon_number" and abs(self.weights.sum() - 1.0) > 1e-10:
            raise TruncationError(f"photon-number probabilities sum to {self.weights.sum():.12f}")

    @property
    def outcomes(self) -> list[tuple]:
        return list(zip(self.values.tolist(), self.weights.tolist()))


# ------------------------------------------------------------------ atom states


def _as_density(rho) -> DensityOperator:
    if isinstance(rho, StateVector):
        rho = rho.density()
    if not isinstance(rho, DensityOperator):
        raise TypeError("expected a DensityOperator or StateVector")
    if not rho.space.is_single:
        raise DimensionError("a single-mode atom state is required")
    return rho


def cat_target(spec: CatSpec, space: ModeSpace, leakage_budget: float = LEAKAGE_BUDGET) -> StateVector:
    """((1+i)/2)|alpha> + ((1-i)/2)|-alpha>, normalized in the truncated basis."""
    if not space.is_single:
        raise DimensionError("cat_target needs a single-mode space")
    plus, leak = coherent_amplitudes(spec.alpha, space.total_dim)
    minus, _ = coherent_amplitudes(-spec.alpha, space.total_dim)
    if leak > leakage_budget:
        raise TruncationError(f"cat with alpha={spec.alpha} loses {leak:.3e} beyond dim {space.total_dim}")
    amps = 0.5 * (1 + 1j) * plus + 0.5 * (1 - 1j) * minus
    return StateVector(space, amps / np.linalg.norm(amps), leak)


def displaced_density(rho_a, beta: complex, leakage_budget: float = LEAKAGE_BUDGET) -> tuple[np.ndarray, float]:
    """D(beta) rho D(-beta) in a basis large enough to hold it.

    The working dimension starts from the truncation policy and grows until
    the weight displaced beyond it is within ``leakage_budget``.  Returns the
    renormalized matrix and the weight that was dropped.
    """
    rho = _as_density(rho_a)
    d = rho.space.total_dim
    if beta == 0:
        return rho.matrix.copy(), 0.0
    work = max(d, policy_dim(abs(beta) + math.sqrt(d - 1)))
    for _ in range(8):
        full = work + max(20, work // 2)
        D = displacement_matrix(full, beta)[:work, :d]
        out = D @ rho.matrix @ D.conj().T
        kept = float(np.real(np.trace(out)))
        leak = max(0.0, 1.0 - kept / float(np.real(np.trace(rho.matrix))))
        if leak <= leakage_budget:
            out = 0.5 * (out + out.conj().T)
            return out / kept, leak
        work = int(1.5 * work)
    raise TruncationError(f"displacement by {beta} keeps losing {leak:.3e} of the state")


def displaced_number_statistics(rho_a, beta: complex, leakage_budget: float = LEAKAGE_BUDGET) -> list[tuple[int, float]]:
    """P_a(n) = <n| D(beta) rho D(-beta) |n>."""
    mat, _ = displaced_density(rho_a, beta, leakage_budget)
    pops = np.clip(np.real(np.diag(mat)), 0.0, None)
    if abs(pops.sum() - 1.0) > 1e-8:
        raise TruncationError(f"displaced populations sum to {pops.sum():.10f}")
    return list(enumerate(pops.tolist()))


def _displaced_populations(rho_a, beta, leakage_budget) -> np.ndarray:
    return np.array([p for _, p in displaced_number_statistics(rho_a, beta, leakage_budget)])


# ------------------------------------------------------------- quadrature collapse


def coherent_quadrature_density(gamma: complex, X) -> np.ndarray:
    """|<X|gamma>|^2 for a coherent state."""
    x = np.asarray(X, dtype=float)
    return math.sqrt(2.0 / math.pi) * np.exp(-2.0 * (x - np.real(gamma)) ** 2)


def _half_scale(X: float, convention: str) -> tuple[float, float]:
    """Map X to the (c + c^dag)/2 scale and return the density Jacobian."""
    if convention == "half":
        return float(X), 1.0
    if convention == "full":
        return 0.5 * float(X), 0.5
    raise ValueError(f"unknown quadrature convention {convention!r} (use 'half' or 'full')")


def conditional_quadrature_collapse(joint: StateVector, X: float, convention: str = "half") -> tuple[StateVector, float]:
    """Atom state left behind when the cavity quadrature is found at X.

    ``convention='half'`` reads X as an eigenvalue of (c + c^dag)/2,
    ``'full'`` as an eigenvalue of c + c^dag; the returned density refers
    to the same variable, so it integrates to one over X either way.
    """
    if joint.space.labels != ("atom", "cavity"):
        raise DimensionError("conditional collapse needs a joint ('atom', 'cavity') state")
    x, jac = _half_scale(X, convention)
    d_atom, d_cav = joint.space.dims
    psi_x = quadrature_wavefunctions(d_cav - 1, [x])[:, 0]
    f = joint.tensor() @ psi_x
    density = float(np.vdot(f, f).real) * jac
    if density < 1e-300:
        raise UndefinedConditionalError(f"quadrature outcome X={X} has zero probability density")
    atom = StateVector(ModeSpace.single("atom", d_atom), f / np.linalg.norm(f))
    return atom, density


def gaussian_sector_weights(
    X: float, Lambda: float, tau: float, n_max: int, prior=None, convention: str = "half"
) -> list[float]:
    """Normalized weights prior_n exp[-8 Lambda^2 (n - X / 2 Lambda)^2] for n = 0..n_max.

    Valid at odd multiples of pi, where every sector's cavity state is the
    real coherent amplitude 2 Lambda n.
    """
    k = tau / math.pi
    if abs(k - round(k)) > 1e-9 or round(k) % 2 == 0:
        raise ValueError("the Gaussian sector weights hold only at tau = (2m+1) pi")
    if Lambda == 0:
        raise ValueError("Lambda must be nonzero")
    x, _ = _half_scale(X, convention)
    n = np.arange(n_max + 1)
    log_w = -8.0 * Lambda**2 * (n - x / (2.0 * Lambda)) ** 2
    if prior is not None:
        p = np.asarray(prior, dtype=float)[: n_max + 1]
        with np.errstate(divide="ignore"):
            log_w = log_w + np.log(p)
    w = np.exp(log_w - np.max(log_w))
    return (w / w.sum()).tolist()


def quadrature_distribution(
    rho_a,
    beta: complex,
    Lambda: float,
    tau: float,
    X_grid,
    allow_any_tau: bool = False,
    leakage_budget: float = LEAKAGE_BUDGET,
) -> MeasurementRecord:
    """P_c(X) = sum_n P_a(n) |<X|Lambda n eta>|^2 after displacing the atoms by beta."""
    xs = np.asarray(X_grid, dtype=float)
    if xs.size == 0:
        raise ValueError("X grid is empty")
    if not allow_any_tau and abs(math.cos(tau) + 1.0) > 1e-12:
        raise ProtocolConstraintError("quadrature readout is defined at tau = pi; pass allow_any_tau=True")
    pops = _displaced_populations(rho_a, beta, leakage_budget)
    et = eta(tau)
    dens = np.zeros_like(xs)
    for n in np.flatnonzero(pops > 0):
        dens += pops[n] * coherent_quadrature_density(Lambda * n * et, xs)
    ctx = {"beta": complex(beta), "Lambda": float(Lambda), "tau": float(tau)}
    return MeasurementRecord("quadrature", xs, dens, ctx)


# ---------------------------------------------------------- protocol constraints


def _resolve(Lambda, tau, from_tau, from_lambda, residual, tol, name):
    if Lambda is None and tau is None:
        raise ValueError("give Lambda, tau, or both")
    if Lambda is None:
        Lambda = from_tau(float(tau))
    elif tau is None:
        tau = from_lambda(float(Lambda))
    res = residual(float(Lambda), float(tau))
    if abs(res) > tol:
        raise ProtocolConstraintError(f"{name} constraint violated: residual {res:.3e} (Lambda={Lambda}, tau={tau})")
    return float(Lambda), float(tau), res


def counting_residual(Lambda: float, tau: float) -> float:
    """|Lambda eta|^2 - pi."""
    return Lambda**2 * 2.0 * (1.0 - math.cos(tau)) - math.pi


def parity_residual(Lambda: float, tau: float) -> float:
    """2 |Lambda| |eta| - pi."""
    return 2.0 * abs(Lambda) * abs(eta(tau)) - math.pi


def _counting_lambda(tau):
    mag = abs(eta(tau))
    if mag == 0:
        raise ProtocolConstraintError("eta vanishes at this tau; no Lambda satisfies |Lambda eta|^2 = pi")
    return math.sqrt(math.pi) / mag


def _counting_tau(Lambda):
    c = 1.0 - math.pi / (2.0 * Lambda**2) if Lambda else -math.inf
    if c < -1.0:
        raise ProtocolConstraintError(f"|Lambda| = {abs(Lambda):.4g} < sqrt(pi)/2: counting constraint unreachable")
    return math.acos(c)


def _parity_lambda(tau):
    mag = abs(eta(tau))
    if mag == 0:
        raise ProtocolConstraintError("eta vanishes at this tau; no Lambda satisfies 2 Lambda |eta| = pi")
    return math.pi / (2.0 * mag)


def _parity_tau(Lambda):
    s = math.pi / (4.0 * abs(Lambda)) if Lambda else math.inf
    if s > 1.0:
        raise ProtocolConstraintError(f"|Lambda| = {abs(Lambda):.4g} < pi/4: parity constraint unreachable")
    return 2.0 * math.asin(s)


def solve_counting_constraint(Lambda=None, tau=None, tol: float = CONSTRAINT_TOL):
    """(Lambda, tau, residual) with |Lambda eta(tau)|^2 = pi; the missing one is solved for."""
    return _resolve(Lambda, tau, _counting_lambda, _counting_tau, counting_residual, tol, "counting")


def solve_parity_constraint(Lambda=None, tau=None, tol: float = CONSTRAINT_TOL):
    """(Lambda, tau, residual) with 2 |Lambda| |eta(tau)| = pi."""
    return _resolve(Lambda, tau, _parity_lambda, _parity_tau, parity_residual, tol, "parity")


# ------------------------------------------------------------------- photon counting


def sector_photon_distribution(Lambda: float, tau: float, m: int, n_cut: int, evolution: str = "analytic") -> np.ndarray:
    """Photon-number distribution of the cavity in atom sector m, started from vacuum."""
    gamma = Lambda * m * eta(tau)
    if evolution == "analytic":
        return poisson.pmf(np.arange(n_cut), abs(gamma) ** 2)
    if evolution == "numeric":
        dim = max(n_cut, policy_dim(abs(Lambda) * m * 2.0))
        vac = np.zeros(dim, dtype=complex)
        vac[0] = 1.0
        out = propagate_sector(SystemParams.from_lambda(Lambda), m, vac, tau)
        return np.abs(out[:n_cut]) ** 2
    raise ValueError(f"unknown evolution {evolution!r}")


def photon_number_distribution(
    rho_a,
    beta: complex,
    Lambda: float,
    tau: float,
    evolution: str = "analytic",
    leakage_budget: float = LEAKAGE_BUDGET,
) -> MeasurementRecord:
    """P_c(n) after displacing the atoms by beta and coupling for tau, cavity from vacuum."""
    pops = _displaced_populations(rho_a, beta, leakage_budget)
    occupied = np.flatnonzero(pops > 0)
    x_max = (abs(Lambda * eta(tau)) * (occupied[-1] if occupied.size else 0)) ** 2
    n_cut = int(x_max + 12.0 * math.sqrt(x_max) + 40)
    probs = np.zeros(n_cut)
    for m in occupied:
        probs += pops[m] * sector_photon_distribution(Lambda, tau, int(m), n_cut, evolution)
    ctx = {"beta": complex(beta), "Lambda": float(Lambda), "tau": float(tau), "evolution": evolution}
    return MeasurementRecord("photon_number", np.arange(n_cut), probs, ctx)


@lru_cache(maxsize=4096)
def _counting_sector_sum(x: float) -> complex:
    """sum_n Poisson(x)(n) (1+i)^n, summed term by term in fixed point.

    The terms reach e^{(sqrt 2 - 1) x} while the sum has unit modulus, so the
    working precision grows with x to absorb the cancellation.  x is taken as
    the exact binary fraction p / q of the float.
    """
    if x == 0.0:
        return 1.0 + 0j
    p, q = Fraction(x).as_integer_ratio()
    bits = int((math.sqrt(2.0) - 1.0) * x / math.log(2.0)) + 96 + int(x).bit_length()
    re, im = 1 << bits, 0
    s_re, s_im = re, 0
    # stop once a term is 2^-80 of the unscaled sum e^x
    stop = bits + int(x / math.log(2.0)) - 80
    n = 0
    while True:
        n += 1
        d = q * n
        re, im = (re - im) * p // d, (re + im) * p // d
        s_re += re
        s_im += im
        if n > x and max(abs(re), abs(im)).bit_length() < stop:
            break
    with mpmath.workprec(bits + 64):
        damp = mpmath.exp(-mpmath.mpf(x))
        return complex(mpmath.ldexp(s_re, -bits) * damp, mpmath.ldexp(s_im, -bits) * damp)


def counting_estimator(sector_weights, sector_means, tail: float = SECTOR_TAIL) -> complex:
    """sum_n P_c(n) (1+i)^n for P_c a mixture of Poisson laws, exchanged to a sum over sectors.

    Sectors are dropped from the top while their combined weight stays
    within ``tail``, the same order as the truncation leakage already accepted.
    """
    w = np.asarray(sector_weights, dtype=float)
    x = np.asarray(sector_means, dtype=float)
    top = w.size
    dropped = 0.0
    while top > 0 and dropped + w[top - 1] <= tail:
        top -= 1
        dropped += w[top]
    total = 0j
    for wi, xi in zip(w[:top], x[:top]):
        if wi > 0:
            total += wi * _counting_sector_sum(float(xi))
    return total


def wigner_reconstruct_counting(
    rho_a,
    beta: complex,
    Lambda: float | None = None,
    tau: float | None = None,
    constraint_tol: float = CONSTRAINT_TOL,
    leakage_budget: float = LEAKAGE_BUDGET,
) -> WignerPoint:
    """W(beta) = (2/pi) sum_n P_c(n) (1+i)^n with |Lambda eta|^2 = pi.

    The atoms are mixed with a reference of amplitude -beta, then each atom
    sector m drives the cavity into Poisson statistics of mean |Lambda eta m|^2.
    """
    Lambda, tau, res = solve_counting_constraint(Lambda, tau, constraint_tol)
    pops = _displaced_populations(rho_a, -beta, leakage_budget)
    scale = abs(Lambda * eta(tau)) ** 2
    means = scale * np.arange(pops.size, dtype=float) ** 2
    s = counting_estimator(pops, means)
    w = 2.0 / math.pi * s
    if abs(w.imag) > IMAG_RESIDUAL_TOL:
        raise ConditioningError(f"counting estimator left an imaginary part {w.imag:.3e}")
    return WignerPoint(complex(beta), float(w.real), "counting", res, float(abs(w.imag)))


# ------------------------------------------------------------------- parity readout


def _sector_transfer(Lambda: float, tau: float, m: int, model: str) -> np.ndarray:
    """|<k|U_m|j>|^2 for j, k in {0, 1}: rows are outcomes, columns are cavity inputs."""
    if model == "blockade":
        # displacement generator restricted to {|0>, |1>}
        g = Lambda * m * eta(tau)
        gen = np.array([[0.0, -np.conj(g)], [g, 0.0]], dtype=complex)
        u = expm(gen)
    elif model == "blockade-exact":
        params = SystemParams.from_lambda(Lambda)
        d, e = sector_hamiltonian(params, m, 2)
        h = np.diag(d).astype(complex) + np.diag(e, 1) + np.diag(e, -1)
        u = expm(-1j * params.time(tau) * h)
    elif model == "oscillator":
        params = SystemParams.from_lambda(Lambda)
        dim = policy_dim(abs(Lambda) * m * 2.0 + 1.0)
        cols = []
        for j in (0, 1):
            v = np.zeros(dim, dtype=complex)
            v[j] = 1.0
            cols.append(propagate_sector(params, m, v, tau)[:2])
        u = np.stack(cols, axis=1)
    else:
        raise ValueError(f"unknown cavity model {model!r}; choose from {CAVITY_MODELS}")
    return np.abs(u) ** 2


def parity_readout(
    rho_a,
    beta: complex,
    Lambda: float,
    tau: float,
    rho0: float,
    rho1: float,
    cavity_model: str = "blockade",
    leakage_budget: float = LEAKAGE_BUDGET,
) -> tuple[float, float]:
    """(P_c(0), P_c(1)) for cavity input rho0 |0><0| + rho1 |1><1| after displacing the atoms by beta."""
    if rho0 < 0 or rho1 < 0 or abs(rho0 + rho1 - 1.0) > 1e-12:
        raise ValueError("rho0 and rho1 must be nonnegative and sum to 1")
    pops = _displaced_populations(rho_a, beta, leakage_budget)
    p = np.zeros(2)
    for m in np.flatnonzero(pops > 0):
        t = _sector_transfer(Lambda, tau, int(m), cavity_model)
        p += pops[m] * (t @ np.array([rho0, rho1]))
    return float(p[0]), float(p[1])


def cosine_law(rho_a, beta: complex, Lambda: float, tau: float, rho0: float, rho1: float,
               leakage_budget: float = LEAKAGE_BUDGET) -> float:
    """(rho1 - rho0) sum_n P_a(n) cos(2 |Lambda eta| n) with P_a for the displacement beta."""
    pops = _displaced_populations(rho_a, beta, leakage_budget)
    n = np.arange(pops.size)
    return float((rho1 - rho0) * np.sum(pops * np.cos(2.0 * abs(Lambda * eta(tau)) * n)))


def wigner_reconstruct_parity(
    rho_a,
    beta: complex,
    Lambda: float | None = None,
    tau: float | None = None,
    rho0: float = 0.3,
    rho1: float = 0.7,
    cavity_model: str = "blockade",
    constraint_tol: float = CONSTRAINT_TOL,
    leakage_budget: float = LEAKAGE_BUDGET,
) -> WignerPoint:
    """W(beta) = 2 (P_c(1) - P_c(0)) / (pi (rho1 - rho0)) with 2 |Lambda eta| = pi."""
    if rho1 == rho0:
        raise DegenerateContrastError("rho1 == rho0 leaves no single-photon contrast")
    Lambda, tau, res = solve_parity_constraint(Lambda, tau, constraint_tol)
    p0, p1 = parity_readout(rho_a, -beta, Lambda, tau, rho0, rho1, cavity_model, leakage_budget)
    value = 2.0 * (p1 - p0) / (math.pi * (rho1 - rho0))
    return WignerPoint(complex(beta), value, "parity", res)


# ----------------------------------------------------------------------- direct


def wigner_direct(rho_a, beta: complex, leakage_budget: float = LEAKAGE_BUDGET) -> WignerPoint:
    """W(beta) = (2/pi) sum_n (-1)^n <n| D(-beta) rho D(beta) |n>."""
    mat, _ = displaced_density(rho_a, -beta, leakage_budget)
    diag = np.diag(mat)
    if np.max(np.abs(diag.imag)) > 1e-10:
        raise ConditioningError("displaced populations are not real")
    signs = np.where(np.arange(diag.size) % 2 == 0, 1.0, -1.0)
    return WignerPoint(complex(beta), float(2.0 / math.pi * signs @ diag.real), "direct")


def wigner_grid(rho_a, re_values, im_values, method: str = "direct", **kw) -> list[WignerPoint]:
    """W on a rectangular grid; rows follow Im beta, columns Re beta."""
    fn = {"direct": wigner_direct, "counting": wigner_reconstruct_counting, "parity": wigner_reconstruct_parity}
    if method not in fn:
        raise ValueError(f"unknown Wigner method {method!r}")
    rho = _as_density(rho_a)
    return [fn[method](rho, complex(x, y), **kw) for y in im_values for x in re_values]
