"""Optomechanical dynamics with the roles of light and matter exchanged.

H / hbar = w0 a^dag a + w_m c^dag c + G (c + c^dag) a^dag a

The atom number a^dag a is conserved, so the joint Hamiltonian is block
diagonal with one driven cavity oscillator per atom-number sector.  Two
independent routes are provided:

* :func:`evolve_numeric` diagonalizes the truncated Hamiltonian block by block;
* :func:`analytic_state` writes down the closed-form joint state, in which
  sector n carries the phase exp(i Lambda^2 n^2 (tau - sin tau)) and the cavity
  coherent state |Lambda n eta>, eta = 1 - exp(-i tau), tau = w_m t.

The closed form is in the frame where w0 a^dag a is dropped; the cavity is
kept in the lab frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh, eigh_tridiagonal, expm
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import expm_multiply

from .errors import DimensionError, PropagationError, ResonanceError, TruncationError
from .fock import (
    GUARD_BAND,
    LEAKAGE_BUDGET,
    ModeSpace,
    Operator,
    StateVector,
    coherent_amplitudes,
    mode_annihilation,
    number_operator,
    policy_dim,
    reduce_mode,
)

DENSE_BLOCK_MAX = 1500
NORM_DRIFT_TOL = 1e-8


@dataclass(frozen=True)
class SystemParams:
    """Frequencies in rad/s; ``Lambda`` is derived as -G / omega_m when omitted."""

    omega_m: float
    G: float
    omega0: float = 0.0
    Lambda: float | None = None

    def __post_init__(self):
        if self.omega_m == 0:
            raise ResonanceError("resonance: Lambda undefined for omega_m = 0")
        G = complex(self.G)
        if G.imag != 0.0:
            raise ValueError("the coupling G must be real for a Hermitian Hamiltonian")
        object.__setattr__(self, "G", G.real)
        lam = -G.real / self.omega_m if self.Lambda is None else float(self.Lambda)
        if abs(lam * self.omega_m + G.real) > 1e-12 * max(1.0, abs(G.real)):
            raise ValueError(f"inconsistent Lambda={lam}: Lambda * omega_m must equal -G")
        object.__setattr__(self, "Lambda", lam)

    @classmethod
    def from_lambda(cls, Lambda: float, omega_m: float = 1.0, omega0: float = 0.0) -> "SystemParams":
        return cls(omega_m=omega_m, G=-Lambda * omega_m, omega0=omega0, Lambda=Lambda)

    def time(self, tau: float) -> float:
        """Lab time for the dimensionless phase tau = omega_m t."""
        return tau / self.omega_m


@dataclass(frozen=True, eq=False)
class EvolutionResult:
    state: StateVector
    tau: float
    frame: str = "interaction"
    leakage: float = 0.0

    def __post_init__(self):
        if self.frame not in ("interaction", "lab"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if abs(self.state.norm() - 1.0) > 1e-10:
            raise PropagationError(f"evolved state norm {self.state.norm()!r} is not 1")


def eta(tau: float) -> complex:
    return 1.0 - np.exp(-1j * tau)


def max_eta(tau: float) -> float:
    """Largest |eta| reached on the way from 0 to tau."""
    return 2.0 if abs(tau) >= math.pi else 2.0 * abs(math.sin(tau / 2.0))


def joint_space_for(atom_dim: int, Lambda: float, eta_max: float = 2.0) -> ModeSpace:
    """Joint space whose cavity holds the largest excursion |Lambda (atom_dim-1) eta_max|."""
    return ModeSpace.joint(atom_dim, policy_dim(abs(Lambda) * (atom_dim - 1) * eta_max))


def _check_joint(space: ModeSpace):
    if space.labels != ("atom", "cavity"):
        raise DimensionError(f"expected joint ('atom', 'cavity') space, got {space.labels}")


def build_hamiltonian(params: SystemParams, space: ModeSpace, include_omega0: bool = True) -> Operator:
    _check_joint(space)
    n_atom = number_operator(space, "atom").matrix
    c = mode_annihilation(space, "cavity").matrix
    h = params.omega_m * (c.conj().T @ c) + params.G * ((c + c.conj().T) @ n_atom)
    if include_omega0 and params.omega0:
        h = h + params.omega0 * n_atom
    return Operator(space, sp.csr_matrix(h), hermitian_hint=True)


def sector_hamiltonian(params: SystemParams, n: int, cavity_dim: int, include_omega0: bool = False):
    """Diagonal and off-diagonal of the cavity Hamiltonian in atom sector n."""
    k = np.arange(cavity_dim, dtype=float)
    diag = params.omega_m * k + (params.omega0 * n if include_omega0 else 0.0)
    off = params.G * n * np.sqrt(k[1:])
    return diag, off


@numba.njit(cache=True)
def _bessel_sequence(z, K):
    """J_0(z) ... J_K(z) for z >= 0 by Miller's backward recurrence."""
    out = np.zeros(K + 1)
    if z == 0.0:
        out[0] = 1.0
        return out
    top = max(K + 40 + int(np.sqrt(40.0 * max(z, 1.0))), int(z) + 60)
    jp1 = 0.0
    j = 1e-280
    norm = 0.0
    for k in range(top, 0, -1):
        jm1 = 2.0 * k / z * j - jp1
        if k - 1 <= K:
            out[k - 1] = jm1
        if (k - 1) % 2 == 0 and k > 1:
            norm += 2.0 * jm1
        jp1 = j
        j = jm1
        if abs(j) > 1e250:
            jp1 *= 1e-250
            j *= 1e-250
            norm *= 1e-250
            for i in range(k - 1, K + 1):
                out[i] *= 1e-250
    return out / (norm + j)


@numba.njit(cache=True, fastmath=True)
def _chebyshev_kernel(dn, en, x, cf):
    """Accumulate sum_k cf[k, j] T_k(H) x; even k go to the real part, odd k to the imaginary part."""
    m = dn.size
    K = cf.shape[0] - 1
    T = cf.shape[1]
    re = np.zeros((T, m))
    im = np.zeros((T, m))
    p0 = x.copy()
    p1 = np.zeros(m)
    p2 = np.zeros(m)
    for j in range(T):
        for i in range(m):
            re[j, i] = cf[0, j] * p0[i]
    if m == 1 or K == 0:
        return re, im
    p1[0] = dn[0] * p0[0] + en[0] * p0[1]
    for i in range(1, m - 1):
        p1[i] = en[i - 1] * p0[i - 1] + dn[i] * p0[i] + en[i] * p0[i + 1]
    p1[m - 1] = en[m - 2] * p0[m - 2] + dn[m - 1] * p0[m - 1]
    for j in range(T):
        c = cf[1, j]
        for i in range(m):
            im[j, i] += c * p1[i]
    for k in range(2, K + 1):
        p2[0] = 2.0 * (dn[0] * p1[0] + en[0] * p1[1]) - p0[0]
        for i in range(1, m - 1):
            p2[i] = 2.0 * (en[i - 1] * p1[i - 1] + dn[i] * p1[i] + en[i] * p1[i + 1]) - p0[i]
        p2[m - 1] = 2.0 * (en[m - 2] * p1[m - 2] + dn[m - 1] * p1[m - 1]) - p0[m - 1]
        tmp = p0
        p0 = p1
        p1 = p2
        p2 = tmp
        acc = re if k % 2 == 0 else im
        for j in range(T):
            c = cf[k, j]
            if c != 0.0:
                for i in range(m):
                    acc[j, i] += c * p1[i]
    return re, im


def chebyshev_propagate(d: np.ndarray, e: np.ndarray, x: np.ndarray, times) -> np.ndarray:
    """exp(-i T t) x for a real symmetric tridiagonal T, real x and every t in ``times``.

    The spectrum is mapped onto [-1, 1] using its exact extreme eigenvalues and
    exp(-i T t) is expanded in Chebyshev polynomials with Bessel coefficients;
    the series is cut once the coefficients fall below 1e-18.  One recurrence
    serves all times.  Returns an array of shape (len(times), len(x)).
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    x = np.ascontiguousarray(x, dtype=float)
    m = d.size
    if m == 1:
        return np.exp(-1j * d[0] * times)[:, None] * x[None, :]
    lo = eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, 0))[0]
    hi = eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(m - 1, m - 1))[0]
    pad = 1e-10 * max(1.0, abs(lo), abs(hi))
    centre, half = 0.5 * (hi + lo), 0.5 * (hi - lo) + pad
    z = half * np.abs(times)
    zmax = float(z.max())
    K = int(zmax + 12.0 * zmax ** (1.0 / 3.0) + 40)
    while True:
        J = np.stack([_bessel_sequence(float(zj), K) for zj in z], axis=1)
        if np.abs(J[-2:]).max() <= 1e-18:
            break
        K = int(1.2 * K) + 10
    ks = np.arange(K + 1)
    # 2 J_k (-i sgn t)^k: real for even k, imaginary for odd k
    cf = 2.0 * J * np.array([1.0, -1.0, -1.0, 1.0])[ks % 4, None] * np.sign(times)[None, :] ** ks[:, None]
    cf[0] = J[0]
    re, im = _chebyshev_kernel((d - centre) / half, e / half, x, np.ascontiguousarray(cf))
    return np.exp(-1j * centre * times)[:, None] * (re + 1j * im)


def _propagate_real_or_complex(d, e, v, times) -> np.ndarray:
    scale = np.max(np.abs(v))
    pivot = v[np.argmax(np.abs(v))]
    phase = pivot / abs(pivot)
    rotated = v * np.conj(phase)
    if np.max(np.abs(rotated.imag)) <= 1e-17 * scale:
        return phase * chebyshev_propagate(d, e, rotated.real, times)
    out = chebyshev_propagate(d, e, v.real, times)
    if np.any(v.imag):
        out = out + 1j * chebyshev_propagate(d, e, v.imag, times)
    return out


def _tridiagonal_evolve(
    d: np.ndarray, e: np.ndarray, v: np.ndarray, times, atol: float, start: int = 64, growth: float = 1.2
) -> tuple[np.ndarray, int]:
    """exp(-i T t) v on the smallest leading block of T that reproduces a 20% larger one.

    Returns the (len(times), n) result and the accepted block size, which
    callers feed back as ``start`` for the next, similar block.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    n = d.size
    out = np.zeros((times.size, n), dtype=complex)
    if 2.0 * np.linalg.norm(v) <= atol:
        # a block this light is within atol of any norm-preserving answer
        return out + v[None, :], start
    nz = np.flatnonzero(v)
    m = min(n, max(start, int(nz[-1]) + 33))
    prev = _propagate_real_or_complex(d[:m], e[: m - 1], v[:m], times)
    accepted = m
    while m < n:
        bigger = min(n, int(m * growth) + 1)
        cur = _propagate_real_or_complex(d[:bigger], e[: bigger - 1], v[:bigger], times)
        diff = np.sqrt(
            np.sum(np.abs(cur[:, :m] - prev) ** 2, axis=1) + np.sum(np.abs(cur[:, m:]) ** 2, axis=1)
        ).max()
        accepted, m, prev = m, bigger, cur
        if diff <= atol:
            break
    else:
        accepted = m
    out[:, :m] = prev
    return out, accepted


def _is_real_tridiagonal(block: sp.csr_matrix) -> bool:
    coo = block.tocoo()
    if coo.nnz and np.max(np.abs(coo.data.imag)) != 0.0:
        return False
    return bool(np.all(np.abs(coo.row - coo.col) <= 1))


def _evolve_block(block: sp.csr_matrix, v: np.ndarray, times: np.ndarray, atol: float, start: int):
    size = block.shape[0]
    if _is_real_tridiagonal(block):
        diag = np.real(block.diagonal(0))
        off = np.real(block.diagonal(1))
        return _tridiagonal_evolve(diag, off, v.astype(complex), times, atol, start=start)
    if size <= DENSE_BLOCK_MAX:
        dense = block.toarray()
        if np.allclose(dense, dense.conj().T, atol=1e-14, rtol=0):
            w, vecs = eigh(dense)
            coef = vecs.conj().T @ v
            return np.stack([vecs @ (np.exp(-1j * w * t) * coef) for t in times]), start
        return np.stack([expm(-1j * t * dense) @ v for t in times]), start
    return np.stack([expm_multiply(-1j * t * block, v) for t in times]), start


def _edge_weight(psi: np.ndarray, space: ModeSpace, guard_band: int) -> float:
    probs = np.abs(psi.reshape(space.dims)) ** 2
    total = 0.0
    for axis, dim in enumerate(space.dims):
        band = min(guard_band, dim - 1)
        total += float(np.take(probs, np.arange(dim - band, dim), axis=axis).sum())
    return total


def evolve_numeric(
    H: Operator,
    psi0: StateVector,
    t: float,
    atol: float = 1e-10,
    guard_band: int = GUARD_BAND,
    leakage_budget: float = LEAKAGE_BUDGET,
) -> StateVector:
    """exp(-i H t) psi0 for a time-independent Hermitian H, to ``atol`` in norm."""
    return evolve_numeric_times(H, psi0, [t], atol, guard_band, leakage_budget)[0]


def evolve_numeric_times(
    H: Operator,
    psi0: StateVector,
    times,
    atol: float = 1e-10,
    guard_band: int = GUARD_BAND,
    leakage_budget: float = LEAKAGE_BUDGET,
) -> list[StateVector]:
    """exp(-i H t) psi0 for several times sharing one propagation per block.

    H is split into its connected blocks (the atom-number sectors of the
    optomechanical Hamiltonian).  Real tridiagonal blocks go through a
    Chebyshev expansion on an adaptively sized leading sub-block; other blocks
    are diagonalized densely or handed to a Krylov-free expm action.  Sector
    errors are orthogonal, so each occupied block gets atol / sqrt(#blocks).
    """
    if H.space != psi0.space:
        raise DimensionError("Hamiltonian and state spaces differ")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    psi = psi0.amplitudes
    out = np.zeros((times.size, psi.size), dtype=complex)
    moving = times != 0.0
    out[~moving] = psi
    if np.any(moving):
        ts = times[moving]
        mat = sp.csr_matrix(H.matrix, copy=True)
        mat.eliminate_zeros()
        pattern = sp.csr_matrix((np.ones(mat.nnz), mat.indices, mat.indptr), shape=mat.shape)
        ncomp, labels = connected_components(pattern, directed=False)
        sizes = np.bincount(labels, minlength=ncomp)
        lone = sizes[labels] == 1
        diag = np.real(mat.diagonal())
        part = np.zeros((ts.size, psi.size), dtype=complex)
        part[:, lone] = np.exp(-1j * np.outer(ts, diag[lone])) * psi[lone]
        order = np.argsort(labels, kind="stable")
        bounds = np.searchsorted(labels[order], np.arange(ncomp + 1))
        blocks = [order[bounds[c] : bounds[c + 1]] for c in np.flatnonzero(sizes > 1)]
        blocks = [idx for idx in blocks if np.any(psi[idx])]
        block_tol = atol / math.sqrt(max(1, len(blocks)))
        start = 64
        for idx in blocks:
            res, start = _evolve_block(mat[idx][:, idx], psi[idx], ts, block_tol, max(64, start))
            part[:, idx] = res
        out[moving] = part
    states = []
    base = _edge_weight(psi, H.space, guard_band)
    for row in out:
        drift = abs(np.linalg.norm(row) - np.linalg.norm(psi))
        if drift > NORM_DRIFT_TOL:
            raise PropagationError(f"norm drift {drift:.3e} exceeds {NORM_DRIFT_TOL:.0e}")
        grown = _edge_weight(row, H.space, guard_band) - base
        if grown > leakage_budget:
            raise TruncationError(
                f"evolution pushed {grown:.3e} of probability into the top {guard_band} levels; enlarge the basis"
            )
        states.append(StateVector(H.space, row, psi0.norm_leakage))
    return states


def _atom_coefficients(initial, atom_dim: int, leakage_budget: float) -> tuple[np.ndarray, float]:
    if isinstance(initial, StateVector):
        if initial.space.total_dim != atom_dim:
            raise DimensionError("initial atom state does not match the atom mode dimension")
        return initial.amplitudes.copy(), initial.norm_leakage
    if np.ndim(initial) == 0:
        amps, leak = coherent_amplitudes(complex(initial), atom_dim)
        if leak > leakage_budget:
            raise TruncationError(f"atom coherent state alpha={initial} loses {leak:.3e} beyond dim {atom_dim}")
        return amps / np.linalg.norm(amps), leak
    coeffs = np.asarray(initial, dtype=complex)
    if coeffs.size > atom_dim:
        raise DimensionError(f"{coeffs.size} atom coefficients for atom dim {atom_dim}")
    out = np.zeros(atom_dim, dtype=complex)
    out[: coeffs.size] = coeffs
    return out / np.linalg.norm(out), 0.0


def analytic_state(
    initial,
    params: SystemParams,
    tau: float,
    space: ModeSpace,
    leakage_budget: float = LEAKAGE_BUDGET,
    guard: int = 20,
) -> EvolutionResult:
    """Closed-form joint state for a vacuum cavity and the given atom state.

    ``initial`` is a coherent amplitude alpha, an array of number-basis
    coefficients, or an atom :class:`StateVector`.
    """
    _check_joint(space)
    d_atom, d_cav = space.dims
    coeffs, leak = _atom_coefficients(initial, d_atom, leakage_budget)
    lam = params.Lambda
    et = eta(tau)
    occupied = np.flatnonzero(coeffs)
    n_max = int(occupied[-1]) if occupied.size else 0
    need = 4.0 * (abs(lam) * n_max * abs(et)) ** 2 + guard
    if d_cav < need:
        raise TruncationError(f"cavity dim {d_cav} below required {math.ceil(need)} for n_max={n_max}")
    psi = np.zeros((d_atom, d_cav), dtype=complex)
    for n in occupied:
        amps, tail = coherent_amplitudes(lam * n * et, d_cav)
        phase = np.exp(1j * lam**2 * n**2 * (tau - math.sin(tau)))
        psi[n] = coeffs[n] * phase * amps
        leak += abs(coeffs[n]) ** 2 * tail
    if leak > leakage_budget:
        raise TruncationError(f"closed-form state loses {leak:.3e} to truncation (budget {leakage_budget:.1e})")
    flat = psi.reshape(-1)
    state = StateVector(space, flat / np.linalg.norm(flat), leak)
    return EvolutionResult(state=state, tau=float(tau), frame="interaction", leakage=leak)


def to_lab_frame(result: EvolutionResult, params: SystemParams) -> EvolutionResult:
    """Restore the w0 a^dag a phases dropped by the closed form."""
    if result.frame == "lab":
        return result
    space = result.state.space
    n = np.arange(space.dims[0])
    phases = np.exp(-1j * params.omega0 * n * params.time(result.tau))
    psi = result.state.tensor() * phases[:, None]
    state = StateVector(space, psi.reshape(-1), result.state.norm_leakage)
    return EvolutionResult(state=state, tau=result.tau, frame="lab", leakage=result.leakage)


def evolve(params: SystemParams, psi0: StateVector, tau: float, include_omega0: bool = False, **kw) -> EvolutionResult:
    """Numerical evolution to tau = w_m t, tagged with its frame."""
    H = build_hamiltonian(params, psi0.space, include_omega0=include_omega0)
    state = evolve_numeric(H, psi0, params.time(tau), **kw)
    return EvolutionResult(
        state=state, tau=float(tau), frame="lab" if include_omega0 else "interaction", leakage=state.norm_leakage
    )


def propagate_sector(params: SystemParams, n: int, cavity_in: np.ndarray, tau: float, atol: float = 1e-12) -> np.ndarray:
    """Numerically evolve a cavity vector inside atom sector n (w0 dropped)."""
    v = np.asarray(cavity_in, dtype=complex)
    d, e = sector_hamiltonian(params, n, v.size)
    if v.size == 1:
        return np.exp(-1j * d[0] * params.time(tau)) * v
    return _tridiagonal_evolve(d, e, v, [params.time(tau)], atol)[0][0]


def cavity_moments(state: StateVector) -> tuple[float, float]:
    """(<X>, <c^dag c>) of the cavity for a joint atom-cavity state."""
    psi = state.tensor()
    k = np.arange(psi.shape[1])
    c_mean = np.sum(psi[:, :-1].conj() * np.sqrt(k[1:]) * psi[:, 1:])
    n_mean = float(np.sum(k * np.abs(psi) ** 2))
    return float(np.real(c_mean)), n_mean


def evolution_trace(params: SystemParams, alpha: complex, taus, space: ModeSpace | None = None) -> list[dict]:
    """Per-tau diagnostics comparing numeric propagation with the closed form."""
    taus = [float(t) for t in taus]
    if space is None:
        atom_dim = policy_dim(alpha)
        space = joint_space_for(atom_dim, params.Lambda, max(max_eta(t) for t in taus) if taus else 2.0)
    initial = analytic_state(alpha, params, 0.0, space).state
    H = build_hamiltonian(params, space, include_omega0=False)
    numeric = evolve_numeric_times(H, initial, [params.time(tau) for tau in taus])
    rows = []
    for tau, num in zip(taus, numeric):
        exact = analytic_state(alpha, params, tau, space).state
        x_mean, n_mean = cavity_moments(num)
        rows.append(
            {
                "tau": tau,
                "atom_purity": reduce_mode(num, "atom").purity(),
                "cavity_X": x_mean,
                "cavity_n": n_mean,
                "overlap": float(abs(np.vdot(exact.amplitudes, num.amplitudes))),
            }
        )
    return rows
