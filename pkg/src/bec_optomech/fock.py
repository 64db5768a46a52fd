"""Truncated Fock-space linear algebra.

States, density operators and mode operators live on a :class:`ModeSpace`,
an ordered list of truncated modes.  Joint spaces are Kronecker ordered with
the leftmost label varying slowest; by convention the atom mode comes first.

Quadratures follow ``X = (c + c^dag) / 2`` throughout, so the vacuum has
``<X^2> = 1/4``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal, sqrtm
from scipy.special import gammaln
from scipy.stats import poisson

from .errors import DimensionError, LabelError, TruncationError

LEAKAGE_BUDGET = 1e-10
UNITARITY_TOL = 1e-9
GUARD_BAND = 10
HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-10


def policy_dim(max_amplitude: complex | float) -> int:
    """Smallest dimension allowed for a mode whose largest coherent amplitude is given."""
    return int(math.ceil(4.0 * abs(max_amplitude) ** 2 + 20.0))


def _readonly(array, dtype=complex) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ModeSpace:
    """Ordered truncation metadata for one or more bosonic modes."""

    dims: tuple
    labels: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        labels = tuple(str(lab) for lab in self.labels)
        if not dims or len(dims) != len(labels):
            raise DimensionError(f"need one label per mode, got dims={dims} labels={labels}")
        if any(d < 2 for d in dims):
            raise DimensionError(f"every mode needs dim >= 2, got {dims}")
        if len(set(labels)) != len(labels):
            raise LabelError(f"mode labels must be unique, got {labels}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def single(cls, label: str, dim: int) -> "ModeSpace":
        return cls((dim,), (label,))

    @classmethod
    def joint(cls, atom_dim: int, cavity_dim: int) -> "ModeSpace":
        return cls((atom_dim, cavity_dim), ("atom", "cavity"))

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def is_single(self) -> bool:
        return len(self.dims) == 1

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LabelError(f"unknown mode {label!r}; space has {self.labels}") from None

    def dim(self, label: str) -> int:
        return self.dims[self.index(label)]

    def sub(self, label: str) -> "ModeSpace":
        return ModeSpace.single(label, self.dim(label))


@dataclass(frozen=True, eq=False)
class StateVector:
    """Pure state amplitudes over a truncated number basis.

    ``norm_leakage`` is the probability that was cut off by truncation when
    the state was built; it is carried along instead of being dropped.
    """

    space: ModeSpace
    amplitudes: np.ndarray
    norm_leakage: float = 0.0

    def __post_init__(self):
        amps = _readonly(self.amplitudes).reshape(-1)
        if amps.size != self.space.total_dim:
            raise DimensionError(
                f"{amps.size} amplitudes for a space of total dimension {self.space.total_dim}"
            )
        if not self.norm_leakage >= 0.0:
            raise ValueError("norm_leakage must be >= 0")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "norm_leakage", float(self.norm_leakage))

    def __len__(self):
        return self.amplitudes.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        nrm = self.norm()
        if nrm == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.space, self.amplitudes / nrm, self.norm_leakage)

    def tensor(self) -> np.ndarray:
        """Amplitudes reshaped to one axis per mode."""
        return self.amplitudes.reshape(self.space.dims)

    def density(self) -> "DensityOperator":
        return DensityOperator(self.space, np.outer(self.amplitudes, self.amplitudes.conj()))

    def expect(self, op: "Operator") -> complex:
        return complex(np.vdot(self.amplitudes, op.matrix @ self.amplitudes))

    def populations(self, mode: str | None = None) -> np.ndarray:
        """Number distribution of ``mode`` (or of the whole basis)."""
        probs = np.abs(self.amplitudes) ** 2
        if mode is None:
            return probs
        axis = self.space.index(mode)
        others = tuple(i for i in range(len(self.space.dims)) if i != axis)
        return probs.reshape(self.space.dims).sum(axis=others)


@dataclass(frozen=True, eq=False)
class DensityOperator:
    space: ModeSpace
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        n = self.space.total_dim
        if mat.shape != (n, n):
            raise DimensionError(f"density matrix shape {mat.shape} does not match dimension {n}")
        skew = np.max(np.abs(mat - mat.conj().T)) if n else 0.0
        if skew > HERMITIAN_TOL * max(1.0, float(np.max(np.abs(mat)))):
            raise ValueError(f"density matrix not Hermitian (max |rho - rho^dag| = {skew:.3e})")
        object.__setattr__(self, "matrix", _readonly(0.5 * (mat + mat.conj().T)))

    @classmethod
    def mixture(cls, weights: Sequence[float], states: Sequence[StateVector]) -> "DensityOperator":
        space = states[0].space
        mat = np.zeros((space.total_dim, space.total_dim), dtype=complex)
        for w, s in zip(weights, states):
            if s.space != space:
                raise DimensionError("mixture components live on different spaces")
            mat += w * np.outer(s.amplitudes, s.amplitudes.conj())
        return cls(space, mat)

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix, self.matrix)))

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.matrix)).copy()

    def normalized(self) -> "DensityOperator":
        return DensityOperator(self.space, self.matrix / self.trace)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def is_physical(self, tol: float = TRACE_TOL) -> bool:
        return abs(self.trace - 1.0) <= tol and self.eigenvalues().min() >= -tol

    def expect(self, op: "Operator") -> complex:
        return complex(np.trace(op.dense() @ self.matrix))


MatrixLike = Union[np.ndarray, sp.spmatrix]


@dataclass(frozen=True, eq=False)
class Operator:
    """Linear operator on a :class:`ModeSpace`; the matrix may be dense or sparse."""

    space: ModeSpace
    matrix: MatrixLike
    hermitian_hint: bool = False

    def __post_init__(self):
        mat = self.matrix
        if sp.issparse(mat):
            mat = sp.csr_matrix(mat, dtype=complex)
        else:
            mat = _readonly(mat)
        n = self.space.total_dim
        if mat.shape != (n, n):
            raise DimensionError(f"operator shape {mat.shape} does not match dimension {n}")
        if self.hermitian_hint:
            diff = mat - mat.conj().T
            skew = abs(diff).max() if sp.issparse(diff) else np.max(np.abs(diff))
            if skew > HERMITIAN_TOL * max(1.0, abs(mat).max()):
                raise ValueError(f"operator flagged Hermitian but max |H - H^dag| = {skew:.3e}")
        object.__setattr__(self, "matrix", mat)

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def dag(self) -> "Operator":
        return Operator(self.space, self.matrix.conj().T, self.hermitian_hint)

    def __matmul__(self, other: "Operator") -> "Operator":
        if other.space != self.space:
            raise DimensionError("operator spaces differ")
        return Operator(self.space, self.matrix @ other.matrix)

    def apply(self, state: StateVector) -> StateVector:
        if state.space != self.space:
            raise DimensionError("operator and state spaces differ")
        return StateVector(self.space, self.matrix @ state.amplitudes, state.norm_leakage)


def _embed(space: ModeSpace, mode: str, local: MatrixLike) -> sp.csr_matrix:
    """Kronecker-embed a single-mode matrix, identity on the other modes."""
    axis = space.index(mode)
    out = sp.identity(1, dtype=complex, format="csr")
    for i, d in enumerate(space.dims):
        factor = sp.csr_matrix(local) if i == axis else sp.identity(d, dtype=complex, format="csr")
        out = sp.kron(out, factor, format="csr")
    return out


def _require_single(space: ModeSpace, mode: str) -> int:
    if not space.is_single:
        raise DimensionError(f"expected a single-mode space, got labels {space.labels}")
    return space.dim(mode)


def number_state(space: ModeSpace, mode: str, n: int) -> StateVector:
    dim = _require_single(space, mode)
    if not 0 <= n < dim:
        raise DimensionError(f"number state |{n}> outside truncation dim {dim}")
    amps = np.zeros(dim, dtype=complex)
    amps[n] = 1.0
    return StateVector(space, amps)


def coherent_amplitudes(alpha: complex, dim: int) -> tuple[np.ndarray, float]:
    """Unnormalized coherent-state amplitudes for n < dim and the Poisson tail beyond.

    Evaluated in log form so large amplitudes and dimensions do not overflow.
    """
    n = np.arange(dim)
    amps = np.zeros(dim, dtype=complex)
    mag = abs(alpha)
    if mag == 0.0:
        amps[0] = 1.0
        return amps, 0.0
    log_mag = -0.5 * mag**2 + n * math.log(mag) - 0.5 * gammaln(n + 1)
    amps[:] = np.exp(log_mag + 1j * n * np.angle(alpha))
    return amps, float(poisson.sf(dim - 1, mag**2))


def coherent_state(
    space: ModeSpace, mode: str, alpha: complex, leakage_budget: float = LEAKAGE_BUDGET
) -> StateVector:
    dim = _require_single(space, mode)
    amps, leak = coherent_amplitudes(alpha, dim)
    if leak > leakage_budget:
        raise TruncationError(
            f"coherent state alpha={alpha} loses {leak:.3e} beyond dim {dim} "
            f"(budget {leakage_budget:.1e})"
        )
    return StateVector(space, amps / np.linalg.norm(amps), leak)


def _ladder(dim: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, dim, dtype=float)), 1, shape=(dim, dim), format="csr", dtype=complex)


def mode_annihilation(space: ModeSpace, mode: str) -> Operator:
    return Operator(space, _embed(space, mode, _ladder(space.dim(mode))))


def number_operator(space: ModeSpace, mode: str) -> Operator:
    n = sp.diags(np.arange(space.dim(mode), dtype=float), 0, format="csr", dtype=complex)
    return Operator(space, _embed(space, mode, n), hermitian_hint=True)


def quadrature_operator(space: ModeSpace, mode: str) -> Operator:
    a = _ladder(space.dim(mode))
    return Operator(space, _embed(space, mode, 0.5 * (a + a.T)), hermitian_hint=True)


def displacement_matrix(dim: int, beta: complex) -> np.ndarray:
    """exp(beta a^dag - beta* a) with the generator truncated to ``dim`` levels.

    The generator is anti-Hermitian, so the result is exactly unitary and
    D(beta) D(-beta) = 1 in the truncated space.
    """
    beta = complex(beta)
    if beta == 0:
        return np.eye(dim, dtype=complex)
    # beta a^dag - beta* a = |beta| W i(a + a^dag) W^dag with W = diag(e^{i n (phi - pi/2)})
    n = np.arange(dim)
    lam, vec = eigh_tridiagonal(np.zeros(dim), np.sqrt(n[1:].astype(float)))
    w = np.exp(1j * n * (np.angle(beta) - 0.5 * np.pi))
    left = (w[:, None] * vec) * np.exp(1j * abs(beta) * lam)[None, :]
    return left @ (vec.T * np.conj(w)[None, :])


def displacement_operator(space: ModeSpace, mode: str, beta: complex) -> Operator:
    dim = space.dim(mode)
    if dim < 4.0 * abs(beta) ** 2:
        raise TruncationError(
            f"displacement |beta|^2={abs(beta) ** 2:.3g} needs dim >= {4 * abs(beta) ** 2:.3g}, have {dim}"
        )
    local = displacement_matrix(dim, beta)
    if space.is_single:
        return Operator(space, local)
    return Operator(space, _embed(space, mode, local))


def unitarity_defect(op: Operator, guard_band: int = GUARD_BAND) -> float:
    """max |U^dag U - 1| restricted to occupations below dim - guard_band (single mode)."""
    u = op.dense()
    keep = max(1, u.shape[0] - guard_band)
    prod = u.conj().T @ u
    return float(np.max(np.abs(prod[:keep, :keep] - np.eye(keep))))


def join_modes(a: StateVector, b: StateVector) -> StateVector:
    """Tensor product; an ``atom`` mode is always placed leftmost."""
    if set(a.space.labels) & set(b.space.labels):
        raise LabelError(f"label collision between {a.space.labels} and {b.space.labels}")
    if "atom" in b.space.labels and "atom" not in a.space.labels:
        a, b = b, a
    space = ModeSpace(a.space.dims + b.space.dims, a.space.labels + b.space.labels)
    return StateVector(
        space, np.kron(a.amplitudes, b.amplitudes), a.norm_leakage + b.norm_leakage
    )


def _keep_first(tensor: np.ndarray, axis: int, dim: int) -> np.ndarray:
    return np.moveaxis(tensor, axis, 0).reshape(dim, -1)


def reduce_mode(rho: DensityOperator | StateVector, keep: str) -> DensityOperator:
    """Partial trace over every mode except ``keep``."""
    space = rho.space
    axis = space.index(keep)
    dk = space.dims[axis]
    if isinstance(rho, StateVector):
        m = _keep_first(rho.tensor(), axis, dk)
        red = m @ m.conj().T
    else:
        nmodes = len(space.dims)
        t = rho.matrix.reshape(space.dims + space.dims)
        letters = "abcdefghijklmnopqrstuvwxyz"
        row = list(letters[:nmodes])
        col = list(letters[nmodes : 2 * nmodes])
        for i in range(nmodes):
            if i != axis:
                col[i] = row[i]
        red = np.einsum("".join(row) + "".join(col) + "->" + row[axis] + col[axis], t)
    return DensityOperator(space.sub(keep), red)


def reduced_overlap(state: StateVector, keep: str, target: StateVector) -> float:
    """<phi| Tr_others(|psi><psi|) |phi> without forming the reduced matrix."""
    axis = state.space.index(keep)
    dk = state.space.dims[axis]
    if target.amplitudes.size != dk:
        raise DimensionError("target dimension does not match the kept mode")
    v = target.amplitudes.conj() @ _keep_first(state.tensor(), axis, dk)
    return float(np.real(np.vdot(v, v)))


def quadrature_wavefunctions(n_max: int, X) -> np.ndarray:
    """<X|n> for n = 0..n_max, shape (n_max + 1, len(X)).

    psi_n(X) = (2/pi)^(1/4) (2^n n!)^(-1/2) H_n(sqrt(2) X) exp(-X^2) from the
    normalized three-term recurrence.  A per-point log scale keeps large |X|
    from underflowing the seed before the recurrence lifts it.
    """
    x = np.atleast_1d(np.asarray(X, dtype=float))
    out = np.empty((n_max + 1, x.size))
    big = 1e150
    log_scale = 0.25 * math.log(2.0 / math.pi) - x**2
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    out[0] = np.exp(log_scale)
    for n in range(n_max):
        nxt = (2.0 * x / math.sqrt(n + 1)) * cur - math.sqrt(n / (n + 1)) * prev
        prev, cur = cur, nxt
        over = np.abs(cur) > big
        if np.any(over):
            prev = np.where(over, prev / big, prev)
            cur = np.where(over, cur / big, cur)
            log_scale = np.where(over, log_scale + math.log(big), log_scale)
        with np.errstate(under="ignore"):
            out[n + 1] = cur * np.exp(log_scale)
    return out


def quadrature_wavefunction(n: int, X):
    """<X|n> for a single number state; scalar in, scalar out."""
    if n < 0:
        raise DimensionError("n must be >= 0")
    vals = quadrature_wavefunctions(n, X)[n]
    return float(vals[0]) if np.ndim(X) == 0 else vals


def quadrature_density(state: StateVector | DensityOperator, X) -> np.ndarray:
    """Probability density of the X quadrature for a single-mode state."""
    dim = state.space.total_dim
    if not state.space.is_single:
        raise DimensionError("quadrature_density needs a single-mode state")
    psi = quadrature_wavefunctions(dim - 1, X)
    if isinstance(state, StateVector):
        return np.abs(state.amplitudes @ psi) ** 2
    return np.real(np.einsum("ix,ij,jx->x", psi, state.matrix, psi))


def parity_expectation(rho: DensityOperator | StateVector) -> float:
    if not rho.space.is_single:
        raise DimensionError("parity_expectation needs a single-mode state")
    pops = rho.populations()
    signs = np.where(np.arange(pops.size) % 2 == 0, 1.0, -1.0)
    return float(signs @ pops)


def fidelity(a: StateVector | DensityOperator, b: StateVector | DensityOperator) -> float:
    """State fidelity; |<a|b>|^2 for pure states, Uhlmann's form for two mixed states."""
    if a.space != b.space:
        raise DimensionError(f"fidelity between spaces {a.space} and {b.space}")
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)
    if isinstance(a, DensityOperator) and isinstance(b, StateVector):
        a, b = b, a
    if isinstance(a, StateVector):
        psi = a.amplitudes
        return float(np.real(np.vdot(psi, b.matrix @ psi)))
    root = sqrtm(a.matrix)
    return float(np.real(np.trace(sqrtm(root @ b.matrix @ root))) ** 2)


def random_density(dim: int, rank: int | None = None, seed: int = 0, label: str = "atom") -> DensityOperator:
    """Random mixed state from a Ginibre ensemble (reproducible through ``seed``)."""
    rng = np.random.default_rng(seed)
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return DensityOperator(ModeSpace.single(label, dim), rho / np.trace(rho).real)
