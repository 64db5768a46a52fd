"""Motional transition moments of a harmonically trapped condensate.

The recoil plane wave exp(i dk.r) couples trap eigenstates.  Along each axis
the matrix element is that of a displacement by i*eta in the oscillator's
ladder operators, eta_i = dk_i L_i / sqrt(2) with L_i = sqrt(hbar / m w_i).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.constants import hbar, physical_constants
from scipy.special import gammaln

from .errors import DegenerateGeometryError, ResonanceError

AMU = physical_constants["atomic mass constant"][0]


@dataclass(frozen=True)
class TrapGeometry:
    omega_trap: tuple
    mass: float

    def __post_init__(self):
        w = tuple(float(x) for x in self.omega_trap)
        if len(w) != 3 or any(x <= 0 for x in w):
            raise ValueError(f"need three positive trap frequencies, got {self.omega_trap}")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        object.__setattr__(self, "omega_trap", w)

    @property
    def lengths(self) -> np.ndarray:
        """Oscillator lengths sqrt(hbar / (m w_i)) in metres."""
        return np.sqrt(hbar / (self.mass * np.asarray(self.omega_trap)))


@dataclass(frozen=True)
class OpticalParams:
    rabi_pump: complex
    rabi_vacuum: complex
    detuning_atom: float
    k_pump: tuple
    k_cavity: tuple

    def __post_init__(self):
        if self.detuning_atom == 0:
            raise ValueError("atom-field detuning must be nonzero")
        kp = tuple(float(x) for x in self.k_pump)
        kc = tuple(float(x) for x in self.k_cavity)
        if len(kp) != 3 or len(kc) != 3:
            raise ValueError("wave vectors need three components")
        if np.linalg.norm(kp) == 0 or np.linalg.norm(kc) == 0:
            raise ValueError("wave vectors must be nonzero")
        object.__setattr__(self, "k_pump", kp)
        object.__setattr__(self, "k_cavity", kc)

    @property
    def prefactor(self) -> complex:
        """Omega_p g_c^* / (2 Delta) in rad/s."""
        return complex(self.rabi_pump) * np.conj(complex(self.rabi_vacuum)) / (2.0 * self.detuning_atom)

    @property
    def delta_k(self) -> np.ndarray:
        return np.asarray(self.k_pump) - np.asarray(self.k_cavity)


@dataclass(frozen=True)
class CouplingResult:
    G: complex
    delta_k: np.ndarray
    lamb_dicke: np.ndarray
    validity_ratio: float
    Lambda: complex


def wave_vectors_from_angle(wavelength: float, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Pump along z and cavity axis tilted by ``theta`` in the x-z plane, |k| = 2 pi / lambda."""
    k = 2.0 * math.pi / wavelength
    k_pump = np.array([0.0, 0.0, k])
    k_cavity = np.array([k * math.sin(theta), 0.0, k * math.cos(theta)])
    return k_pump, k_cavity


def laguerre(n: int, a: float, x: float) -> float:
    """Generalized Laguerre polynomial L_n^(a)(x) by upward recurrence."""
    if n == 0:
        return 1.0
    prev, cur = 1.0, 1.0 + a - x
    for k in range(1, n):
        prev, cur = cur, ((2 * k + 1 + a - x) * cur - (k + a) * prev) / (k + 1)
    return cur


def motional_matrix_element(n: int, m: int, eta: float) -> complex:
    """<n| exp(i eta (b + b^dag)) |m> for a 1-D oscillator.

    Closed form e^{-eta^2/2} (i eta)^{|n-m|} sqrt(n_<! / n_>!) L_{n_<}^{|n-m|}(eta^2).
    The element is symmetric in (n, m).
    """
    if n < 0 or m < 0:
        raise ValueError("oscillator indices must be >= 0")
    lo, hi = min(n, m), max(n, m)
    k = hi - lo
    if k and eta == 0.0:
        return 0j
    x = eta * eta
    mag = math.exp(-0.5 * x + 0.5 * (gammaln(lo + 1) - gammaln(hi + 1)))
    if k:
        mag *= abs(eta) ** k
    phase = (1j * math.copysign(1.0, eta)) ** k
    return complex(phase * mag * laguerre(lo, k, x))


def lamb_dicke_parameters(delta_k, trap: TrapGeometry) -> np.ndarray:
    return np.abs(_signed_eta(delta_k, trap))


def _signed_eta(delta_k, trap: TrapGeometry) -> np.ndarray:
    dk = np.asarray(delta_k, dtype=float)
    if dk.shape != (3,):
        raise ValueError("delta_k needs three components")
    return dk * trap.lengths / math.sqrt(2.0)


def transition_moment(n, m, delta_k, trap: TrapGeometry, optics: OpticalParams) -> complex:
    """G_{n,m} for triple indices ``n`` and ``m`` (rad/s)."""
    if any(i < 0 for i in tuple(n) + tuple(m)):
        raise ValueError("trap indices must be >= 0")
    eta = _signed_eta(delta_k, trap)
    value = optics.prefactor
    for ni, mi, ei in zip(n, m, eta):
        value *= motional_matrix_element(int(ni), int(mi), float(ei))
    return complex(value)


def single_mode_validity(delta_k, trap: TrapGeometry, optics: OpticalParams, n_max: int) -> float:
    """max |G_{n,0}| / |G_{0,0}| over excited states with 0 < n_x + n_y + n_z <= n_max."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    g00 = transition_moment((0, 0, 0), (0, 0, 0), delta_k, trap, optics)
    if g00 == 0:
        raise DegenerateGeometryError("G_{0,0} vanishes; the single-mode reduction is undefined")
    eta = _signed_eta(delta_k, trap)
    ground = [motional_matrix_element(0, 0, float(e)) for e in eta]
    best = 0.0
    for idx in itertools.product(range(n_max + 1), repeat=3):
        if 0 < sum(idx) <= n_max:
            ratio = 1.0
            for i, e, g in zip(idx, eta, ground):
                ratio *= abs(motional_matrix_element(i, 0, float(e)) / g)
            best = max(best, ratio)
    return best


def effective_coupling(
    optics: OpticalParams, delta_k, trap: TrapGeometry, omega_m: float, n_max: int = 3
) -> CouplingResult:
    """G = G_{0,0}, Lambda = -G / omega_m, plus Lamb-Dicke diagnostics."""
    if omega_m == 0:
        raise ResonanceError("resonance: Lambda undefined for omega_m = 0")
    dk = np.asarray(delta_k, dtype=float)
    G = transition_moment((0, 0, 0), (0, 0, 0), dk, trap, optics)
    return CouplingResult(
        G=G,
        delta_k=dk,
        lamb_dicke=lamb_dicke_parameters(dk, trap),
        validity_ratio=single_mode_validity(dk, trap, optics, n_max),
        Lambda=-G / omega_m,
    )


def coupling_map(trap: TrapGeometry, optics: OpticalParams, axis: int, dk_L_values, m_max: int) -> list[dict]:
    """Rows of a recoil sweep along one trap axis; dk is given in units of 1/L_axis.

    ``rel_0_m`` is |G_{0,m}| / |G_{0,0}| at the same recoil, ``norm_0_m`` is
    |G_{0,m}| normalized by the recoil-free coupling |Omega_p g_c / 2 Delta|.
    """
    L = trap.lengths[axis]
    scale = abs(optics.prefactor)
    rows = []
    for x in dk_L_values:
        dk = np.zeros(3)
        dk[axis] = x / L
        g = [transition_moment((0, 0, 0), _axis_index(axis, m), dk, trap, optics) for m in range(m_max + 1)]
        row = {"dk_L": float(x), "eta": float(abs(x) / math.sqrt(2.0)), "G00_abs_rad_s": abs(g[0]),
               "G00_abs_hz": abs(g[0]) / (2 * math.pi)}
        for m in range(m_max + 1):
            row[f"norm_0_{m}"] = abs(g[m]) / scale if scale else 0.0
        for m in range(1, m_max + 1):
            row[f"rel_0_{m}"] = abs(g[m]) / abs(g[0]) if g[0] else math.inf
        rows.append(row)
    return rows


def _axis_index(axis: int, m: int) -> tuple:
    idx = [0, 0, 0]
    idx[axis] = m
    return tuple(idx)


def mass_from_amu(amu: float) -> float:
    return amu * AMU
