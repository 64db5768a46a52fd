"""Finite-shot emulation of the readout protocols.

Random streams come from numpy's PCG64 seeded through SeedSequence with the
stream index as spawn key, so (seed, stream) fixes every draw.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass

import numpy as np

from .errors import CoverageError, DegenerateContrastError, NumericalBudgetError
from .fock import LEAKAGE_BUDGET, DensityOperator, StateVector, quadrature_density
from .protocols import (
    MeasurementRecord,
    parity_readout,
    photon_number_distribution,
    solve_counting_constraint,
    solve_parity_constraint,
)

DEFAULT_GRID_STEP = 1e-3
COVERAGE_MIN = 1.0 - 1e-6
BATCH_SHOTS = 1 << 20


@dataclass(frozen=True)
class ShotConfig:
    shots: int
    seed: int = 0
    binning: float | None = None

    def __post_init__(self):
        if int(self.shots) != self.shots or self.shots < 1:
            raise ValueError("shots must be a positive integer")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.binning is not None and not self.binning > 0:
            raise ValueError("binning must be positive")


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    std_error: float
    shots: int


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(stream),))))


def _batches(shots: int):
    full, rest = divmod(shots, BATCH_SHOTS)
    return [BATCH_SHOTS] * full + ([rest] if rest else [])


def _probabilities(record) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(record, MeasurementRecord):
        if record.kind != "photon_number":
            raise ValueError("photon sampling needs a photon_number record")
        values, p = record.values, record.weights
    else:
        p = np.asarray(record, dtype=float)
        values = np.arange(p.size)
    p = np.clip(p, 0.0, None)
    return values, p / p.sum()


def sample_photon_numbers(record, cfg: ShotConfig) -> np.ndarray:
    """Counts per outcome for ``cfg.shots`` draws; batches use streams 0, 1, ... in order."""
    _, p = _probabilities(record)
    counts = np.zeros(p.size, dtype=np.int64)
    for i, n in enumerate(_batches(cfg.shots)):
        counts += make_rng(cfg.seed, i).multinomial(n, p)
    return counts


def sample_quadrature(source, X_range, cfg: ShotConfig) -> np.ndarray:
    """Inverse-CDF draws of X from a state or a callable density on [lo, hi]."""
    lo, hi = map(float, X_range)
    if not hi > lo:
        raise ValueError("X_range must have hi > lo")
    step = min(cfg.binning or DEFAULT_GRID_STEP, DEFAULT_GRID_STEP)
    grid = np.linspace(lo, hi, int(math.ceil((hi - lo) / step)) + 1)
    if isinstance(source, (StateVector, DensityOperator)):
        dens = quadrature_density(source, grid)
    elif callable(source):
        dens = np.asarray(source(grid), dtype=float)
    else:
        raise TypeError("source must be a state or a density callable")
    cell = 0.5 * (dens[1:] + dens[:-1]) * np.diff(grid)
    mass = cell.sum()
    if mass < COVERAGE_MIN:
        raise CoverageError(f"X range [{lo}, {hi}] holds only {mass:.9f} of the distribution")
    cdf = np.concatenate([[0.0], np.cumsum(cell)]) / mass
    out = []
    for i, n in enumerate(_batches(cfg.shots)):
        u = make_rng(cfg.seed, i).random(n)
        out.append(np.interp(u, cdf, grid))
    return np.concatenate(out)


def _draw_outcomes(p: np.ndarray, cfg: ShotConfig) -> np.ndarray:
    outs = []
    for i, n in enumerate(_batches(cfg.shots)):
        outs.append(make_rng(cfg.seed, i).choice(p.size, size=n, p=p))
    return np.concatenate(outs)


# Re (1+i)^r for r = 0..7; (1+i)^8 = 16
_RE_UNIT = (1, 1, 0, -2, -4, -4, 0, 8)


def _re_one_plus_i(n: int) -> int:
    q, r = divmod(int(n), 8)
    return _RE_UNIT[r] * 16**q


def _counting_moments(n: np.ndarray) -> tuple[float, float]:
    """Sample mean and standard deviation of Re (1+i)^n, accumulated exactly."""
    values, counts = np.unique(n, return_counts=True)
    N = int(counts.sum())
    s1 = s2 = 0
    for v, c in zip(values.tolist(), counts.tolist()):
        w = _re_one_plus_i(v)
        s1 += c * w
        s2 += c * w * w
    mean = Fraction(s1, N)
    var = Fraction(0)
    if N > 1:
        var = (Fraction(s2) - Fraction(s1 * s1, N)) / (N - 1)
    try:
        return float(mean), math.sqrt(float(var))
    except OverflowError:
        raise NumericalBudgetError(
            f"photon numbers up to {int(values[-1])} give (1+i)^n weights beyond double range"
        ) from None


def estimate_wigner_finite_shots(
    rho_a,
    beta: complex,
    protocol: str,
    cfg: ShotConfig,
    Lambda: float | None = None,
    tau: float | None = None,
    rho0: float = 0.3,
    rho1: float = 0.7,
    cavity_model: str = "blockade",
    leakage_budget: float = LEAKAGE_BUDGET,
) -> EstimateWithError:
    """W(beta) from ``cfg.shots`` simulated photon detections."""
    if protocol == "parity":
        if rho1 == rho0:
            raise DegenerateContrastError("rho1 == rho0 leaves no single-photon contrast")
        Lambda, tau, _ = solve_parity_constraint(Lambda, tau)
        p0, p1 = parity_readout(rho_a, -beta, Lambda, tau, rho0, rho1, cavity_model, leakage_budget)
        probs = np.array([p0, p1, max(0.0, 1.0 - p0 - p1)])
        counts = sample_photon_numbers(probs, cfg)
        f0, f1 = counts[0] / cfg.shots, counts[1] / cfg.shots
        scale = 2.0 / (math.pi * (rho1 - rho0))
        var = (f0 + f1 - (f1 - f0) ** 2) / cfg.shots
        return EstimateWithError(float(scale * (f1 - f0)), abs(scale) * math.sqrt(max(var, 0.0)), cfg.shots)
    if protocol == "counting":
        Lambda, tau, _ = solve_counting_constraint(Lambda, tau)
        rec = photon_number_distribution(rho_a, -beta, Lambda, tau, leakage_budget=leakage_budget)
        _, p = _probabilities(rec)
        n = _draw_outcomes(p, cfg)
        mean, sd = _counting_moments(n)
        return EstimateWithError(2.0 / math.pi * mean, 2.0 / math.pi * sd / math.sqrt(cfg.shots), cfg.shots)
    raise ValueError(f"unknown protocol {protocol!r} (use 'parity' or 'counting')")


def shot_noise_slope(shots, std_errors) -> float:
    """Least-squares slope of log(std_error) against log(shots)."""
    return float(np.polyfit(np.log(np.asarray(shots, float)), np.log(np.asarray(std_errors, float)), 1)[0])
