"""Exception hierarchy.

Numerical budget problems (truncation, propagation, conditioning) share a
base class so callers such as the CLI can map them to one exit status.
"""


class OptomechError(Exception):
    """Base class for all package errors."""


class DimensionError(OptomechError, ValueError):
    """Index or shape incompatible with a truncated basis."""


class LabelError(OptomechError, KeyError):
    """Unknown or colliding mode label."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class NumericalBudgetError(OptomechError):
    """A numerical tolerance or truncation budget was exceeded."""


class TruncationError(NumericalBudgetError):
    """Probability lost to basis truncation exceeds the allowed budget."""


class PropagationError(NumericalBudgetError):
    """Time evolution failed its norm or accuracy check."""


class ConditioningError(NumericalBudgetError):
    """An estimator cannot be evaluated reliably in double precision."""


class ResonanceError(OptomechError, ValueError):
    """omega_m = 0: the dimensionless coupling Lambda is undefined."""


class DegenerateGeometryError(OptomechError, ValueError):
    """The ground-state transition moment vanishes."""


class ProtocolConstraintError(OptomechError, ValueError):
    """A measurement protocol's tuning condition is violated."""


class DegenerateContrastError(ProtocolConstraintError):
    """rho1 == rho0: the single-photon parity signal has no contrast."""


class UndefinedConditionalError(OptomechError, ValueError):
    """Conditioning on an outcome of (numerically) zero probability density."""


class ConfigValidationError(OptomechError, ValueError):
    """Scenario configuration failed validation; carries every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class CoverageError(OptomechError, ValueError):
    """A sampling grid misses too much of the probability mass."""
