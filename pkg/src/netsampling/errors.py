"""Exception hierarchy.

Every error carries the process exit code the CLI should use for it:
2 usage/parameter, 3 model or stability, 4 data inconsistency,
5 numerical failure.
"""


class NetSamplingError(Exception):
    exit_code = 5


class ParameterError(NetSamplingError, ValueError):
    exit_code = 2


class FormatError(NetSamplingError, ValueError):
    """A file could not be parsed or violates its format invariants."""

    exit_code = 4


class DimensionError(NetSamplingError, ValueError):
    exit_code = 4


class StabilityError(NetSamplingError):
    """The model instance is not Lyapunov stable at its equilibrium."""

    exit_code = 3


class NonConvergenceError(NetSamplingError):
    exit_code = 3


class DivergenceError(NetSamplingError):
    """Integration blew up; ``time`` is the first time a bad state was seen."""

    exit_code = 3

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NonDiagonalizableError(NetSamplingError):
    exit_code = 5


class InfeasibleBandError(NetSamplingError):
    """The rank condition on the sampling submatrix cannot be met."""

    exit_code = 5


class SymmetryError(NetSamplingError):
    """Synthesis produced a non-negligible imaginary part."""

    exit_code = 5


class DegenerateError(NetSamplingError, ValueError):
    exit_code = 5


class DivergentTransformError(NetSamplingError):
    """A marginally stable mode makes the Fourier integral diverge."""

    exit_code = 5


class GridError(NetSamplingError, ValueError):
    """Sample or evaluation grids are inconsistent with each other or a plan."""

    exit_code = 4
