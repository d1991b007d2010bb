from __future__ import annotations


class ShockLabError(Exception):
    """Base class; ``exit_code`` is what the CLI returns when this escapes a command."""

    exit_code = 3


class ConfigError(ShockLabError, ValueError):
    exit_code = 2


class NumericalError(ShockLabError, RuntimeError):
    exit_code = 3


# systems
class NoAdmissibleShock(NumericalError):
    pass


class ComplexOrRepeatedEigenvalues(NumericalError):
    pass


class ZeroShockFrameSpeed(NumericalError):
    pass


# profile
class NoConnection(NumericalError):
    pass


class DomainTooSmall(NumericalError):
    pass


class TailAtNoiseFloor(NumericalError):
    pass


class ShiftOutOfRange(NumericalError, ValueError):
    pass


# diffusion waves
class NonpositiveTime(NumericalError, ValueError):
    pass


class NonpositiveBeta(NumericalError, ValueError):
    pass


# evolution
class CflViolation(NumericalError):
    pass


class BlowUp(NumericalError):
    pass


# decomposition
class DegenerateBasis(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class MeshMismatch(ConfigError):
    pass


# verification
class NormAtNoiseFloor(NumericalError):
    pass


class EnvelopeVanishes(NumericalError):
    pass


# kernel quadrature
class QuadratureNonconvergent(NumericalError):
    pass
