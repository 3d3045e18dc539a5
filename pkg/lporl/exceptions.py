"""Errors raised by lporl.

`ValidationError` subclasses mean the input was bad and map to exit code 1 on
the command line. Everything else derived from `LporlError` is a runtime
failure and maps to exit code 2.
"""


class LporlError(Exception):
    pass


class ValidationError(LporlError):
    pass


class InvalidMDP(ValidationError):
    pass


class InvalidDistribution(InvalidMDP):
    pass


class RewardOutOfRange(InvalidMDP):
    pass


class InvalidPolicy(ValidationError):
    pass


class NotSymmetric(ValidationError):
    pass


class NonFinite(ValidationError):
    pass


class ConfigInvalid(ValidationError):
    pass


class RankDeficient(InvalidMDP):
    pass


class SingularSystem(LporlError):
    pass


class NotUnichain(LporlError):
    pass


class NoConvergence(LporlError):
    pass


class NearSingular(LporlError):
    pass


class AssumptionViolated(LporlError):
    pass


class DatasetExhausted(LporlError):
    pass


class UnsupportedPoint(LporlError):
    pass


class ExperimentError(LporlError):
    """A failure inside one harness stage, with the stage name and config echo."""

    def __init__(self, stage, cause, config_echo=None):
        self.stage = stage
        self.cause = cause
        self.config_echo = config_echo
        super().__init__("stage %s failed: %s: %s" % (
            stage, cause.__class__.__name__, cause
        ))
