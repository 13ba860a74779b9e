"""Exception hierarchy.

Numerical failures derive from :class:`NumericalError` and configuration
problems from :class:`ConfigError`; the CLI maps them to exit codes 3 and 2.
"""


class FieldLimitsError(Exception):
    pass


class NumericalError(FieldLimitsError):
    pass


class ConfigError(FieldLimitsError):
    pass


class NotSymmetric(NumericalError, ValueError):
    pass


class DimensionMismatch(NumericalError, ValueError):
    pass


class NonDivisibleSpacing(ConfigError, ValueError):
    pass


class StepTooLarge(NumericalError):
    pass


class SingularInnovation(NumericalError):
    pass


class SingularV(NumericalError):
    pass


class IllConditionedKgg(NumericalError):
    pass


class BadProbabilities(NumericalError, ValueError):
    pass


class OffGridSensorInTruthMode(NumericalError, ValueError):
    pass


class NegativeVariance(NumericalError, ValueError):
    pass


class TruncationNotAchievable(NumericalError):
    pass


class Unachievable(NumericalError):
    pass


class UnknownKey(ConfigError, KeyError):
    def __str__(self):
        # KeyError quotes its argument; keep the plain message.
        return str(self.args[0]) if self.args else ""


class InvalidValue(ConfigError, ValueError):
    pass
