"""Exception hierarchy. Each family maps onto one CLI exit code."""


class SmartlabError(Exception):
    exit_code = 1


class ConfigError(SmartlabError, ValueError):
    exit_code = 2


class InvalidDesignError(ConfigError):
    pass


class MissingParameterError(ConfigError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnreachableDtrError(ConfigError):
    pass


class DataError(SmartlabError, ValueError):
    exit_code = 3


class EmptyArmError(DataError):
    pass


class EmptyWeightError(DataError):
    pass


class MisalignedError(DataError):
    pass


class NumericalError(SmartlabError, ArithmeticError):
    exit_code = 4


class RankDeficientError(NumericalError):
    pass


class NonConvergenceError(NumericalError):
    pass


class InsufficientReplicatesError(NumericalError):
    pass
