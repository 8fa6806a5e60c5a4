"""Exception and warning types raised across the package."""


class MetaseirError(Exception):
    """Base class for all domain errors."""


class ParseError(MetaseirError):
    pass


class DuplicateRegion(MetaseirError):
    pass


class NonpositivePopulation(MetaseirError):
    pass


class InvalidHierarchy(MetaseirError):
    pass


class UnknownRegion(MetaseirError):
    pass


class NegativeVolume(MetaseirError):
    pass


class NegativeCount(MetaseirError):
    pass


class DateOutOfCoverage(MetaseirError):
    pass


class InsufficientLookahead(MetaseirError):
    pass


class NonpositivePrevalence(MetaseirError):
    pass


class NegativeSusceptible(MetaseirError):
    pass


class NonConvergence(MetaseirError):
    pass


class DegenerateDesign(MetaseirError):
    pass


class UndefinedDerivedParams(MetaseirError):
    pass


class MismatchedData(MetaseirError):
    pass


class MissingEstimates(MetaseirError):
    pass


class MismatchedRegions(MetaseirError):
    pass


class DegenerateRanks(MetaseirError):
    pass


class InsufficientOverlap(MetaseirError):
    pass


class MismatchedDates(MetaseirError):
    pass


class ConfigError(MetaseirError):
    pass


class DataWarning(UserWarning):
    """Recoverable oddity in input data or a numerical clamp."""


class InvalidTestedFraction(MetaseirError):
    pass
