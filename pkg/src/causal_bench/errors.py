"""Exception types shared across the package."""


class CausalBenchError(Exception):
    pass


class ConfigError(CausalBenchError, ValueError):
    pass


class UnknownRole(CausalBenchError, KeyError):
    pass


class Degenerate(CausalBenchError, ValueError):
    """Treatment vector has a single value."""


class SingularDesign(CausalBenchError, ValueError):
    pass


class ZeroGroup(CausalBenchError, ValueError):
    """A treatment arm has no samples or zero total weight."""


class TooFewSamples(CausalBenchError, ValueError):
    pass


class EmptyArm(CausalBenchError, ValueError):
    pass


class NoMatches(CausalBenchError, ValueError):
    pass


class SchemaMismatch(CausalBenchError, ValueError):
    pass


class NonFinite(CausalBenchError, FloatingPointError):
    pass


class LengthMismatch(CausalBenchError, ValueError):
    pass


class MissingPotentialOutcomes(CausalBenchError, ValueError):
    pass
