"""Exception types raised across the package."""


class ContractViolation(ValueError):
    """An argument broke an operation's precondition."""


class OutOfEpisodeError(IndexError):
    """A step index fell outside ``1..H``."""


class InfeasibleSpecError(ValueError):
    """Some reachable initial state admits no reset-free policy."""


class GenerationFailure(RuntimeError):
    """Random environment generation exhausted its attempt budget."""


class SearchBoundError(RuntimeError):
    """The multiplier search did not reach the plateau within ``y_max``."""


class InternalInconsistency(RuntimeError):
    pass


class NumericError(FloatingPointError):
    pass


class ConfigError(ValueError):
    """Malformed or invalid run configuration."""
