"""Exception types raised across the package."""


class DeceptGameError(Exception):
    """Base class for all package errors."""


class ModelError(DeceptGameError):
    """A model violates its structural invariants."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class IncompleteStrategyError(DeceptGameError):
    """A strategy has no entry for a state or observation that is reachable."""

    def __init__(self, what):
        super().__init__(f"incomplete strategy: no entry for {what}")
        self.what = what


class StrategyError(DeceptGameError):
    """A strategy is malformed or does not fit the model it is used with."""


class FixedPointError(DeceptGameError):
    """Value iteration hit its sweep cap before reaching the residual tolerance."""

    def __init__(self, residual, sweeps):
        super().__init__(
            f"fixed point not reached after {sweeps} sweeps (residual {residual:.3e})")
        self.residual = residual
        self.sweeps = sweeps


class IllDefinedInstantiation(DeceptGameError):
    """A parameter valuation does not produce probability distributions."""

    def __init__(self, offending):
        offending = list(offending)
        shown = ", ".join(f"{s}->{t}" for s, t in offending[:8])
        more = "" if len(offending) <= 8 else f" (+{len(offending) - 8} more)"
        super().__init__(f"ill-defined instantiation at {shown}{more}")
        self.offending = offending


class UnsupportedDegree(DeceptGameError):
    """An expression has degree larger than the synthesis program can handle."""


class NoStrongStrategy(DeceptGameError):
    """Stage-1 synthesis found no strategy meeting the strength threshold."""

    def __init__(self, best_value, threshold):
        super().__init__(
            f"no sufficiently strong strategy found (best value {best_value!r}, "
            f"threshold {threshold!r})")
        self.best_value = best_value
        self.threshold = threshold


class EnumerationLimitError(DeceptGameError):
    """Brute-force enumeration would exceed its guard."""

    def __init__(self, size, limit):
        super().__init__(f"enumeration of {size} deceiver strategies exceeds limit {limit}")
        self.size = size
        self.limit = limit
