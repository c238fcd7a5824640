"""Exception hierarchy shared across the package."""


class CompAttackError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(CompAttackError, ValueError):
    """Schema definition is malformed or inconsistent with the data."""


class ParseError(CompAttackError, ValueError):
    """A CSV row could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DomainError(CompAttackError, ValueError):
    """A value lies outside its attribute's domain."""

    def __init__(self, attribute: str, value, message: str | None = None):
        self.attribute = attribute
        self.value = value
        super().__init__(message or f"value {value!r} is not in the domain of attribute {attribute!r}")


class SizingError(CompAttackError, ValueError):
    """Requested sample sizes cannot be drawn from the source."""


class UndefinedMetricError(CompAttackError, ValueError):
    """A metric was requested over an empty population."""


class InfeasibleError(CompAttackError, ValueError):
    """Anonymization parameters cannot be satisfied (e.g. k larger than the table)."""


class ConstraintError(InfeasibleError):
    """A diversity/closeness constraint fails already on the whole table."""


class ArityError(CompAttackError, ValueError):
    """Wrong number of releases or wrong tuple width."""


class BudgetError(CompAttackError, ValueError):
    """The database space is too large to enumerate."""


class ConditioningError(CompAttackError, ValueError):
    """Conditioning on an event of probability zero."""


class ConfigError(CompAttackError, ValueError):
    """Experiment configuration is invalid."""
