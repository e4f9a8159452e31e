"""Exception types shared across the toolkit."""


class HierarchyError(ValueError):
    """Invalid label hierarchy. ``label`` names the offending entry."""

    def __init__(self, message, label=None):
        super().__init__(message)
        self.label = label


class SchemaError(ValueError):
    """Input data does not match the expected layout or label schema."""


class NumericError(FloatingPointError):
    """A model produced non-finite values."""
