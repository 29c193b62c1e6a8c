"""Shared exception types."""


class StructureError(ValueError):
    """A graph, matrix or chain lacks required structure (connectivity,
    irreducibility, support mismatch)."""


class NumericError(RuntimeError):
    """An iterative numeric routine failed to converge or left its
    admissible domain."""


class CapacityError(RuntimeError):
    """An enumeration exceeded its instance-size budget."""


class ConfigError(ValueError):
    """An experiment configuration is invalid; carries the offending fields."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))
