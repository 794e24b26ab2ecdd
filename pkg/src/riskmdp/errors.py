"""Shared exception types."""


class ModelError(ValueError):
    """Invalid model data: parse failure, dimension mismatch, or a probability
    invariant violation (bad row sum, negative entry, non-finite cost)."""


class GuardError(RuntimeError):
    """A combinatorial guard was exceeded (grid enumeration or policy
    enumeration would be too large)."""
