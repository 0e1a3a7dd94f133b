"""Exception types shared across the package."""


class SpecError(ValueError):
    """A problem specification, scheme, or artifact violates its contract."""


class GuardLimitError(RuntimeError):
    """An exhaustive enumeration would exceed the configured safety guard.

    Set the environment variable TRAJQ_GUARD_OVERRIDE=1 to lift the guard.
    """


class EmbeddingError(RuntimeError):
    """No valid minor embedding could be produced."""
