"""Exception types shared across the toolkit.

The CLI maps each class to a distinct exit code, so raising the right
one matters beyond error text.
"""


class ValidationError(ValueError):
    """Malformed input: bad box, bad config, mismatched log/sequence."""


class ReplayExhaustedError(RuntimeError):
    """A replay latency profile or result log ran out of recorded entries."""


class DivergenceError(RuntimeError):
    """An optimization run produced a non-finite loss."""
