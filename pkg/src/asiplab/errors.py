"""Exception types shared across the package."""


class AsiplabError(Exception):
    """Base class for all package errors."""


class ConfigError(AsiplabError):
    """Bad experiment configuration (unknown keys, out-of-range values)."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(message if field is None else f"{field}: {message}")


class InputError(AsiplabError):
    """Invalid argument to an operation (precondition violation)."""


class HorizonViolationError(AsiplabError):
    """A free flight exceeded the configured cutoff.

    Signals infinite-horizon geometry or a cutoff that is too small.
    """

    def __init__(self, message, flight_length=None):
        self.flight_length = flight_length
        super().__init__(message)


class CappedReturnError(AsiplabError):
    """An induced-return orbit hit the iteration cap near the neutral fixed point."""

    def __init__(self, cap, point=None):
        self.cap = cap
        self.point = point
        super().__init__(f"first return did not occur within {cap} iterations")


class SpectralDegeneracyError(AsiplabError):
    """Transfer operator of a non-mixing model: leading eigenvalue not simple."""


class RegimeExceededError(AsiplabError):
    """Twisted-operator parameter left the perturbative regime (gap closed)."""


class TruncationError(AsiplabError):
    """Series truncation too short for the requested tolerance."""

    def __init__(self, message, required=None):
        self.required = required
        super().__init__(message)


class AtomBudgetError(AsiplabError):
    """Conditional-distribution enumeration exceeded the atom budget."""

    def __init__(self, message, atoms=None, budget=None):
        self.atoms = atoms
        self.budget = budget
        super().__init__(message)


class FormatError(AsiplabError):
    """Corrupt, truncated or version-mismatched data file."""
