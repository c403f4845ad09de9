"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad arguments, configs or shapes. Maps to CLI exit code 1."""


class DomainError(ValueError):
    """A divergence or density is undefined for the given parameters."""


class DivergenceError(RuntimeError):
    """Training or sampling produced non-finite values."""

    def __init__(self, message, step=None, diagnostics=None):
        super().__init__(message)
        self.step = step
        self.diagnostics = diagnostics or {}
