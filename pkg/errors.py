"""Exception hierarchy shared by the rough-path lab modules."""


class RoughLabError(Exception):
    """Base class for every error raised by this library; ``diagnostics`` carries the details."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({details})"


class DomainError(RoughLabError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigError(DomainError):
    """An experiment configuration was rejected."""


class NumericError(RoughLabError, ArithmeticError):
    """A numerical procedure failed."""


class DivergenceError(NumericError):
    """Solver state left the configured bounded region."""


class ContractError(RoughLabError, RuntimeError):
    """A caller-supplied object or an exact identity broke its documented contract."""
