"""Exception hierarchy shared by all modules."""


class DpRiskError(Exception):
    """Base class for every error raised by this package."""


class InputError(DpRiskError, ValueError):
    """Rejected input: bad prices, unparseable files, invalid configuration."""


class InsufficientDataError(InputError):
    """Too few observations for the requested operation."""


class DomainError(DpRiskError, ValueError):
    """Argument outside the mathematical domain of the operation."""


class DimensionError(DpRiskError, ValueError):
    """Array shapes or lengths do not agree."""


class NumericalError(DpRiskError, ArithmeticError):
    """A numerical routine failed (quadrature, root finding, factorization)."""


class IntegrationError(NumericalError):
    """Quadrature did not reach its tolerance within the node budget."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        detail = ", ".join(f"{k}={v!r}" for k, v in self.diagnostics.items())
        return f"{base} ({detail})"
