"""Exception types shared across the package."""


class SingularMatrix(Exception):
    """LU factorization hit a pivot that is zero to working precision."""


class DimensionError(Exception):
    """Operands have incompatible shapes."""


class DomainError(Exception):
    """Model evaluated outside its admissible region (e.g. negative mass)."""


class NewtonDivergence(Exception):
    """Stage Newton iteration hit the iteration cap without converging."""


class ContractViolation(Exception):
    """An internal precondition was violated (caller bug)."""


class EvaluationError(Exception):
    """NLP evaluation failed; carries the shooting interval index."""

    def __init__(self, interval, cause):
        super().__init__(f"evaluation failed on interval {interval}: {cause}")
        self.interval = interval
        self.cause = cause


class ConfigError(Exception):
    """Invalid run configuration."""
