"""Exception types shared across the package."""


class KmkvError(Exception):
    """Base class for all package errors."""


class ContractViolationError(KmkvError, ValueError):
    """An argument violates a documented precondition."""


class EllipticityError(ContractViolationError):
    """A matrix fails the declared spectral band [kappa0, kappa1]."""


class CFLError(ContractViolationError):
    """Requested time step exceeds the stability limit.

    Carries the largest admissible step in ``dt_max``.
    """

    def __init__(self, dt: float, dt_max: float):
        self.dt = dt
        self.dt_max = dt_max
        super().__init__(
            f"time step {dt:g} violates the CFL bound; admissible dt <= {dt_max:g}"
        )


class PreconditionError(ContractViolationError):
    """An exponent relation or scenario constraint fails validation."""


class BudgetExceededError(KmkvError):
    """A direct O(N^2) / O(G^2) evaluation would exceed the cost budget."""

    def __init__(self, cost: float, budget: float, what: str = "evaluation"):
        self.cost = cost
        self.budget = budget
        super().__init__(
            f"refusing {what}: estimated cost {cost:.3g} exceeds budget {budget:.3g}"
        )


class SchemaError(KmkvError):
    """Report or file schema mismatch."""


class DegenerateWarning(RuntimeWarning):
    """A diagnostic ratio was skipped because its denominator vanished."""
