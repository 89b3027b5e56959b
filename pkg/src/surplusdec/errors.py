"""Error taxonomy shared across the package."""


class SurplusDecError(Exception):
    """Base class for all library errors."""


class DomainError(SurplusDecError, ValueError):
    """An argument lies outside the domain of an operation (e.g. t > T)."""


class AdmissibilityError(SurplusDecError, ValueError):
    """A process or basis violates an admissibility requirement."""


class ValidationError(SurplusDecError, ValueError):
    """Structural validation of inputs failed."""


class EvaluationError(SurplusDecError, ValueError):
    """An integrand or functional could not be evaluated."""


class SingularJumpError(SurplusDecError, ValueError):
    """A jump matrix (I + dL) is numerically singular at a given time."""

    def __init__(self, time: float, cond: float):
        self.time = time
        self.cond = cond
        super().__init__(
            f"jump matrix at t={time!r} is numerically singular (cond={cond:.3e})"
        )


class ConfigError(SurplusDecError, ValueError):
    """A run configuration file is malformed or inconsistent."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
