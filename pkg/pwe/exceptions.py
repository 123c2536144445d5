class PweError(Exception):
    """Base class for errors raised by the pwe app."""


class ContractViolation(PweError):
    """A caller broke an operation's precondition."""


class PweDomainError(PweError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class ConstructionError(PweError):
    """The layered network could not be built from a scenario."""


class ConfigurationError(PweError, ValueError):
    """Scenario, physics or training parameters are invalid."""

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = violations or [message]


class RoutingFailure(PweError):
    """The ray router left rays without a complete tile path."""

    def __init__(self, stranded: list[int], reasons: dict[int, str] | None = None):
        self.stranded = list(stranded)
        self.reasons = reasons or {}
        details = ", ".join(
            f"ray {ray_id}: {self.reasons.get(ray_id, 'unroutable')}"
            for ray_id in self.stranded
        )
        super().__init__(f"Routing failure, {len(self.stranded)} stranded ({details})")
