"""Exception types shared across the package."""


class DomainError(ValueError):
    """An evaluation point lies outside the domain of the function or operation."""


class SpecValidationError(ValueError):
    """Invalid process spec / experiment config.

    Carries the full list of problems, each as "key.path: message".
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class SimulationError(RuntimeError):
    """A simulation encountered invalid state (e.g. negative diffusion coefficient)."""
