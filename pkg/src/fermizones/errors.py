"""Exception types shared across the package."""


class FermiZonesError(Exception):
    """Base class; ``module`` names the subsystem that raised it."""

    module = "fermizones"

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class DegenerateLevel(FermiZonesError):
    module = "lattice-surface"


class StartNotOnSurface(FermiZonesError):
    module = "orbit-tracer"


class Stalled(FermiZonesError):
    module = "orbit-tracer"

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class EmptyCarrier(FermiZonesError):
    module = "carrier-topology"


class NonManifoldCarrier(FermiZonesError):
    module = "carrier-topology"


class DegenerateBasePoint(FermiZonesError):
    module = "carrier-topology"


class ValidationFailed(FermiZonesError):
    module = "carrier-topology"

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


class UndeterminedLabel(FermiZonesError):
    module = "transport"


class InsufficientRange(FermiZonesError):
    module = "transport"


class RoundingFailed(FermiZonesError):
    module = "quasi4"

    def __init__(self, message, candidate=None, residual=None):
        super().__init__(message)
        self.candidate = candidate
        self.residual = residual


class ConfigError(FermiZonesError):
    module = "cli"
