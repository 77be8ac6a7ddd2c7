class SidebandError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidArgumentError(SidebandError, ValueError):
    pass


class GridTooNarrowError(SidebandError):
    """Photon shifts pushed more probability off the grid than allowed."""

    def __init__(self, lost_mass: float, tolerance: float):
        self.lost_mass = lost_mass
        self.tolerance = tolerance
        super().__init__(f"Grid too narrow: {lost_mass:.3e} of the probability left the grid (tolerance {tolerance:.1e})")


class UndefinedVisibilityError(SidebandError):
    pass


class NegativeProbabilityError(SidebandError):
    pass


class StepRejectedError(SidebandError):
    def __init__(self, max_displacement: float, limit: float, time: float):
        self.max_displacement = max_displacement
        self.limit = limit
        self.time = time
        super().__init__(f"Step rejected at t={time:.3f} fs: an electron moved {max_displacement:.3f} nm (limit {limit:.3f} nm)")


class UndefinedStatisticError(SidebandError):
    pass


class MapParseError(SidebandError):
    def __init__(self, path, line_number: int, message: str):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{self.path}:{line_number}: {message}")


class ConfigError(SidebandError):
    pass
