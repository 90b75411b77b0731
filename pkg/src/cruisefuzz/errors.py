"""Error hierarchy with stable categories for CLI exit codes and the API."""


class CruisefuzzError(Exception):
    """Base class; `category` maps to a CLI exit code and API error payload."""

    category = "internal"
    exit_code = 1


class ConfigError(CruisefuzzError):
    """Invalid configuration, genome, or command input."""

    category = "config"
    exit_code = 2

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class SimulationError(CruisefuzzError):
    """A simulation could not be run to completion."""

    category = "simulation"
    exit_code = 3


class DeterminismError(CruisefuzzError):
    """A replay diverged where it was contractually required to match."""

    category = "determinism"
    exit_code = 4
