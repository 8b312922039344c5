"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PowerDensityError(Exception):
    exit_code = 1


class ConfigError(PowerDensityError):
    exit_code = 2


class DomainError(PowerDensityError, ValueError):
    """Input outside the mathematical domain of an operation (non-SPD, singular, ...)."""

    exit_code = 2


class SolverError(PowerDensityError):
    exit_code = 3

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class AdmissibilityError(PowerDensityError):
    """Rank-maximality condition violated; ``nodes`` holds offending grid indices."""

    exit_code = 4

    def __init__(self, message, nodes=None, block=None):
        super().__init__(message)
        self.nodes = nodes
        self.block = block


class IntegrationError(PowerDensityError):
    exit_code = 4

    def __init__(self, message, node=None, residual=None):
        super().__init__(message)
        self.node = node
        self.residual = residual


class FieldIOError(PowerDensityError):
    exit_code = 5
