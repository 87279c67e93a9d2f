class DomainError(ValueError):
    """Input outside the domain of an operation (non-SPD metric, g <= 0, tau <= 0, ...)."""


class IntegrationError(RuntimeError):
    """Time stepping aborted; carries the last valid state for post-mortem."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
