class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(RuntimeError):
    """Missing or malformed dataset / checkpoint files."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
