"""Exception types raised across the package."""


class DenoiseError(Exception):
    """Base class for all package errors."""


class DimensionError(DenoiseError, ValueError):
    pass


class ValidationError(DenoiseError, ValueError):
    pass


class ImageIOError(DenoiseError, OSError):
    pass


class DivergenceError(DenoiseError, RuntimeError):
    def __init__(self, step, value):
        self.step = step
        self.value = value
        super().__init__(f"gradient ascent diverged at step {step} (|pixel| = {value:.3g})")


class ConfigError(DenoiseError, ValueError):
    """Inconsistent experiment or command configuration."""
