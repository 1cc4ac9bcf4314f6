class HepimError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(HepimError, ValueError):
    """Invalid or unsatisfiable parameters."""


class CapacityError(HepimError, ValueError):
    """Data does not fit the polynomial ring, a row of the grid, or the grid."""


class ModelParseError(HepimError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DimensionError(HepimError, ValueError):
    pass


class IntegrityError(HepimError):
    """A ciphertext's noise budget is exhausted; its plaintext cannot be trusted."""


class ValidationError(HepimError, ValueError):
    """An instruction or program violates an architectural rule."""


class CapabilityError(HepimError):
    """The requested operation is not supported by that part of the hardware."""


class LivelockError(HepimError):
    """An atomic step needs more energy than one full capacitor charge provides."""
