"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Input shape is incompatible with the requested operation."""


class StateError(RuntimeError):
    """Required saved state (activations, caches) is missing."""


class GraphError(RuntimeError):
    """The autodiff graph is malformed (cycle, bad root)."""


class MissingParameterError(KeyError):
    """A parameter tensor required by the operation is absent."""

    def __str__(self):  # KeyError quotes its message; keep it readable
        return self.args[0] if self.args else ""


class ConfigError(ValueError):
    """Invalid configuration value or unusable input location."""


class FormatError(ValueError):
    """A binary file does not conform to its declared format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


class TransferError(OSError):
    """Connection failed mid-transfer."""


class ConnectionClosed(TransferError):
    """Peer closed the connection cleanly at a frame boundary."""


class AckTimeoutError(TransferError):
    """Peer did not acknowledge a frame within the configured timeout."""


class ProtocolError(ValueError):
    """Peer sent bytes that violate the framing protocol."""
