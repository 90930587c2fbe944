"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration; carries field-level messages."""

    def __init__(self, messages):
        if isinstance(messages, str):
            messages = [messages]
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


class ProtocolError(RuntimeError):
    """An operation was called out of order (e.g. outcome before the episode ended)."""


class ShapeError(ValueError):
    """Array shapes do not chain or match."""
