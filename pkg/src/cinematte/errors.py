class ShapeError(ValueError):
    """Input arrays whose shapes violate an operation's contract."""


class NumericError(FloatingPointError):
    """A forward pass produced a non-finite value."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer
