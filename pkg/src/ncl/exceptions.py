class NCLError(Exception):
    """Base class for errors raised by this package."""

    exit_code = 1
    kind = "error"


class ConfigError(NCLError, ValueError):
    exit_code = 2
    kind = "config"


class DataError(NCLError, ValueError):
    exit_code = 3
    kind = "data"


class NumericalError(NCLError, ArithmeticError):
    exit_code = 4
    kind = "numeric"


class ShapeError(NCLError, ValueError):
    exit_code = 3
    kind = "shape"

    def __init__(self, op, left, right):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(f"{op}: incompatible shapes {self.left} and {self.right}")
