"""Exception hierarchy shared by all modules."""


class CellFreeError(Exception):
    """Base class for every error raised by this package."""


class InvalidConfig(CellFreeError, ValueError):
    pass


class InvalidInput(CellFreeError, ValueError):
    pass


class InvalidData(CellFreeError, ValueError):
    pass


class InvalidDistance(CellFreeError, ValueError):
    pass


class InvalidCorrelation(CellFreeError, ValueError):
    pass


class PlacementInfeasible(CellFreeError, RuntimeError):
    """Rejection sampling ran out of retries (area too small for the minimum distances)."""


class NumericalError(CellFreeError, ArithmeticError):
    """A factorization failed even after escalating the diagonal jitter."""


class Unsupported(CellFreeError, NotImplementedError):
    pass
