"""Exception hierarchy shared by the library and the CLI."""


class SmoothkitError(Exception):
    """Base class for all library errors."""


class ModelError(SmoothkitError, ValueError):
    """Invalid model, grid, or observation input."""


class GridMismatchError(ModelError):
    pass


class NumericalError(SmoothkitError, ArithmeticError):
    """A numerical method could not produce a trustworthy answer."""


class RiccatiBlowUp(NumericalError):
    pass


class SingularCovarianceError(NumericalError):
    pass
