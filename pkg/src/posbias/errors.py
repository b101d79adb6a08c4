"""Exception types raised across the package."""


class PosbiasError(Exception):
    """Base class for all package errors."""


class DatasetError(PosbiasError, ValueError):
    """Malformed comparison data.

    Parameters
    ----------
    message : str
        Human readable description.
    line : int, optional
        1-based line number in the source stream, when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionError(PosbiasError, ValueError):
    """The design is too small for knockoff construction.

    Knockoffs for the annotator columns need room for an orthonormal
    complement, i.e. ``|E| >= 2|U| + |V|``.
    """

    def __init__(self, n_edges, n_annotators, n_items, extra=""):
        self.n_edges = n_edges
        self.n_annotators = n_annotators
        self.n_items = n_items
        need = 2 * n_annotators + n_items
        msg = (
            f"knockoff construction requires |E| >= 2|U| + |V|, got "
            f"|E|={n_edges} < 2*{n_annotators} + {n_items} = {need}"
        )
        if extra:
            msg = f"{msg}; {extra}"
        super().__init__(msg)


class NumericalError(PosbiasError, ArithmeticError):
    """A numerical routine failed (indefinite matrix, divergence, ...)."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap.

    Attributes
    ----------
    residual : float
        Residual norm at the last iterate.
    """

    def __init__(self, message, residual=float("nan")):
        self.residual = residual
        super().__init__(f"{message} (final residual {residual:.3e})")
