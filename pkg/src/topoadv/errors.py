"""Exception types shared across the package."""


class TopoAdvError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(TopoAdvError, ValueError):
    pass


class DegenerateNeighborhoodError(TopoAdvError):
    """A kNN neighborhood has rank-deficient covariance (normal undefined)."""


class DegenerateInputError(TopoAdvError):
    """Point set cannot be triangulated (coplanar, duplicate points)."""


class DegenerateSimplexError(TopoAdvError):
    """Simplex vertices are affinely dependent."""


class EigengapError(TopoAdvError):
    """Eigenvalue gap too small for a stable eigenvector derivative."""


class ParseError(TopoAdvError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class EmptyCohortError(TopoAdvError):
    """No eligible samples to aggregate over."""
