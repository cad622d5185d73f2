"""Exception hierarchy shared by all gdmflow modules."""


class GdmflowError(Exception):
    """Base class for all errors raised by gdmflow."""


class DegenerateCell(GdmflowError):
    """A cell has non-positive area or a non-positive orthogonality distance."""


class ParseError(GdmflowError):
    """A mesh or config file is malformed."""


class TopologyError(GdmflowError):
    """The cell/face connectivity is inconsistent (e.g. a face with >2 cells)."""


class EigSolverFailure(GdmflowError):
    """Power iteration for a generalized eigenvalue did not converge."""


class SingularGram(GdmflowError):
    """A Gram matrix (or the zero-mean pressure space) is degenerate."""


class LinearSolverFailure(GdmflowError):
    """A sparse direct factorization or solve failed."""


class ViscosityRangeError(GdmflowError):
    """The viscosity model returned a value outside its declared bounds."""


class PicardDivergence(GdmflowError):
    """The Picard loop hit its iteration cap without meeting the tolerance."""


class ZeroNormError(GdmflowError):
    """A relative error was requested against a (near-)zero reference norm."""


class InsufficientLevels(GdmflowError):
    """Fewer than three distinct refinement levels were supplied for a fit."""


class NonpositiveValue(GdmflowError):
    """A quantity that must be positive (h, error) is zero or negative."""


class ConfigError(GdmflowError):
    """A run configuration file is invalid."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if key is not None:
            prefix += f"key '{key}': "
        super().__init__(prefix + message)
