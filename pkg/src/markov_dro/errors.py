"""Exception types shared across the package."""


class MarkovDROError(Exception):
    """Base class for all package errors."""


class InvalidInput(MarkovDROError, ValueError):
    pass


class ZeroRowMarginal(InvalidInput):
    """A doublet matrix has a state that is never left (zero row sum)."""


class SingularSystem(MarkovDROError, ArithmeticError):
    """The stationary linear system A_d(P) pi = e_d could not be solved."""


class DegenerateBox(MarkovDROError):
    """The dual box collapsed (upper <= lower), typically because r is ~0."""


class DomainViolation(MarkovDROError, ValueError):
    """A dual point left the open domain eta_i > max_j C_ij."""


class TooLarge(MarkovDROError, ValueError):
    pass


class NoFeasiblePoint(MarkovDROError):
    pass


class LPFailure(MarkovDROError):
    pass


class NotConvergedWarning(UserWarning):
    """Emitted when an iterative solver stops on its iteration cap."""
