"""Exception hierarchy shared by all modules."""


class LabError(Exception):
    """Base class for every error raised by spaceform_lab."""


class InadmissiblePoint(LabError, ValueError):
    """A point lies outside (or too close to the boundary of) the model domain."""


class UnsupportedCase(LabError, ValueError):
    """The (support surface, model) pair has no closed-form Killing data."""


class NotOnSupport(LabError, ValueError):
    """A point expected on the support surface fails its level-set test."""


class DegenerateDomain(LabError, ValueError):
    pass


class NotCoercive(LabError, ArithmeticError):
    """Symmetric factorization met a nonpositive pivot."""


class SingularSystem(LabError, ArithmeticError):
    pass


class EmptySigma(LabError, ValueError):
    pass


class ConvergenceFailure(LabError, ArithmeticError):
    pass


class IndefiniteBulk(LabError, ArithmeticError):
    """The bulk operator A - nK M is not positive definite on free dofs."""


class RecoveryFailure(LabError, ArithmeticError):
    """Least-squares patch recovery was rank deficient at too many nodes."""


class DegenerateCurve(LabError, ValueError):
    pass


class BadIndex(LabError, IndexError):
    pass


class NotOrthogonal(LabError, ValueError):
    """A free-boundary curve does not meet its support at a right angle."""


class NonpositiveMeanCurvature(LabError, ValueError):
    pass


class BadMode(LabError, ValueError):
    pass


class UnknownScenario(LabError, KeyError):
    pass
