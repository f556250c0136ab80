"""Exception types raised across the package."""


class JointDiffError(Exception):
    """Base class for all package errors."""


class ZeroVarianceError(JointDiffError, ValueError):
    """A prediction vector is constant and cannot be placed on the manifold."""


class LengthMismatchError(JointDiffError, ValueError):
    pass


class NonPositiveScaleError(JointDiffError, ValueError):
    pass


class DuplicateIndexError(JointDiffError, ValueError):
    pass


class TooFewPointsError(JointDiffError, ValueError):
    pass


class SizeLimitExceededError(JointDiffError, ValueError):
    pass


class SingularSystemError(JointDiffError, ArithmeticError):
    pass


class EmptyPairsError(JointDiffError, ValueError):
    pass


class NoValidationPairsError(JointDiffError, ValueError):
    pass


class DegenerateDataError(JointDiffError, ValueError):
    pass


class DegenerateSpectrumWarning(UserWarning):
    """The top eigenvalue of the score matrix is (numerically) repeated."""
