"""Exception hierarchy shared across the package."""


class JointsurvError(Exception):
    """Base class for all package errors."""


class InvalidKnotsError(JointsurvError):
    """Knot vector is malformed (unsorted, duplicated, too few boundaries)."""


class InvalidSpecError(JointsurvError):
    """A model/term/feature specification is inconsistent."""


class InvalidIntervalError(JointsurvError):
    """An integration or prediction interval is empty or reversed."""


class DataError(JointsurvError):
    """Input data violates a structural requirement."""


class NumericError(JointsurvError):
    """A numerical evaluation produced a nonfinite or unusable value."""


class ArtifactError(JointsurvError):
    """A saved model artifact cannot be parsed or is incompatible."""
