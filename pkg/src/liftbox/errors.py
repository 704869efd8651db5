"""Exception hierarchy shared by every liftbox module."""


class LiftboxError(Exception):
    """Base class for all library errors."""


class ValidationError(LiftboxError, ValueError):
    """Input violates a type invariant or an operation precondition."""


class RasterMismatchError(ValidationError):
    pass


class UnknownInstanceError(ValidationError):
    pass


class DegenerateRotationError(ValidationError):
    """The two halves of a 6D rotation are zero or parallel."""


class DegenerateCloudError(ValidationError):
    """Point cloud cannot support an oriented box (too few or collinear points)."""


class UnknownClassError(ValidationError):
    pass


class EmbeddingError(ValidationError):
    pass


class AmbiguityError(ValidationError):
    """Ambiguity group carries exactly zero probability mass."""


class GradientCheckError(ValidationError):
    pass


class ManifestError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class RecordError(ValidationError):
    """A box record file does not match the expected schema."""
