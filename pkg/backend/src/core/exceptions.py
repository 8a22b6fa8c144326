"""
Exception hierarchy for kalmatch.

Library code raises these; only ``main.py`` turns them into exit codes.
"""


class KalmatchError(Exception):
    """Root of every error raised on purpose by this package"""


class ConfigError(KalmatchError):
    """Invalid run configuration"""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ShapeMismatchError(KalmatchError):
    """Array shapes that do not agree"""

    def __init__(self, dimension: str, expected, actual):
        self.dimension = dimension
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"shape mismatch in {dimension}: expected {expected}, got {actual}"
        )


class FactorizationError(KalmatchError):
    """Cholesky factorization failed even after jitter"""


class SingularInnovationError(FactorizationError):
    """Innovation or marginal covariance is numerically singular"""


class NonFiniteError(KalmatchError):
    """A computation produced inf or nan"""

    def __init__(self, name: str, detail: str = ""):
        self.name = name
        suffix = f" ({detail})" if detail else ""
        super().__init__(f"non-finite value in {name}{suffix}")


class InvalidBoxError(KalmatchError):
    """Bounding box with non-positive width or height"""


class ZeroEmbeddingError(KalmatchError):
    """Embedding with zero norm cannot be normalized"""


class MissingEmbeddingError(KalmatchError):
    """Embedding provider has no vector for a crop id"""

    def __init__(self, crop_id: str):
        self.crop_id = crop_id
        super().__init__(f"no embedding for crop id {crop_id!r}")


class InfiniteDivergenceError(KalmatchError):
    """KL divergence is infinite (zero reference mass under positive mass)"""


class MotFormatError(KalmatchError):
    """Malformed MOT-Challenge CSV content"""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class InfeasibleSceneError(KalmatchError):
    """Synthetic scene cannot be laid out inside the image bounds"""


class TrainingDivergedError(KalmatchError):
    """Training produced a non-finite loss"""

    def __init__(self, step: int, cause: Exception | None = None):
        self.step = step
        detail = f": {cause}" if cause else ""
        super().__init__(f"non-finite loss at step {step}{detail}")


class CheckpointError(KalmatchError):
    """Checkpoint cannot be read or does not fit the requested run"""


class OutputPathError(KalmatchError):
    """Output location cannot be written"""
