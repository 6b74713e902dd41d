"""
Exception hierarchy for XAI Inversion.

Every error raised by the package derives from ``XAIInversionError``. The
concrete classes also inherit the builtin exception they refine, so callers
that catch ``ValueError`` or ``RuntimeError`` keep working.
"""

from typing import Any, Dict, Optional


class XAIInversionError(Exception):
    """Base class for all package errors."""

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = {k: v for k, v in details.items() if v is not None}

    def to_dict(self) -> Dict[str, Any]:
        """Convert the error to a JSON-serialisable dictionary.

        Returns:
            Dictionary with the error type, message and details.
        """
        return {
            "error": self.__class__.__name__,
            "message": self.message,
            "details": {k: str(v) if not isinstance(v, (int, float, str, bool, list)) else v
                        for k, v in self.details.items()},
        }


class ConfigurationError(XAIInversionError, ValueError):
    """Invalid or inconsistent configuration."""


class StageOrderError(ConfigurationError):
    """A staged pipeline was driven out of order."""


class SpecValidationError(XAIInversionError, ValueError):
    """A ModelSpec violates its shape or structure invariants."""

    def __init__(self, message: str, layer: Optional[str] = None):
        super().__init__(message, layer=layer)
        self.layer = layer


class ShapeMismatchError(XAIInversionError, ValueError):
    """An input does not match the shape a model declares."""


class DatasetLoadError(XAIInversionError, RuntimeError):
    """A dataset source is missing, empty or cannot be decoded."""

    def __init__(self, message: str, record: Optional[str] = None):
        super().__init__(message, record=record)
        self.record = record


class DatasetValidationError(XAIInversionError, ValueError):
    """Decoded data violates the dataset profile (e.g. label out of range)."""


class SplitError(XAIInversionError, ValueError):
    """A split plan cannot be built for the requested collection."""


class TrainingDivergedError(XAIInversionError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int, batch: int, loss: float):
        super().__init__(message, epoch=epoch, batch=batch, loss=loss)
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class UnsupportedExplanationError(XAIInversionError, ValueError):
    """The requested explanation cannot be computed for this model."""


class MissingExplanationError(XAIInversionError, ValueError):
    """An inversion model requires an explanation the tuple does not carry."""


class ProvenanceError(XAIInversionError, RuntimeError):
    """Data from a forbidden split reached an attacker-side component."""


class PrerequisiteError(XAIInversionError, RuntimeError):
    """A pipeline stage was run before the stages it depends on."""

    def __init__(self, message: str, stage: str, required: str):
        super().__init__(message, stage=stage, required=required)
        self.stage = stage
        self.required = required


class ArtifactExistsError(XAIInversionError, RuntimeError):
    """An append-only artifact would be overwritten."""
