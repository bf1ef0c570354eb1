"""Exception types shared across the package."""


class SceneShiftError(Exception):
    """Base class for all package errors."""


class SamplingExhaustedError(SceneShiftError):
    """Scene sampling could not place all objects within the retry budget."""


class MissingInstanceError(SceneShiftError):
    """An instance id is absent from the map it was looked up in."""


class LostInstanceError(SceneShiftError):
    """An instance vanished under downsampling; the scene should be regenerated."""


class NumericOverflowError(SceneShiftError):
    """A non-finite value appeared in an intermediate tensor."""

    def __init__(self, tensor_name: str):
        super().__init__(f"non-finite values in tensor '{tensor_name}'")
        self.tensor_name = tensor_name


class TrackingUndefinedError(SceneShiftError):
    """Template matching is undefined (zero-variance template)."""


class CheckpointFormatError(SceneShiftError):
    """Checkpoint has a bad magic string or unsupported version."""


class CheckpointCorruptError(SceneShiftError):
    """Checkpoint payload is truncated or inconsistent."""
