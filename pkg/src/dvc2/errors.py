"""Exception hierarchy shared across the engine."""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class InvalidShapeError(EngineError):
    """Tensor extents do not satisfy an operation's contract."""


class InvalidArgumentError(EngineError):
    """A scalar argument is outside its legal range."""


class InvalidMaskError(EngineError):
    """A visibility mask is unusable (e.g. a fully invisible softmax row)."""


class InvalidModeError(EngineError):
    """Operation requested in the wrong streaming/non-streaming mode."""


class ChunkTooLargeError(EngineError):
    """A pushed chunk exceeds the stream's configured chunk size."""


class StreamClosedError(EngineError):
    """Push or close attempted on an already closed stream."""


class BenchStageError(EngineError):
    """A pipeline stage failed while being measured."""

    def __init__(self, stage_name: str, cause: BaseException):
        super().__init__(f"bench stage {stage_name!r} failed: {cause}")
        self.stage_name = stage_name


class CorruptFileError(EngineError):
    """Base for binary file format violations; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CorruptCheckpointError(CorruptFileError):
    """Checkpoint file failed magic/version/structure validation."""


class CorruptFeatureFileError(CorruptFileError):
    """Feature file failed magic/structure validation."""
