"""Dual-mode streaming Conformer voice-conversion inference engine.

The core package converts bottleneck-feature utterances to mel frames in
either full-context (non-streaming) or chunked (streaming) mode, with a
stateful chunk-by-chunk runtime that is numerically equivalent to the
masked full-sequence forward. A FastAPI service (``dvc2.service``) wraps
the engine; the ``dvc2`` CLI is a thin client of that service.
"""

__version__ = "0.1.0"

from .errors import (
    BenchStageError,
    ChunkTooLargeError,
    CorruptCheckpointError,
    CorruptFeatureFileError,
    EngineError,
    InvalidArgumentError,
    InvalidMaskError,
    InvalidModeError,
    InvalidShapeError,
    StreamClosedError,
)
from .masking import (
    FULL,
    AttentionMask,
    ChunkSpec,
    FutureMaskPlan,
    build_chunk_attention_mask,
    chunk_future_mask_plan,
    last_visible_index,
    sample_dct_chunk,
    sample_dmc_n,
)
from .attention import (
    KvCache,
    MhsaWeights,
    masked_softmax,
    mhsa_forward,
    mhsa_streaming_step,
    quiet_softmax,
)
from .conv import (
    ConvCache,
    ConvWeights,
    DualModeConv,
    conv1d_reference,
    conv_streaming_step,
    dmc_train_forward,
    masked_conv_oracle,
)
from .model import (
    ConformerConfig,
    ModelWeights,
    SpeakerEmbedding,
    convert_utterance,
    decoder_forward,
    encoder_forward,
    init_random_weights,
    mode_divergence,
    param_count,
    with_mode,
)
from .streaming import StreamState, StreamSummary, close_stream, open_stream, push_chunk
from .fileio import (
    checkpoint_roundtrip,
    load_checkpoint,
    load_features,
    load_speaker,
    save_checkpoint,
    save_features,
)
from .bench import (
    BenchReport,
    PipelineStage,
    busy_wait_stage,
    latency_from_rtf,
    measure_rtf,
    model_stage,
    run_pipeline_bench,
)

__all__ = [
    "__version__",
    "AttentionMask",
    "BenchReport",
    "BenchStageError",
    "ChunkSpec",
    "ChunkTooLargeError",
    "ConformerConfig",
    "ConvCache",
    "ConvWeights",
    "CorruptCheckpointError",
    "CorruptFeatureFileError",
    "DualModeConv",
    "EngineError",
    "FULL",
    "FutureMaskPlan",
    "InvalidArgumentError",
    "InvalidMaskError",
    "InvalidModeError",
    "InvalidShapeError",
    "KvCache",
    "MhsaWeights",
    "ModelWeights",
    "PipelineStage",
    "SpeakerEmbedding",
    "StreamClosedError",
    "StreamState",
    "StreamSummary",
    "build_chunk_attention_mask",
    "busy_wait_stage",
    "checkpoint_roundtrip",
    "chunk_future_mask_plan",
    "close_stream",
    "conv1d_reference",
    "conv_streaming_step",
    "convert_utterance",
    "decoder_forward",
    "dmc_train_forward",
    "encoder_forward",
    "init_random_weights",
    "last_visible_index",
    "latency_from_rtf",
    "load_checkpoint",
    "load_features",
    "load_speaker",
    "masked_conv_oracle",
    "masked_softmax",
    "measure_rtf",
    "mhsa_forward",
    "mhsa_streaming_step",
    "mode_divergence",
    "model_stage",
    "open_stream",
    "param_count",
    "push_chunk",
    "quiet_softmax",
    "run_pipeline_bench",
    "sample_dct_chunk",
    "sample_dmc_n",
    "save_checkpoint",
    "save_features",
    "with_mode",
]
