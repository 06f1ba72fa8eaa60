"""Pydantic request/response models and the frame wire encoding.

Feature frames travel as base64-encoded little-endian float32 bytes in
row-major order, the same payload layout the feature files use on disk.
"""

from __future__ import annotations

import base64
import binascii

import numpy as np
from pydantic import BaseModel, Field

from .errors import InvalidShapeError
from .model import ConformerConfig


def encode_frames(frames: np.ndarray) -> str:
    data = np.ascontiguousarray(frames, dtype="<f4").tobytes()
    return base64.b64encode(data).decode("ascii")


def decode_frames(payload: str, n_frames: int) -> np.ndarray:
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as e:
        raise InvalidShapeError(f"frames payload is not valid base64: {e}") from e
    if n_frames < 0:
        raise InvalidShapeError(f"n_frames must be >= 0, got {n_frames}")
    if n_frames == 0:
        if raw:
            raise InvalidShapeError("zero frames declared but payload is non-empty")
        return np.zeros((0, 0), dtype=np.float32)
    if len(raw) % (4 * n_frames) != 0:
        raise InvalidShapeError(
            f"payload of {len(raw)} bytes does not divide into {n_frames} float32 rows"
        )
    dim = len(raw) // (4 * n_frames)
    if dim == 0:
        raise InvalidShapeError("payload too short for the declared frame count")
    return np.frombuffer(raw, dtype="<f4").reshape(n_frames, dim).astype(np.float32)


class ConfigSchema(BaseModel):
    num_encoder_blocks: int = 3
    num_decoder_blocks: int = 3
    model_dim: int = 256
    heads: int = 4
    conv_kernel: int = 15
    ffn_expansion: int = 2
    input_dim: int = 256
    output_dim: int = 80
    speaker_dim: int = 256
    use_quiet: bool = True
    mode: str = "streaming"

    def to_config(self) -> ConformerConfig:
        return ConformerConfig(**self.model_dump())

    @classmethod
    def from_config(cls, cfg: ConformerConfig) -> "ConfigSchema":
        return cls(
            num_encoder_blocks=cfg.num_encoder_blocks,
            num_decoder_blocks=cfg.num_decoder_blocks,
            model_dim=cfg.model_dim,
            heads=cfg.heads,
            conv_kernel=cfg.conv_kernel,
            ffn_expansion=cfg.ffn_expansion,
            input_dim=cfg.input_dim,
            output_dim=cfg.output_dim,
            speaker_dim=cfg.speaker_dim,
            use_quiet=cfg.use_quiet,
            mode=cfg.mode,
        )


class HealthResponse(BaseModel):
    status: str
    version: str


class ModelInfo(BaseModel):
    model_id: str
    config: ConfigSchema
    param_count: int
    params_millions: float


class InitRandomRequest(BaseModel):
    config: ConfigSchema = Field(default_factory=ConfigSchema)
    seed: int = 0


class LoadModelRequest(BaseModel):
    path: str


class SaveModelRequest(BaseModel):
    path: str


class SaveModelResponse(BaseModel):
    path: str
    bytes_written: int


class ConvertRequest(BaseModel):
    frames: str
    n_frames: int
    speaker: list[float]
    mode: str | None = None
    chunk_frames: int = 16
    left_chunks: int | None = None


class ConvertResponse(BaseModel):
    frames: str
    n_frames: int
    dim: int


class OpenStreamRequest(BaseModel):
    model_id: str
    speaker: list[float]
    chunk_frames: int = 16
    left_chunks: int | None = None


class StreamInfo(BaseModel):
    stream_id: str
    model_id: str
    chunk_frames: int
    frames_consumed: int
    chunks_pushed: int
    closed: bool


class PushRequest(BaseModel):
    frames: str
    n_frames: int


class PushResponse(BaseModel):
    frames: str
    n_frames: int
    dim: int
    frames_consumed: int


class CloseStreamResponse(BaseModel):
    frames_consumed: int
    chunks_pushed: int


class BenchRequest(BaseModel):
    model_id: str | None = None
    chunk_frames: int = 16
    frame_shift_ms: float = 12.5
    iterations: int = 50
    warmup: int = 5
    threads: int = 1
    stub_asr_rtf: float | None = None
    stub_vocoder_rtf: float | None = None
    left_chunks: int | None = 16
    seed: int = 0


class StageRow(BaseModel):
    name: str
    rtf: float
    latency_ms: float
    params_millions: float


class BenchResponse(BaseModel):
    stages: list[StageRow]
    chunk_ms: float
    threads: int
    iterations: int
    pipeline_latency_ms: float
    table: str
    kv: str
