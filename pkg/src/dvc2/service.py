"""HTTP service wrapping the engine: model registry, one-shot conversion,
stateful streaming sessions, and benchmark runs.

Weights are immutable once loaded and shared across any number of streams;
each stream serializes its own pushes behind a lock. The CLI talks to this
app either in process or over the network.
"""

from __future__ import annotations

import os
import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException

from . import __version__
from .bench import (
    ASR_STUB_PARAMS_M,
    VOCODER_STUB_PARAMS_M,
    PipelineStage,
    busy_wait_stage,
    model_stage,
    run_pipeline_bench,
)
from .errors import (
    ChunkTooLargeError,
    CorruptFileError,
    EngineError,
    InvalidArgumentError,
    InvalidMaskError,
    InvalidModeError,
    InvalidShapeError,
    StreamClosedError,
)
from .fileio import load_checkpoint, save_checkpoint
from .model import (
    ModelWeights,
    SpeakerEmbedding,
    convert_utterance,
    init_random_weights,
    param_count,
    with_mode,
)
from .masking import ChunkSpec
from .schemas import (
    BenchRequest,
    BenchResponse,
    CloseStreamResponse,
    ConfigSchema,
    ConvertRequest,
    ConvertResponse,
    HealthResponse,
    InitRandomRequest,
    LoadModelRequest,
    ModelInfo,
    OpenStreamRequest,
    PushRequest,
    PushResponse,
    SaveModelRequest,
    SaveModelResponse,
    StageRow,
    StreamInfo,
    decode_frames,
    encode_frames,
)
from .streaming import StreamState, close_stream, open_stream, push_chunk

_BAD_REQUEST = (
    InvalidArgumentError,
    InvalidShapeError,
    InvalidMaskError,
    InvalidModeError,
    ChunkTooLargeError,
    CorruptFileError,
)


@dataclass
class _StreamEntry:
    state: StreamState
    model_id: str
    lock: threading.Lock = field(default_factory=threading.Lock)


class Registry:
    """Thread-safe model and stream tables held on the app state."""

    def __init__(self):
        self.models: dict[str, ModelWeights] = {}
        self.streams: dict[str, _StreamEntry] = {}
        self.lock = threading.Lock()

    def add_model(self, weights: ModelWeights) -> str:
        model_id = uuid.uuid4().hex[:12]
        with self.lock:
            self.models[model_id] = weights
        return model_id

    def get_model(self, model_id: str) -> ModelWeights:
        with self.lock:
            weights = self.models.get(model_id)
        if weights is None:
            raise HTTPException(status_code=404, detail=f"unknown model {model_id!r}")
        return weights

    def add_stream(self, state: StreamState, model_id: str) -> str:
        stream_id = uuid.uuid4().hex[:12]
        with self.lock:
            self.streams[stream_id] = _StreamEntry(state=state, model_id=model_id)
        return stream_id

    def get_stream(self, stream_id: str) -> _StreamEntry:
        with self.lock:
            entry = self.streams.get(stream_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"unknown stream {stream_id!r}")
        return entry


def _http_error(e: Exception) -> HTTPException:
    if isinstance(e, StreamClosedError):
        return HTTPException(status_code=409, detail=str(e))
    if isinstance(e, _BAD_REQUEST):
        return HTTPException(status_code=400, detail=str(e))
    return HTTPException(status_code=500, detail=str(e))


def _model_info(model_id: str, weights: ModelWeights) -> ModelInfo:
    count = param_count(weights.config)
    return ModelInfo(
        model_id=model_id,
        config=ConfigSchema.from_config(weights.config),
        param_count=count,
        params_millions=count / 1e6,
    )


def _speaker(values: list[float], expected_dim: int) -> SpeakerEmbedding:
    if len(values) != expected_dim:
        raise InvalidShapeError(
            f"speaker vector has {len(values)} values, model expects {expected_dim}"
        )
    return SpeakerEmbedding.from_values(np.asarray(values, dtype=np.float32))


def create_app() -> FastAPI:
    app = FastAPI(title="dvc2", version=__version__)
    registry = Registry()
    app.state.registry = registry

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/models/init-random", response_model=ModelInfo)
    def init_random(req: InitRandomRequest) -> ModelInfo:
        try:
            weights = init_random_weights(req.config.to_config(), req.seed)
        except EngineError as e:
            raise _http_error(e) from e
        return _model_info(registry.add_model(weights), weights)

    @app.post("/models/load", response_model=ModelInfo)
    def load_model(req: LoadModelRequest) -> ModelInfo:
        try:
            weights = load_checkpoint(req.path)
        except FileNotFoundError as e:
            raise HTTPException(status_code=404, detail=str(e)) from e
        except EngineError as e:
            raise _http_error(e) from e
        return _model_info(registry.add_model(weights), weights)

    @app.get("/models", response_model=list[ModelInfo])
    def list_models() -> list[ModelInfo]:
        with registry.lock:
            items = list(registry.models.items())
        return [_model_info(mid, w) for mid, w in items]

    @app.get("/models/{model_id}", response_model=ModelInfo)
    def get_model(model_id: str) -> ModelInfo:
        return _model_info(model_id, registry.get_model(model_id))

    @app.post("/models/{model_id}/save", response_model=SaveModelResponse)
    def save_model(model_id: str, req: SaveModelRequest) -> SaveModelResponse:
        weights = registry.get_model(model_id)
        try:
            save_checkpoint(req.path, weights)
        except OSError as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        return SaveModelResponse(path=req.path, bytes_written=os.path.getsize(req.path))

    @app.delete("/models/{model_id}")
    def delete_model(model_id: str) -> dict:
        with registry.lock:
            if model_id not in registry.models:
                raise HTTPException(status_code=404, detail=f"unknown model {model_id!r}")
            del registry.models[model_id]
        return {"deleted": model_id}

    @app.post("/models/{model_id}/convert", response_model=ConvertResponse)
    def convert(model_id: str, req: ConvertRequest) -> ConvertResponse:
        weights = registry.get_model(model_id)
        cfg = weights.config
        try:
            frames = decode_frames(req.frames, req.n_frames)
            if req.n_frames == 0:
                frames = np.zeros((0, cfg.input_dim), dtype=np.float32)
            spk = _speaker(req.speaker, cfg.speaker_dim)
            mode = req.mode or cfg.mode
            view = with_mode(weights, mode)
            chunk = ChunkSpec(req.chunk_frames, left_chunks=req.left_chunks)
            mel = convert_utterance(frames, spk, view, view.config, chunk)
        except EngineError as e:
            raise _http_error(e) from e
        return ConvertResponse(
            frames=encode_frames(mel), n_frames=mel.shape[0], dim=mel.shape[1]
        )

    @app.post("/streams", response_model=StreamInfo)
    def open_stream_endpoint(req: OpenStreamRequest) -> StreamInfo:
        weights = registry.get_model(req.model_id)
        try:
            spk = _speaker(req.speaker, weights.config.speaker_dim)
            state = open_stream(
                with_mode(weights, "streaming"),
                spk,
                req.chunk_frames,
                left_chunks=req.left_chunks,
            )
        except EngineError as e:
            raise _http_error(e) from e
        stream_id = registry.add_stream(state, req.model_id)
        return StreamInfo(
            stream_id=stream_id,
            model_id=req.model_id,
            chunk_frames=req.chunk_frames,
            frames_consumed=0,
            chunks_pushed=0,
            closed=False,
        )

    @app.get("/streams/{stream_id}", response_model=StreamInfo)
    def stream_info(stream_id: str) -> StreamInfo:
        entry = registry.get_stream(stream_id)
        state = entry.state
        return StreamInfo(
            stream_id=stream_id,
            model_id=entry.model_id,
            chunk_frames=state.chunk_frames,
            frames_consumed=state.frames_consumed,
            chunks_pushed=state.chunks_pushed,
            closed=state.closed,
        )

    @app.post("/streams/{stream_id}/push", response_model=PushResponse)
    def push(stream_id: str, req: PushRequest) -> PushResponse:
        entry = registry.get_stream(stream_id)
        try:
            chunk = decode_frames(req.frames, req.n_frames)
            with entry.lock:
                out = push_chunk(entry.state, chunk)
                consumed = entry.state.frames_consumed
        except EngineError as e:
            raise _http_error(e) from e
        return PushResponse(
            frames=encode_frames(out),
            n_frames=out.shape[0],
            dim=out.shape[1],
            frames_consumed=consumed,
        )

    @app.post("/streams/{stream_id}/close", response_model=CloseStreamResponse)
    def close(stream_id: str) -> CloseStreamResponse:
        entry = registry.get_stream(stream_id)
        try:
            with entry.lock:
                summary = close_stream(entry.state)
        except EngineError as e:
            raise _http_error(e) from e
        return CloseStreamResponse(
            frames_consumed=summary.frames_consumed,
            chunks_pushed=summary.chunks_pushed,
        )

    @app.post("/bench", response_model=BenchResponse)
    def bench(req: BenchRequest) -> BenchResponse:
        stages: list[PipelineStage] = []
        try:
            if req.stub_asr_rtf is not None:
                stages.append(
                    PipelineStage(
                        "asr-encoder",
                        busy_wait_stage(req.stub_asr_rtf, req.chunk_frames, req.frame_shift_ms),
                        ASR_STUB_PARAMS_M,
                    )
                )
            if req.model_id is not None:
                weights = registry.get_model(req.model_id)
                rng = np.random.default_rng(req.seed)
                spk = SpeakerEmbedding.from_values(
                    rng.standard_normal(weights.config.speaker_dim)
                )
                stages.append(
                    model_stage(
                        weights,
                        spk,
                        req.chunk_frames,
                        left_chunks=req.left_chunks,
                        seed=req.seed,
                    )
                )
            if req.stub_vocoder_rtf is not None:
                stages.append(
                    PipelineStage(
                        "vocoder",
                        busy_wait_stage(
                            req.stub_vocoder_rtf, req.chunk_frames, req.frame_shift_ms
                        ),
                        VOCODER_STUB_PARAMS_M,
                    )
                )
            report = run_pipeline_bench(
                stages,
                req.chunk_frames,
                iterations=req.iterations,
                threads=req.threads,
                warmup=req.warmup,
                frame_shift_ms=req.frame_shift_ms,
            )
        except EngineError as e:
            raise _http_error(e) from e
        return BenchResponse(
            stages=[
                StageRow(
                    name=s.name,
                    rtf=s.rtf,
                    latency_ms=s.latency_ms,
                    params_millions=s.params_millions,
                )
                for s in report.rows()
            ],
            chunk_ms=report.chunk_ms,
            threads=report.threads,
            iterations=report.iterations,
            pipeline_latency_ms=report.pipeline_latency_ms,
            table=report.render(),
            kv=report.emit_kv(),
        )

    return app


app = create_app()
