"""Wall-clock RTF and latency measurement for a staged conversion pipeline.

RTF is the ratio of per-chunk inference time to chunk duration, taken as a
median over timed iterations to shrug off scheduler noise. Stage latency
follows the model-inference convention ``chunk_ms * rtf``; the end-to-end
pipeline latency additionally waits for one chunk of input:
``chunk_ms * (1 + rtf)``.

The recognition and vocoder ends of the pipeline are represented by
busy-wait stubs with configurable target RTFs, preserving the staged-sum
structure of the real system without external model dependencies.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from statistics import median
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import BenchStageError, InvalidArgumentError
from .model import (
    ModelWeights,
    SpeakerEmbedding,
    param_count,
    with_mode,
)
from .streaming import open_stream, push_chunk

DEFAULT_FRAME_SHIFT_MS = 12.5
# Reference parameter sizes (in millions) for the stub stages, matching a
# production recognition encoder and neural vocoder of this pipeline class.
ASR_STUB_PARAMS_M = 20.3
VOCODER_STUB_PARAMS_M = 1.2


@dataclass(frozen=True)
class PipelineStage:
    """A named callable processing one chunk per invocation."""

    name: str
    fn: Callable[[], object]
    params_millions: float = 0.0


@dataclass(frozen=True)
class StageResult:
    name: str
    rtf: float
    latency_ms: float
    params_millions: float


@dataclass(frozen=True)
class BenchReport:
    """Per-stage rows plus the derived all-stages row."""

    stages: tuple[StageResult, ...]
    chunk_ms: float
    threads: int
    iterations: int

    @property
    def all_rtf(self) -> float:
        return sum(s.rtf for s in self.stages)

    @property
    def all_row(self) -> StageResult:
        return StageResult(
            name="All",
            rtf=self.all_rtf,
            latency_ms=self.chunk_ms * self.all_rtf,
            params_millions=sum(s.params_millions for s in self.stages),
        )

    @property
    def pipeline_latency_ms(self) -> float:
        return latency_from_rtf(self.chunk_ms, self.all_rtf)

    def rows(self) -> list[StageResult]:
        return [*self.stages, self.all_row]

    def render(self) -> str:
        headers = ("Stage", "RTF", "Latency (ms)", "Params (M)")
        body = [
            (s.name, f"{s.rtf:.4f}", f"{s.latency_ms:.2f}", f"{s.params_millions:.2f}")
            for s in self.rows()
        ]
        widths = [max(len(h), *(len(row[i]) for row in body)) for i, h in enumerate(headers)]
        lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
        lines.append("  ".join("-" * w for w in widths))
        for row in body:
            lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
        lines.append(
            f"chunk={self.chunk_ms:g} ms  threads={self.threads}  "
            f"iterations={self.iterations}  "
            f"pipeline_latency={self.pipeline_latency_ms:.2f} ms"
        )
        return "\n".join(lines)

    def emit_kv(self) -> str:
        lines = [
            f"chunk_ms={self.chunk_ms:g}",
            f"threads={self.threads}",
            f"iterations={self.iterations}",
        ]
        for s in self.rows():
            key = s.name.lower().replace(" ", "-")
            lines.append(f"{key}.rtf={s.rtf:.6f}")
            lines.append(f"{key}.latency_ms={s.latency_ms:.4f}")
            lines.append(f"{key}.params_millions={s.params_millions:.4f}")
        lines.append(f"pipeline_latency_ms={self.pipeline_latency_ms:.4f}")
        return "\n".join(lines)


def latency_from_rtf(chunk_ms: float, rtf: float) -> float:
    """End-to-end latency: one chunk of input waiting plus its inference,
    ``chunk_ms * (1 + rtf)``."""
    if chunk_ms <= 0:
        raise InvalidArgumentError(f"chunk_ms must be positive, got {chunk_ms}")
    if rtf < 0:
        raise InvalidArgumentError(f"rtf must be non-negative, got {rtf}")
    return chunk_ms * (1 + rtf)


def measure_rtf(
    stage: Callable[[], object],
    chunk_frames: int,
    frame_shift_ms: float = DEFAULT_FRAME_SHIFT_MS,
    iterations: int = 50,
    warmup: int = 5,
) -> float:
    """Median per-chunk wall time divided by chunk duration."""
    if iterations < 1:
        raise InvalidArgumentError(f"iterations must be >= 1, got {iterations}")
    if warmup < 0:
        raise InvalidArgumentError(f"warmup must be >= 0, got {warmup}")
    if chunk_frames < 1 or frame_shift_ms <= 0:
        raise InvalidArgumentError("chunk_frames and frame_shift_ms must be positive")
    chunk_s = chunk_frames * frame_shift_ms / 1000.0
    times = []
    for _ in range(warmup + iterations):
        t0 = time.perf_counter()
        stage()
        times.append(time.perf_counter() - t0)
    return median(times[warmup:]) / chunk_s


def busy_wait_stage(
    target_rtf: float,
    chunk_frames: int,
    frame_shift_ms: float = DEFAULT_FRAME_SHIFT_MS,
) -> Callable[[], None]:
    """Stub stage that spins for exactly target_rtf x chunk duration."""
    if target_rtf < 0:
        raise InvalidArgumentError(f"target rtf must be >= 0, got {target_rtf}")
    cost_s = target_rtf * chunk_frames * frame_shift_ms / 1000.0

    def stage() -> None:
        deadline = time.perf_counter() + cost_s
        while time.perf_counter() < deadline:
            pass

    return stage


def model_stage(
    weights: ModelWeights,
    speaker: SpeakerEmbedding,
    chunk_frames: int,
    left_chunks: int | None = 16,
    seed: int = 0,
) -> PipelineStage:
    """A stage pushing one fixed random chunk through a live stream.

    A bounded left history (default 16 chunks) keeps per-chunk cost
    constant once the cache fills, so the median reflects steady state.
    """
    streaming = with_mode(weights, "streaming")
    state = open_stream(streaming, speaker, chunk_frames, left_chunks=left_chunks)
    rng = np.random.default_rng(seed)
    chunk = rng.standard_normal(
        (chunk_frames, weights.config.input_dim)
    ).astype(np.float32)

    def fn() -> None:
        push_chunk(state, chunk)

    return PipelineStage(
        name="converter",
        fn=fn,
        params_millions=param_count(weights.config) / 1e6,
    )


def run_pipeline_bench(
    stages: Sequence[PipelineStage],
    chunk_frames: int,
    iterations: int = 50,
    threads: int = 1,
    warmup: int = 5,
    frame_shift_ms: float = DEFAULT_FRAME_SHIFT_MS,
) -> BenchReport:
    """Measure every stage and assemble the per-stage/All report.

    ``threads`` caps the worker threads any numeric library may use during
    measurement; 1 mirrors the single-core deployment scenario.
    """
    if not stages:
        raise InvalidArgumentError("pipeline bench needs at least one stage")
    if threads < 1:
        raise InvalidArgumentError(f"threads must be >= 1, got {threads}")
    chunk_ms = chunk_frames * frame_shift_ms
    results = []
    with threadpool_limits(limits=threads):
        for stage in stages:
            try:
                rtf = measure_rtf(
                    stage.fn, chunk_frames, frame_shift_ms, iterations, warmup
                )
            except InvalidArgumentError:
                raise
            except Exception as e:
                raise BenchStageError(stage.name, e) from e
            results.append(
                StageResult(
                    name=stage.name,
                    rtf=rtf,
                    latency_ms=chunk_ms * rtf,
                    params_millions=stage.params_millions,
                )
            )
    return BenchReport(
        stages=tuple(results),
        chunk_ms=chunk_ms,
        threads=threads,
        iterations=iterations,
    )
