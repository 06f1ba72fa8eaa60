"""Stateful chunk-by-chunk inference runtime.

A stream owns one convolution cache and one key/value cache per block
(encoder and decoder). Chunks are pushed in order; every pushed frame
produces exactly one output frame, emitted once and never revised. The
concatenated outputs equal the streaming-mode full-sequence forward with
the matching chunk mask, which is the runtime's central guarantee.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import KvCache, mhsa_streaming_step
from .conv import ConvCache, conv_streaming_step
from .errors import (
    ChunkTooLargeError,
    InvalidArgumentError,
    InvalidModeError,
    InvalidShapeError,
    StreamClosedError,
)
from .model import (
    MODE_STREAMING,
    BlockWeights,
    ModelWeights,
    SpeakerEmbedding,
    glu,
    half_ffn,
)
from .tensor import F32, layer_norm, linear, swish


@dataclass(frozen=True)
class StreamSummary:
    frames_consumed: int
    chunks_pushed: int


@dataclass
class StreamState:
    """Mutable per-stream state; exclusively owned by one consumer."""

    weights: ModelWeights
    speaker: SpeakerEmbedding
    chunk_frames: int
    left_chunks: int | None
    encoder_kv: list[KvCache]
    encoder_conv: list[ConvCache]
    decoder_kv: list[KvCache]
    decoder_conv: list[ConvCache]
    frames_consumed: int = 0
    chunks_pushed: int = 0
    closed: bool = False


def open_stream(
    weights: ModelWeights,
    speaker: SpeakerEmbedding,
    chunk_frames: int,
    left_chunks: int | None = None,
) -> StreamState:
    """Create zero-initialized caches for a new stream.

    The model must be in streaming mode. Any number of streams may share
    the same (immutable) weights.
    """
    cfg = weights.config
    if cfg.mode != MODE_STREAMING:
        raise InvalidModeError("streams require a model in streaming mode")
    if chunk_frames < 1:
        raise InvalidArgumentError(f"chunk_frames must be >= 1, got {chunk_frames}")
    if left_chunks is not None and left_chunks < 0:
        raise InvalidArgumentError(f"left_chunks must be >= 0, got {left_chunks}")
    if speaker.vec.shape[0] != cfg.speaker_dim:
        raise InvalidShapeError(
            f"speaker embedding width {speaker.vec.shape[0]} != {cfg.speaker_dim}"
        )
    max_frames = None if left_chunks is None else left_chunks * chunk_frames

    def caches(n: int) -> tuple[list[KvCache], list[ConvCache]]:
        kv = [KvCache.empty(cfg.model_dim, max_frames) for _ in range(n)]
        cc = [ConvCache.fresh(cfg.model_dim, cfg.conv_kernel) for _ in range(n)]
        return kv, cc

    enc_kv, enc_cc = caches(cfg.num_encoder_blocks)
    dec_kv, dec_cc = caches(cfg.num_decoder_blocks)
    return StreamState(
        weights=weights,
        speaker=speaker,
        chunk_frames=chunk_frames,
        left_chunks=left_chunks,
        encoder_kv=enc_kv,
        encoder_conv=enc_cc,
        decoder_kv=dec_kv,
        decoder_conv=dec_cc,
    )


def _block_step(
    x: np.ndarray,
    block: BlockWeights,
    kv: KvCache,
    cc: ConvCache,
    use_quiet: bool,
) -> np.ndarray:
    x = half_ffn(x, block.ffn1)
    h = layer_norm(x, block.attn_norm.gamma, block.attn_norm.beta)
    attn_out, _ = mhsa_streaming_step(kv, h, block.attn, use_quiet)
    x = x + attn_out
    h = layer_norm(x, block.conv_norm.gamma, block.conv_norm.beta)
    branch = block.conv.branch(MODE_STREAMING)
    h = glu(linear(h, branch.pre_w, branch.pre_b))
    h, _ = conv_streaming_step(cc, h, branch)
    h = swish(h)
    x = x + linear(h, branch.post_w, branch.post_b)
    x = half_ffn(x, block.ffn2)
    return layer_norm(x, block.final_norm.gamma, block.final_norm.beta)


def push_chunk(state: StreamState, bnf_chunk: np.ndarray) -> np.ndarray:
    """Consume one chunk of input frames and emit the same number of
    converted output frames. Emitted frames are final."""
    if state.closed:
        raise StreamClosedError("push on a closed stream")
    bnf_chunk = np.asarray(bnf_chunk, dtype=F32)
    cfg = state.weights.config
    if bnf_chunk.ndim != 2 or bnf_chunk.shape[1] != cfg.input_dim:
        raise InvalidShapeError(
            f"expected chunk [c x {cfg.input_dim}], got {bnf_chunk.shape}"
        )
    c = bnf_chunk.shape[0]
    if c == 0:
        raise InvalidArgumentError("cannot push an empty chunk")
    if c > state.chunk_frames:
        raise ChunkTooLargeError(
            f"chunk of {c} frames exceeds configured size {state.chunk_frames}"
        )
    w = state.weights
    x = linear(bnf_chunk, w.input_proj_w, w.input_proj_b)
    for block, kv, cc in zip(w.encoder_blocks, state.encoder_kv, state.encoder_conv):
        x = _block_step(x, block, kv, cc, cfg.use_quiet)
    conditioned = np.concatenate([x, np.tile(state.speaker.vec, (c, 1))], axis=1)
    x = linear(conditioned, w.speaker_merge_w, w.speaker_merge_b)
    for block, kv, cc in zip(w.decoder_blocks, state.decoder_kv, state.decoder_conv):
        x = _block_step(x, block, kv, cc, cfg.use_quiet)
    out = linear(x, w.output_proj_w, w.output_proj_b)
    state.frames_consumed += c
    state.chunks_pushed += 1
    return out


def close_stream(state: StreamState) -> StreamSummary:
    """Mark the stream closed; further pushes and closes are rejected."""
    if state.closed:
        raise StreamClosedError("stream already closed")
    state.closed = True
    return StreamSummary(
        frames_consumed=state.frames_consumed, chunks_pushed=state.chunks_pushed
    )
