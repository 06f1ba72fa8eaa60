"""Chunk geometry: attention visibility masks and future-tap mask sampling.

A :class:`ChunkSpec` fixes how an utterance is cut into streaming chunks.
Attention visibility follows chunk indices (a frame sees every frame of its
own and earlier chunks, optionally capped to a number of past chunks), and
convolution future-masking follows the chunk's right boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

# Training-time chunk size randomization: half the draws use the full
# sequence, the rest pick 1..20 frames uniformly (12.5 ms .. 250 ms at the
# default frame shift).
FULL_SEQUENCE_PROB = 0.5
MIN_RANDOM_CHUNK = 1
MAX_RANDOM_CHUNK = 20


@dataclass(frozen=True)
class ChunkSpec:
    """Chunk size in frames plus left-history policy.

    ``chunk_frames=None`` is the full-sequence sentinel: attention sees
    everything. ``left_chunks=None`` leaves past context unlimited;
    an integer cap ``k`` keeps only the ``k`` most recent past chunks
    visible.
    """

    chunk_frames: int | None
    left_chunks: int | None = None

    def __post_init__(self):
        if self.chunk_frames is not None and self.chunk_frames < 1:
            raise InvalidArgumentError(
                f"chunk_frames must be >= 1 or None, got {self.chunk_frames}"
            )
        if self.left_chunks is not None and self.left_chunks < 0:
            raise InvalidArgumentError(
                f"left_chunks must be >= 0 or None, got {self.left_chunks}"
            )

    @property
    def is_full(self) -> bool:
        return self.chunk_frames is None

    @classmethod
    def full(cls) -> "ChunkSpec":
        return cls(chunk_frames=None)


FULL = ChunkSpec(chunk_frames=None)


@dataclass(frozen=True)
class AttentionMask:
    """Boolean visibility matrix over [t_query x t_key] frame pairs."""

    visible: np.ndarray

    def __post_init__(self):
        if self.visible.ndim != 2 or self.visible.dtype != np.bool_:
            raise InvalidArgumentError("AttentionMask.visible must be a 2-d bool array")

    @property
    def t_query(self) -> int:
        return self.visible.shape[0]

    @property
    def t_key(self) -> int:
        return self.visible.shape[1]


@dataclass(frozen=True)
class FutureMaskPlan:
    """Per-output-frame count of future taps zeroed inside a conv window."""

    kernel: int
    n_per_frame: np.ndarray

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidArgumentError(f"kernel must be odd and >= 1, got {self.kernel}")
        n = np.asarray(self.n_per_frame, dtype=np.int64)
        object.__setattr__(self, "n_per_frame", n)
        if n.ndim != 1:
            raise InvalidArgumentError("n_per_frame must be a 1-d integer sequence")
        if n.size and (n.min() < 0 or n.max() > self.kernel // 2):
            raise InvalidArgumentError(
                f"future-mask lengths must lie in [0, {self.kernel // 2}]"
            )


def sample_dct_chunk(rng, t_frames: int) -> ChunkSpec:
    """Draw the chunk policy for one forward pass.

    With probability 0.5 the full sequence is used; otherwise the chunk
    size is uniform over 1..20 frames. ``rng`` must provide ``random()``
    and ``integers(low, high)`` (a seeded ``numpy.random.Generator`` does).
    """
    if t_frames < 1:
        raise InvalidArgumentError(f"t_frames must be >= 1, got {t_frames}")
    if rng.random() < FULL_SEQUENCE_PROB:
        return FULL
    size = int(rng.integers(MIN_RANDOM_CHUNK, MAX_RANDOM_CHUNK + 1))
    return ChunkSpec(chunk_frames=size)


def build_chunk_attention_mask(t_frames: int, spec: ChunkSpec) -> AttentionMask:
    """Visibility by chunk index: frame i sees frame j iff chunk(j) <= chunk(i)
    and, with a left cap, chunk(i) - chunk(j) <= cap."""
    if t_frames < 0:
        raise InvalidArgumentError(f"t_frames must be >= 0, got {t_frames}")
    if spec.is_full:
        return AttentionMask(np.ones((t_frames, t_frames), dtype=bool))
    chunk_of = np.arange(t_frames) // spec.chunk_frames
    diff = chunk_of[:, None] - chunk_of[None, :]
    visible = diff >= 0
    if spec.left_chunks is not None:
        visible &= diff <= spec.left_chunks
    return AttentionMask(visible)


def sample_dmc_n(kernel: int, rng) -> int:
    """Uniform draw of the masked-future length n over {0, .., kernel//2}."""
    if kernel < 1 or kernel % 2 == 0:
        raise InvalidArgumentError(f"kernel must be odd and >= 1, got {kernel}")
    return int(rng.integers(0, kernel // 2 + 1))


def last_visible_index(t: int, spec: ChunkSpec, t_total: int) -> int:
    """Rightmost frame index visible from frame t (its chunk's right edge)."""
    if not 0 <= t < t_total:
        raise InvalidArgumentError(f"t={t} outside [0, {t_total})")
    if spec.is_full:
        return t_total - 1
    c = spec.chunk_frames
    return min(t_total - 1, (t // c + 1) * c - 1)


def chunk_future_mask_plan(t_total: int, kernel: int, spec: ChunkSpec) -> FutureMaskPlan:
    """Future-mask lengths implied by chunked inference.

    Frame t may read its receptive field up to ``last_visible_index(t)``;
    the ``n_t = max(0, t + kernel//2 - last_visible_index(t))`` trailing
    taps fall beyond that boundary and are read as zero.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise InvalidArgumentError(f"kernel must be odd and >= 1, got {kernel}")
    idx = np.arange(t_total, dtype=np.int64)
    if spec.is_full:
        edge = np.full(t_total, t_total - 1, dtype=np.int64)
    else:
        c = spec.chunk_frames
        edge = np.minimum(t_total - 1, (idx // c + 1) * c - 1)
    n = np.maximum(0, idx + kernel // 2 - edge)
    return FutureMaskPlan(kernel=kernel, n_per_frame=n)
