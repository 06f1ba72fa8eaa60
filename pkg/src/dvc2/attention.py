"""Multi-head self-attention with chunk masks, quiet normalization, and
incremental key/value caching.

Two row normalizations are supported. The standard masked softmax makes
each visible row sum to one. The quiet variant adds one to the denominator,
``exp(w) / (1 + sum exp(w))``, so a row whose logits are all strongly
negative can hand out (almost) no weight at all and the frame attends to
nothing. Both are evaluated with max-subtraction so large logits of either
sign stay finite in float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, InvalidMaskError, InvalidShapeError
from .masking import AttentionMask
from .tensor import F32, linear

_NEG_INF = F32(-np.inf)


def masked_softmax(logits: np.ndarray, visible: np.ndarray) -> np.ndarray:
    """Softmax over the last axis restricted to visible entries.

    Invisible entries get weight zero; every row must have at least one
    visible entry.
    """
    logits = np.asarray(logits, dtype=F32)
    visible = np.asarray(visible, dtype=bool)
    shifted = np.where(visible, logits, _NEG_INF)
    m = shifted.max(axis=-1, keepdims=True)
    if np.isneginf(m).any():
        raise InvalidMaskError("masked_softmax row with no visible entries")
    e = np.exp(shifted - m)
    return e / e.sum(axis=-1, keepdims=True)


def quiet_softmax(logits: np.ndarray, visible: np.ndarray) -> np.ndarray:
    """Softmax with a one added to the denominator (escape in the negative
    orthant): visible entries get exp(w) / (1 + sum exp(w)), so row sums
    stay strictly below one and an all-invisible row is legal (all zeros).

    Stabilized by shifting with m = max(0, max visible logit), replacing
    the additive one with exp(-m).
    """
    logits = np.asarray(logits, dtype=F32)
    visible = np.asarray(visible, dtype=bool)
    shifted = np.where(visible, logits, _NEG_INF)
    m = np.maximum(F32(0.0), shifted.max(axis=-1, keepdims=True, initial=_NEG_INF))
    e = np.exp(shifted - m)
    return e / (np.exp(-m) + e.sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class AttentionScores:
    """Raw per-head logits and their normalized weights, [heads x tq x tk]."""

    logits: np.ndarray
    weights: np.ndarray


@dataclass
class MhsaWeights:
    """Projection matrices for one self-attention layer."""

    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    heads: int
    dim: int

    def __post_init__(self):
        if self.heads < 1 or self.dim % self.heads != 0:
            raise InvalidArgumentError(
                f"model dim {self.dim} not divisible by heads {self.heads}"
            )
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (self.dim, self.dim):
                raise InvalidShapeError(f"{name} must be [{self.dim} x {self.dim}]")
        for name in ("bq", "bk", "bv", "bo"):
            if getattr(self, name).shape != (self.dim,):
                raise InvalidShapeError(f"{name} must be [{self.dim}]")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass
class KvCache:
    """Cached keys/values of already consumed frames for one layer.

    Exclusively owned by one stream. ``max_frames`` caps the history;
    truncation only ever drops the oldest frames.
    """

    keys: np.ndarray
    values: np.ndarray
    max_frames: int | None = None
    frames_cached: int = field(init=False)

    def __post_init__(self):
        self.frames_cached = self.keys.shape[0]

    @classmethod
    def empty(cls, dim: int, max_frames: int | None = None) -> "KvCache":
        z = np.zeros((0, dim), dtype=F32)
        return cls(keys=z, values=z.copy(), max_frames=max_frames)

    def append(self, k: np.ndarray, v: np.ndarray) -> None:
        self.keys = np.concatenate([self.keys, k], axis=0)
        self.values = np.concatenate([self.values, v], axis=0)
        self.frames_cached = self.keys.shape[0]

    def truncate(self) -> None:
        if self.max_frames is not None and self.frames_cached > self.max_frames:
            self.keys = self.keys[self.frames_cached - self.max_frames :]
            self.values = self.values[self.frames_cached - self.max_frames :]
            self.frames_cached = self.keys.shape[0]


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    t, d = x.shape
    return x.reshape(t, heads, d // heads).transpose(1, 0, 2)


def _attend(
    q: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    w: MhsaWeights,
    visible: np.ndarray,
    use_quiet: bool,
) -> np.ndarray:
    """Scaled dot-product attention shared by the batch and streaming paths."""
    qh = _split_heads(q, w.heads)
    kh = _split_heads(keys, w.heads)
    vh = _split_heads(values, w.heads)
    scale = F32(1.0 / math.sqrt(w.head_dim))
    logits = np.einsum("hqd,hkd->hqk", qh, kh) * scale
    norm = quiet_softmax if use_quiet else masked_softmax
    weights = norm(logits, visible)
    ctx = np.einsum("hqk,hkd->hqd", weights, vh)
    t = q.shape[0]
    return ctx.transpose(1, 0, 2).reshape(t, w.dim)


def attention_scores(
    x: np.ndarray, w: MhsaWeights, mask: AttentionMask, use_quiet: bool = False
) -> AttentionScores:
    """Logits and normalized weights for a full-sequence forward (diagnostic)."""
    x = np.asarray(x, dtype=F32)
    q = _split_heads(linear(x, w.wq, w.bq), w.heads)
    k = _split_heads(linear(x, w.wk, w.bk), w.heads)
    scale = F32(1.0 / math.sqrt(w.head_dim))
    logits = np.einsum("hqd,hkd->hqk", q, k) * scale
    norm = quiet_softmax if use_quiet else masked_softmax
    return AttentionScores(logits=logits, weights=norm(logits, mask.visible))


def mhsa_forward(
    x: np.ndarray,
    w: MhsaWeights,
    mask: AttentionMask,
    use_quiet: bool = False,
) -> np.ndarray:
    """Full-sequence multi-head self-attention under a visibility mask."""
    x = np.asarray(x, dtype=F32)
    if x.ndim != 2 or x.shape[1] != w.dim:
        raise InvalidShapeError(f"expected input [T x {w.dim}], got {x.shape}")
    t = x.shape[0]
    if mask.t_query != t or mask.t_key != t:
        raise InvalidShapeError(
            f"mask is [{mask.t_query} x {mask.t_key}] but input has {t} frames"
        )
    if t == 0:
        return np.zeros((0, w.dim), dtype=F32)
    q = linear(x, w.wq, w.bq)
    k = linear(x, w.wk, w.bk)
    v = linear(x, w.wv, w.bv)
    out = _attend(q, k, v, w, mask.visible, use_quiet)
    return linear(out, w.wo, w.bo)


def mhsa_streaming_step(
    cache: KvCache,
    x_chunk: np.ndarray,
    w: MhsaWeights,
    use_quiet: bool = False,
) -> tuple[np.ndarray, KvCache]:
    """Attention over cached history plus the incoming chunk.

    The chunk's keys/values are appended to the cache first, so every chunk
    frame attends to all cached frames and to every frame of its own chunk
    (within-chunk future included). The cache is truncated to its frame cap
    after the step.
    """
    x_chunk = np.asarray(x_chunk, dtype=F32)
    if x_chunk.ndim != 2 or x_chunk.shape[1] != w.dim:
        raise InvalidShapeError(f"expected chunk [c x {w.dim}], got {x_chunk.shape}")
    if x_chunk.shape[0] == 0:
        raise InvalidArgumentError("streaming attention step needs a non-empty chunk")
    cache.append(linear(x_chunk, w.wk, w.bk), linear(x_chunk, w.wv, w.bv))
    q = linear(x_chunk, w.wq, w.bq)
    visible = np.ones((x_chunk.shape[0], cache.frames_cached), dtype=bool)
    out = _attend(q, cache.keys, cache.values, w, visible, use_quiet)
    cache.truncate()
    return linear(out, w.wo, w.bo), cache
