"""Depthwise convolution kernels: centered reference, future-masked oracle,
randomly masked training forward, and the cached streaming step.

All four entry points share one windows-then-contract code path
(``einsum('tjc,cj->tc')`` over per-frame windows), so the equivalences the
engine relies on hold exactly: a zero future-mask plan reproduces the
reference convolution bit for bit, and the streaming step reproduces the
masked oracle under the chunk-derived plan.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, InvalidMaskError, InvalidShapeError
from .masking import FutureMaskPlan, sample_dmc_n
from .tensor import F32

MODE_STREAMING = "streaming"
MODE_NONSTREAMING = "nonstreaming"


@dataclass
class ConvWeights:
    """One convolution branch: per-channel depthwise taps plus the optional
    pointwise pre/post projections of the surrounding conv module."""

    depthwise: np.ndarray  # [d x k], tap k//2 is the current frame
    pre_w: np.ndarray | None = None  # [d x 2d], gated linear unit input
    pre_b: np.ndarray | None = None
    post_w: np.ndarray | None = None  # [d x d]
    post_b: np.ndarray | None = None

    def __post_init__(self):
        if self.depthwise.ndim != 2:
            raise InvalidShapeError("depthwise taps must be a [d x k] array")
        if self.kernel % 2 == 0:
            raise InvalidArgumentError(f"kernel size must be odd, got {self.kernel}")

    @property
    def dim(self) -> int:
        return self.depthwise.shape[0]

    @property
    def kernel(self) -> int:
        return self.depthwise.shape[1]


@dataclass
class DualModeConv:
    """Two parallel convolution branches, one per inference mode."""

    streaming_branch: ConvWeights
    nonstreaming_branch: ConvWeights
    active_mode: str = MODE_NONSTREAMING

    def __post_init__(self):
        s, n = self.streaming_branch, self.nonstreaming_branch
        if (s.dim, s.kernel) != (n.dim, n.kernel):
            raise InvalidShapeError("dual-mode branches must share dim and kernel")
        if self.active_mode not in (MODE_STREAMING, MODE_NONSTREAMING):
            raise InvalidArgumentError(f"unknown conv mode {self.active_mode!r}")

    def branch(self, mode: str) -> ConvWeights:
        if mode == MODE_STREAMING:
            return self.streaming_branch
        if mode == MODE_NONSTREAMING:
            return self.nonstreaming_branch
        raise InvalidArgumentError(f"unknown conv mode {mode!r}")


@dataclass
class ConvCache:
    """Last kernel//2 input frames of the previous chunk (zeros at start)."""

    left: np.ndarray
    frames_seen: int = 0

    @classmethod
    def fresh(cls, dim: int, kernel: int) -> "ConvCache":
        return cls(left=np.zeros((kernel // 2, dim), dtype=F32))


def _windows(x: np.ndarray, kernel: int) -> np.ndarray:
    """Per-frame receptive fields [T x k x d], zero-padded at both edges."""
    t, d = x.shape
    half = kernel // 2
    padded = np.zeros((t + 2 * half, d), dtype=F32)
    padded[half : half + t] = x
    win = np.empty((t, kernel, d), dtype=F32)
    for j in range(kernel):
        win[:, j, :] = padded[j : j + t]
    return win


def _contract(windows: np.ndarray, taps: np.ndarray) -> np.ndarray:
    return np.einsum("tjc,cj->tc", windows, taps)


def conv1d_reference(x: np.ndarray, w: ConvWeights) -> np.ndarray:
    """Centered depthwise convolution with zero padding on both sides:
    y[t,c] = sum_j taps[c,j] * x[t + j - k//2, c]."""
    x = np.asarray(x, dtype=F32)
    if x.ndim != 2 or x.shape[1] != w.dim:
        raise InvalidShapeError(f"expected input [T x {w.dim}], got {x.shape}")
    return _contract(_windows(x, w.kernel), w.depthwise)


def masked_conv_oracle(
    x: np.ndarray, w: ConvWeights, plan: FutureMaskPlan
) -> np.ndarray:
    """Reference convolution with the last ``plan.n_per_frame[t]`` taps of
    each output frame's receptive field reading zero."""
    x = np.asarray(x, dtype=F32)
    if x.ndim != 2 or x.shape[1] != w.dim:
        raise InvalidShapeError(f"expected input [T x {w.dim}], got {x.shape}")
    if plan.kernel != w.kernel:
        raise InvalidMaskError(
            f"plan kernel {plan.kernel} does not match weights kernel {w.kernel}"
        )
    n = plan.n_per_frame
    if n.shape[0] != x.shape[0]:
        raise InvalidMaskError(
            f"plan covers {n.shape[0]} frames but input has {x.shape[0]}"
        )
    win = _windows(x, w.kernel)
    keep = np.arange(w.kernel)[None, :] < (w.kernel - n)[:, None]
    return _contract(win * keep[:, :, None], w.depthwise)


def dmc_train_forward(
    x: np.ndarray, w: ConvWeights, rng
) -> tuple[np.ndarray, FutureMaskPlan]:
    """Training-mode forward: unfold into per-frame windows, draw an
    independent masked-future length for every output frame, zero those
    window rows, contract against the taps.

    Returns the output together with the recorded plan so the equivalent
    masked convolution can be replayed on it.
    """
    x = np.asarray(x, dtype=F32)
    if x.ndim != 2 or x.shape[1] != w.dim:
        raise InvalidShapeError(f"expected input [T x {w.dim}], got {x.shape}")
    n = np.array(
        [sample_dmc_n(w.kernel, rng) for _ in range(x.shape[0])], dtype=np.int64
    )
    plan = FutureMaskPlan(kernel=w.kernel, n_per_frame=n)
    return masked_conv_oracle(x, w, plan), plan


def conv_streaming_step(
    cache: ConvCache, x_chunk: np.ndarray, w: ConvWeights
) -> tuple[np.ndarray, ConvCache]:
    """Convolve one chunk against cached left context.

    Frames past the chunk's last frame are read as zero (future is not
    buffered), which is exactly the condition the randomly masked training
    forward prepares the weights for. Each output frame is emitted once and
    never revised; the cache advances to the chunk's trailing frames.
    """
    x_chunk = np.asarray(x_chunk, dtype=F32)
    if x_chunk.ndim != 2 or x_chunk.shape[1] != w.dim:
        raise InvalidShapeError(f"expected chunk [c x {w.dim}], got {x_chunk.shape}")
    c = x_chunk.shape[0]
    if c == 0:
        raise InvalidArgumentError("streaming convolution step needs a non-empty chunk")
    half = w.kernel // 2
    if cache.left.shape != (half, w.dim):
        raise InvalidShapeError(
            f"cache holds {cache.left.shape}, expected [{half} x {w.dim}]"
        )
    ext = np.concatenate([cache.left, x_chunk, np.zeros((half, w.dim), dtype=F32)])
    win = np.empty((c, w.kernel, w.dim), dtype=F32)
    for j in range(w.kernel):
        win[:, j, :] = ext[j : j + c]
    out = _contract(win, w.depthwise)
    if half:
        carried = np.concatenate([cache.left, x_chunk]) if c < half else x_chunk
        cache.left = carried[-half:].copy()
    cache.frames_seen += c
    return out, cache
