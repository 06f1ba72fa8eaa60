import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvc2.conv import (
    ConvCache,
    ConvWeights,
    DualModeConv,
    conv1d_reference,
    conv_streaming_step,
    dmc_train_forward,
    masked_conv_oracle,
)
from dvc2.errors import InvalidArgumentError, InvalidMaskError, InvalidShapeError
from dvc2.masking import ChunkSpec, FutureMaskPlan, chunk_future_mask_plan


def taps(values) -> ConvWeights:
    return ConvWeights(depthwise=np.asarray(values, dtype=np.float32))


def column(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float32).reshape(-1, 1)


def direct_masked_conv(x, w, n_per_frame):
    """Float64 per-frame summation oracle for the masked convolution."""
    t, d = x.shape
    k = w.kernel
    half = k // 2
    out = np.zeros((t, d))
    for ti in range(t):
        for c in range(d):
            acc = 0.0
            for j in range(k - int(n_per_frame[ti])):
                src = ti + j - half
                if 0 <= src < t:
                    acc += float(w.depthwise[c, j]) * float(x[src, c])
            out[ti, c] = acc
    return out


def test_reference_hand_example():
    out = conv1d_reference(column([1, 2, 3, 4]), taps([[1, 1, 1]]))
    assert np.array_equal(out, column([3, 6, 9, 7]))


def test_reference_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((9, 3)).astype(np.float32)
    delta = np.zeros((3, 5), dtype=np.float32)
    delta[:, 2] = 1.0
    assert np.array_equal(conv1d_reference(x, ConvWeights(depthwise=delta)), x)


def test_reference_kernel_one_scales():
    x = column([1, 2, 3])
    out = conv1d_reference(x, taps([[2.0]]))
    assert np.array_equal(out, column([2, 4, 6]))


def test_even_kernel_rejected():
    with pytest.raises(InvalidArgumentError):
        ConvWeights(depthwise=np.ones((1, 4), dtype=np.float32))


def test_masked_oracle_hand_example():
    plan = FutureMaskPlan(kernel=3, n_per_frame=np.ones(4, dtype=int))
    out = masked_conv_oracle(column([1, 2, 3, 4]), taps([[1, 1, 1]]), plan)
    assert np.array_equal(out, column([1, 3, 5, 7]))


def test_masked_oracle_zero_plan_is_reference():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((12, 4)).astype(np.float32)
    w = ConvWeights(depthwise=rng.standard_normal((4, 7)).astype(np.float32))
    plan = FutureMaskPlan(kernel=7, n_per_frame=np.zeros(12, dtype=int))
    assert np.array_equal(masked_conv_oracle(x, w, plan), conv1d_reference(x, w))


def test_masked_oracle_full_plan_is_causal():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((10, 2)).astype(np.float32)
    w = ConvWeights(depthwise=rng.standard_normal((2, 5)).astype(np.float32))
    plan = FutureMaskPlan(kernel=5, n_per_frame=np.full(10, 2, dtype=int))
    out = masked_conv_oracle(x, w, plan)
    expected = direct_masked_conv(x, w, np.full(10, 2))
    assert np.abs(out - expected).max() <= 1e-5


def test_masked_oracle_matches_direct_summation():
    rng = np.random.default_rng(3)
    for _ in range(20):
        t = int(rng.integers(1, 20))
        d = int(rng.integers(1, 5))
        k = int(rng.choice([1, 3, 5, 7]))
        x = rng.standard_normal((t, d)).astype(np.float32)
        w = ConvWeights(depthwise=rng.standard_normal((d, k)).astype(np.float32))
        n = rng.integers(0, k // 2 + 1, size=t)
        plan = FutureMaskPlan(kernel=k, n_per_frame=n)
        out = masked_conv_oracle(x, w, plan)
        assert np.abs(out - direct_masked_conv(x, w, n)).max() <= 1e-5


def test_masked_oracle_rejects_bad_plan():
    x = column([1, 2, 3])
    with pytest.raises(InvalidMaskError):
        masked_conv_oracle(x, taps([[1, 1, 1]]), FutureMaskPlan(3, np.zeros(2, int)))
    with pytest.raises(InvalidArgumentError):
        FutureMaskPlan(3, np.array([0, 2, 0]))


def test_mask_monotonic_in_single_frame():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((8, 3)).astype(np.float32)
    w = ConvWeights(depthwise=rng.standard_normal((3, 5)).astype(np.float32))
    base_n = np.zeros(8, dtype=int)
    base = masked_conv_oracle(x, w, FutureMaskPlan(5, base_n))
    bumped_n = base_n.copy()
    bumped_n[3] = 2
    bumped = masked_conv_oracle(x, w, FutureMaskPlan(5, bumped_n))
    diff = np.abs(base - bumped).max(axis=1)
    assert (diff[np.arange(8) != 3] == 0).all()


class ForcedRng:
    def __init__(self, values):
        self.values = list(values)

    def integers(self, low, high):
        return self.values.pop(0)


def test_dmc_forced_zero_equals_reference():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 2)).astype(np.float32)
    w = ConvWeights(depthwise=rng.standard_normal((2, 7)).astype(np.float32))
    out, plan = dmc_train_forward(x, w, ForcedRng([0] * 6))
    assert np.array_equal(out, conv1d_reference(x, w))
    assert plan.n_per_frame.tolist() == [0] * 6


def test_dmc_equals_masked_oracle_on_recorded_plan():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(30):
        t = int(rng.integers(1, 40))
        d = int(rng.integers(1, 8))
        k = int(rng.choice([3, 7, 15]))
        x = rng.standard_normal((t, d)).astype(np.float32)
        w = ConvWeights(depthwise=rng.standard_normal((d, k)).astype(np.float32))
        out, plan = dmc_train_forward(x, w, rng)
        worst = max(worst, float(np.abs(out - masked_conv_oracle(x, w, plan)).max(initial=0)))
    assert worst <= 1e-6


def test_dmc_single_frame_left_pad():
    x = column([5.0])
    w = taps([[2.0, 3.0, 4.0]])
    out, plan = dmc_train_forward(x, w, ForcedRng([1]))
    # window is [pad=0, x0, future-masked] so only the center tap fires
    assert plan.n_per_frame.tolist() == [1]
    assert np.array_equal(out, column([15.0]))


# --- streaming ----------------------------------------------------------------


def test_streaming_hand_example():
    w = taps([[1, 1, 1]])
    cache = ConvCache.fresh(1, 3)
    out1, cache = conv_streaming_step(cache, column([1, 2]), w)
    out2, cache = conv_streaming_step(cache, column([3, 4]), w)
    assert np.array_equal(out1, column([3, 3]))
    assert np.array_equal(out2, column([9, 7]))
    assert cache.frames_seen == 4


def test_streaming_single_chunk_equals_reference():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((9, 3)).astype(np.float32)
    w = ConvWeights(depthwise=rng.standard_normal((3, 5)).astype(np.float32))
    out, _ = conv_streaming_step(ConvCache.fresh(3, 5), x, w)
    assert np.array_equal(out, conv1d_reference(x, w))


def test_streaming_identity_kernel_any_chunking():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((11, 2)).astype(np.float32)
    delta = np.zeros((2, 5), dtype=np.float32)
    delta[:, 2] = 1.0
    w = ConvWeights(depthwise=delta)
    cache = ConvCache.fresh(2, 5)
    parts = []
    for start in (0, 3, 4, 9):
        end = (3, 4, 9, 11)[(0, 3, 4, 9).index(start)]
        out, cache = conv_streaming_step(cache, x[start:end], w)
        parts.append(out)
    assert np.array_equal(np.concatenate(parts), x)


@pytest.mark.parametrize("chunk", [1, 2, 3, 5, 8])
def test_streaming_matches_masked_oracle_with_chunk_plan(chunk):
    rng = np.random.default_rng(chunk)
    for _ in range(5):
        t = int(rng.integers(1, 64))
        d = int(rng.integers(1, 6))
        k = int(rng.choice([3, 7, 15]))
        x = rng.standard_normal((t, d)).astype(np.float32)
        w = ConvWeights(depthwise=rng.standard_normal((d, k)).astype(np.float32))
        cache = ConvCache.fresh(d, k)
        parts = []
        for start in range(0, t, chunk):
            out, cache = conv_streaming_step(cache, x[start : start + chunk], w)
            parts.append(out)
        streamed = np.concatenate(parts)
        plan = chunk_future_mask_plan(t, k, ChunkSpec(chunk))
        expected = masked_conv_oracle(x, w, plan)
        assert np.abs(streamed - expected).max(initial=0) <= 1e-6


def test_streaming_chunk_causality_exact():
    rng = np.random.default_rng(9)
    w = ConvWeights(depthwise=rng.standard_normal((2, 7)).astype(np.float32))
    chunks = [rng.standard_normal((4, 2)).astype(np.float32) for _ in range(3)]
    cache = ConvCache.fresh(2, 7)
    baseline = []
    for ch in chunks:
        out, cache = conv_streaming_step(cache, ch, w)
        baseline.append(out)
    cache = ConvCache.fresh(2, 7)
    perturbed = [chunks[0], chunks[1] + 1.0, chunks[2]]
    out0, cache = conv_streaming_step(cache, perturbed[0], w)
    assert np.array_equal(out0, baseline[0])


def test_streaming_rejects_empty_chunk():
    with pytest.raises(InvalidArgumentError):
        conv_streaming_step(ConvCache.fresh(1, 3), np.zeros((0, 1), np.float32), taps([[1, 1, 1]]))


def test_streaming_small_chunks_carry_cache():
    # chunk smaller than kernel//2 must preserve older cache frames
    w = taps([[1, 1, 1, 1, 1]])
    cache = ConvCache.fresh(1, 5)
    parts = []
    x = column([1, 2, 3, 4, 5, 6])
    for i in range(6):
        out, cache = conv_streaming_step(cache, x[i : i + 1], w)
        parts.append(out)
    streamed = np.concatenate(parts)
    plan = chunk_future_mask_plan(6, 5, ChunkSpec(1))
    assert np.array_equal(streamed, masked_conv_oracle(x, w, plan))


def test_dual_mode_branch_selection():
    rng = np.random.default_rng(10)
    a = ConvWeights(depthwise=rng.standard_normal((2, 3)).astype(np.float32))
    b = ConvWeights(depthwise=rng.standard_normal((2, 3)).astype(np.float32))
    dual = DualModeConv(streaming_branch=a, nonstreaming_branch=b)
    assert dual.branch("streaming") is a
    assert dual.branch("nonstreaming") is b
    with pytest.raises(InvalidArgumentError):
        dual.branch("bogus")


def test_dual_mode_mismatched_branches_rejected():
    a = ConvWeights(depthwise=np.ones((2, 3), dtype=np.float32))
    b = ConvWeights(depthwise=np.ones((2, 5), dtype=np.float32))
    with pytest.raises(InvalidShapeError):
        DualModeConv(streaming_branch=a, nonstreaming_branch=b)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.sampled_from([1, 3, 5]), st.integers(1, 6))
def test_streaming_emits_once_per_frame(t, k, chunk):
    rng = np.random.default_rng(t * 100 + k)
    x = rng.standard_normal((t, 2)).astype(np.float32)
    w = ConvWeights(depthwise=rng.standard_normal((2, k)).astype(np.float32))
    cache = ConvCache.fresh(2, k)
    total = 0
    for start in range(0, t, chunk):
        out, cache = conv_streaming_step(cache, x[start : start + chunk], w)
        total += out.shape[0]
        assert out.shape[0] == min(chunk, t - start)
    assert total == t
    assert cache.frames_seen == t
