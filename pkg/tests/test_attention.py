import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvc2.attention import (
    KvCache,
    MhsaWeights,
    attention_scores,
    masked_softmax,
    mhsa_forward,
    mhsa_streaming_step,
    quiet_softmax,
)
from dvc2.errors import InvalidArgumentError, InvalidMaskError, InvalidShapeError
from dvc2.masking import FULL, ChunkSpec, build_chunk_attention_mask


def make_weights(rng, dim=16, heads=4) -> MhsaWeights:
    def mat():
        return rng.uniform(-0.5, 0.5, (dim, dim)).astype(np.float32)

    def vec():
        return rng.uniform(-0.1, 0.1, dim).astype(np.float32)

    return MhsaWeights(
        wq=mat(), bq=vec(), wk=mat(), bk=vec(), wv=mat(), bv=vec(),
        wo=mat(), bo=vec(), heads=heads, dim=dim,
    )


def naive_mhsa(x, w, visible, use_quiet):
    """Per-frame float64 oracle that rebuilds each row's visible set."""
    x = x.astype(np.float64)
    q = x @ w.wq.astype(np.float64) + w.bq
    k = x @ w.wk.astype(np.float64) + w.bk
    v = x @ w.wv.astype(np.float64) + w.bv
    t, d = x.shape
    dh = d // w.heads
    ctx = np.zeros((t, d))
    for i in range(t):
        js = [j for j in range(t) if visible[i, j]]
        for h in range(w.heads):
            sl = slice(h * dh, (h + 1) * dh)
            logits = np.array([q[i, sl] @ k[j, sl] for j in js]) / math.sqrt(dh)
            e = np.exp(logits - max(0.0, logits.max(initial=-np.inf)))
            denom = e.sum()
            if use_quiet:
                denom += math.exp(-max(0.0, logits.max(initial=-np.inf)))
            weights = e / denom
            for wj, j in zip(weights, js):
                ctx[i, sl] += wj * v[j, sl]
    return ctx @ w.wo.astype(np.float64) + w.bo


# --- softmax rows -------------------------------------------------------------


def test_masked_softmax_symmetric():
    out = masked_softmax(np.zeros(2, np.float32), np.ones(2, bool))
    assert np.allclose(out, [0.5, 0.5], atol=1e-7)


def test_masked_softmax_single_visible():
    out = masked_softmax(np.array([5.0, 123.0], np.float32), np.array([True, False]))
    assert np.array_equal(out, np.array([1.0, 0.0], np.float32))


def test_masked_softmax_frozen_values():
    out = masked_softmax(np.array([1.0, 2.0, 3.0], np.float32), np.ones(3, bool))
    assert np.allclose(out, [0.0900, 0.2447, 0.6652], atol=1e-4)


def test_masked_softmax_all_invisible_rejected():
    with pytest.raises(InvalidMaskError):
        masked_softmax(np.zeros(3, np.float32), np.zeros(3, bool))


def test_masked_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((10, 12)).astype(np.float32) * 5
    visible = rng.random((10, 12)) < 0.7
    visible[:, 0] = True
    out = masked_softmax(logits, visible)
    assert np.abs(out.sum(axis=-1) - 1.0).max() <= 1e-5
    assert (out >= 0).all()
    assert (out[~visible] == 0).all()


def test_quiet_softmax_single_zero_logit():
    out = quiet_softmax(np.zeros(1, np.float32), np.ones(1, bool))
    assert np.allclose(out, [0.5], atol=1e-7)


def test_quiet_softmax_attends_to_nothing():
    out = quiet_softmax(np.full(2, -1e9, np.float32), np.ones(2, bool))
    assert np.array_equal(out, np.zeros(2, np.float32))


def test_quiet_softmax_all_invisible_is_legal():
    out = quiet_softmax(np.zeros(3, np.float32), np.zeros(3, bool))
    assert np.array_equal(out, np.zeros(3, np.float32))


def test_quiet_softmax_row_sums_below_one():
    rng = np.random.default_rng(1)
    # at moderate logit scales the +1 term is representable in float32 and
    # the strict inequality survives rounding
    logits = rng.uniform(-8, 8, (50, 9)).astype(np.float32)
    out = quiet_softmax(logits, np.ones((50, 9), bool))
    sums = out.sum(axis=-1)
    assert (sums < 1.0).all()
    assert (out >= 0).all()


def test_quiet_softmax_row_sums_never_exceed_one():
    rng = np.random.default_rng(1)
    logits = rng.standard_normal((50, 9)).astype(np.float32) * 10
    out = quiet_softmax(logits, np.ones((50, 9), bool))
    assert (out.sum(axis=-1) <= 1.0 + 1e-6).all()


def test_quiet_softmax_stable_for_huge_logits():
    out = quiet_softmax(np.array([1e4, 1e4], np.float32), np.ones(2, bool))
    assert np.isfinite(out).all()
    assert np.allclose(out.sum(), 1.0, atol=1e-5)


def test_quiet_escape_at_minus_fifty():
    out = quiet_softmax(np.full(16, -50.0, np.float32), np.ones(16, bool))
    assert out.max() < 1e-20


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-60, 60), min_size=1, max_size=32))
def test_quiet_equals_masked_with_appended_zero(row):
    logits = np.array(row, dtype=np.float32)
    visible = np.ones(len(row), dtype=bool)
    quiet = quiet_softmax(logits, visible)
    ref = masked_softmax(
        np.concatenate([logits, np.zeros(1, np.float32)]),
        np.concatenate([visible, [True]]),
    )[: len(row)]
    assert np.abs(quiet - ref).max() <= 1e-6


# --- full-sequence attention --------------------------------------------------


def test_mhsa_single_frame_is_value_then_output_projection():
    rng = np.random.default_rng(2)
    w = make_weights(rng)
    x = rng.standard_normal((1, 16)).astype(np.float32)
    out = mhsa_forward(x, w, build_chunk_attention_mask(1, FULL), use_quiet=False)
    v = x @ w.wv + w.bv
    expected = v @ w.wo + w.bo
    assert np.allclose(out, expected, atol=1e-5)


def test_mhsa_full_mask_equals_large_chunk_mask():
    rng = np.random.default_rng(3)
    w = make_weights(rng)
    x = rng.standard_normal((6, 16)).astype(np.float32)
    full = mhsa_forward(x, w, build_chunk_attention_mask(6, FULL))
    chunked = mhsa_forward(x, w, build_chunk_attention_mask(6, ChunkSpec(10)))
    assert np.array_equal(full, chunked)


@pytest.mark.parametrize("use_quiet", [False, True])
def test_mhsa_matches_naive_per_frame_oracle(use_quiet):
    rng = np.random.default_rng(4)
    w = make_weights(rng)
    x = rng.standard_normal((6, 16)).astype(np.float32)
    mask = build_chunk_attention_mask(6, ChunkSpec(2))
    out = mhsa_forward(x, w, mask, use_quiet=use_quiet)
    expected = naive_mhsa(x, w, mask.visible, use_quiet)
    assert np.abs(out - expected).max() <= 1e-5


def test_mhsa_mask_extent_mismatch():
    rng = np.random.default_rng(5)
    w = make_weights(rng)
    x = rng.standard_normal((4, 16)).astype(np.float32)
    with pytest.raises(InvalidShapeError):
        mhsa_forward(x, w, build_chunk_attention_mask(5, FULL))


def test_mhsa_quiet_row_weights_shrink_with_negative_logits():
    rng = np.random.default_rng(6)
    w = make_weights(rng)
    x = rng.standard_normal((4, 16)).astype(np.float32)
    scores = attention_scores(x, w, build_chunk_attention_mask(4, FULL), use_quiet=True)
    sums = scores.weights.sum(axis=-1)
    assert (sums < 1.0).all()
    assert (sums >= 0.0).all()


def test_mhsa_empty_input():
    rng = np.random.default_rng(7)
    w = make_weights(rng)
    out = mhsa_forward(
        np.zeros((0, 16), np.float32), w, build_chunk_attention_mask(0, ChunkSpec(4))
    )
    assert out.shape == (0, 16)


# --- streaming attention ------------------------------------------------------


def test_streaming_first_chunk_equals_full_forward():
    rng = np.random.default_rng(8)
    w = make_weights(rng)
    x = rng.standard_normal((5, 16)).astype(np.float32)
    cache = KvCache.empty(16)
    out, cache = mhsa_streaming_step(cache, x, w)
    full = mhsa_forward(x, w, build_chunk_attention_mask(5, FULL))
    assert np.abs(out - full).max() <= 1e-5
    assert cache.frames_cached == 5


@pytest.mark.parametrize("chunk", [1, 2, 4, 8, 16])
@pytest.mark.parametrize("use_quiet", [False, True])
def test_streaming_concatenation_matches_masked_forward(chunk, use_quiet):
    rng = np.random.default_rng(chunk * 10 + int(use_quiet))
    w = make_weights(rng)
    t = int(rng.integers(chunk, 100))
    x = rng.standard_normal((t, 16)).astype(np.float32)
    cache = KvCache.empty(16)
    parts = []
    for start in range(0, t, chunk):
        out, cache = mhsa_streaming_step(cache, x[start : start + chunk], w, use_quiet)
        parts.append(out)
    streamed = np.concatenate(parts)
    masked = mhsa_forward(
        x, w, build_chunk_attention_mask(t, ChunkSpec(chunk)), use_quiet
    )
    assert np.abs(streamed - masked).max() <= 1e-5


def test_streaming_left_cap_third_chunk_attends_to_two_chunks():
    rng = np.random.default_rng(9)
    w = make_weights(rng)
    c = 4
    cache = KvCache.empty(16, max_frames=1 * c)
    chunks = [rng.standard_normal((c, 16)).astype(np.float32) for _ in range(3)]
    out3 = None
    for chunk in chunks:
        # cache never exceeds the cap between steps
        assert cache.frames_cached <= c
        out3, cache = mhsa_streaming_step(cache, chunk, w)
    assert cache.frames_cached == c  # truncated back to the cap after the step
    # the third chunk saw exactly 2C keys: chunk 2 (cached) plus itself
    seq = np.concatenate([chunks[1], chunks[2]])
    full = mhsa_forward(seq, w, build_chunk_attention_mask(2 * c, FULL))
    assert np.abs(out3 - full[c:]).max() <= 1e-5


def test_streaming_left_cap_matches_capped_mask():
    rng = np.random.default_rng(10)
    w = make_weights(rng)
    c, t = 3, 18
    x = rng.standard_normal((t, 16)).astype(np.float32)
    cache = KvCache.empty(16, max_frames=2 * c)
    parts = []
    for start in range(0, t, c):
        out, cache = mhsa_streaming_step(cache, x[start : start + c], w)
        parts.append(out)
    masked = mhsa_forward(
        x, w, build_chunk_attention_mask(t, ChunkSpec(c, left_chunks=2))
    )
    assert np.abs(np.concatenate(parts) - masked).max() <= 1e-5


def test_streaming_rejects_empty_chunk():
    rng = np.random.default_rng(11)
    w = make_weights(rng)
    with pytest.raises(InvalidArgumentError):
        mhsa_streaming_step(KvCache.empty(16), np.zeros((0, 16), np.float32), w)


def test_streaming_causality_bitstable():
    rng = np.random.default_rng(12)
    w = make_weights(rng)
    chunks = [rng.standard_normal((4, 16)).astype(np.float32) for _ in range(4)]
    cache = KvCache.empty(16)
    first_outputs = []
    for ch in chunks:
        out, cache = mhsa_streaming_step(cache, ch, w)
        first_outputs.append(out)
    # replay with the last chunk perturbed: earlier outputs identical
    cache = KvCache.empty(16)
    for i, ch in enumerate(chunks[:-1]):
        out, cache = mhsa_streaming_step(cache, ch, w)
        assert np.array_equal(out, first_outputs[i])
