import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvc2.errors import InvalidArgumentError
from dvc2.masking import (
    FULL,
    ChunkSpec,
    FutureMaskPlan,
    build_chunk_attention_mask,
    chunk_future_mask_plan,
    last_visible_index,
    sample_dct_chunk,
    sample_dmc_n,
)


class ScriptedRng:
    """Minimal generator stub that replays fixed draws."""

    def __init__(self, randoms=(), integers=()):
        self._randoms = list(randoms)
        self._integers = list(integers)

    def random(self):
        return self._randoms.pop(0)

    def integers(self, low, high):
        value = self._integers.pop(0)
        assert low <= value < high
        return value


def test_chunkspec_validation():
    with pytest.raises(InvalidArgumentError):
        ChunkSpec(chunk_frames=0)
    with pytest.raises(InvalidArgumentError):
        ChunkSpec(chunk_frames=4, left_chunks=-1)
    assert FULL.is_full
    assert ChunkSpec.full().is_full


def test_sample_dct_forced_full_branch():
    spec = sample_dct_chunk(ScriptedRng(randoms=[0.49]), t_frames=100)
    assert spec.is_full


def test_sample_dct_rejects_empty_sequence():
    with pytest.raises(InvalidArgumentError):
        sample_dct_chunk(ScriptedRng(randoms=[0.1]), t_frames=0)


def test_sample_dct_forced_chunk_branch():
    spec = sample_dct_chunk(ScriptedRng(randoms=[0.5], integers=[1]), t_frames=100)
    assert spec.chunk_frames == 1


def test_sample_dct_distribution():
    rng = np.random.default_rng(12)
    draws = 10_000
    full = 0
    counts = np.zeros(21, dtype=int)
    for _ in range(draws):
        spec = sample_dct_chunk(rng, 50)
        if spec.is_full:
            full += 1
        else:
            counts[spec.chunk_frames] += 1
    assert 0.45 <= full / draws <= 0.55
    for size in range(1, 21):
        assert abs(counts[size] / draws - 0.025) <= 0.01


def test_chunk_mask_two_frame_chunks():
    mask = build_chunk_attention_mask(4, ChunkSpec(2)).visible
    expected = np.array(
        [
            [1, 1, 0, 0],
            [1, 1, 0, 0],
            [1, 1, 1, 1],
            [1, 1, 1, 1],
        ],
        dtype=bool,
    )
    assert np.array_equal(mask, expected)


def test_chunk_mask_chunk_covers_sequence():
    mask = build_chunk_attention_mask(3, ChunkSpec(5)).visible
    assert mask.all()


def test_chunk_mask_single_frame_chunks_are_causal():
    mask = build_chunk_attention_mask(3, ChunkSpec(1)).visible
    expected = np.tril(np.ones((3, 3), dtype=bool))
    assert np.array_equal(mask, expected)


def test_chunk_mask_left_cap():
    mask = build_chunk_attention_mask(6, ChunkSpec(2, left_chunks=1)).visible
    # frame 4 (chunk 2) must not see chunk 0
    assert not mask[4, 0]
    assert mask[4, 2] and mask[4, 4]


def test_full_mask_all_visible():
    assert build_chunk_attention_mask(5, FULL).visible.all()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 12))
def test_mask_rows_identical_within_chunk(t_frames, chunk):
    visible = build_chunk_attention_mask(t_frames, ChunkSpec(chunk)).visible
    for i in range(t_frames):
        anchor = (i // chunk) * chunk
        assert np.array_equal(visible[i], visible[anchor])
    # every frame sees its own chunk
    assert visible.diagonal().all()


def test_sample_dmc_kernel_one_always_zero():
    rng = np.random.default_rng(0)
    assert all(sample_dmc_n(1, rng) == 0 for _ in range(50))


def test_sample_dmc_range_and_distribution():
    rng = np.random.default_rng(1)
    draws = 10_000
    counts = np.zeros(8, dtype=int)
    for _ in range(draws):
        n = sample_dmc_n(15, rng)
        assert 0 <= n <= 7
        counts[n] += 1
    for value in range(8):
        assert abs(counts[value] / draws - 1 / 8) <= 0.01


def test_sample_dmc_even_kernel_rejected():
    with pytest.raises(InvalidArgumentError):
        sample_dmc_n(4, np.random.default_rng(0))


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([1, 3, 7, 15, 31]))
def test_sample_dmc_never_out_of_range(kernel):
    rng = np.random.default_rng(kernel)
    for _ in range(1000):
        assert 0 <= sample_dmc_n(kernel, rng) <= kernel // 2


def test_last_visible_index():
    assert last_visible_index(0, ChunkSpec(2), 4) == 1
    assert last_visible_index(3, ChunkSpec(2), 4) == 3
    assert last_visible_index(2, FULL, 7) == 6
    with pytest.raises(InvalidArgumentError):
        last_visible_index(4, ChunkSpec(2), 4)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 50), st.integers(1, 10))
def test_last_visible_at_least_self(t_total, chunk):
    spec = ChunkSpec(chunk)
    for t in range(t_total):
        assert last_visible_index(t, spec, t_total) >= t


def test_future_mask_plan_validation():
    with pytest.raises(InvalidArgumentError):
        FutureMaskPlan(kernel=4, n_per_frame=np.zeros(3, dtype=int))
    with pytest.raises(InvalidArgumentError):
        FutureMaskPlan(kernel=7, n_per_frame=np.array([0, 4]))


def test_chunk_future_mask_plan_matches_formula():
    spec = ChunkSpec(2)
    plan = chunk_future_mask_plan(4, 3, spec)
    expected = [
        max(0, t + 1 - last_visible_index(t, spec, 4)) for t in range(4)
    ]
    assert plan.n_per_frame.tolist() == expected
    full_plan = chunk_future_mask_plan(6, 7, FULL)
    assert full_plan.n_per_frame.tolist() == [0, 0, 0, 1, 2, 3]
