"""Built-in verification suites behind the ``selftest`` CLI command.

Each check exercises one of the engine's contract-level properties at its
shipped tolerance: the quiet-softmax identities, masked-convolution
equivalences, streaming-vs-full equality, chunk causality, the
chunk-size sampling distribution, latency arithmetic, measured single-core
RTF, the parameter count, mode divergence, and binary round trips.
"""

from __future__ import annotations

import io
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .attention import masked_softmax, quiet_softmax
from .bench import (
    PipelineStage,
    busy_wait_stage,
    latency_from_rtf,
    model_stage,
    run_pipeline_bench,
)
from .conv import ConvWeights, conv1d_reference, dmc_train_forward, masked_conv_oracle
from .fileio import load_checkpoint, load_features, save_checkpoint, save_features
from .masking import FULL, ChunkSpec, FutureMaskPlan, sample_dct_chunk
from .model import (
    ConformerConfig,
    SpeakerEmbedding,
    convert_utterance,
    init_random_weights,
    mode_divergence,
    named_tensors,
    param_count,
    tie_conv_branches,
)
from .streaming import close_stream, open_stream, push_chunk
from .tensor import F32


class CheckFailure(Exception):
    pass


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise CheckFailure(message)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _random_unit(rng, dim: int) -> SpeakerEmbedding:
    return SpeakerEmbedding.from_values(rng.standard_normal(dim))


def check_quiet_identity() -> str:
    """quiet_softmax(x) == masked_softmax(x ++ visible zero logit), dropped."""
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 65))
        logits = (rng.standard_normal(n) * 3.0).astype(F32)
        visible = rng.random(n) < 0.8
        quiet = quiet_softmax(logits, visible)
        ext_logits = np.concatenate([logits, np.zeros(1, dtype=F32)])
        ext_visible = np.concatenate([visible, [True]])
        ref = masked_softmax(ext_logits, ext_visible)[:n]
        worst = max(worst, float(np.abs(quiet - ref).max(initial=0.0)))
    _require(worst <= 1e-6, f"identity error {worst:g} > 1e-6")
    return f"max abs error {worst:.3g} over 1000 rows"


def check_quiet_escape() -> str:
    """Rows of logits <= -50 give vanishing weights and near-zero outputs."""
    rng = np.random.default_rng(4)
    worst_w = 0.0
    worst_rel = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 65))
        logits = rng.uniform(-1e4, -50.0, size=n).astype(F32)
        weights = quiet_softmax(logits, np.ones(n, dtype=bool))
        worst_w = max(worst_w, float(weights.max()))
        values = rng.standard_normal((n, 8)).astype(F32)
        out = np.einsum("k,kd->d", weights, values)
        rel = float(np.linalg.norm(out) / np.linalg.norm(values))
        worst_rel = max(worst_rel, rel)
    _require(worst_w < 1e-20, f"max weight {worst_w:g} >= 1e-20")
    _require(worst_rel < 1e-15, f"relative output norm {worst_rel:g} >= 1e-15")
    return f"max weight {worst_w:.3g}, max relative output norm {worst_rel:.3g}"


def check_dmc_equivalence() -> str:
    """Randomly masked training forward == masked oracle on its recorded plan."""
    rng = np.random.default_rng(7)
    kernels = (3, 7, 15)
    worst = 0.0
    for case in range(200):
        k = kernels[case % len(kernels)]
        t = int(rng.integers(1, 65))
        d = int(rng.integers(1, 33))
        x = rng.standard_normal((t, d)).astype(F32)
        w = ConvWeights(depthwise=rng.standard_normal((d, k)).astype(F32))
        y, plan = dmc_train_forward(x, w, rng)
        ref = masked_conv_oracle(x, w, plan)
        worst = max(worst, float(np.abs(y - ref).max(initial=0.0)))
        zero_plan = FutureMaskPlan(kernel=k, n_per_frame=np.zeros(t, dtype=np.int64))
        _require(
            np.array_equal(masked_conv_oracle(x, w, zero_plan), conv1d_reference(x, w)),
            "zero-length future mask does not reproduce the reference convolution",
        )
    _require(worst <= 1e-6, f"equivalence error {worst:g} > 1e-6")
    return f"max abs error {worst:.3g} over 200 cases"


def _reduced_config() -> ConformerConfig:
    return ConformerConfig(
        num_encoder_blocks=2,
        num_decoder_blocks=2,
        model_dim=64,
        heads=4,
        conv_kernel=15,
        ffn_expansion=2,
        input_dim=64,
        output_dim=32,
        speaker_dim=32,
        use_quiet=True,
        mode="streaming",
    )


def check_streaming_equivalence() -> str:
    """Chunked pushes match the masked full-sequence forward within 1e-4."""
    cfg = _reduced_config()
    worst = 0.0
    for seed in range(50):
        weights = init_random_weights(cfg, seed)
        rng = np.random.default_rng(1000 + seed)
        t = int(rng.integers(20, 201))
        bnf = rng.standard_normal((t, cfg.input_dim)).astype(F32)
        spk = _random_unit(rng, cfg.speaker_dim)
        for c in (1, 4, 8, 16):
            full = convert_utterance(bnf, spk, weights, cfg, ChunkSpec(c))
            state = open_stream(weights, spk, c)
            parts = [push_chunk(state, bnf[i : i + c]) for i in range(0, t, c)]
            close_stream(state)
            streamed = np.concatenate(parts, axis=0)
            err = float(np.abs(full - streamed).max(initial=0.0))
            worst = max(worst, err)
            _require(
                err <= 1e-4,
                f"seed {seed} C={c} T={t}: per-element error {err:g} > 1e-4",
            )
    return f"max per-element error {worst:.3g} over 50 models x 4 chunk sizes"


def check_chunk_causality() -> str:
    """Perturbing chunk j never changes frames emitted before it."""
    cfg = ConformerConfig(
        num_encoder_blocks=1,
        num_decoder_blocks=1,
        model_dim=32,
        heads=4,
        conv_kernel=7,
        ffn_expansion=2,
        input_dim=16,
        output_dim=12,
        speaker_dim=8,
        mode="streaming",
    )
    c, n_chunks = 4, 6
    for trial in range(100):
        rng = np.random.default_rng(trial)
        weights = init_random_weights(cfg, trial)
        spk = _random_unit(rng, cfg.speaker_dim)
        chunks = [
            rng.standard_normal((c, cfg.input_dim)).astype(F32)
            for _ in range(n_chunks)
        ]
        state = open_stream(weights, spk, c)
        baseline = [push_chunk(state, ch) for ch in chunks]
        j = int(rng.integers(1, n_chunks))
        perturbed = list(chunks)
        perturbed[j] = perturbed[j] + rng.standard_normal(perturbed[j].shape).astype(F32)
        replay = open_stream(weights, spk, c)
        for i in range(j):
            out = push_chunk(replay, perturbed[i])
            _require(
                np.array_equal(out, baseline[i]),
                f"trial {trial}: chunk {i} changed after perturbing chunk {j}",
            )
    return "100 perturb-replay trials, earlier chunks bit-identical"


def check_dct_distribution() -> str:
    """Half the draws are full-sequence; sizes 1..20 are uniform."""
    rng = np.random.default_rng(99)
    draws = 10_000
    full = 0
    counts = np.zeros(21, dtype=np.int64)
    for _ in range(draws):
        spec = sample_dct_chunk(rng, 100)
        if spec.is_full:
            full += 1
        else:
            counts[spec.chunk_frames] += 1
    frac = full / draws
    _require(0.45 <= frac <= 0.55, f"full-sequence fraction {frac:.4f} outside [0.45, 0.55]")
    for size in range(1, 21):
        f = counts[size] / draws
        _require(
            abs(f - 0.025) <= 0.01,
            f"chunk size {size} frequency {f:.4f} outside 0.025 +- 0.01",
        )
    return f"full fraction {frac:.3f}, size frequencies uniform within 0.01"


def check_latency_model() -> str:
    """Latency arithmetic and the staged-pipeline report at 160 ms chunks."""
    exact = latency_from_rtf(160, 0.165)
    _require(exact == 186.4, f"latency_from_rtf(160, 0.165) = {exact!r} != 186.4")
    _require(latency_from_rtf(160, 0) == 160, "zero-cost latency must equal one chunk")
    _require(latency_from_rtf(250, 0.5) == 375, "latency arithmetic broken")
    # 16 frames at a 10 ms shift = the 160 ms chunk used by the reference table.
    stages = [
        PipelineStage("asr-encoder", busy_wait_stage(0.038, 16, 10.0), 20.3),
        PipelineStage("converter", busy_wait_stage(0.083, 16, 10.0), 7.5),
        PipelineStage("vocoder", busy_wait_stage(0.044, 16, 10.0), 1.2),
    ]
    report = run_pipeline_bench(
        stages, 16, iterations=20, threads=1, warmup=3, frame_shift_ms=10.0
    )
    all_row = report.all_row
    _require(
        abs(all_row.rtf - 0.165) <= 0.01,
        f"pipeline rtf {all_row.rtf:.4f} not within 0.165 +- 0.01",
    )
    _require(
        abs(all_row.latency_ms - 26.40) <= 1.5,
        f"model latency {all_row.latency_ms:.2f} ms not within 26.40 +- 1.5",
    )
    return (
        f"all-rtf {all_row.rtf:.4f}, model latency {all_row.latency_ms:.2f} ms, "
        f"pipeline latency {report.pipeline_latency_ms:.2f} ms"
    )


def check_real_rtf() -> str:
    """Full-size model pushes 16-frame chunks on one thread at RTF < 0.5."""
    cfg = ConformerConfig()
    weights = init_random_weights(cfg, 0)
    rng = np.random.default_rng(1)
    stage = model_stage(weights, _random_unit(rng, cfg.speaker_dim), 16, left_chunks=16)
    report = run_pipeline_bench([stage], 16, iterations=20, threads=1, warmup=4)
    rtf = report.stages[0].rtf
    _require(rtf < 0.5, f"measured rtf {rtf:.4f} >= 0.5")
    return f"measured single-thread rtf {rtf:.4f} (16-frame chunks, full-size model)"


def check_param_count() -> str:
    """Closed-form count matches tensor enumeration and the expected scale."""
    cfg = ConformerConfig()
    count = param_count(cfg)
    enumerated = sum(arr.size for _, arr in named_tensors(init_random_weights(cfg, 0)))
    _require(count == enumerated, f"closed form {count} != enumerated {enumerated}")
    _require(
        5_600_000 <= count <= 9_400_000,
        f"parameter count {count} outside [5.6e6, 9.4e6]",
    )
    return f"{count} parameters ({count / 1e6:.2f} M), enumeration agrees exactly"


def check_mode_divergence() -> str:
    """Tied branches + full context diverge by exactly zero; untied do not."""
    cfg = ConformerConfig(
        num_encoder_blocks=2,
        num_decoder_blocks=1,
        model_dim=32,
        heads=4,
        conv_kernel=7,
        ffn_expansion=2,
        input_dim=16,
        output_dim=12,
        speaker_dim=8,
        mode="streaming",
    )
    positive = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        bnf = rng.standard_normal((24, cfg.input_dim)).astype(F32)
        spk = _random_unit(rng, cfg.speaker_dim)
        tied = tie_conv_branches(init_random_weights(cfg, seed))
        zero = mode_divergence(bnf, spk, tied, cfg, FULL)
        _require(zero == 0.0, f"seed {seed}: tied/full divergence {zero!r} != 0")
        untied = init_random_weights(cfg, seed)
        if mode_divergence(bnf, spk, untied, cfg, ChunkSpec(4)) > 0.0:
            positive += 1
    _require(positive >= 99, f"untied divergence positive on only {positive}/100 seeds")
    return f"tied/full exactly zero on 100 seeds; untied positive on {positive}/100"


def _random_small_config(rng) -> ConformerConfig:
    heads = int(rng.choice([1, 2, 4]))
    return ConformerConfig(
        num_encoder_blocks=int(rng.integers(1, 3)),
        num_decoder_blocks=int(rng.integers(1, 3)),
        model_dim=heads * int(rng.integers(1, 7)),
        heads=heads,
        conv_kernel=int(rng.choice([1, 3, 5])),
        ffn_expansion=int(rng.integers(1, 3)),
        input_dim=int(rng.integers(1, 9)),
        output_dim=int(rng.integers(1, 9)),
        speaker_dim=int(rng.integers(1, 9)),
        use_quiet=bool(rng.random() < 0.5),
        mode="streaming" if rng.random() < 0.5 else "nonstreaming",
    )


def check_io_roundtrip() -> str:
    """Checkpoint and feature save->load->save are byte-identical."""
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        for i in range(100):
            rng = np.random.default_rng(i)
            cfg = _random_small_config(rng)
            weights = init_random_weights(cfg, i)
            p1, p2 = root / "a.ckpt", root / "b.ckpt"
            save_checkpoint(p1, weights)
            loaded = load_checkpoint(p1)
            save_checkpoint(p2, loaded)
            _require(
                p1.read_bytes() == p2.read_bytes(),
                f"config {i}: checkpoint round trip not byte-identical",
            )
            feats = rng.standard_normal((int(rng.integers(0, 9)), int(rng.integers(1, 9))))
            f1, f2 = root / "a.feat", root / "b.feat"
            save_features(f1, feats.astype(F32), frame_shift_ms=12.5)
            arr, shift = load_features(f1)
            save_features(f2, arr, frame_shift_ms=shift)
            _require(
                f1.read_bytes() == f2.read_bytes(),
                f"config {i}: feature round trip not byte-identical",
            )
    return "100 checkpoint and feature round trips byte-identical"


CHECKS: list[tuple[str, Callable[[], str]]] = [
    ("quiet-identity", check_quiet_identity),
    ("quiet-escape", check_quiet_escape),
    ("dmc-equivalence", check_dmc_equivalence),
    ("streaming-equivalence", check_streaming_equivalence),
    ("chunk-causality", check_chunk_causality),
    ("dct-distribution", check_dct_distribution),
    ("latency-model", check_latency_model),
    ("real-rtf", check_real_rtf),
    ("param-count", check_param_count),
    ("mode-divergence", check_mode_divergence),
    ("io-roundtrip", check_io_roundtrip),
]


def run_check(name: str, fn: Callable[[], str]) -> CheckResult:
    start = time.perf_counter()
    try:
        detail = fn()
        return CheckResult(name, True, detail, time.perf_counter() - start)
    except CheckFailure as e:
        return CheckResult(name, False, str(e), time.perf_counter() - start)


def run_all() -> list[CheckResult]:
    return [run_check(name, fn) for name, fn in CHECKS]


def run_and_print(stream: io.TextIOBase | None = None) -> int:
    """Run every check, print one line each, return 0 iff all passed."""
    stream = stream or sys.stdout
    results = run_all()
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<24} {r.seconds:6.2f}s  {r.detail}", file=stream)
    failed = [r for r in results if not r.passed]
    print(
        f"{len(results) - len(failed)}/{len(results)} checks passed",
        file=stream,
    )
    return 0 if not failed else 1
