"""Conformer encoder/decoder stack with speaker conditioning.

Topology: an input projection feeds the encoder blocks; the per-frame
latent is concatenated with a fixed unit-norm speaker embedding, merged
back to model width, run through the decoder blocks, and projected to the
output feature width (mel bins).

Each block is macaron-style: half-step feed-forward, chunk-masked
self-attention (quiet normalization per config), a gated convolution
module with dual-mode branches, a second half-step feed-forward, and a
final layer norm. Every sublayer is residual, so zeroed projection weights
reduce a block to its final layer norm.

Three forward regimes exist per block:

* ``nonstreaming`` - reference (fully non-causal) convolution, normally
  paired with an all-visible attention mask;
* ``streaming`` - convolution future taps masked by the chunk-derived
  plan, attention masked by chunk;
* ``train`` - convolution future taps masked by per-frame random draws
  (the robustness mechanism that lets the streaming branch tolerate the
  missing future at chunk edges).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .attention import MhsaWeights, mhsa_forward
from .conv import (
    ConvWeights,
    DualModeConv,
    conv1d_reference,
    dmc_train_forward,
    masked_conv_oracle,
)
from .errors import InvalidArgumentError, InvalidModeError, InvalidShapeError
from .masking import (
    AttentionMask,
    ChunkSpec,
    FutureMaskPlan,
    build_chunk_attention_mask,
    chunk_future_mask_plan,
)
from .tensor import F32, layer_norm, linear, sigmoid, swish

MODE_STREAMING = "streaming"
MODE_NONSTREAMING = "nonstreaming"
MODE_TRAIN = "train"

# Residual weight of each half-step feed-forward (macaron convention).
HALF_FFN_WEIGHT = 0.5


@dataclass(frozen=True)
class ConformerConfig:
    """Hyperparameters of the conversion model."""

    num_encoder_blocks: int = 3
    num_decoder_blocks: int = 3
    model_dim: int = 256
    heads: int = 4
    conv_kernel: int = 15
    ffn_expansion: int = 2
    input_dim: int = 256
    output_dim: int = 80
    speaker_dim: int = 256
    use_quiet: bool = True
    mode: str = MODE_STREAMING

    def __post_init__(self):
        if self.num_encoder_blocks < 1 or self.num_decoder_blocks < 1:
            raise InvalidArgumentError("block counts must be >= 1")
        if self.heads < 1:
            raise InvalidArgumentError(f"heads must be >= 1, got {self.heads}")
        if self.model_dim < 1 or self.model_dim % self.heads != 0:
            raise InvalidArgumentError(
                f"model_dim {self.model_dim} must be a positive multiple of heads {self.heads}"
            )
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise InvalidArgumentError("conv_kernel must be odd and >= 1")
        if self.ffn_expansion < 1:
            raise InvalidArgumentError("ffn_expansion must be >= 1")
        if min(self.input_dim, self.output_dim, self.speaker_dim) < 1:
            raise InvalidArgumentError("feature widths must be >= 1")
        if self.mode not in (MODE_STREAMING, MODE_NONSTREAMING):
            raise InvalidArgumentError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class SpeakerEmbedding:
    """Fixed target-speaker vector, unit L2 norm."""

    vec: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vec, dtype=F32)
        object.__setattr__(self, "vec", v)
        if v.ndim != 1:
            raise InvalidShapeError("speaker embedding must be a 1-d vector")
        norm = float(np.linalg.norm(v.astype(np.float64)))
        if abs(norm - 1.0) > 1e-4:
            raise InvalidArgumentError(
                f"speaker embedding must be unit norm (got {norm:.6f}); "
                "use SpeakerEmbedding.from_values to normalize"
            )

    @classmethod
    def from_values(cls, values) -> "SpeakerEmbedding":
        v = np.asarray(values, dtype=F32)
        norm = float(np.linalg.norm(v.astype(np.float64)))
        if not np.isfinite(norm) or norm == 0.0:
            raise InvalidArgumentError("cannot normalize a zero or non-finite vector")
        return cls(vec=(v / F32(norm)))


@dataclass
class LayerNormWeights:
    gamma: np.ndarray
    beta: np.ndarray


@dataclass
class FeedForwardWeights:
    norm: LayerNormWeights
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class BlockWeights:
    ffn1: FeedForwardWeights
    attn_norm: LayerNormWeights
    attn: MhsaWeights
    conv_norm: LayerNormWeights
    conv: DualModeConv
    ffn2: FeedForwardWeights
    final_norm: LayerNormWeights


@dataclass
class ModelWeights:
    config: ConformerConfig
    input_proj_w: np.ndarray
    input_proj_b: np.ndarray
    encoder_blocks: list[BlockWeights]
    speaker_merge_w: np.ndarray
    speaker_merge_b: np.ndarray
    decoder_blocks: list[BlockWeights]
    output_proj_w: np.ndarray
    output_proj_b: np.ndarray


def with_mode(weights: ModelWeights, mode: str) -> ModelWeights:
    """Shallow view of the same tensors under a different active mode."""
    if mode == weights.config.mode:
        return weights
    return replace(weights, config=replace(weights.config, mode=mode))


def tie_conv_branches(weights: ModelWeights) -> ModelWeights:
    """Point every streaming conv branch at its non-streaming twin (in place)."""
    for block in (*weights.encoder_blocks, *weights.decoder_blocks):
        block.conv.streaming_branch = block.conv.nonstreaming_branch
    return weights


# --- canonical tensor layout -------------------------------------------------


def _block_layout(prefix: str, cfg: ConformerConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, e, k = cfg.model_dim, cfg.ffn_expansion, cfg.conv_kernel
    out: list[tuple[str, tuple[int, ...]]] = []

    def ffn(name: str):
        out.extend(
            [
                (f"{prefix}{name}.norm.gamma", (d,)),
                (f"{prefix}{name}.norm.beta", (d,)),
                (f"{prefix}{name}.w1", (d, e * d)),
                (f"{prefix}{name}.b1", (e * d,)),
                (f"{prefix}{name}.w2", (e * d, d)),
                (f"{prefix}{name}.b2", (d,)),
            ]
        )

    ffn("ffn1")
    out.extend(
        [
            (f"{prefix}attn.norm.gamma", (d,)),
            (f"{prefix}attn.norm.beta", (d,)),
        ]
    )
    for proj in ("q", "k", "v", "o"):
        out.append((f"{prefix}attn.w{proj}", (d, d)))
        out.append((f"{prefix}attn.b{proj}", (d,)))
    out.extend(
        [
            (f"{prefix}conv.norm.gamma", (d,)),
            (f"{prefix}conv.norm.beta", (d,)),
        ]
    )
    for branch in ("streaming", "nonstreaming"):
        out.extend(
            [
                (f"{prefix}conv.{branch}.pre_w", (d, 2 * d)),
                (f"{prefix}conv.{branch}.pre_b", (2 * d,)),
                (f"{prefix}conv.{branch}.depthwise", (d, k)),
                (f"{prefix}conv.{branch}.post_w", (d, d)),
                (f"{prefix}conv.{branch}.post_b", (d,)),
            ]
        )
    ffn("ffn2")
    out.extend(
        [
            (f"{prefix}final_norm.gamma", (d,)),
            (f"{prefix}final_norm.beta", (d,)),
        ]
    )
    return out


def tensor_layout(cfg: ConformerConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) pairs of every weight tensor in the model.

    This order is the serialization contract for checkpoints.
    """
    d = cfg.model_dim
    out: list[tuple[str, tuple[int, ...]]] = [
        ("input_proj.weight", (cfg.input_dim, d)),
        ("input_proj.bias", (d,)),
    ]
    for i in range(cfg.num_encoder_blocks):
        out.extend(_block_layout(f"encoder.{i}.", cfg))
    out.extend(
        [
            ("speaker_merge.weight", (d + cfg.speaker_dim, d)),
            ("speaker_merge.bias", (d,)),
        ]
    )
    for i in range(cfg.num_decoder_blocks):
        out.extend(_block_layout(f"decoder.{i}.", cfg))
    out.extend(
        [
            ("output_proj.weight", (d, cfg.output_dim)),
            ("output_proj.bias", (cfg.output_dim,)),
        ]
    )
    return out


def _assemble_block(prefix: str, cfg: ConformerConfig, t: dict[str, np.ndarray]) -> BlockWeights:
    def ln(name: str) -> LayerNormWeights:
        return LayerNormWeights(gamma=t[f"{prefix}{name}.gamma"], beta=t[f"{prefix}{name}.beta"])

    def ffn(name: str) -> FeedForwardWeights:
        return FeedForwardWeights(
            norm=ln(f"{name}.norm"),
            w1=t[f"{prefix}{name}.w1"],
            b1=t[f"{prefix}{name}.b1"],
            w2=t[f"{prefix}{name}.w2"],
            b2=t[f"{prefix}{name}.b2"],
        )

    def conv_branch(branch: str) -> ConvWeights:
        p = f"{prefix}conv.{branch}."
        return ConvWeights(
            depthwise=t[p + "depthwise"],
            pre_w=t[p + "pre_w"],
            pre_b=t[p + "pre_b"],
            post_w=t[p + "post_w"],
            post_b=t[p + "post_b"],
        )

    attn = MhsaWeights(
        wq=t[f"{prefix}attn.wq"],
        bq=t[f"{prefix}attn.bq"],
        wk=t[f"{prefix}attn.wk"],
        bk=t[f"{prefix}attn.bk"],
        wv=t[f"{prefix}attn.wv"],
        bv=t[f"{prefix}attn.bv"],
        wo=t[f"{prefix}attn.wo"],
        bo=t[f"{prefix}attn.bo"],
        heads=cfg.heads,
        dim=cfg.model_dim,
    )
    return BlockWeights(
        ffn1=ffn("ffn1"),
        attn_norm=ln("attn.norm"),
        attn=attn,
        conv_norm=ln("conv.norm"),
        conv=DualModeConv(
            streaming_branch=conv_branch("streaming"),
            nonstreaming_branch=conv_branch("nonstreaming"),
            active_mode=cfg.mode,
        ),
        ffn2=ffn("ffn2"),
        final_norm=ln("final_norm"),
    )


def assemble_weights(cfg: ConformerConfig, tensors: dict[str, np.ndarray]) -> ModelWeights:
    """Build a ModelWeights from a name->array mapping (layout-complete)."""
    return ModelWeights(
        config=cfg,
        input_proj_w=tensors["input_proj.weight"],
        input_proj_b=tensors["input_proj.bias"],
        encoder_blocks=[
            _assemble_block(f"encoder.{i}.", cfg, tensors)
            for i in range(cfg.num_encoder_blocks)
        ],
        speaker_merge_w=tensors["speaker_merge.weight"],
        speaker_merge_b=tensors["speaker_merge.bias"],
        decoder_blocks=[
            _assemble_block(f"decoder.{i}.", cfg, tensors)
            for i in range(cfg.num_decoder_blocks)
        ],
        output_proj_w=tensors["output_proj.weight"],
        output_proj_b=tensors["output_proj.bias"],
    )


def _block_tensors(prefix: str, b: BlockWeights) -> list[tuple[str, np.ndarray]]:
    out: list[tuple[str, np.ndarray]] = []

    def ffn(name: str, f: FeedForwardWeights):
        out.extend(
            [
                (f"{prefix}{name}.norm.gamma", f.norm.gamma),
                (f"{prefix}{name}.norm.beta", f.norm.beta),
                (f"{prefix}{name}.w1", f.w1),
                (f"{prefix}{name}.b1", f.b1),
                (f"{prefix}{name}.w2", f.w2),
                (f"{prefix}{name}.b2", f.b2),
            ]
        )

    ffn("ffn1", b.ffn1)
    out.extend(
        [
            (f"{prefix}attn.norm.gamma", b.attn_norm.gamma),
            (f"{prefix}attn.norm.beta", b.attn_norm.beta),
            (f"{prefix}attn.wq", b.attn.wq),
            (f"{prefix}attn.bq", b.attn.bq),
            (f"{prefix}attn.wk", b.attn.wk),
            (f"{prefix}attn.bk", b.attn.bk),
            (f"{prefix}attn.wv", b.attn.wv),
            (f"{prefix}attn.bv", b.attn.bv),
            (f"{prefix}attn.wo", b.attn.wo),
            (f"{prefix}attn.bo", b.attn.bo),
            (f"{prefix}conv.norm.gamma", b.conv_norm.gamma),
            (f"{prefix}conv.norm.beta", b.conv_norm.beta),
        ]
    )
    for branch_name, branch in (
        ("streaming", b.conv.streaming_branch),
        ("nonstreaming", b.conv.nonstreaming_branch),
    ):
        p = f"{prefix}conv.{branch_name}."
        out.extend(
            [
                (p + "pre_w", branch.pre_w),
                (p + "pre_b", branch.pre_b),
                (p + "depthwise", branch.depthwise),
                (p + "post_w", branch.post_w),
                (p + "post_b", branch.post_b),
            ]
        )
    ffn("ffn2", b.ffn2)
    out.extend(
        [
            (f"{prefix}final_norm.gamma", b.final_norm.gamma),
            (f"{prefix}final_norm.beta", b.final_norm.beta),
        ]
    )
    return out


def named_tensors(weights: ModelWeights) -> list[tuple[str, np.ndarray]]:
    """Every weight tensor with its canonical name, in layout order."""
    cfg = weights.config
    out: list[tuple[str, np.ndarray]] = [
        ("input_proj.weight", weights.input_proj_w),
        ("input_proj.bias", weights.input_proj_b),
    ]
    for i, block in enumerate(weights.encoder_blocks):
        out.extend(_block_tensors(f"encoder.{i}.", block))
    out.extend(
        [
            ("speaker_merge.weight", weights.speaker_merge_w),
            ("speaker_merge.bias", weights.speaker_merge_b),
        ]
    )
    for i, block in enumerate(weights.decoder_blocks):
        out.extend(_block_tensors(f"decoder.{i}.", block))
    out.extend(
        [
            ("output_proj.weight", weights.output_proj_w),
            ("output_proj.bias", weights.output_proj_b),
        ]
    )
    assert [n for n, _ in out] == [n for n, _ in tensor_layout(cfg)]
    return out


def init_random_weights(cfg: ConformerConfig, seed: int = 0) -> ModelWeights:
    """Seeded uniform init: matrices U(+-1/sqrt(fan_in)), gammas one,
    biases and betas zero. Deterministic given (config, seed)."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_layout(cfg):
        leaf = name.rsplit(".", 1)[1]
        is_bias = (
            leaf in ("beta", "bias")
            or leaf.endswith("_b")
            or (len(leaf) == 2 and leaf[0] == "b")
        )
        if leaf == "gamma":
            tensors[name] = np.ones(shape, dtype=F32)
        elif is_bias:
            tensors[name] = np.zeros(shape, dtype=F32)
        else:
            fan_in = shape[0] if leaf != "depthwise" else shape[1]
            bound = 1.0 / math.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(F32)
    return assemble_weights(cfg, tensors)


def _linear_params(m: int, n: int) -> int:
    return m * n + n


def param_count(cfg: ConformerConfig) -> int:
    """Exact scalar-parameter count implied by the config (closed form)."""
    d, e, k = cfg.model_dim, cfg.ffn_expansion, cfg.conv_kernel
    ln = 2 * d
    half_ffn = ln + _linear_params(d, e * d) + _linear_params(e * d, d)
    attn = ln + 4 * _linear_params(d, d)
    conv_branch = _linear_params(d, 2 * d) + d * k + _linear_params(d, d)
    conv = ln + 2 * conv_branch
    block = 2 * half_ffn + attn + conv + ln
    blocks = (cfg.num_encoder_blocks + cfg.num_decoder_blocks) * block
    return (
        blocks
        + _linear_params(cfg.input_dim, d)
        + _linear_params(d + cfg.speaker_dim, d)
        + _linear_params(d, cfg.output_dim)
    )


# --- forward passes ----------------------------------------------------------


def glu(h: np.ndarray) -> np.ndarray:
    """Gated linear unit over channel halves: a * sigmoid(b)."""
    width = h.shape[1]
    if width % 2 != 0:
        raise InvalidShapeError(f"GLU input width must be even, got {width}")
    half = width // 2
    return h[:, :half] * sigmoid(h[:, half:])


def half_ffn(x: np.ndarray, f: FeedForwardWeights) -> np.ndarray:
    """Residual half-step feed-forward: x + 0.5 * FFN(LN(x))."""
    h = layer_norm(x, f.norm.gamma, f.norm.beta)
    h = swish(linear(h, f.w1, f.b1))
    h = linear(h, f.w2, f.b2)
    return x + F32(HALF_FFN_WEIGHT) * h


def _conv_module(
    x: np.ndarray,
    block: BlockWeights,
    mode: str,
    conv_plan: FutureMaskPlan | None,
    rng,
) -> np.ndarray:
    """Residual branch of the convolution module (caller adds it to x)."""
    h = layer_norm(x, block.conv_norm.gamma, block.conv_norm.beta)
    branch = block.conv.branch(
        MODE_STREAMING if mode in (MODE_STREAMING, MODE_TRAIN) else MODE_NONSTREAMING
    )
    h = glu(linear(h, branch.pre_w, branch.pre_b))
    if mode == MODE_NONSTREAMING:
        h = conv1d_reference(h, branch)
    elif mode == MODE_STREAMING:
        if conv_plan is None:
            raise InvalidArgumentError("streaming forward requires a conv plan")
        h = masked_conv_oracle(h, branch, conv_plan)
    elif mode == MODE_TRAIN:
        if rng is None:
            raise InvalidArgumentError("training forward requires an rng")
        h, _ = dmc_train_forward(h, branch, rng)
    else:
        raise InvalidModeError(f"unknown forward mode {mode!r}")
    h = swish(h)
    return linear(h, branch.post_w, branch.post_b)


def conformer_block_forward(
    x: np.ndarray,
    block: BlockWeights,
    mask: AttentionMask,
    mode: str,
    use_quiet: bool,
    conv_plan: FutureMaskPlan | None = None,
    rng=None,
) -> np.ndarray:
    """One block: half-FFN, masked attention, conv module, half-FFN, norm."""
    x = np.asarray(x, dtype=F32)
    x = half_ffn(x, block.ffn1)
    h = layer_norm(x, block.attn_norm.gamma, block.attn_norm.beta)
    x = x + mhsa_forward(h, block.attn, mask, use_quiet)
    x = x + _conv_module(x, block, mode, conv_plan, rng)
    x = half_ffn(x, block.ffn2)
    return layer_norm(x, block.final_norm.gamma, block.final_norm.beta)


def encoder_forward(
    bnf: np.ndarray,
    weights: ModelWeights,
    mask: AttentionMask,
    mode: str,
    conv_plan: FutureMaskPlan | None = None,
    rng=None,
    use_quiet: bool | None = None,
) -> np.ndarray:
    """Input projection followed by the encoder blocks."""
    cfg = weights.config
    bnf = np.asarray(bnf, dtype=F32)
    if bnf.ndim != 2 or bnf.shape[1] != cfg.input_dim:
        raise InvalidShapeError(
            f"expected input [T x {cfg.input_dim}], got {bnf.shape}"
        )
    quiet = cfg.use_quiet if use_quiet is None else use_quiet
    x = linear(bnf, weights.input_proj_w, weights.input_proj_b)
    for block in weights.encoder_blocks:
        x = conformer_block_forward(x, block, mask, mode, quiet, conv_plan, rng)
    return x


def decoder_forward(
    latent: np.ndarray,
    spk: SpeakerEmbedding,
    weights: ModelWeights,
    mask: AttentionMask,
    mode: str,
    conv_plan: FutureMaskPlan | None = None,
    rng=None,
    use_quiet: bool | None = None,
) -> np.ndarray:
    """Speaker concatenation, merge projection, decoder blocks, output proj."""
    cfg = weights.config
    latent = np.asarray(latent, dtype=F32)
    if latent.ndim != 2 or latent.shape[1] != cfg.model_dim:
        raise InvalidShapeError(
            f"expected latent [T x {cfg.model_dim}], got {latent.shape}"
        )
    if spk.vec.shape[0] != cfg.speaker_dim:
        raise InvalidShapeError(
            f"speaker embedding width {spk.vec.shape[0]} != {cfg.speaker_dim}"
        )
    quiet = cfg.use_quiet if use_quiet is None else use_quiet
    t = latent.shape[0]
    conditioned = np.concatenate([latent, np.tile(spk.vec, (t, 1))], axis=1)
    x = linear(conditioned, weights.speaker_merge_w, weights.speaker_merge_b)
    for block in weights.decoder_blocks:
        x = conformer_block_forward(x, block, mask, mode, quiet, conv_plan, rng)
    return linear(x, weights.output_proj_w, weights.output_proj_b)


def _inference_geometry(
    t: int, cfg: ConformerConfig, chunk: ChunkSpec
) -> tuple[AttentionMask, FutureMaskPlan | None]:
    if cfg.mode == MODE_NONSTREAMING:
        return build_chunk_attention_mask(t, ChunkSpec.full()), None
    mask = build_chunk_attention_mask(t, chunk)
    plan = chunk_future_mask_plan(t, cfg.conv_kernel, chunk)
    return mask, plan


def convert_utterance(
    bnf: np.ndarray,
    spk: SpeakerEmbedding,
    weights: ModelWeights,
    config: ConformerConfig,
    chunk: ChunkSpec,
) -> np.ndarray:
    """Whole-utterance conversion under the config's mode.

    Non-streaming mode ignores ``chunk`` and uses full context; streaming
    mode applies the chunk attention mask and the chunk-derived convolution
    future-mask plan, making the result equal (within float accumulation
    noise) to pushing the utterance chunk by chunk through a stream.
    """
    bnf = np.asarray(bnf, dtype=F32)
    mask, plan = _inference_geometry(bnf.shape[0], config, chunk)
    latent = encoder_forward(
        bnf, weights, mask, config.mode, conv_plan=plan, use_quiet=config.use_quiet
    )
    return decoder_forward(
        latent, spk, weights, mask, config.mode, conv_plan=plan,
        use_quiet=config.use_quiet,
    )


def mode_divergence(
    bnf: np.ndarray,
    spk: SpeakerEmbedding,
    weights: ModelWeights,
    config: ConformerConfig,
    chunk: ChunkSpec,
) -> float:
    """Mean squared difference between streaming-mode and non-streaming-mode
    encoder outputs on the same input (diagnostic)."""
    bnf = np.asarray(bnf, dtype=F32)
    t = bnf.shape[0]
    if t == 0:
        return 0.0
    mask_s = build_chunk_attention_mask(t, chunk)
    plan_s = chunk_future_mask_plan(t, config.conv_kernel, chunk)
    enc_s = encoder_forward(
        bnf, weights, mask_s, MODE_STREAMING, conv_plan=plan_s,
        use_quiet=config.use_quiet,
    )
    mask_n = build_chunk_attention_mask(t, ChunkSpec.full())
    enc_n = encoder_forward(
        bnf, weights, mask_n, MODE_NONSTREAMING, use_quiet=config.use_quiet
    )
    diff = enc_s.astype(np.float64) - enc_n.astype(np.float64)
    return float(np.mean(diff * diff))
