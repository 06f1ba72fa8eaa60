"""Binary checkpoint and feature-file formats.

Both formats are little-endian with a 4-byte magic and are written so that
save -> load -> save reproduces the original bytes exactly.

Checkpoint (magic ``DVC2``)::

    magic 4s | version u32 | config_len u32 | config text (key=value lines)
    | tensor_count u32 | tensor records

    record: name_len u32 | name utf-8 | rank u32 | extents u32*rank
            | payload float32-LE

Feature file (magic ``DVCF``)::

    magic 4s | dim u32 | frames u32 | frame_shift_ms f32 | payload
    float32-LE row-major [frames x dim]
"""

from __future__ import annotations

import struct
from dataclasses import fields

import numpy as np

from .errors import (
    CorruptCheckpointError,
    CorruptFeatureFileError,
    InvalidArgumentError,
    InvalidShapeError,
)
from .model import (
    ConformerConfig,
    ModelWeights,
    SpeakerEmbedding,
    assemble_weights,
    named_tensors,
    tensor_layout,
)
from .tensor import F32

CHECKPOINT_MAGIC = b"DVC2"
CHECKPOINT_VERSION = 1
FEATURE_MAGIC = b"DVCF"
DEFAULT_FRAME_SHIFT_MS = 12.5


# --- config text codec --------------------------------------------------------

_CONFIG_FIELDS = {f.name: f.type for f in fields(ConformerConfig)}


def config_to_text(cfg: ConformerConfig) -> str:
    lines = []
    for f in fields(ConformerConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ConformerConfig:
    """Parse key=value lines; missing keys take the defaults."""
    kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"config line {lineno} is not key=value: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_FIELDS:
            raise InvalidArgumentError(f"unknown config key {key!r}")
        default = getattr(ConformerConfig, key, None)
        if isinstance(default, bool):
            if value not in ("true", "false"):
                raise InvalidArgumentError(f"config key {key!r} must be true/false")
            kwargs[key] = value == "true"
        elif isinstance(default, int):
            try:
                kwargs[key] = int(value)
            except ValueError as e:
                raise InvalidArgumentError(f"config key {key!r} must be an integer") from e
        else:
            kwargs[key] = value
    return ConformerConfig(**kwargs)


# --- checkpoint ---------------------------------------------------------------


class _Reader:
    """Byte cursor that reports the offset of any structural violation."""

    def __init__(self, data: bytes, error_cls):
        self.data = data
        self.pos = 0
        self.error_cls = error_cls

    def fail(self, message: str):
        raise self.error_cls(message, self.pos)

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            self.fail(f"truncated: wanted {n} more bytes")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self.take(4))[0]

    def expect_eof(self):
        if self.pos != len(self.data):
            self.fail(f"{len(self.data) - self.pos} trailing bytes")


def save_checkpoint(path, weights: ModelWeights) -> None:
    cfg_bytes = config_to_text(weights.config).encode("utf-8")
    records = named_tensors(weights)
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<I", len(cfg_bytes)),
        cfg_bytes,
        struct.pack("<I", len(records)),
    ]
    for name, arr in records:
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> ModelWeights:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, CorruptCheckpointError)
    if r.take(4) != CHECKPOINT_MAGIC:
        r.pos = 0
        r.fail(f"bad magic, expected {CHECKPOINT_MAGIC!r}")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        r.pos -= 4
        r.fail(f"unsupported version {version}")
    cfg_len = r.u32()
    cfg_start = r.pos
    try:
        cfg = config_from_text(r.take(cfg_len).decode("utf-8"))
    except (InvalidArgumentError, UnicodeDecodeError) as e:
        raise CorruptCheckpointError(f"bad config block: {e}", cfg_start) from e
    layout = tensor_layout(cfg)
    count = r.u32()
    if count != len(layout):
        r.pos -= 4
        r.fail(f"expected {len(layout)} tensors, header says {count}")
    tensors: dict[str, np.ndarray] = {}
    for expected_name, expected_shape in layout:
        name_start = r.pos
        name = r.take(r.u32()).decode("utf-8", errors="replace")
        if name != expected_name:
            raise CorruptCheckpointError(
                f"tensor {name!r} where {expected_name!r} expected", name_start
            )
        rank = r.u32()
        shape = tuple(r.u32() for _ in range(rank))
        if shape != expected_shape:
            raise CorruptCheckpointError(
                f"tensor {name!r} has extents {shape}, expected {expected_shape}",
                name_start,
            )
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = r.take(4 * n)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(F32)
    r.expect_eof()
    return assemble_weights(cfg, tensors)


def checkpoint_roundtrip(path, weights: ModelWeights) -> ModelWeights:
    """Save then immediately load (bit-exact by construction)."""
    save_checkpoint(path, weights)
    return load_checkpoint(path)


# --- feature files ------------------------------------------------------------


def save_features(path, frames: np.ndarray, frame_shift_ms: float = DEFAULT_FRAME_SHIFT_MS) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2 or frames.shape[1] < 1:
        raise InvalidShapeError(f"features must be [frames x dim], got {frames.shape}")
    if frame_shift_ms <= 0:
        raise InvalidArgumentError(f"frame shift must be positive, got {frame_shift_ms}")
    header = FEATURE_MAGIC + struct.pack(
        "<IIf", frames.shape[1], frames.shape[0], frame_shift_ms
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frames.tobytes())


def load_features(path) -> tuple[np.ndarray, float]:
    """Read a feature file; returns (frames [T x dim], frame_shift_ms)."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, CorruptFeatureFileError)
    if r.take(4) != FEATURE_MAGIC:
        r.pos = 0
        r.fail(f"bad magic, expected {FEATURE_MAGIC!r}")
    dim = r.u32()
    if dim < 1:
        r.pos -= 8
        r.fail(f"feature dim must be >= 1, got {dim}")
    count = r.u32()
    shift = r.f32()
    payload = r.take(4 * dim * count)
    r.expect_eof()
    frames = np.frombuffer(payload, dtype="<f4").reshape(count, dim).astype(F32)
    return frames, float(shift)


def load_speaker(path, expected_dim: int | None = None) -> SpeakerEmbedding:
    """Read a speaker vector stored as a single-frame feature file.

    The vector is L2-normalized on load.
    """
    frames, _ = load_features(path)
    if frames.shape[0] != 1:
        raise InvalidArgumentError(
            f"speaker file must hold exactly 1 frame, got {frames.shape[0]}"
        )
    if expected_dim is not None and frames.shape[1] != expected_dim:
        raise InvalidShapeError(
            f"speaker width {frames.shape[1]} != expected {expected_dim}"
        )
    return SpeakerEmbedding.from_values(frames[0])
