"""Small classifier architectures and the binary checkpoint format.

Checkpoint layout (little-endian throughout):

    bytes 0..7    magic b"OLSLABCK"
    bytes 8..11   format version, uint32 (currently 1)
    bytes 12..15  header length H, uint32
    bytes 16..16+H   UTF-8 JSON header: model spec, epoch, rng state,
                     bank counts (or null), and the ordered tensor table
                     [{"name": ..., "shape": [...]}, ...]
    remainder     raw float64 values for each tensor, in table order,
                  row-major

The float64 round trip is lossless, so a reloaded model reproduces forward
outputs bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointFormatError, CheckpointVersionError, ConfigError
from .labels import SoftLabelBank
from .nn import Conv2d, Flatten, Linear, MaxPool2x2, Network, ReLU

MAGIC = b"OLSLABCK"
FORMAT_VERSION = 1

# Stream tag for parameter initialization (see data/trainer for the others).
_INIT_STREAM = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: 'mlp' widths include input dim and class count;
    'small_cnn' widths are conv-block channel counts followed by the class count."""

    arch: str
    widths: tuple[int, ...]
    input_shape: tuple[int, ...]
    n_classes: int

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if self.arch not in ("mlp", "small_cnn"):
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ConfigError(f"widths must be >= 2 positive layer sizes, got {self.widths}")
        if self.widths[-1] != self.n_classes:
            raise ConfigError(
                f"final width {self.widths[-1]} must equal class count {self.n_classes}"
            )
        if self.arch == "mlp":
            if self.widths[0] != math.prod(self.input_shape):
                raise ConfigError(
                    f"mlp input width {self.widths[0]} != input size {self.input_shape}"
                )
        else:
            if len(self.input_shape) != 3:
                raise ConfigError(
                    f"small_cnn needs a (channels, h, w) input shape, got {self.input_shape}"
                )
            blocks = len(self.widths) - 1
            _, h, w = self.input_shape
            if h % (1 << blocks) or w % (1 << blocks):
                raise ConfigError(
                    f"input {h}x{w} not divisible by 2^{blocks} for {blocks} pooled conv blocks"
                )

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "widths": list(self.widths),
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        return ModelSpec(
            arch=d["arch"],
            widths=tuple(d["widths"]),
            input_shape=tuple(d["input_shape"]),
            n_classes=int(d["n_classes"]),
        )


def build_model(spec: ModelSpec, seed: int) -> Network:
    """Construct the network with seeded Kaiming-uniform weights (pure in spec, seed)."""
    rng = np.random.default_rng([_INIT_STREAM, seed])
    layers = []
    if spec.arch == "mlp":
        for i, (fan_in, fan_out) in enumerate(zip(spec.widths, spec.widths[1:])):
            layers.append(Linear(fan_in, fan_out, name=f"fc{i}", rng=rng))
            if i < len(spec.widths) - 2:
                layers.append(ReLU())
    else:
        channels, h, w = spec.input_shape
        for i, out_ch in enumerate(spec.widths[:-1]):
            layers.append(Conv2d(channels, out_ch, 3, 1, name=f"conv{i}", rng=rng))
            layers.append(ReLU())
            layers.append(MaxPool2x2())
            channels, h, w = out_ch, h // 2, w // 2
        layers.append(Flatten())
        layers.append(Linear(channels * h * w, spec.n_classes, name="head", rng=rng))
    return Network(layers)


@dataclass
class Checkpoint:
    spec: ModelSpec
    epoch: int
    params: dict[str, np.ndarray]
    bank: SoftLabelBank | None = None
    rng_state: dict = field(default_factory=dict)


def checkpoint_from(net: Network, spec: ModelSpec, epoch: int,
                    bank: SoftLabelBank | None = None,
                    rng_state: dict | None = None) -> Checkpoint:
    params = {p.name: p.value.copy() for p in net.parameters()}
    return Checkpoint(spec=spec, epoch=epoch, params=params, bank=bank,
                      rng_state=dict(rng_state or {}))


def network_from_checkpoint(ckpt: Checkpoint) -> Network:
    net = build_model(ckpt.spec, seed=0)
    for p in net.parameters():
        if p.name not in ckpt.params:
            raise CheckpointFormatError(f"checkpoint is missing parameter {p.name!r}")
        stored = ckpt.params[p.name]
        if stored.shape != p.value.shape:
            raise CheckpointFormatError(
                f"parameter {p.name!r} has shape {stored.shape}, expected {p.value.shape}"
            )
        p.value[...] = stored
    return net


_BANK_PREV = "__bank.s_prev__"
_BANK_ACCUM = "__bank.s_accum__"


def save_checkpoint(path, ckpt: Checkpoint):
    tensors: list[tuple[str, np.ndarray]] = list(ckpt.params.items())
    bank_counts = None
    if ckpt.bank is not None:
        tensors.append((_BANK_PREV, ckpt.bank.s_prev))
        tensors.append((_BANK_ACCUM, ckpt.bank.s_accum))
        bank_counts = [int(c) for c in ckpt.bank.counts]
    header = {
        "spec": ckpt.spec.to_dict(),
        "epoch": int(ckpt.epoch),
        "rng_state": ckpt.rng_state,
        "bank_counts": bank_counts,
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(FORMAT_VERSION).tobytes())
        fh.write(np.uint32(len(header_bytes)).tobytes())
        fh.write(header_bytes)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise CheckpointFormatError("file too short for checkpoint preamble", offset=len(blob))
    if blob[:8] != MAGIC:
        raise CheckpointFormatError("bad magic bytes (not an olslab checkpoint)", offset=0)
    version = int(np.frombuffer(blob[8:12], dtype="<u4")[0])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})", offset=8
        )
    header_len = int(np.frombuffer(blob[12:16], dtype="<u4")[0])
    if 16 + header_len > len(blob):
        raise CheckpointFormatError(
            f"declared header length {header_len} exceeds file size", offset=16
        )
    try:
        header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable JSON header: {exc}", offset=16) from exc
    try:
        spec = ModelSpec.from_dict(header["spec"])
        epoch = int(header["epoch"])
        rng_state = header.get("rng_state") or {}
        bank_counts = header.get("bank_counts")
        tensor_table = header["tensors"]
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointFormatError(f"invalid header contents: {exc}", offset=16) from exc

    offset = 16 + header_len
    arrays: dict[str, np.ndarray] = {}
    for entry in tensor_table:
        shape = tuple(int(d) for d in entry["shape"])
        nbytes = 8 * math.prod(shape)
        if offset + nbytes > len(blob):
            raise CheckpointFormatError(
                f"tensor {entry['name']!r} truncated (needs {nbytes} bytes)", offset=offset
            )
        arrays[entry["name"]] = (
            np.frombuffer(blob, dtype="<f8", count=math.prod(shape), offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += nbytes
    if offset != len(blob):
        raise CheckpointFormatError("trailing bytes after last tensor", offset=offset)

    bank = None
    if bank_counts is not None:
        if _BANK_PREV not in arrays or _BANK_ACCUM not in arrays:
            raise CheckpointFormatError("bank counts present but bank matrices missing", offset=16)
        bank = SoftLabelBank(spec.n_classes)
        bank.s_prev[...] = arrays.pop(_BANK_PREV)
        bank.s_accum[...] = arrays.pop(_BANK_ACCUM)
        bank.counts[...] = np.asarray(bank_counts, dtype=np.int64)
    return Checkpoint(spec=spec, epoch=epoch, params=arrays, bank=bank, rng_state=rng_state)
