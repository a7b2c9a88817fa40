"""SegNet / AuxNet / FuseNet at toy scale, parameter accounting and checkpoints.

Topology (all kinds)::

    enc1: conv3x3(c_in->16)+relu+pool   -> 1/2   (skip f1)
    enc2: conv3x3(16->32)+relu+pool     -> 1/4   (skip f2)
    enc3: conv3x3(32->64)+relu+pool     -> 1/8
    decoder: up3 tconv2x2/2 -> relu -> cat f2
             up2 tconv2x2/2 -> relu -> cat f1
             up1 tconv2x2/2 -> relu -> head conv1x1

SegNet has one decoder (``seg``). AuxNet adds a ``depth`` decoder on the same
encoder; its head is a 1-channel linear regression. FuseNet runs a second
encoder (``fenc*``) on the depth input and adds each of its stage activations
into the RGB stage before pooling.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import (ConvSpec, TransposedConvSpec, concat_channels, conv2d, maxpool2,
                     softmax_channels, transposed_conv2d)
from .rng import Rng, splitmix64
from .tensor import ShapeError, Tensor, relu

KINDS = ("segnet", "auxnet", "fusenet")
ENCODER_CHANNELS = (16, 32, 64)
DECODER_CHANNELS = 8

# stream tags so the encoder and seg decoder draw identical values across kinds
_DEPTH_DECODER_TAG = 0x6465707468000000
_FUSE_ENCODER_TAG = 0x6675736500000000

MAGIC = b"AUXC"
VERSION = 1
_META = "meta.input"


class CheckpointError(ValueError):
    pass


@dataclass
class ModelGraph:
    kind: str
    c_in: int
    num_classes: int
    height: int
    width: int
    decoder_channels: int = DECODER_CHANNELS
    layers: dict[str, ConvSpec | TransposedConvSpec] = field(default_factory=dict)

    @property
    def has_depth_head(self) -> bool:
        return "depth.head" in self.layers

    @property
    def input_channels(self) -> int:
        return self.c_in + 1 if self.kind == "fusenet" else self.c_in

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for lname, spec in self.layers.items():
            out[f"{lname}.weight"] = spec.weight
            out[f"{lname}.bias"] = spec.bias
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def without_depth(self) -> "ModelGraph":
        """Inference view of an AuxNet: same tensors, depth decoder dropped."""
        layers = {k: v for k, v in self.layers.items() if not k.startswith("depth.")}
        kind = "segnet" if self.kind == "auxnet" else self.kind
        return ModelGraph(kind, self.c_in, self.num_classes, self.height, self.width,
                          self.decoder_channels, layers)

    def __call__(self, batch: Tensor) -> dict[str, Tensor]:
        return forward(self, batch)


def _decoder_layers(prefix: str, out_channels: int, dc: int, rng: Rng) -> dict:
    c1, c2, c3 = ENCODER_CHANNELS
    return {
        f"{prefix}.up3": TransposedConvSpec(c3, dc, 2, 2).init(rng),
        f"{prefix}.up2": TransposedConvSpec(dc + c2, dc, 2, 2).init(rng),
        f"{prefix}.up1": TransposedConvSpec(dc + c1, dc, 2, 2).init(rng),
        f"{prefix}.head": ConvSpec(dc, out_channels, 1).init(rng),
    }


def _encoder_layers(prefix: str, c_in: int, rng: Rng) -> dict:
    c1, c2, c3 = ENCODER_CHANNELS
    return {
        f"{prefix}1": ConvSpec(c_in, c1, 3, 1, 1).init(rng),
        f"{prefix}2": ConvSpec(c1, c2, 3, 1, 1).init(rng),
        f"{prefix}3": ConvSpec(c2, c3, 3, 1, 1).init(rng),
    }


def build(kind: str, c_in: int = 3, num_classes: int = 4, height: int = 32, width: int = 48,
          seed: int = 0, decoder_channels: int = DECODER_CHANNELS) -> ModelGraph:
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    if height % 8 or width % 8 or height <= 0 or width <= 0:
        raise ShapeError(f"height and width must be positive multiples of 8, got {height}x{width}")
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    rng = Rng(seed)
    layers = _encoder_layers("enc", c_in, rng)
    layers.update(_decoder_layers("seg", num_classes, decoder_channels, rng))
    if kind == "auxnet":
        layers.update(_decoder_layers("depth", 1, decoder_channels,
                                      Rng(splitmix64(seed ^ _DEPTH_DECODER_TAG))))
    elif kind == "fusenet":
        layers.update(_encoder_layers("fenc", 1, Rng(splitmix64(seed ^ _FUSE_ENCODER_TAG))))
    return ModelGraph(kind, c_in, num_classes, height, width, decoder_channels, layers)


def _decode(model: ModelGraph, prefix: str, f1: Tensor, f2: Tensor, f3: Tensor) -> Tensor:
    L = model.layers
    x = relu(transposed_conv2d(f3, L[f"{prefix}.up3"]))
    x = relu(transposed_conv2d(concat_channels(x, f2), L[f"{prefix}.up2"]))
    x = relu(transposed_conv2d(concat_channels(x, f1), L[f"{prefix}.up1"]))
    return conv2d(x, L[f"{prefix}.head"])


def _split_input(batch: Tensor, c: int) -> tuple[Tensor, Tensor]:
    # fusenet input carries depth as the last channel; slicing is not differentiated
    return Tensor(batch.data[:, :c]), Tensor(batch.data[:, c:c + 1])


def forward(model: ModelGraph, batch: Tensor) -> dict[str, Tensor]:
    """Run the network. Returns ``seg_logits``, ``seg_probs`` and, for AuxNet, ``depth``."""
    if batch.data.ndim != 4:
        raise ShapeError(f"expected NCHW batch, got shape {batch.shape}")
    _, c, h, w = batch.shape
    if c != model.input_channels:
        raise ShapeError(f"{model.kind} expects {model.input_channels} input channels, got {c}")
    if h % 8 or w % 8:
        raise ShapeError(f"input extents must be multiples of 8, got {h}x{w}")
    L = model.layers

    if model.kind == "fusenet":
        x, d = _split_input(batch, model.c_in)
        feats = []
        for i in (1, 2, 3):
            dr = relu(conv2d(d, L[f"fenc{i}"]))
            x = maxpool2(relu(conv2d(x, L[f"enc{i}"])) + dr)
            d = maxpool2(dr)
            feats.append(x)
    else:
        x = batch
        feats = []
        for i in (1, 2, 3):
            x = maxpool2(relu(conv2d(x, L[f"enc{i}"])))
            feats.append(x)

    f1, f2, f3 = feats
    logits = _decode(model, "seg", f1, f2, f3)
    out = {"seg_logits": logits, "seg_probs": softmax_channels(logits)}
    if model.has_depth_head:
        out["depth"] = _decode(model, "depth", f1, f2, f3)
    return out


def param_count(model: ModelGraph, mode: str = "training") -> int:
    """Trainable scalars. ``inference`` drops an AuxNet's depth decoder."""
    if mode not in ("training", "inference"):
        raise ValueError(f"mode must be 'training' or 'inference', got {mode!r}")
    m = model.without_depth() if (mode == "inference" and model.kind == "auxnet") else model
    return sum(spec.param_count() for spec in m.layers.values())


def depth_decoder_param_count(model: ModelGraph) -> int:
    return sum(s.param_count() for k, s in model.layers.items() if k.startswith("depth."))


# ---------------------------------------------------------------------------
# checkpoints


def _encode_tensor(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    parts = [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim)]
    parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(model: ModelGraph, path) -> None:
    """Write the little-endian AUXC format; an extra ``meta.input`` tensor holds
    (c_in, num_classes, height, width, decoder_channels)."""
    tensors = {_META: np.array([model.c_in, model.num_classes, model.height, model.width,
                                model.decoder_channels], dtype=np.float64)}
    tensors.update({k: v.data for k, v in model.named_parameters().items()})
    blob = [MAGIC, struct.pack("<III", VERSION, KINDS.index(model.kind), len(tensors))]
    blob += [_encode_tensor(k, v) for k, v in tensors.items()]
    Path(path).write_bytes(b"".join(blob))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes at offset {self.pos}, "
                                  f"file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, kind: str | None = None) -> ModelGraph:
    """Read a checkpoint. With ``kind`` given, a different stored topology is an error."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic: not an AUXC checkpoint")
    version, kind_id, n = r.unpack("<III")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if kind_id >= len(KINDS):
        raise CheckpointError(f"unknown topology kind id {kind_id}")
    stored_kind = KINDS[kind_id]
    if kind is not None and kind != stored_kind:
        raise CheckpointError(f"topology mismatch: checkpoint holds {stored_kind}, expected {kind}")

    tensors: dict[str, np.ndarray] = {}
    for _ in range(n):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.buf):
        raise CheckpointError(f"{len(r.buf) - r.pos} trailing bytes after last tensor")
    if _META not in tensors:
        raise CheckpointError(f"missing {_META} tensor")
    c_in, num_classes, height, width, dc = (int(v) for v in tensors.pop(_META))

    model = build(stored_kind, c_in, num_classes, height, width, seed=0, decoder_channels=dc)
    expected = model.named_parameters()
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise CheckpointError(f"topology mismatch: missing {missing}, unexpected {extra}")
    for name, t in expected.items():
        if tensors[name].shape != t.shape:
            raise CheckpointError(f"shape mismatch for {name}: stored {tensors[name].shape}, "
                                  f"topology needs {t.shape}")
        t.data = tensors[name].copy()
    return model
