"""Procedural road scenes with aligned RGB, class labels and depth.

Classes: 0 sky, 1 road, 2 building, 3 car. Depth is normalized nearness in
[0, 1]: 1 is the bottom image row, 0 the horizon and everything in the sky.

Draw order from ``Rng(seed)`` (fixed; changing it changes every dataset):

1. horizon row            randint(ceil(0.35 H), floor(0.55 H))
2. building count         randint(1, 3), then per building:
   width, left column, height, depth   (depth ~ uniform[0.1, 0.4])
3. car count              randint(0, 2), then per car:
   base row, height, width, left column
4. pixel noise            3*H*W uniforms, channel-major (CHW)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rng import Rng, splitmix64

SKY, ROAD, BUILDING, CAR = range(4)
CLASS_NAMES = ("sky", "road", "building", "car")
NUM_CLASSES = 4

# Base colors are deliberately close so that color alone is a weak cue.
BASE_COLORS = np.array([
    [0.55, 0.62, 0.75],  # sky
    [0.50, 0.50, 0.52],  # road
    [0.58, 0.54, 0.52],  # building
    [0.62, 0.42, 0.42],  # car
])
NOISE_AMPLITUDE = 0.05

MAGIC = b"AUXD"
VERSION = 1
HEADER = struct.Struct("<4s6I")

TRAIN_TAG = 0x7472_6169_6E00_0000
VAL_TAG = 0x7661_6C00_0000_0000


class DatasetFormatError(ValueError):
    pass


@dataclass
class Scene:
    image: np.ndarray   # [3, H, W] in [0, 1]
    labels: np.ndarray  # [H, W] uint8
    depth: np.ndarray   # [H, W] in [0, 1]


def gen_scene(seed: int, height: int, width: int) -> Scene:
    if height < 16 or width < 16:
        raise ValueError(f"scene extents must be at least 16x16, got {height}x{width}")
    H, W = height, width
    rng = Rng(seed)
    labels = np.full((H, W), SKY, dtype=np.uint8)
    depth = np.zeros((H, W))

    horizon = rng.randint(math.ceil(0.35 * H), math.floor(0.55 * H))
    rows = np.arange(H)
    ramp = np.clip((rows - horizon) / (H - 1 - horizon), 0.0, 1.0)
    labels[horizon:] = ROAD
    depth[horizon:] = ramp[horizon:, None]

    for _ in range(rng.randint(1, 3)):
        bw = rng.randint(max(2, W // 8), max(2, W // 3))
        x0 = rng.randint(0, W - bw)
        bh = rng.randint(max(1, math.ceil(0.3 * horizon)), max(1, math.floor(0.9 * horizon)))
        d = rng.uniform_range(0.1, 0.4)
        labels[horizon - bh:horizon, x0:x0 + bw] = BUILDING
        depth[horizon - bh:horizon, x0:x0 + bw] = d

    for _ in range(rng.randint(0, 2)):
        base = rng.randint(horizon + max(2, (H - horizon) // 3), H - 1)
        span = base - horizon
        ch = rng.randint(max(1, span // 3), max(1, span // 2))
        cw = min(W, rng.randint(max(2, ch), max(2, 2 * ch)))
        x0 = rng.randint(0, W - cw)
        labels[base - ch + 1:base + 1, x0:x0 + cw] = CAR
        depth[base - ch + 1:base + 1, x0:x0 + cw] = ramp[base]

    shade = 0.5 + 0.5 * depth
    image = BASE_COLORS[labels].transpose(2, 0, 1) * shade[None]
    noise = (2.0 * rng.uniform_array(3 * H * W) - 1.0) * NOISE_AMPLITUDE
    image = np.clip(image + noise.reshape(3, H, W), 0.0, 1.0)
    return Scene(image, labels, depth)


class Dataset:
    """Stacked scenes. Images and depth are float32, as stored on disk."""

    def __init__(self, images: np.ndarray, labels: np.ndarray, depth: np.ndarray,
                 num_classes: int = NUM_CLASSES):
        n, c, h, w = images.shape
        if labels.shape != (n, h, w) or depth.shape != (n, h, w):
            raise ValueError("images, labels and depth disagree on extents")
        self.images = np.ascontiguousarray(images, dtype=np.float32)
        self.labels = np.ascontiguousarray(labels, dtype=np.uint8)
        self.depth = np.ascontiguousarray(depth, dtype=np.float32)
        self.num_classes = num_classes

    @classmethod
    def from_scenes(cls, scenes: Sequence[Scene]) -> "Dataset":
        if not scenes:
            raise ValueError("no scenes")
        shapes = {s.labels.shape for s in scenes}
        if len(shapes) != 1:
            raise ValueError(f"scenes have mixed extents {sorted(shapes)}")
        return cls(np.stack([s.image for s in scenes]), np.stack([s.labels for s in scenes]),
                   np.stack([s.depth for s in scenes]))

    @property
    def height(self) -> int:
        return self.images.shape[2]

    @property
    def width(self) -> int:
        return self.images.shape[3]

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, i: int) -> Scene:
        return Scene(self.images[i], self.labels[i], self.depth[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.concatenate([self.images, other.images]),
                       np.concatenate([self.labels, other.labels]),
                       np.concatenate([self.depth, other.depth]), self.num_classes)

    def batches(self, batch_size: int):
        """Sequential (images, labels, depth) batches as float64 / int arrays."""
        for start in range(0, len(self), batch_size):
            sl = slice(start, start + batch_size)
            yield (self.images[sl].astype(np.float64), self.labels[sl],
                   self.depth[sl, None].astype(np.float64))


def expected_file_size(n: int, height: int, width: int) -> int:
    hw = height * width
    return HEADER.size + n * (hw * 4 * 3 + hw + hw * 4)


def write_dataset(scenes: Dataset | Iterable[Scene], path) -> None:
    ds = scenes if isinstance(scenes, Dataset) else Dataset.from_scenes(list(scenes))
    n, c, h, w = ds.images.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, n, h, w, c, ds.num_classes))
        for i in range(n):
            fh.write(ds.images[i].astype("<f4").tobytes())
            fh.write(ds.labels[i].tobytes())
            fh.write(ds.depth[i].astype("<f4").tobytes())


def read_dataset(path) -> Dataset:
    buf = Path(path).read_bytes()
    if len(buf) < HEADER.size:
        raise DatasetFormatError(f"truncated header: {len(buf)} bytes")
    magic, version, n, h, w, c, num_classes = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    if c != 3:
        raise DatasetFormatError(f"expected 3 image channels, header says {c}")
    want = expected_file_size(n, h, w)
    if len(buf) < want:
        raise DatasetFormatError(f"truncated payload: header declares {n} samples "
                                 f"({want} bytes), file has {len(buf)}")
    if len(buf) > want:
        raise DatasetFormatError(f"sample count mismatch: {len(buf) - want} bytes beyond "
                                 f"the {n} declared samples")
    hw = h * w
    rec = np.dtype([("image", "<f4", (3, h, w)), ("labels", "u1", (h, w)), ("depth", "<f4", (h, w))])
    assert rec.itemsize == hw * 17
    arr = np.frombuffer(buf, dtype=rec, count=n, offset=HEADER.size)
    return Dataset(arr["image"].astype(np.float32), arr["labels"].copy(),
                   arr["depth"].astype(np.float32), num_classes)


def sample_seed(seed: int, tag: int, index: int) -> int:
    return splitmix64((seed ^ tag ^ index) & ((1 << 64) - 1))


def make_splits(seed: int, n_train: int, n_val: int, height: int, width: int) -> tuple[Dataset, Dataset]:
    if n_train < 1 or n_val < 1:
        raise ValueError("split sizes must be >= 1")
    train = [gen_scene(sample_seed(seed, TRAIN_TAG, i), height, width) for i in range(n_train)]
    val = [gen_scene(sample_seed(seed, VAL_TAG, i), height, width) for i in range(n_val)]
    return Dataset.from_scenes(train), Dataset.from_scenes(val)
