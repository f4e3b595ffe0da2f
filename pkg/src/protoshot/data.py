"""Dataset readers (IDX, PGM directories) and seeded support-set selection."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError
from .rng import Rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    """Uniform image stack with integer labels and a per-class index."""

    images: np.ndarray  # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_names: tuple = ()
    _by_class: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValidationError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        self._by_class = {}
        for c in np.unique(self.labels):
            self._by_class[int(c)] = np.flatnonzero(self.labels == c)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    @property
    def classes(self) -> tuple:
        return tuple(sorted(self._by_class))

    def class_indices(self, c: int) -> np.ndarray:
        return self._by_class.get(int(c), np.empty(0, dtype=np.int64))

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[idx], self.labels[idx], self.class_names)


@dataclass(frozen=True)
class SupportSet:
    """Exemplars of one class plus the seed that selected them."""

    class_index: int
    images: np.ndarray  # (n, H, W, C)
    indices: np.ndarray  # positions in the source dataset
    seed: int

    def __post_init__(self):
        if self.images.shape[0] != self.indices.shape[0]:
            raise ValidationError("support images/indices length mismatch")
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValidationError("support set contains duplicate samples")

    def __len__(self) -> int:
        return int(self.images.shape[0])


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def read_idx(images_path, labels_path) -> LabeledDataset:
    """Read a big-endian IDX image/label pair, scaling bytes to [0, 1]."""
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(fh, 16, "IDX image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"bad IDX image magic 0x{magic:08x}")
        raw = _read_exact(fh, count * rows * cols, "IDX image payload")
    with open(labels_path, "rb") as fh:
        magic, lcount = struct.unpack(">ii", _read_exact(fh, 8, "IDX label header"))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"bad IDX label magic 0x{magic:08x}")
        labels = np.frombuffer(_read_exact(fh, lcount, "IDX label payload"), dtype=np.uint8)
    if count != lcount:
        raise FormatError(f"image count {count} != label count {lcount}")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols, 1)
    return LabeledDataset(
        images.astype(np.float32) / 255.0,
        labels.astype(np.int64),
        class_names=tuple(str(d) for d in range(10)),
    )


def _read_pgm(path) -> np.ndarray:
    """Binary PGM (P5), maxval 255, as a float (H, W) array in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary P5 PGM")
    # header tokens: magic, width, height, maxval; '#' comments allowed
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    raw = data[pos : pos + width * height]
    if len(raw) != width * height:
        raise FormatError(f"{path}: truncated PGM payload")
    img = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
    return img.astype(np.float64) / 255.0


def area_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Exact area-weighted average resize of a 2-D grid.

    Each output pixel averages the source region it covers, with fractional
    rows/columns weighted by overlap, so any source/target ratio is exact.
    """
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()

    def weights(src, dst):
        scale = src / dst
        mat = np.zeros((dst, src))
        for o in range(dst):
            lo, hi = o * scale, (o + 1) * scale
            i0, i1 = int(np.floor(lo)), int(np.ceil(hi))
            for i in range(i0, min(i1, src)):
                overlap = min(hi, i + 1) - max(lo, i)
                if overlap > 0:
                    mat[o, i] = overlap / scale
        return mat

    return weights(h, out_h) @ img @ weights(w, out_w).T


def read_pgm_dir(root_path, resize_to=None, invert=False) -> LabeledDataset:
    """Read a directory of class subdirectories of P5 PGM files.

    Class index is the lexicographic rank of the subdirectory name. Pixels
    are scaled to [0, 1] as stored (white = 1.0); invert=True flips polarity
    for ink-is-dark sources.
    """
    class_dirs = sorted(
        d for d in os.listdir(root_path) if os.path.isdir(os.path.join(root_path, d))
    )
    if not class_dirs:
        raise FormatError(f"{root_path}: no class subdirectories")
    images, labels = [], []
    for c, dname in enumerate(class_dirs):
        dpath = os.path.join(root_path, dname)
        files = sorted(f for f in os.listdir(dpath) if f.lower().endswith(".pgm"))
        if not files:
            raise FormatError(f"{dpath}: empty class directory")
        for fname in files:
            img = _read_pgm(os.path.join(dpath, fname))
            if invert:
                img = 1.0 - img
            if resize_to is not None:
                size = (resize_to, resize_to) if isinstance(resize_to, int) else tuple(resize_to)
                img = area_resize(img, *size)
            images.append(img.astype(np.float32)[..., None])
            labels.append(c)
    return LabeledDataset(np.stack(images), np.asarray(labels), class_names=tuple(class_dirs))


def select_support_set(dataset: LabeledDataset, c: int, n: int, seed: int) -> SupportSet:
    """Uniform without-replacement draw of n exemplars of class c."""
    pool = dataset.class_indices(c)
    if n < 1:
        raise ValidationError("support size must be >= 1")
    if len(pool) < n:
        raise ValidationError(
            f"class {c} has {len(pool)} samples, cannot select {n}"
        )
    rng = Rng(seed)
    picks = rng.sample_without_replacement(len(pool), n)
    chosen = pool[np.asarray(picks, dtype=np.int64)]
    return SupportSet(
        class_index=int(c),
        images=dataset.images[chosen].copy(),
        indices=chosen,
        seed=int(seed),
    )


def augment_rotations(dataset: LabeledDataset, multiples=(0, 1, 2, 3)) -> LabeledDataset:
    """Right-angle rotation augmentation that mints a new class per rotation.

    Each source class c becomes len(multiples) classes; rotation k*90 degrees
    maps to class c*len(multiples) + position_of_k.
    """
    images, labels, names = [], [], []
    k = len(multiples)
    for c in dataset.classes:
        idx = dataset.class_indices(c)
        base = dataset.class_names[c] if c < len(dataset.class_names) else str(c)
        for pos, quarter in enumerate(multiples):
            rotated = np.rot90(dataset.images[idx], k=int(quarter), axes=(1, 2))
            images.append(rotated)
            labels.append(np.full(len(idx), c * k + pos, dtype=np.int64))
            names.append(f"{base}_rot{int(quarter) * 90}")
    return LabeledDataset(np.concatenate(images), np.concatenate(labels), tuple(names))
