"""Synthetic fixture data: rendered digits as IDX archives and stroke
characters as PGM class directories.

Everything is generated from the package's seeded generator, so a given
seed reproduces the same files byte for byte on one machine. Digits are
drawn white-on-black (background 0, ink up to 1) to match the MNIST
convention; stroke characters keep ink = white so the PGM reader's default
polarity yields ink = 1.0.
"""

from __future__ import annotations

import glob
import os
import struct

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .errors import ValidationError
from .rng import Rng

_FONT_DIRS = (
    "/usr/share/fonts/truetype/dejavu",
    "/usr/share/fonts",
)


def _font_paths():
    for root in _FONT_DIRS:
        found = sorted(glob.glob(os.path.join(root, "**", "*.ttf"), recursive=True))
        if found:
            return found
    raise ValidationError("no TrueType fonts found for digit rendering")


_SUPER = 3  # render at 3x and downsample for soft antialiased strokes


def render_digit(digit, font_path, font_size, dx=0.0, dy=0.0, angle=0.0,
                 intensity=1.0, size=28) -> np.ndarray:
    """One white-on-black digit image as uint8 (size, size)."""
    big = size * _SUPER
    img = Image.new("L", (big, big), 0)
    draw = ImageDraw.Draw(img)
    font = ImageFont.truetype(font_path, int(font_size * _SUPER))
    cx = big / 2 + dx * _SUPER
    cy = big / 2 + dy * _SUPER
    draw.text((cx, cy), str(digit), fill=255, font=font, anchor="mm")
    if angle:
        img = img.rotate(angle, resample=Image.BILINEAR, fillcolor=0)
    img = img.resize((size, size), resample=Image.LANCZOS)
    arr = np.asarray(img, dtype=np.float64) * float(intensity)
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def make_digit_arrays(n, seed, size=28):
    """n jittered digit renders with balanced shuffled labels."""
    rng = Rng(seed)
    fonts = _font_paths()
    labels = np.array([i % 10 for i in range(n)], dtype=np.int64)
    rng.shuffle(labels)
    images = np.empty((n, size, size), dtype=np.uint8)
    for i in range(n):
        images[i] = render_digit(
            int(labels[i]),
            font_path=fonts[rng.below(len(fonts))],
            font_size=15 + rng.below(8),
            dx=rng.uniform() * 6 - 3,
            dy=rng.uniform() * 6 - 3,
            angle=rng.uniform() * 24 - 12,
            intensity=0.75 + 0.25 * rng.uniform(),
            size=size,
        )
    return images, labels


def write_idx_images(path, images: np.ndarray) -> None:
    n, h, w = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", 0x00000803, n, h, w))
        fh.write(np.ascontiguousarray(images, dtype=np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", 0x00000801, len(labels)))
        fh.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())


def make_digit_idx(dirpath, n_train, n_test, seed) -> dict:
    """Write a train/test IDX quartet under dirpath; returns the file map."""
    os.makedirs(dirpath, exist_ok=True)
    paths = {
        "train_images": os.path.join(dirpath, "train-images-idx3-ubyte"),
        "train_labels": os.path.join(dirpath, "train-labels-idx1-ubyte"),
        "test_images": os.path.join(dirpath, "test-images-idx3-ubyte"),
        "test_labels": os.path.join(dirpath, "test-labels-idx1-ubyte"),
    }
    train_x, train_y = make_digit_arrays(n_train, seed)
    test_x, test_y = make_digit_arrays(n_test, seed + 1)
    write_idx_images(paths["train_images"], train_x)
    write_idx_labels(paths["train_labels"], train_y)
    write_idx_images(paths["test_images"], test_x)
    write_idx_labels(paths["test_labels"], test_y)
    return paths


# ---------------------------------------------------------------------------
# Stroke characters (Omniglot-style): each class is a template of named
# sub-strokes; instances jitter the control points slightly.

# control points in unit coordinates, per stroke
_CHARACTERS = {
    "char_a": (
        ("stem", [(0.50, 0.15), (0.50, 0.85)]),
        ("bar", [(0.20, 0.50), (0.80, 0.50)]),
        ("hook", [(0.50, 0.15), (0.75, 0.25), (0.80, 0.40)]),
    ),
    "char_b": (
        ("bowl", [(0.30, 0.25), (0.70, 0.30), (0.72, 0.55), (0.35, 0.60)]),
        ("tail", [(0.35, 0.60), (0.60, 0.80)]),
        ("dot", [(0.25, 0.80), (0.30, 0.85)]),
    ),
    "char_c": (
        ("zig", [(0.20, 0.20), (0.60, 0.35), (0.25, 0.55), (0.70, 0.75)]),
        ("cap", [(0.20, 0.12), (0.80, 0.12)]),
        ("foot", [(0.30, 0.88), (0.80, 0.82)]),
    ),
}


def character_names() -> tuple:
    return tuple(sorted(_CHARACTERS))


def render_character(name, size=105, jitter=0.0, rng=None, width_frac=0.055) -> np.ndarray:
    """Render a stroke character, ink = 255 on black, as uint8 (size, size)."""
    strokes = _CHARACTERS[name]
    img = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(img)
    w = max(1, int(round(size * width_frac)))
    for _, points in strokes:
        pts = []
        for (ux, uy) in points:
            if jitter and rng is not None:
                ux += (rng.uniform() * 2 - 1) * jitter
                uy += (rng.uniform() * 2 - 1) * jitter
            pts.append((ux * (size - 1), uy * (size - 1)))
        draw.line(pts, fill=255, width=w, joint="curve")
    return np.asarray(img, dtype=np.uint8)


def character_stroke_masks(name, size=28, dilate_frac=0.10) -> list:
    """(stroke_id, bool mask) per sub-stroke of the unjittered template.

    Masks are each stroke drawn alone with extra width, so ablating a mask
    removes that stroke's ink (plus a safety margin) and little else.
    """
    out = []
    w = max(1, int(round(size * dilate_frac)))
    for stroke_id, points in _CHARACTERS[name]:
        img = Image.new("L", (size, size), 0)
        draw = ImageDraw.Draw(img)
        pts = [(ux * (size - 1), uy * (size - 1)) for (ux, uy) in points]
        draw.line(pts, fill=255, width=w, joint="curve")
        out.append((stroke_id, np.asarray(img) > 0))
    return out


def write_pgm(path, img: np.ndarray) -> None:
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def make_stroke_pgm_dir(dirpath, n_per_class, seed, size=105) -> str:
    """Write one subdirectory of PGM instances per stroke character."""
    rng = Rng(seed)
    for name in character_names():
        cdir = os.path.join(dirpath, name)
        os.makedirs(cdir, exist_ok=True)
        for i in range(n_per_class):
            img = render_character(name, size=size, jitter=0.02, rng=rng)
            write_pgm(os.path.join(cdir, f"{name}_{i:03d}.pgm"), img)
    return dirpath
