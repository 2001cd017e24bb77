"""Moving-shapes video clips whose label is only recoverable from frame order.

Each clip shows one shape translating at constant integer velocity on a torus
(positions wrap around the image border), so every frame, taken alone, has a
uniformly distributed shape position whatever the direction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .serialize import load_tensor, save_tensor

DIRECTIONS = ("right", "left", "down", "up")
# (dy, dx) unit steps; reversing time maps right<->left and down<->up.
_STEPS = {0: (0, 1), 1: (0, -1), 2: (1, 0), 3: (-1, 0)}
SHAPES = ("square", "plus")
SHAPE_SIZE = 12
SPEEDS = (2,)
NOISE = 0.05


@dataclass
class ClipDataset:
    clips: np.ndarray   # [M, T, H, W, 3] in [0, 1]
    labels: np.ndarray  # [M] int64
    num_classes: int
    seed: int
    split: str

    def __len__(self) -> int:
        return len(self.labels)

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_tensor(d / "clips.bin", self.clips)
        meta = {"labels": [int(v) for v in self.labels], "num_classes": self.num_classes,
                "seed": self.seed, "split": self.split}
        (d / "labels.json").write_text(json.dumps(meta) + "\n")
        return d

    @classmethod
    def load(cls, directory) -> "ClipDataset":
        d = Path(directory)
        if not (d / "labels.json").exists():
            raise ConfigError(f"no dataset (labels.json) in {d}")
        meta = json.loads((d / "labels.json").read_text())
        clips = load_tensor(d / "clips.bin").data
        labels = np.asarray(meta["labels"], dtype=np.int64)
        if len(labels) != clips.shape[0]:
            raise ConfigError(f"{d}: {clips.shape[0]} clips but {len(labels)} labels")
        return cls(clips, labels, int(meta["num_classes"]), int(meta["seed"]), meta["split"])


def shape_mask(shape: int, size: int = SHAPE_SIZE) -> np.ndarray:
    m = np.zeros((size, size), dtype=bool)
    if shape == 0:
        m[1:-1, 1:-1] = True
    elif shape == 1:
        mid, half = size // 2, max(1, size // 6)
        m[mid - half:mid + half, :] = True
        m[:, mid - half:mid + half] = True
    else:
        raise ConfigError(f"unknown shape index {shape}")
    return m


def render_clip(shape: int, direction: int, start: tuple[int, int], speed: int, frames: int,
                size: int, color, background: float, shape_size: int = SHAPE_SIZE) -> np.ndarray:
    """Noise-free clip ``[T, H, W, 3]`` of one shape moving on a torus."""
    mask = shape_mask(shape, shape_size)
    dy, dx = _STEPS[direction]
    canvas = np.zeros((size, size), dtype=bool)
    canvas[:mask.shape[0], :mask.shape[1]] = mask
    clip = np.empty((frames, size, size, 3))
    for t in range(frames):
        y = (start[0] + dy * speed * t) % size
        x = (start[1] + dx * speed * t) % size
        on = np.roll(canvas, (y, x), axis=(0, 1))
        clip[t] = background
        clip[t][on] = color
    return clip


def generate_moving_shapes(seed: int, num_clips: int, frames: int = 8, size: int = 32,
                           num_classes: int = 4, split: str = "train", noise: float = NOISE,
                           shape_size: int = SHAPE_SIZE, speeds=SPEEDS, stride: int = 1) -> ClipDataset:
    """Clips labelled by motion direction (4 classes) or direction x shape (8 classes).

    Class ``c`` has direction ``c % 4`` and shape ``c // 4``. Noise is uniform
    in ``[-noise, noise]``, added per pixel and channel, then clipped to [0, 1].
    Train and test splits draw from distinct seed streams of the same ``seed``.
    Start positions are multiples of ``stride`` (use the patch size to align
    shapes with the token grid).
    """
    if num_classes not in (4, 8):
        raise ConfigError(f"num_classes must be 4 or 8, got {num_classes}")
    if num_clips <= 0 or frames <= 0 or size < 2 * shape_size or size % stride:
        raise ConfigError(f"invalid dataset sizes: clips={num_clips} frames={frames} size={size}")
    if split not in ("train", "test"):
        raise ConfigError(f"split must be 'train' or 'test', got {split!r}")
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    labels = rng.integers(0, num_classes, size=num_clips)
    clips = np.empty((num_clips, frames, size, size, 3))
    for i, label in enumerate(labels):
        direction, shape = int(label) % 4, int(label) // 4
        if num_classes == 4:
            shape = int(rng.integers(0, 2))
        start = (stride * int(rng.integers(0, size // stride)), stride * int(rng.integers(0, size // stride)))
        speed = int(rng.choice(speeds))
        color = rng.uniform(0.6, 1.0, size=3)
        background = float(rng.uniform(0.0, 0.3))
        clip = render_clip(shape, direction, start, speed, frames, size, color, background, shape_size)
        clip += rng.uniform(-noise, noise, size=clip.shape)
        clips[i] = np.clip(clip, 0.0, 1.0)
    return ClipDataset(clips, labels.astype(np.int64), num_classes, seed, split)
