"""Small Vision Transformer and its per-frame video adaptation.

Token grids are tensors shaped ``[..., T, N+1, C]``: optional batch dims, then
frames, then tokens (index 0 is the class token, 1..N are patches in row-major
raster order), then channels.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .errors import ConfigError, ContractError
from .nn import LayerNorm, Linear, Module, param, trunc_normal
from .tensor import Tensor, broadcast_to, concat, matmul, swapaxes


# Fixed normalization that VideoModel applies to [0, 1] pixels before patchify.
PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 32
    patch_size: int = 8
    channels_in: int = 3
    depth: int = 6
    width: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    num_classes: int = 4

    def __post_init__(self):
        if min(self.image_size, self.patch_size, self.channels_in, self.depth,
               self.width, self.heads, self.num_classes) <= 0:
            raise ConfigError(f"ViTConfig fields must be positive: {self}")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid ** 2

    @property
    def seq_len(self) -> int:
        return self.num_patches + 1

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.width * self.mlp_ratio))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown ViTConfig keys: {sorted(unknown)}")
        return cls(**d)


def extract_patches(frames: np.ndarray, patch_size: int) -> np.ndarray:
    """``[..., H, W, Cin] -> [..., N, P*P*Cin]`` in row-major patch order."""
    *lead, h, w, c = frames.shape
    g_h, g_w = h // patch_size, w // patch_size
    x = frames.reshape(*lead, g_h, patch_size, g_w, patch_size, c)
    nd = len(lead)
    x = x.transpose(*range(nd), nd, nd + 2, nd + 1, nd + 3, nd + 4)
    return x.reshape(*lead, g_h * g_w, patch_size * patch_size * c)


class Attention(Module):
    def __init__(self, rng, width: int, heads: int):
        self.heads = heads
        self.qkv = Linear(rng, width, 3 * width)
        self.proj = Linear(rng, width, width, zero=True)

    def __call__(self, x: Tensor) -> Tensor:
        *lead, s, c = x.shape
        h = self.heads
        d = c // h
        qkv = self.qkv(x).reshape(*lead, s, 3, h, d)
        q = swapaxes(qkv[..., 0, :, :], -2, -3)
        k = swapaxes(qkv[..., 1, :, :], -2, -3)
        v = swapaxes(qkv[..., 2, :, :], -2, -3)
        scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / math.sqrt(d))
        out = matmul(F.softmax(scores, axis=-1), v)
        return self.proj(swapaxes(out, -2, -3).reshape(*lead, s, c))


class Mlp(Module):
    def __init__(self, rng, width: int, hidden: int):
        self.fc1 = Linear(rng, width, hidden)
        self.fc2 = Linear(rng, hidden, width, zero=True)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class Block(Module):
    """Pre-norm transformer block; attention runs within each frame only.

    Both residual branches end in a zero-initialized projection, so a fresh
    block is the identity map and early training sees the patch embedding.
    """

    def __init__(self, rng, cfg: ViTConfig):
        self.norm1 = LayerNorm(cfg.width)
        self.attn = Attention(rng, cfg.width, cfg.heads)
        self.norm2 = LayerNorm(cfg.width)
        self.mlp = Mlp(rng, cfg.width, cfg.mlp_hidden)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class ViT(Module):
    def __init__(self, cfg: ViTConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        c = cfg.width
        self.patch_embed = Linear(rng, cfg.patch_size ** 2 * cfg.channels_in, c)
        self.cls_token = param(trunc_normal(rng, (c,)))
        self.pos_embed = param(trunc_normal(rng, (cfg.seq_len, c)))
        self.blocks = [Block(rng, cfg) for _ in range(cfg.depth)]
        self.norm_post = LayerNorm(c)
        self.head = Linear(rng, c, cfg.num_classes, zero=True)

    def patchify(self, frames) -> Tensor:
        """Embed ``frames[..., T, H, W, Cin]`` into a token grid ``[..., T, N+1, C]``."""
        arr = frames.data if isinstance(frames, Tensor) else np.asarray(frames, dtype=np.float64)
        cfg = self.cfg
        if arr.shape[-3:] != (cfg.image_size, cfg.image_size, cfg.channels_in):
            raise ConfigError(
                f"frames must end in ({cfg.image_size}, {cfg.image_size}, {cfg.channels_in}), got {arr.shape}")
        patches = self.patch_embed(extract_patches(arr, cfg.patch_size))
        spatial = patches + self.pos_embed[1:]
        cls = broadcast_to(self.cls_token + self.pos_embed[0], (*arr.shape[:-3], 1, cfg.width))
        return concat([cls, spatial], axis=-2)

    def classify(self, x: Tensor) -> Tensor:
        """Average the per-frame class tokens and apply the linear head."""
        cls = self.norm_post(x[..., 0, :])
        return self.head(cls.mean(axis=-2))


def naive_video_forward(model: ViT, frames) -> Tensor:
    """Every block on every frame, then average-pooled late fusion."""
    x = model.patchify(frames)
    for block in model.blocks:
        x = block(x)
    return model.classify(x)


WeightCallback = Callable[[int, object], None]


def validate_schedule(depth: int, frames: int, stages: Sequence) -> list[int]:
    """Return the frame count entering each stage, or raise on a bad schedule."""
    counts = []
    t = frames
    prev = 0
    for i, st in enumerate(stages):
        at = st.insert_after_block
        if not 1 <= at <= depth - 1:
            raise ConfigError(f"stage {i} ({st.kind}): insert_after_block={at} outside [1, {depth - 1}]")
        if at < prev:
            raise ConfigError(f"stage {i} ({st.kind}): stages must be ordered by insertion point")
        if t % 2:
            raise ContractError(f"stage {i} ({st.kind}) after block {at}: odd frame count {t}")
        counts.append(t)
        t //= 2
        prev = at
    return counts


def compressed_video_forward(model: ViT, frames, stages: Sequence,
                             on_weights: WeightCallback | None = None) -> Tensor:
    """Naive forward with each stage halving the frame axis after its block."""
    x = model.patchify(frames)
    validate_schedule(model.cfg.depth, x.shape[-3], stages)
    pending = list(enumerate(stages))
    for b, block in enumerate(model.blocks, start=1):
        x = block(x)
        while pending and pending[0][1].insert_after_block == b:
            i, st = pending.pop(0)
            cb = None if on_weights is None else (lambda w, i=i: on_weights(i, w))
            x = st(x, on_weights=cb)
    return model.classify(x)


def normalize_pixels(frames) -> np.ndarray:
    arr = frames.data if isinstance(frames, Tensor) else np.asarray(frames, dtype=np.float64)
    return (arr - PIXEL_MEAN) / PIXEL_STD


class VideoModel(Module):
    """Backbone plus an ordered compression schedule."""

    def __init__(self, backbone: ViT, stages: Sequence = ()):
        self.backbone = backbone
        self.stages = list(stages)

    @property
    def cfg(self) -> ViTConfig:
        return self.backbone.cfg

    def __call__(self, frames, on_weights: WeightCallback | None = None) -> Tensor:
        """Logits for clips ``frames[..., T, H, W, 3]`` with pixels in [0, 1]."""
        frames = normalize_pixels(frames)
        if not self.stages:
            return naive_video_forward(self.backbone, frames)
        return compressed_video_forward(self.backbone, frames, self.stages, on_weights)
