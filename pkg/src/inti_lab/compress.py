"""Frame-halving compression stages inserted between transformer blocks.

Every stage maps a token grid ``[..., T, N+1, C]`` to ``[..., T/2, N+1, C]``.
``IntiStage`` fuses each token pair at the same position in frames 2j and 2j+1
with predicted weights (alpha, beta). ``LinearPoolingStage`` uses one learned
pair of weights for every position. ``ConvPoolingStage`` is a temporal
convolution with stride 2.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import functional as F
from .errors import ConfigError, ContractError
from .nn import Linear, Module, Projector, param, trunc_normal
from .tensor import Tensor, as_tensor, broadcast_to, concat, linear, zeros

KINDS = ("inti", "linear_pool", "conv_pool")
FUSIONS = ("sep_token", "add_all", "cat_all")
HEADS = ("softmax", "sigmoid", "attention")


@dataclass(frozen=True)
class StageConfig:
    kind: str = "inti"
    insert_after_block: int = 1
    fusion: str = "sep_token"
    head: str = "softmax"
    head_hidden: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown stage kind {self.kind!r}; expected one of {KINDS}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"unknown fusion mode {self.fusion!r}; expected one of {FUSIONS}")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head mode {self.head!r}; expected one of {HEADS}")
        if self.head == "attention" and self.fusion != "sep_token":
            raise ConfigError("the attention head is only defined for fusion='sep_token'")
        if self.head_hidden is not None and self.head_hidden <= 0:
            raise ConfigError("head_hidden must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["head_hidden"] is None:
            del d["head_hidden"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StageConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown stage keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class WeightField:
    """Per-position fusion weights, each shaped ``[..., T/2, N+1]``."""

    alpha: Tensor
    beta: Tensor


@dataclass
class ContextFeatures:
    token_even: Tensor  # [..., T/2, N+1, C/2]
    token_odd: Tensor   # [..., T/2, N+1, C/2]
    cube: Tensor        # [..., T, N+1, C], class-token rows zero
    frame: Tensor       # [..., T/2, C]
    glob: Tensor        # [..., C]

    @property
    def token(self) -> Tensor:
        return concat([self.token_even, self.token_odd], axis=-1)


def even_frames(x: Tensor) -> Tensor:
    return x[..., 0::2, :, :]


def odd_frames(x: Tensor) -> Tensor:
    return x[..., 1::2, :, :]


def _check_even(x: Tensor, what: str) -> int:
    t = x.shape[-3]
    if t % 2:
        raise ContractError(f"{what}: frame count must be even, got {t}")
    return t


def _grid_side(num_patches: int) -> int:
    side = math.isqrt(num_patches)
    if side * side != num_patches:
        raise ConfigError(f"spatial token count {num_patches} is not a perfect square")
    return side


# ----------------------------------------------------------------------
# feature extractors


def add_temporal_embedding(x: Tensor, pos: Tensor, sigma: Tensor) -> Tensor:
    """``x + sigma * P[:T]``, with ``P[T_max, 1, C]`` broadcast over tokens."""
    t = x.shape[-3]
    if t > pos.shape[0]:
        raise ConfigError(f"temporal embedding holds {pos.shape[0]} frames, input has {t}")
    return x + sigma * pos[:t]


def extract_token_feature(even: Tensor, odd: Tensor, proj_even: Projector, proj_odd: Projector) -> Tensor:
    """Concatenate the C/2 projections of each token pair: ``[..., T/2, N+1, C]``."""
    return concat([proj_even(even), proj_odd(odd)], axis=-1)


def extract_cube_feature(x: Tensor, kernel: Tensor) -> Tensor:
    """Depthwise 3x3x3 conv over the patch grid of every frame.

    Returns ``[..., T, N+1, C]``; the class-token row has no grid cell and is zero.
    """
    *lead, t, s, c = x.shape
    side = _grid_side(s - 1)
    grid = x[..., 1:, :].reshape(*lead, t, side, side, c)
    conv = F.depthwise_conv3d(grid, kernel).reshape(*lead, t, s - 1, c)
    return concat([zeros(*lead, t, 1, c), conv], axis=-2)


def pair_mean(x: Tensor) -> Tensor:
    """Average rows 2j and 2j+1 along the frame axis."""
    return (even_frames(x) + odd_frames(x)) * 0.5


def extract_frame_feature(cls_even: Tensor, cls_odd: Tensor, proj_even: Projector,
                          proj_odd: Projector, proj_out: Projector) -> Tensor:
    """Class-token pair feature ``[..., T/2, C]``."""
    return proj_out(concat([proj_even(cls_even), proj_odd(cls_odd)], axis=-1))


class GlobalPooling(Module):
    """Three depthwise temporal convs (k=3, s=1) with two max-pools, then a time average."""

    def __init__(self, rng: np.random.Generator, width: int):
        bound = 1.0 / math.sqrt(3.0)
        self.kernel1 = param(rng.uniform(-bound, bound, (3, width)))
        self.bias1 = param(np.zeros(width))
        self.kernel2 = param(rng.uniform(-bound, bound, (3, width)))
        self.bias2 = param(np.zeros(width))
        self.kernel3 = param(rng.uniform(-bound, bound, (3, width)))
        self.bias3 = param(np.zeros(width))

    def __call__(self, cls: Tensor) -> Tensor:
        return extract_global_feature(cls, self)


def extract_global_feature(cls: Tensor, net: GlobalPooling) -> Tensor:
    """``cls[..., T, C] -> [..., C]``; computed once per clip and shared by all positions."""
    t = cls.shape[-2]
    if t < 4:
        raise ContractError(f"global feature needs at least 4 frames for two stride-2 pools, got {t}")
    h = F.gelu(F.max_pool1d(F.depthwise_conv1d(cls, net.kernel1, net.bias1)))
    h = F.gelu(F.max_pool1d(F.depthwise_conv1d(h, net.kernel2, net.bias2)))
    h = F.depthwise_conv1d(h, net.kernel3, net.bias3)
    return F.gelu(h.mean(axis=-2))


# ----------------------------------------------------------------------
# weight prediction and fusion


class WeightHead(Module):
    """Maps context features to per-position (alpha, beta).

    ``fusion`` picks how features are combined before the FFN: ``sep_token``
    keeps the token feature and concatenates the sum of the other three,
    ``add_all`` sums all four, ``cat_all`` concatenates all four. ``mode``
    picks the normalizer: ``softmax`` over the two logits, ``sigmoid`` on each
    logit independently, or ``attention``: a learned vector scored against each
    token's own feature, softmaxed within the pair.

    The last layer starts at zero, so every mode begins at alpha = beta = 0.5.
    """

    def __init__(self, rng: np.random.Generator, width: int, fusion: str = "sep_token",
                 mode: str = "softmax", hidden: int | None = None):
        self.fusion = fusion
        self.mode = mode
        if mode == "attention":
            self.vector = param(np.zeros(width // 2 + width))
            return
        d_in = {"sep_token": 2 * width, "add_all": width, "cat_all": 4 * width}[fusion]
        self.fc1 = Linear(rng, d_in, hidden or width)
        self.fc2 = Linear(rng, hidden or width, 2, zero=True)

    def __call__(self, feats: ContextFeatures) -> WeightField:
        return predict_weights(feats, self)


def _context_parts(feats: ContextFeatures):
    f_token = feats.token
    lead = f_token.shape[:-2]
    c = feats.frame.shape[-1]
    frame = feats.frame.reshape(*lead, 1, c)
    glob = feats.glob.reshape(*feats.glob.shape[:-1], 1, 1, c)
    return f_token, pair_mean(feats.cube), frame, glob


def predict_weights(feats: ContextFeatures, head: WeightHead) -> WeightField:
    """Per-position fusion weights from the four context features."""
    if head.mode == "attention":
        frame = feats.frame.reshape(*feats.frame.shape[:-1], 1, feats.frame.shape[-1])
        glob = feats.glob.reshape(*feats.glob.shape[:-1], 1, 1, feats.glob.shape[-1])
        shared = frame + glob
        score_even = linear(concat([feats.token_even, even_frames(feats.cube) + shared], axis=-1),
                            head.vector.reshape(-1, 1))
        score_odd = linear(concat([feats.token_odd, odd_frames(feats.cube) + shared], axis=-1),
                           head.vector.reshape(-1, 1))
        w = F.softmax(concat([score_even, score_odd], axis=-1), axis=-1)
        return WeightField(w[..., 0], w[..., 1])

    f_token, cube, frame, glob = _context_parts(feats)
    if head.fusion == "sep_token":
        feat = concat([f_token, cube + frame + glob], axis=-1)
    elif head.fusion == "add_all":
        feat = f_token + cube + frame + glob
    elif head.fusion == "cat_all":
        full = cube.shape
        feat = concat([f_token, cube, broadcast_to(frame, full), broadcast_to(glob, full)], axis=-1)
    else:
        raise ConfigError(f"unknown fusion mode {head.fusion!r}")
    logits = head.fc2(F.gelu(head.fc1(feat)))
    if head.mode == "softmax":
        w = F.softmax(logits, axis=-1)
    elif head.mode == "sigmoid":
        w = F.sigmoid(logits)
    else:
        raise ConfigError(f"unknown head mode {head.mode!r}")
    return WeightField(w[..., 0], w[..., 1])


def fuse_pairs(x: Tensor, w: WeightField) -> Tensor:
    """``Z[j, k] = alpha[j, k] * X[2j, k] + beta[j, k] * X[2j+1, k]``."""
    t = _check_even(x, "fuse_pairs")
    want = (*x.shape[:-3], t // 2, x.shape[-2])
    if w.alpha.shape != want or w.beta.shape != want:
        raise ContractError(f"fuse_pairs: weights {w.alpha.shape}/{w.beta.shape} do not match grid, want {want}")
    a = w.alpha.reshape(*want, 1)
    b = w.beta.reshape(*want, 1)
    return a * even_frames(x) + b * odd_frames(x)


# ----------------------------------------------------------------------
# stages


class IntiStage(Module):
    """Inter-frame token interpolation with a multi-scale weight predictor."""

    kind = "inti"

    def __init__(self, rng: np.random.Generator, width: int, max_frames: int,
                 insert_after_block: int = 1, fusion: str = "sep_token", head: str = "softmax",
                 head_hidden: int | None = None):
        if width % 2:
            raise ConfigError(f"InTI needs an even width, got {width}")
        half = width // 2
        self.insert_after_block = insert_after_block
        self.max_frames = max_frames
        self.pos = param(trunc_normal(rng, (max_frames, 1, width)))
        self.sigma = param(np.zeros(()))
        self.token_even = Projector(rng, width, half)
        self.token_odd = Projector(rng, width, half)
        bound = 1.0 / math.sqrt(27.0)
        self.cube_kernel = param(rng.uniform(-bound, bound, (3, 3, 3, width)))
        self.frame_even = Projector(rng, width, half)
        self.frame_odd = Projector(rng, width, half)
        self.frame_out = Projector(rng, width, width)
        self.global_net = GlobalPooling(rng, width)
        self.head = WeightHead(rng, width, fusion, head, head_hidden)

    def features(self, x: Tensor) -> ContextFeatures:
        even, odd = even_frames(x), odd_frames(x)
        cls = x[..., 0, :]
        return ContextFeatures(
            token_even=self.token_even(even),
            token_odd=self.token_odd(odd),
            cube=extract_cube_feature(x, self.cube_kernel),
            frame=extract_frame_feature(cls[..., 0::2, :], cls[..., 1::2, :],
                                        self.frame_even, self.frame_odd, self.frame_out),
            glob=self.global_net(cls),
        )

    def __call__(self, x: Tensor, on_weights: Callable[[WeightField], None] | None = None) -> Tensor:
        return inti_stage(x, self, on_weights)


def inti_stage(x: Tensor, stage: IntiStage,
               on_weights: Callable[[WeightField], None] | None = None) -> Tensor:
    """Temporal embedding, context features, weight prediction, pair fusion."""
    t = _check_even(x, "inti_stage")
    if t < 4:
        raise ContractError(f"inti_stage: needs at least 4 frames, got {t}")
    x = add_temporal_embedding(x, stage.pos, stage.sigma)
    w = predict_weights(stage.features(x), stage.head)
    if on_weights is not None:
        on_weights(w)
    return fuse_pairs(x, w)


class LinearPoolingStage(Module):
    """One softmax-normalized weight pair shared by every position."""

    kind = "linear_pool"

    def __init__(self, insert_after_block: int = 1):
        self.insert_after_block = insert_after_block
        self.logits = param(np.zeros(2))

    def __call__(self, x: Tensor, on_weights=None) -> Tensor:
        return linear_pooling_stage(x, self.logits, on_weights)


def linear_pooling_stage(x: Tensor, logits, on_weights=None) -> Tensor:
    t = _check_even(x, "linear_pooling_stage")
    w = F.softmax(as_tensor(logits), axis=-1)
    shape = (*x.shape[:-3], t // 2, x.shape[-2])
    field = WeightField(broadcast_to(w[0], shape), broadcast_to(w[1], shape))
    if on_weights is not None:
        on_weights(field)
    return w[0] * even_frames(x) + w[1] * odd_frames(x)


class ConvPoolingStage(Module):
    """Temporal kernel 3, stride 2, spatial kernel 1, full C -> C channel mixing.

    Output frame j reads input frames 2j, 2j+1, 2j+2 (zero past the end), so the
    centre tap sits on the odd frame of each pair. Class tokens go through the
    same kernel. Initialized to the pair average of frames 2j and 2j+1.
    """

    kind = "conv_pool"

    def __init__(self, width: int, insert_after_block: int = 1):
        self.insert_after_block = insert_after_block
        k = np.zeros((3, width, width))
        k[0] = k[1] = 0.5 * np.eye(width)
        self.kernel = param(k)
        self.bias = param(np.zeros(width))

    def __call__(self, x: Tensor, on_weights=None) -> Tensor:
        return conv_pooling_stage(x, self.kernel, self.bias)


def conv_pooling_stage(x: Tensor, kernel, bias=None) -> Tensor:
    t = _check_even(x, "conv_pooling_stage")
    *lead, _, s, c = x.shape
    _grid_side(s - 1)
    kernel = as_tensor(kernel)
    if kernel.shape != (3, c, c):
        raise ConfigError(f"conv_pooling_stage: kernel must be (3, {c}, {c}), got {kernel.shape}")
    padded = concat([x, zeros(*lead, 1, s, c)], axis=-3)
    out = None
    for tap in range(3):
        term = linear(padded[..., tap:tap + t:2, :, :], kernel[tap])
        out = term if out is None else out + term
    return out if bias is None else out + bias


def build_stage(cfg: StageConfig, width: int, frames_in: int, rng: np.random.Generator) -> Module:
    if cfg.kind == "inti":
        return IntiStage(rng, width, frames_in, cfg.insert_after_block, cfg.fusion, cfg.head,
                         cfg.head_hidden)
    if cfg.kind == "linear_pool":
        return LinearPoolingStage(cfg.insert_after_block)
    if cfg.kind == "conv_pool":
        return ConvPoolingStage(width, cfg.insert_after_block)
    raise ConfigError(f"unknown stage kind {cfg.kind!r}")
