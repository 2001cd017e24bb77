"""Experiment configs, the training loop, evaluation and checkpoint I/O."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import functional as F
from .compress import StageConfig, WeightField, build_stage
from .data import ClipDataset, generate_moving_shapes
from .errors import ConfigError, NumericError
from .serialize import load_checkpoint, save_checkpoint
from .tensor import Tape
from .vit import VideoModel, ViT, ViTConfig, validate_schedule

log = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-12


OPTIMIZERS = ("sgd", "adamw")


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    name: str = "sgd"
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class DataConfig:
    seed: int = 0
    train_size: int = 256
    test_size: int = 256
    num_classes: int = 4
    noise: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    model: ViTConfig = field(default_factory=ViTConfig)
    stages: tuple[StageConfig, ...] = ()
    frames: int = 8
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.model.num_classes != self.data.num_classes:
            raise ConfigError(
                f"model.num_classes={self.model.num_classes} but data.num_classes={self.data.num_classes}")
        if self.frames <= 0:
            raise ConfigError("frames must be positive")
        if self.optimizer.batch_size <= 0 or self.optimizer.epochs < 0 or self.optimizer.lr < 0:
            raise ConfigError(f"invalid optimizer settings: {self.optimizer}")
        if self.optimizer.name not in OPTIMIZERS:
            raise ConfigError(f"optimizer.name must be one of {OPTIMIZERS}, got {self.optimizer.name!r}")
        validate_schedule(self.model.depth, self.frames, self.stages)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "stages": [s.to_dict() for s in self.stages],
            "frames": self.frames,
            "optimizer": asdict(self.optimizer),
            "data": asdict(self.data),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - {"model", "stages", "frames", "optimizer", "data"}
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        try:
            return cls(
                model=ViTConfig.from_dict(d.get("model", {})),
                stages=tuple(StageConfig.from_dict(s) for s in d.get("stages", [])),
                frames=int(d.get("frames", 8)),
                optimizer=OptimizerConfig(**d.get("optimizer", {})),
                data=DataConfig(**d.get("data", {})),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def build_model(cfg: ExperimentConfig) -> VideoModel:
    backbone = ViT(cfg.model, seed=cfg.optimizer.seed)
    rng = np.random.default_rng([cfg.optimizer.seed, 1])
    counts = validate_schedule(cfg.model.depth, cfg.frames, cfg.stages)
    stages = [build_stage(s, cfg.model.width, t, rng) for s, t in zip(cfg.stages, counts)]
    return VideoModel(backbone, stages)


def simplex_hook(stages: tuple[StageConfig, ...]) -> Callable[[int, WeightField], None]:
    """Raise ``NumericError`` if a normalized weight field leaves the simplex."""

    def check(i: int, w: WeightField) -> None:
        if stages[i].kind == "inti" and stages[i].head == "sigmoid":
            return
        a, b = w.alpha.data, w.beta.data
        if not (np.all(a >= 0) and np.all(b >= 0) and np.all(a <= 1) and np.all(b <= 1)):
            raise NumericError(f"stage {i}: fusion weights outside [0, 1]")
        gap = float(np.max(np.abs(a + b - 1.0)))
        if gap > SIMPLEX_TOL:
            raise NumericError(f"stage {i}: alpha + beta deviates from 1 by {gap:.3e}")

    return check


class MomentumSGD:
    """SGD with heavy-ball momentum, L2 penalty on matrices and a cosine schedule."""

    def __init__(self, params, lr: float, momentum: float, weight_decay: float, total_steps: int):
        self.params = list(params)
        self.base_lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.total_steps = max(total_steps, 1)
        self.steps = 0
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def lr_at(self, step: int) -> float:
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * step / self.total_steps))

    def step(self) -> None:
        lr = self.lr_at(self.steps)
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and p.ndim >= 2:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            if lr:
                p.data -= lr * v  # in place: keeps 0-d parameters as arrays
        self.steps += 1


class AdamW(MomentumSGD):
    """Adam with decoupled weight decay on matrices; ``momentum`` is beta1."""

    def __init__(self, params, lr: float, momentum: float, weight_decay: float, total_steps: int,
                 beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params, lr, momentum, weight_decay, total_steps)
        self.beta2 = beta2
        self.eps = eps
        self.second = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        lr = self.lr_at(self.steps)
        self.steps += 1
        b1, b2 = self.momentum, self.beta2
        c1, c2 = 1.0 - b1 ** self.steps, 1.0 - b2 ** self.steps
        for p, m, v in zip(self.params, self.velocity, self.second):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if lr:
                update = (m / c1) / (np.sqrt(v / c2) + self.eps)
                if self.weight_decay and p.ndim >= 2:
                    update = update + self.weight_decay * p.data
                p.data -= lr * update


def make_optimizer(cfg: OptimizerConfig, params, total_steps: int) -> MomentumSGD:
    if cfg.name == "adamw":
        return AdamW(params, cfg.lr, cfg.momentum, cfg.weight_decay, total_steps, cfg.beta2, cfg.eps)
    return MomentumSGD(params, cfg.lr, cfg.momentum, cfg.weight_decay, total_steps)


@dataclass
class TrainResult:
    model: VideoModel
    config: ExperimentConfig
    history: list[dict]

    @property
    def final(self) -> dict:
        return self.history[-1] if self.history else {}


def load_datasets(cfg: ExperimentConfig) -> tuple[ClipDataset, ClipDataset]:
    d, m = cfg.data, cfg.model
    train = generate_moving_shapes(d.seed, d.train_size, cfg.frames, m.image_size, d.num_classes, "train", d.noise)
    test = generate_moving_shapes(d.seed, d.test_size, cfg.frames, m.image_size, d.num_classes, "test", d.noise)
    return train, test


def train(cfg: ExperimentConfig, train_set: ClipDataset | None = None, test_set: ClipDataset | None = None,
          out_dir=None, eval_every: int = 1) -> TrainResult:
    """Cross-entropy training with fixed-seed minibatch order.

    Raises ``NumericError`` when the loss becomes non-finite.
    """
    if train_set is None or test_set is None:
        gen_train, gen_test = load_datasets(cfg)
        train_set = train_set or gen_train
        test_set = test_set or gen_test
    _check_dataset(cfg, train_set)
    model = build_model(cfg)
    opt_cfg = cfg.optimizer
    steps_per_epoch = math.ceil(len(train_set) / opt_cfg.batch_size)
    opt = make_optimizer(opt_cfg, model.parameters(), steps_per_epoch * opt_cfg.epochs)
    hook = simplex_hook(cfg.stages)
    order_rng = np.random.default_rng([opt_cfg.seed, 2])
    history = []
    for epoch in range(1, opt_cfg.epochs + 1):
        perm = order_rng.permutation(len(train_set))
        loss_sum, correct = 0.0, 0
        for start in range(0, len(perm), opt_cfg.batch_size):
            idx = perm[start:start + opt_cfg.batch_size]
            clips, labels = train_set.clips[idx], train_set.labels[idx]
            model.zero_grad()
            with Tape() as tape:
                logits = model(clips, on_weights=hook)
                loss = F.cross_entropy(logits, labels)
                if not np.isfinite(loss.data).all():
                    raise NumericError(f"loss became non-finite at epoch {epoch}, step {opt.steps}")
                tape.backward(loss)
            opt.step()
            loss_sum += loss.item() * len(idx)
            correct += int((logits.data.argmax(axis=-1) == labels).sum())
        row = {"epoch": epoch, "loss": loss_sum / len(train_set),
               "train_acc": 100.0 * correct / len(train_set), "lr": opt.lr_at(opt.steps)}
        if eval_every and (epoch % eval_every == 0 or epoch == opt_cfg.epochs):
            row["test_acc"] = evaluate(model, test_set, opt_cfg.batch_size)
        history.append(row)
        log.info("epoch %d %s", epoch, row)
    result = TrainResult(model, cfg, history)
    if out_dir is not None:
        save_model(out_dir, model, cfg, history)
    return result


def _check_dataset(cfg: ExperimentConfig, ds: ClipDataset) -> None:
    m = cfg.model
    want = (cfg.frames, m.image_size, m.image_size, m.channels_in)
    if ds.clips.shape[1:] != want:
        raise ConfigError(f"dataset clips {ds.clips.shape[1:]} do not match config {want}")
    if ds.labels.size and (ds.labels.min() < 0 or ds.labels.max() >= m.num_classes):
        raise ConfigError("dataset labels outside [0, num_classes)")


def predict(model, clips: np.ndarray, batch_size: int = 32, workers: int = 1) -> np.ndarray:
    """Logits for every clip. Batches may run on ``workers`` threads over a frozen model."""
    batches = [clips[i:i + batch_size] for i in range(0, len(clips), batch_size)]

    def run(batch):
        return model(batch).data

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(run, batches))
    else:
        outs = [run(b) for b in batches]
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, 0))


def evaluate(model, dataset: ClipDataset, batch_size: int = 32, workers: int = 1) -> float:
    """Top-1 accuracy in percent, one clip and one crop per video."""
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    logits = predict(model, dataset.clips, batch_size, workers)
    if logits.shape != (len(dataset), dataset.num_classes):
        raise ConfigError(f"model emits logits {logits.shape[1:]}, dataset has {dataset.num_classes} classes")
    return 100.0 * float((logits.argmax(axis=-1) == dataset.labels).mean())


def save_model(directory, model: VideoModel, cfg: ExperimentConfig, history: list[dict] | None = None) -> Path:
    d = save_checkpoint(directory, model.state_dict(),
                        {"format": 1, "experiment": cfg.to_dict(), "vit_config": cfg.model.to_dict()})
    if history is not None:
        (d / "metrics.json").write_text(json.dumps({"history": history}, indent=2) + "\n")
    return d


def load_model(directory) -> tuple[VideoModel, ExperimentConfig]:
    params, manifest = load_checkpoint(directory)
    cfg = ExperimentConfig.from_dict(manifest["experiment"])
    model = build_model(cfg)
    model.load_state_dict(params)
    return model, cfg
