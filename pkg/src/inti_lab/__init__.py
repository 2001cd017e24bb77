"""Desk-scale lab for inter-frame token interpolation in video Vision Transformers."""

from .compress import IntiStage, LinearPoolingStage, ConvPoolingStage, StageConfig, WeightField
from .cost import CostReport, reduction_percent, schedule_macs, vit_layer_macs
from .data import ClipDataset, generate_moving_shapes
from .errors import ConfigError, ContractError, NumericError, ShapeError
from .tensor import Tape, Tensor, backward, count_macs
from .train import ExperimentConfig, OptimizerConfig, DataConfig, evaluate, train
from .vit import VideoModel, ViT, ViTConfig

__version__ = "0.1.0"
