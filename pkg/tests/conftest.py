import numpy as np
import pytest

from inti_lab.compress import IntiStage
from inti_lab.vit import ViTConfig

TINY = ViTConfig(image_size=8, patch_size=4, depth=2, width=8, heads=2, mlp_ratio=2.0, num_classes=3)


def randomize(module, rng, scale=0.3):
    """Overwrite every parameter with fresh noise so no zero-init shortcut hides a bug."""
    for _, p in module.named_parameters():
        noise = rng.standard_normal(p.shape) * scale
        if p.ndim == 1 and p.shape[0] > 0 and np.all(p.data == 1.0):
            p.data[...] = 1.0 + noise  # LayerNorm gains stay near one
        else:
            p.data[...] = noise
    return module


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return TINY


@pytest.fixture
def random_stage(rng):
    """A 4-frame InTI stage on a 2x2 patch grid with every parameter randomized."""
    stage = IntiStage(np.random.default_rng(7), width=6, max_frames=4)
    return randomize(stage, rng)
