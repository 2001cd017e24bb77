import numpy as np
import pytest

from inti_lab.data import DIRECTIONS, ClipDataset, generate_moving_shapes, render_clip, shape_mask
from inti_lab.errors import ConfigError
from inti_lab.train import DataConfig, ExperimentConfig, OptimizerConfig, train
from inti_lab.vit import ViTConfig


def centroid(frame):
    ys, xs = np.nonzero(frame[..., 0] > 0.5)
    return ys, xs


class TestGeneration:
    def test_same_seed_is_bit_identical(self):
        a = generate_moving_shapes(3, 6)
        b = generate_moving_shapes(3, 6)
        np.testing.assert_array_equal(a.clips, b.clips)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_splits_differ(self):
        a = generate_moving_shapes(3, 6, split="train")
        b = generate_moving_shapes(3, 6, split="test")
        assert not np.array_equal(a.clips, b.clips)

    def test_shapes_and_ranges(self):
        ds = generate_moving_shapes(0, 10, frames=4, num_classes=8)
        assert ds.clips.shape == (10, 4, 32, 32, 3)
        assert ds.clips.min() >= 0.0 and ds.clips.max() <= 1.0
        assert ds.labels.min() >= 0 and ds.labels.max() < 8

    def test_noise_amplitude(self):
        noisy = generate_moving_shapes(0, 4, noise=0.05)
        clean = generate_moving_shapes(0, 4, noise=0.0)
        assert 0 < np.abs(noisy.clips - clean.clips).max() <= 0.05

    @pytest.mark.parametrize("kwargs", [{"num_classes": 3}, {"num_clips": 0}, {"size": 16},
                                        {"split": "val"}, {"frames": 0}])
    def test_invalid_sizes(self, kwargs):
        args = {"seed": 0, "num_clips": 2, **kwargs}
        with pytest.raises(ConfigError):
            generate_moving_shapes(**args)


class TestMotion:
    @pytest.mark.parametrize("direction,opposite", [(0, 1), (1, 0), (2, 3), (3, 2)])
    def test_reversal_maps_to_opposite_direction(self, direction, opposite):
        fwd = render_clip(0, direction, (5, 7), 2, 6, 32, np.ones(3), 0.0)
        # the reversed clip is the opposite motion started from the last position
        dy, dx = {0: (0, 1), 1: (0, -1), 2: (1, 0), 3: (-1, 0)}[direction]
        start = ((5 + dy * 2 * 5) % 32, (7 + dx * 2 * 5) % 32)
        reversed_clip = render_clip(0, opposite, start, 2, 6, 32, np.ones(3), 0.0)
        np.testing.assert_array_equal(fwd[::-1], reversed_clip)

    def test_direction_names(self):
        assert DIRECTIONS == ("right", "left", "down", "up")

    def test_rightward_moves_right(self):
        clip = render_clip(0, 0, (4, 4), 2, 2, 32, np.ones(3), 0.0)
        _, x0 = centroid(clip[0])
        _, x1 = centroid(clip[1])
        assert x1.min() - x0.min() == 2

    def test_shapes_differ(self):
        assert not np.array_equal(shape_mask(0), shape_mask(1))
        with pytest.raises(ConfigError):
            shape_mask(2)

    def test_single_frame_carries_no_direction(self):
        """A one-frame classifier stays near chance, so the label lives in the motion."""
        model = ViTConfig(depth=2, num_classes=4)
        cfg = ExperimentConfig(model=model, frames=1,
                               optimizer=OptimizerConfig(name="adamw", lr=1e-3, weight_decay=0.05, epochs=4),
                               data=DataConfig(seed=5, train_size=256, test_size=512))
        result = train(cfg)
        assert result.final["test_acc"] <= 100 / 4 + 10


class TestStorage:
    def test_round_trip(self, tmp_path):
        ds = generate_moving_shapes(1, 3, frames=2)
        ds.save(tmp_path / "d")
        back = ClipDataset.load(tmp_path / "d")
        np.testing.assert_array_equal(back.clips, ds.clips)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert (back.num_classes, back.seed, back.split) == (4, 1, "train")

    def test_missing_directory(self, tmp_path):
        with pytest.raises(ConfigError):
            ClipDataset.load(tmp_path / "nothing")
