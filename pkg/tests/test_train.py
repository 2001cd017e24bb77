import json

import numpy as np
import pytest

from inti_lab import functional as F
from inti_lab.compress import StageConfig
from inti_lab.data import generate_moving_shapes
from inti_lab.errors import ConfigError, ContractError, NumericError
from inti_lab.tensor import Tape
from inti_lab.train import (AdamW, DataConfig, ExperimentConfig, MomentumSGD, OptimizerConfig, build_model,
                            evaluate, load_model, save_model, simplex_hook, train)
from inti_lab.compress import WeightField
from inti_lab.tensor import Tensor
from inti_lab.vit import ViTConfig

SMALL = ViTConfig(depth=2, width=16, heads=2)


def small_config(stages=(StageConfig("inti", 1),), **opt):
    return ExperimentConfig(model=SMALL, stages=stages, frames=4,
                            optimizer=OptimizerConfig(**{"epochs": 1, "batch_size": 4, **opt}),
                            data=DataConfig(train_size=8, test_size=8))


class StubModel:
    def __init__(self, logits):
        self.logits = logits
        self.seen = 0

    def __call__(self, clips):
        out = self.logits[self.seen:self.seen + len(clips)]
        self.seen += len(clips)
        return Tensor(out)


class TestConfig:
    def test_round_trip(self):
        cfg = small_config(name="adamw")
        assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_class_count_mismatch(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(model=ViTConfig(num_classes=8), data=DataConfig(num_classes=4))

    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"model": {}, "schedule": []})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"optimizer": {"learning_rate": 0.1}})

    def test_unknown_optimizer(self):
        with pytest.raises(ConfigError):
            small_config(name="lion")

    def test_odd_schedule(self):
        with pytest.raises(ContractError):
            ExperimentConfig(model=SMALL, stages=(StageConfig("inti", 1),), frames=3)

    def test_invalid_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(tmp_path / "c.json")


class TestOptimizers:
    @pytest.mark.parametrize("name", ["sgd", "adamw"])
    def test_zero_learning_rate_leaves_parameters(self, name):
        cfg = small_config(lr=0.0, name=name)
        before = build_model(cfg).state_dict()
        after = train(cfg).model.state_dict()
        for key, value in before.items():
            np.testing.assert_array_equal(after[key].data, value.data)

    @pytest.mark.parametrize("cls", [MomentumSGD, AdamW])
    def test_one_step_reduces_the_loss(self, cls):
        cfg = small_config()
        model = build_model(cfg)
        ds = generate_moving_shapes(0, 1, frames=4)
        clips, labels = ds.clips, ds.labels

        def loss():
            return F.cross_entropy(model(clips), labels)

        opt = cls(model.parameters(), 1e-3, 0.9, 0.0, 10)
        start = loss().item()
        with Tape() as tape:
            tape.backward(loss())
        opt.step()
        assert loss().item() < start

    def test_cosine_schedule_endpoints(self):
        opt = MomentumSGD([], 0.1, 0.9, 0.0, 100)
        assert opt.lr_at(0) == 0.1
        assert opt.lr_at(50) == pytest.approx(0.05)
        assert opt.lr_at(100) == pytest.approx(0.0, abs=1e-18)


class TestTraining:
    def test_history_fields(self):
        result = train(small_config())
        row = result.final
        assert set(row) == {"epoch", "loss", "train_acc", "lr", "test_acc"}
        assert 0 <= row["test_acc"] <= 100

    def test_runs_are_bit_identical(self):
        cfg = small_config(name="adamw", lr=1e-3)
        a, b = train(cfg), train(cfg)
        assert a.history == b.history
        for key, value in a.model.state_dict().items():
            np.testing.assert_array_equal(b.model.state_dict()[key].data, value.data)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises(self):
        with pytest.raises(NumericError):
            train(small_config(lr=1e30, weight_decay=0.0, epochs=3))

    def test_dataset_shape_mismatch(self):
        cfg = small_config()
        wrong = generate_moving_shapes(0, 4, frames=8)
        with pytest.raises(ConfigError):
            train(cfg, wrong, wrong)

    def test_simplex_hook_flags_violations(self):
        hook = simplex_hook((StageConfig("inti"),))
        hook(0, WeightField(Tensor([0.25]), Tensor([0.75])))
        with pytest.raises(NumericError):
            hook(0, WeightField(Tensor([0.25]), Tensor([0.70])))

    def test_simplex_hook_skips_sigmoid(self):
        simplex_hook((StageConfig("inti", head="sigmoid"),))(0, WeightField(Tensor([0.9]), Tensor([0.9])))


class TestEvaluate:
    def test_perfect_stub(self):
        ds = generate_moving_shapes(0, 20, frames=2)
        logits = np.eye(4)[ds.labels]
        assert evaluate(StubModel(logits), ds, batch_size=7) == 100.0

    def test_random_logits_near_chance(self):
        ds = generate_moving_shapes(0, 2000, frames=1)
        logits = np.random.default_rng(0).standard_normal((2000, 4))
        assert abs(evaluate(StubModel(logits), ds, batch_size=500) - 25) <= 5

    def test_class_count_mismatch(self):
        ds = generate_moving_shapes(0, 4, frames=2)
        with pytest.raises(ConfigError):
            evaluate(StubModel(np.zeros((4, 3))), ds)

    def test_threads_match_serial(self):
        result = train(small_config())
        ds = generate_moving_shapes(1, 12, frames=4, split="test")
        assert evaluate(result.model, ds, batch_size=4, workers=3) == evaluate(result.model, ds, batch_size=4)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        result = train(small_config(), out_dir=tmp_path / "ck")
        model, cfg = load_model(tmp_path / "ck")
        assert cfg == result.config
        clips = generate_moving_shapes(2, 2, frames=4).clips
        np.testing.assert_array_equal(model(clips).data, result.model(clips).data)
        history = json.loads((tmp_path / "ck" / "metrics.json").read_text())["history"]
        assert history == result.history

    def test_sigma_keeps_scalar_shape(self, tmp_path):
        cfg = small_config()
        model = build_model(cfg)
        model.stages[0].sigma.data[...] = 0.25
        save_model(tmp_path / "ck", model, cfg)
        back, _ = load_model(tmp_path / "ck")
        assert back.stages[0].sigma.data.shape == ()
        assert float(back.stages[0].sigma.data) == 0.25

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises((ConfigError, FileNotFoundError)):
            load_model(tmp_path / "none")
