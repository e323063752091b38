import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ultralbm.data import SynthSpec, generate_synthetic, split_dataset
from ultralbm.losses import DistillWeights
from ultralbm.model import ModelConfig, build_model
from ultralbm.train import (
    TrainConfig,
    TrainingDiverged,
    adamw_step,
    augment,
    cosine_lr,
    distill_train,
    enable_determinism,
    parameter_hash,
    train,
)


def desk_cfg(**kw):
    defaults = dict(epochs=2, batch_size=4, image_size=32, seed=0, t_max=50)
    defaults.update(kw)
    return TrainConfig(**defaults)


def tiny_data(count=12, seed=0):
    samples = generate_synthetic(SynthSpec(count=count, size=32, seed=seed))
    return split_dataset(samples, ratio=0.75, seed=seed)


class TestCosineLr:
    def test_endpoints(self):
        assert cosine_lr(0, 1e-3, 50, 1e-5) == pytest.approx(1e-3)
        assert cosine_lr(50, 1e-3, 50, 1e-5) == pytest.approx(1e-5)
        assert cosine_lr(25, 1e-3, 50, 1e-5) == pytest.approx((1e-3 + 1e-5) / 2)

    def test_cyclic_period(self):
        assert cosine_lr(100, 1e-3, 50, 1e-5) == pytest.approx(1e-3)
        assert cosine_lr(75, 1e-3, 50, 1e-5) == pytest.approx(cosine_lr(25, 1e-3, 50, 1e-5))

    def test_clamp_mode(self):
        assert cosine_lr(80, 1e-3, 50, 1e-5, mode="clamp") == 1e-5

    @settings(deadline=None, max_examples=100)
    @given(epoch=st.integers(0, 1000), t_max=st.integers(1, 300))
    def test_bounds(self, epoch, t_max):
        lr = cosine_lr(epoch, 1e-3, t_max, 1e-5)
        assert 1e-5 - 1e-12 <= lr <= 1e-3 + 1e-12


class TestAdamW:
    def test_zero_grads_no_decay_is_identity(self):
        p = {"w": torch.randn(4, 4)}
        orig = p["w"].clone()
        adamw_step(p, {"w": torch.zeros(4, 4)}, {}, lr=0.1, wd=0.0)
        assert torch.allclose(p["w"], orig)

    def test_first_step_magnitude_equals_lr(self):
        # one step on f(x) = x^2 at x=1: bias-corrected step is exactly lr
        p = {"x": torch.tensor([1.0])}
        g = {"x": torch.tensor([2.0])}
        adamw_step(p, g, {}, lr=0.1, wd=0.0)
        assert float(p["x"]) == pytest.approx(0.9, abs=1e-6)

    def test_decay_only(self):
        p = {"w": torch.ones(3)}
        adamw_step(p, {"w": torch.zeros(3)}, {}, lr=0.001, wd=0.01)
        assert torch.allclose(p["w"], torch.full((3,), 1.0 - 1e-5))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            adamw_step({"w": torch.ones(3)}, {"w": torch.ones(4)}, {}, 0.1, 0.0)


class _IdentityRng:
    def random(self):
        return 0.9  # above every flip threshold

    def integers(self, n):
        return 0


class TestAugment:
    def test_identity_draw_leaves_pair_unchanged(self):
        image, mask = np.random.rand(3, 8, 8), (np.random.rand(1, 8, 8) > 0.5).astype(np.float32)
        out_img, out_mask = augment(image, mask, _IdentityRng())
        assert np.array_equal(out_img, image) and np.array_equal(out_mask, mask)

    def test_hflip_involution(self):
        image = np.random.rand(3, 6, 6)
        flipped = np.ascontiguousarray(image[:, :, ::-1])
        assert np.array_equal(np.ascontiguousarray(flipped[:, :, ::-1]), image)

    @settings(deadline=None, max_examples=100)
    @given(seed=st.integers(0, 100_000))
    def test_masks_stay_binary(self, seed):
        rng = np.random.default_rng(seed)
        image = rng.random((3, 8, 8)).astype(np.float32)
        mask = (rng.random((1, 8, 8)) > 0.5).astype(np.float32)
        _, out_mask = augment(image, mask, rng)
        assert set(np.unique(out_mask)) <= {0.0, 1.0}

    def test_pair_transformed_identically(self):
        rng = np.random.default_rng(7)
        image = np.arange(2 * 4 * 4, dtype=np.float32).reshape(2, 4, 4)
        out_img, out_mask = augment(image, image.copy(), rng)
        assert np.array_equal(out_img, out_mask)


class TestTrain:
    def test_one_epoch_smoke(self, tmp_path):
        train_set, val_set = tiny_data()
        enable_determinism(0)
        model = build_model(ModelConfig.tiny())
        history, best = train(model, train_set, val_set, desk_cfg(epochs=1),
                              out_dir=tmp_path)
        assert len(history) == 1
        assert math.isfinite(history[0]["train_loss"])
        assert (tmp_path / "history.csv").exists()
        assert (tmp_path / "summary.json").exists()
        assert (tmp_path / "best.ckpt.npz").exists()

    def test_loss_decreases_on_learnable_task(self):
        train_set, val_set = tiny_data(count=16, seed=1)
        enable_determinism(0)
        model = build_model(ModelConfig.tiny())
        history, _ = train(model, train_set, val_set, desk_cfg(epochs=12))
        assert history[-1]["train_loss"] < history[0]["train_loss"]

    def test_seed_determinism(self):
        train_set, val_set = tiny_data()
        runs = []
        for _ in range(2):
            enable_determinism(0)
            model = build_model(ModelConfig.tiny())
            history, _ = train(model, train_set, val_set, desk_cfg(epochs=2))
            runs.append(history)
        assert runs[0] == runs[1]

    def test_empty_dataset_rejected(self):
        model = build_model(ModelConfig.tiny())
        with pytest.raises(ValueError, match="empty"):
            train(model, [], [], desk_cfg())

    def test_nan_loss_aborts_naming_term(self, monkeypatch):
        import importlib

        train_mod = importlib.import_module("ultralbm.train")
        monkeypatch.setattr(
            train_mod, "bce_dice_loss",
            lambda pred, target: pred.sum() * float("nan"),
        )
        train_set, val_set = tiny_data()
        model = build_model(ModelConfig.tiny())
        with pytest.raises(TrainingDiverged, match="hard"):
            train(model, train_set, val_set, desk_cfg(epochs=1))


@pytest.fixture(scope="module")
def setup():
    train_set, val_set = tiny_data(count=12)
    enable_determinism(0)
    teacher = build_model(ModelConfig.tiny())
    train(teacher, train_set, val_set, desk_cfg(epochs=2))
    return teacher, train_set, val_set


class TestDistill:
    def test_hard_only_matches_plain_training(self, setup):
        teacher, train_set, val_set = setup
        student_cfg = ModelConfig.tiny()
        cfg = desk_cfg(epochs=2)

        enable_determinism(cfg.seed)
        plain = build_model(student_cfg)
        plain_history, _ = train(plain, train_set, val_set, cfg)

        weights = DistillWeights(lambda_h=1.0, lambda_s=0.0, lambda_a=0.0, lambda_g=0.0)
        _, distill_history, _ = distill_train(
            student_cfg, teacher, train_set, val_set, cfg, weights
        )
        plain_losses = [r["train_loss"] for r in plain_history]
        distill_losses = [r["train_loss"] for r in distill_history]
        assert plain_losses == distill_losses
        assert [r["val_iou"] for r in plain_history] == [r["val_iou"] for r in distill_history]

    def test_teacher_unchanged_by_distillation(self, setup):
        teacher, train_set, val_set = setup
        before = parameter_hash(teacher)
        student_cfg = ModelConfig.tiny()
        distill_train(student_cfg, teacher, train_set, val_set, desk_cfg(epochs=1),
                      DistillWeights())
        assert parameter_hash(teacher) == before

    def test_breakdown_logged(self, setup):
        teacher, train_set, val_set = setup
        student_cfg = ModelConfig.tiny()
        _, history, _ = distill_train(
            student_cfg, teacher, train_set, val_set, desk_cfg(epochs=1), DistillWeights()
        )
        for key in ("loss_hard", "loss_dkd", "loss_attention", "loss_gradient"):
            assert key in history[0]
            assert math.isfinite(history[0][key])
