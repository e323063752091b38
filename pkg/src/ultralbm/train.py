"""Training loops: plain supervised training and teacher-student distillation.

Both loops share one batch pipeline, so distillation with teacher weights
zeroed reproduces plain training step for step under the same seed. The
optimizer is a hand-rolled decoupled-weight-decay Adam so runs are
bit-reproducible; the LR follows the cyclic cosine annealing schedule.
A non-finite loss aborts immediately, naming the offending term.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .data import compute_norm_stats, normalize_image
from .losses import DistillWeights, bce_dice_loss, distill_loss
from .metrics import dsc, iou
from .model import ModelConfig, build_model, save_checkpoint

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "cosine_lr",
    "adamw_step",
    "augment",
    "train",
    "distill_train",
    "enable_determinism",
    "parameter_hash",
]


class TrainingDiverged(RuntimeError):
    """Raised when a loss term stops being finite."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.01
    epochs: int = 300
    batch_size: int = 8
    t_max: int = 50
    eta_min: float = 1e-5
    seed: int = 0
    num_seeds: int = 3
    image_size: int = 256
    hflip: bool = True
    vflip: bool = True
    rot90: bool = True
    scheduler_mode: str = "cyclic"  # cyclic | clamp
    grad_clip: float | None = None
    deterministic: bool = True

    def validate(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.image_size % 32 != 0:
            raise ValueError(f"image_size must be divisible by 32, got {self.image_size}")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.scheduler_mode not in ("cyclic", "clamp"):
            raise ValueError(f"unknown scheduler_mode {self.scheduler_mode!r}")
        return self


def enable_determinism(seed):
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def parameter_hash(model) -> str:
    """SHA-256 over all parameter bytes, in registry order."""
    h = hashlib.sha256()
    for name, p in model.named_parameters():
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def cosine_lr(epoch, base_lr, t_max, eta_min, mode="cyclic"):
    """Cosine annealing: base_lr at epoch 0 down to eta_min at epoch t_max.

    cyclic mode mirrors back up with period 2*t_max; clamp mode stays at
    eta_min once reached.
    """
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    if mode == "clamp" and epoch >= t_max:
        return eta_min
    phase = epoch % (2 * t_max) if mode == "cyclic" else epoch
    return eta_min + 0.5 * (base_lr - eta_min) * (1.0 + math.cos(math.pi * phase / t_max))


def adamw_step(params, grads, state, lr, wd, beta1=0.9, beta2=0.999, eps=1e-8):
    """One decoupled-weight-decay Adam update, in place.

    Args:
        params: dict name -> tensor (updated in place).
        grads: dict name -> gradient tensor or None.
        state: dict holding "step" plus first/second moment dicts; pass {}
            on the first call.
    """
    if not state:
        state["step"] = 0
        state["m"] = {k: torch.zeros_like(v) for k, v in params.items()}
        state["v"] = {k: torch.zeros_like(v) for k, v in params.items()}
    state["step"] += 1
    t = state["step"]
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t

    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = torch.zeros_like(p)
            if g.shape != p.shape:
                raise ValueError(f"gradient shape mismatch for {name!r}")
            if wd != 0.0:
                p.mul_(1.0 - lr * wd)
            m = state["m"][name]
            v = state["v"][name]
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt().add_(eps), value=-lr)
    return params, state


def augment(image, mask, rng):
    """Apply one random flip/flip/rot90 draw to an image/mask pair.

    Both arrays are (C, H, W); the identical transform is applied to both,
    so masks stay binary.
    """
    if image.shape[1:] != mask.shape[1:]:
        raise ValueError("image and mask spatial shapes differ")
    if rng.random() < 0.5:
        image, mask = image[:, :, ::-1], mask[:, :, ::-1]
    if rng.random() < 0.5:
        image, mask = image[:, ::-1, :], mask[:, ::-1, :]
    k = int(rng.integers(4))
    if k:
        image = np.rot90(image, k, axes=(1, 2))
        mask = np.rot90(mask, k, axes=(1, 2))
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def _maybe_augment(image, mask, rng, cfg):
    if not (cfg.hflip or cfg.vflip or cfg.rot90):
        return image, mask
    if rng.random() < 0.5 and cfg.hflip:
        image, mask = image[:, :, ::-1], mask[:, :, ::-1]
    if rng.random() < 0.5 and cfg.vflip:
        image, mask = image[:, ::-1, :], mask[:, ::-1, :]
    k = int(rng.integers(4))
    if k and cfg.rot90:
        image = np.rot90(image, k, axes=(1, 2))
        mask = np.rot90(mask, k, axes=(1, 2))
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def _stack_val(samples, stats):
    images = torch.from_numpy(
        np.stack([normalize_image(s.image, stats) for s in samples])
    )
    masks = torch.from_numpy(np.stack([s.mask for s in samples]))
    return images, masks


@torch.no_grad()
def _evaluate(model, images, masks, batch_size):
    model.eval()
    scores_iou, scores_dsc = [], []
    for start in range(0, images.shape[0], batch_size):
        pred = model(images[start:start + batch_size])
        gt = masks[start:start + batch_size]
        scores_iou.append(iou(pred, gt))
        scores_dsc.append(dsc(pred, gt))
    model.train()
    return float(np.mean(scores_iou)), float(np.mean(scores_dsc))


def _check_finite_terms(total, breakdown, epoch):
    for name, value in breakdown.items():
        if not math.isfinite(value):
            raise TrainingDiverged(
                f"loss term '{name}' became non-finite at epoch {epoch}"
            )
    if not torch.isfinite(total):
        raise TrainingDiverged(f"total loss became non-finite at epoch {epoch}")


def _fit(model, train_set, val_set, cfg, loss_fn, out_dir=None):
    """Shared optimization loop. loss_fn(pred, masks) -> (total, breakdown)."""
    cfg.validate()
    if not train_set or not val_set:
        raise ValueError("empty dataset")
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)

    stats = compute_norm_stats(train_set)
    train_images = [normalize_image(s.image, stats) for s in train_set]
    train_masks = [s.mask for s in train_set]
    val_images, val_masks = _stack_val(val_set, stats)

    params = dict(model.named_parameters())
    opt_state = {}
    model.train()

    history = []
    best = {"val_iou": -1.0, "epoch": -1, "state": None}
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.lr, cfg.t_max, cfg.eta_min, cfg.scheduler_mode)
        rng = np.random.default_rng((cfg.seed, epoch))
        order = rng.permutation(len(train_images))

        epoch_loss = 0.0
        epoch_terms: dict[str, float] = {}
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if len(idx) == 1 and len(order) > 1:
                continue  # batch-norm cannot train on a singleton remainder
            pairs = [
                _maybe_augment(train_images[i], train_masks[i], rng, cfg) for i in idx
            ]
            images = torch.from_numpy(np.stack([p[0] for p in pairs]))
            masks = torch.from_numpy(np.stack([p[1] for p in pairs]))

            pred = model(images)
            total, breakdown = loss_fn(pred, images, masks)
            _check_finite_terms(total, breakdown, epoch)

            model.zero_grad(set_to_none=True)
            total.backward()
            if cfg.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            grads = {name: p.grad for name, p in params.items()}
            adamw_step(params, grads, opt_state, lr, cfg.weight_decay)

            epoch_loss += float(total.detach())
            for key, value in breakdown.items():
                epoch_terms[key] = epoch_terms.get(key, 0.0) + value
            n_batches += 1

        val_iou, val_dsc = _evaluate(model, val_images, val_masks, cfg.batch_size)
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": epoch_loss / n_batches,
            **{f"loss_{k}": v / n_batches for k, v in epoch_terms.items()},
            "val_iou": val_iou,
            "val_dsc": val_dsc,
        }
        history.append(record)
        if val_iou > best["val_iou"]:
            best = {
                "val_iou": val_iou,
                "epoch": epoch,
                "state": {k: v.detach().clone() for k, v in model.state_dict().items()},
            }

    if best["state"] is not None:
        final_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        model.load_state_dict(best["state"])
        best["final_state"] = final_state

    if out_dir is not None:
        write_history(history, best, cfg, out_dir, model)
    return history, best


def write_history(history, best, cfg, out_dir, model=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if history:
        fieldnames = list(history[0].keys())
        with open(out_dir / "history.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(history)
    summary = {
        "best_epoch": best["epoch"],
        "best_val_iou": best["val_iou"],
        "epochs": len(history),
        "final_val_iou": history[-1]["val_iou"] if history else None,
        "train_config": asdict(cfg),
    }
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    if model is not None:
        save_checkpoint(model, out_dir / "best.ckpt.npz")


def train(model, train_set, val_set, cfg: TrainConfig, out_dir=None):
    """Supervised training with the BCE + Dice objective.

    Returns (history, best) where best holds the top-val-IoU epoch and state;
    the model is left loaded with the best state.
    """

    def loss_fn(pred, images, masks):
        loss = bce_dice_loss(pred, masks)
        return loss, {"hard": float(loss.detach())}

    return _fit(model, train_set, val_set, cfg, loss_fn, out_dir)


def distill_train(student_cfg: ModelConfig, teacher, train_set, val_set,
                  cfg: TrainConfig, weights: DistillWeights, out_dir=None):
    """Train a student under a frozen teacher with the hybrid objective.

    The teacher runs in eval mode on the same augmented batches and is never
    updated. Returns (student, history, best).
    """
    weights.validate()
    if cfg.deterministic:
        enable_determinism(cfg.seed)
    else:
        torch.manual_seed(cfg.seed)
    student = build_model(student_cfg)

    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)

    def loss_fn(pred, images, masks):
        with torch.no_grad():
            teacher_pred = teacher(images)
        return distill_loss(pred, teacher_pred, masks, weights)

    history, best = _fit(student, train_set, val_set, cfg, loss_fn, out_dir)
    return student, history, best
