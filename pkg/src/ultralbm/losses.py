"""Segmentation and distillation losses.

The segmentation loss is BCE + soft Dice. The hybrid distillation objective
combines hard supervision with three teacher-guided terms: a pixelwise
binary KL between student and teacher probabilities, a KL between
temperature-softmaxed spatial response maps, and an L2 match of Sobel
gradient magnitudes. Probabilities are clamped to [1e-6, 1 - 1e-6] before
any log; the teacher is always detached.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

__all__ = [
    "PROB_EPS",
    "DistillWeights",
    "bce_dice_loss",
    "dkd_loss",
    "attention_maps",
    "attention_transfer_loss",
    "sobel_gradients",
    "gradient_matching_loss",
    "distill_loss",
]

PROB_EPS = 1e-6
GRAD_EPS = 1e-8
DICE_SMOOTH = 1.0


@dataclass
class DistillWeights:
    """Coefficients of the hybrid distillation objective."""

    lambda_h: float = 1.0
    lambda_s: float = 1.0
    lambda_a: float = 0.5
    lambda_g: float = 0.5
    tau_a: float = 1.0

    def validate(self):
        if min(self.lambda_h, self.lambda_s, self.lambda_a, self.lambda_g) < 0:
            raise ValueError("distillation weights must be non-negative")
        if self.tau_a <= 0:
            raise ValueError("attention temperature must be positive")
        return self


def _check_pair(pred, target, name="target"):
    if pred.shape != target.shape:
        raise ValueError(
            f"shape mismatch: pred {tuple(pred.shape)} vs {name} {tuple(target.shape)}"
        )


def _clamp_prob(p):
    return p.clamp(PROB_EPS, 1.0 - PROB_EPS)


def bce_dice_loss(pred, target):
    """Binary cross-entropy plus soft Dice with smoothing 1.0.

    `pred` holds probabilities in [0, 1], `target` a {0, 1} mask of the same
    shape. The Dice term is computed per sample and averaged.
    """
    _check_pair(pred, target)
    if not torch.all((target == 0) | (target == 1)):
        raise ValueError("target mask must be binary {0, 1}")
    p = _clamp_prob(pred)
    y = target.to(p.dtype)
    bce = F.binary_cross_entropy(p, y)

    flat_p = p.reshape(p.shape[0], -1)
    flat_y = y.reshape(y.shape[0], -1)
    inter = (flat_p * flat_y).sum(1)
    dice = 1.0 - (2.0 * inter + DICE_SMOOTH) / (flat_p.sum(1) + flat_y.sum(1) + DICE_SMOOTH)
    return bce + dice.mean()


def dkd_loss(student, teacher):
    """Pixelwise binary KL between teacher and student probability maps.

    Mean over all pixels of T log(T/S) + (1-T) log((1-T)/(1-S)); the teacher
    is detached so gradient flows only into the student.
    """
    _check_pair(student, teacher, "teacher")
    s = _clamp_prob(student)
    t = _clamp_prob(teacher).detach()
    kl = t * (torch.log(t) - torch.log(s)) + (1 - t) * (torch.log1p(-t) - torch.log1p(-s))
    return kl.mean()


def attention_maps(student, teacher, tau_a):
    """Per-sample softmax over the flattened spatial entries of S/tau, T/tau."""
    if tau_a <= 0:
        raise ValueError("attention temperature must be positive")
    _check_pair(student, teacher, "teacher")
    b = student.shape[0]
    a_s = F.softmax(student.reshape(b, -1) / tau_a, dim=1)
    a_t = F.softmax(teacher.reshape(b, -1) / tau_a, dim=1)
    return a_s, a_t


def attention_transfer_loss(student, teacher, tau_a):
    """KL(A_T || A_S) between spatial attention distributions, batch mean.

    Invariant under a per-sample additive constant on both maps (softmax
    shift invariance).
    """
    if tau_a <= 0:
        raise ValueError("attention temperature must be positive")
    _check_pair(student, teacher, "teacher")
    b = student.shape[0]
    log_a_s = F.log_softmax(student.reshape(b, -1) / tau_a, dim=1)
    log_a_t = F.log_softmax(teacher.detach().reshape(b, -1) / tau_a, dim=1)
    a_t = log_a_t.exp()
    return (a_t * (log_a_t - log_a_s)).sum(1).mean()


_SOBEL_X = torch.tensor(
    [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]
).view(1, 1, 3, 3)


def sobel_gradients(x):
    """Horizontal/vertical Sobel responses with replication padding.

    x is (B, 1, H, W) with H, W >= 3; the kernels are applied as correlation
    filters, so a ramp along width gives positive gx.
    """
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"expected (B, 1, H, W) map, got shape {tuple(x.shape)}")
    if x.shape[-2] < 3 or x.shape[-1] < 3:
        raise ValueError(f"spatial dims must be >= 3, got {tuple(x.shape[-2:])}")
    kx = _SOBEL_X.to(dtype=x.dtype, device=x.device)
    ky = kx.transpose(-1, -2)
    xp = F.pad(x, (1, 1, 1, 1), mode="replicate")
    return F.conv2d(xp, kx), F.conv2d(xp, ky)


def gradient_matching_loss(student, teacher):
    """L2 distance between Sobel gradient magnitudes, mean over pixels."""
    _check_pair(student, teacher, "teacher")
    gx_s, gy_s = sobel_gradients(student)
    gx_t, gy_t = sobel_gradients(teacher.detach())
    mag_s = torch.sqrt(gx_s ** 2 + gy_s ** 2 + GRAD_EPS)
    mag_t = torch.sqrt(gx_t ** 2 + gy_t ** 2 + GRAD_EPS)
    return ((mag_s - mag_t) ** 2).mean()


def distill_loss(student, teacher, target, weights: DistillWeights):
    """Hybrid objective: weighted sum of hard, KL, attention and gradient terms.

    Returns (total, breakdown); the breakdown always holds all four raw term
    values for logging, but zero-weight terms are evaluated without grad and
    excluded from the total, so zero weights reduce exactly to the smaller
    objective.
    """
    weights.validate()
    teacher = teacher.detach()

    def term(weight, fn):
        if weight != 0.0:
            value = fn()
            return value, value
        with torch.no_grad():
            value = fn()
        return None, value

    hard, hard_log = term(weights.lambda_h, lambda: bce_dice_loss(student, target))
    soft, soft_log = term(weights.lambda_s, lambda: dkd_loss(student, teacher))
    att, att_log = term(weights.lambda_a,
                        lambda: attention_transfer_loss(student, teacher, weights.tau_a))
    grad, grad_log = term(weights.lambda_g,
                          lambda: gradient_matching_loss(student, teacher))

    total = student.new_zeros(())
    for weight, value in ((weights.lambda_h, hard), (weights.lambda_s, soft),
                          (weights.lambda_a, att), (weights.lambda_g, grad)):
        if value is not None:
            total = total + weight * value

    breakdown = {
        "hard": float(hard_log.detach()),
        "dkd": float(soft_log.detach()),
        "attention": float(att_log.detach()),
        "gradient": float(grad_log.detach()),
    }
    return total, breakdown
