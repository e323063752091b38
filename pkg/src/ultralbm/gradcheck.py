"""Central-difference gradient checking against autograd.

The oracle side is plain finite differences; the analytic side is whatever
autograd produces. Relative error per coordinate is
|analytic - numeric| / max(1, |analytic|, |numeric|), and the reported
figure is the maximum over the checked coordinates. Run at float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

__all__ = ["GradcheckResult", "finite_diff_gradcheck", "gradcheck_model_params"]


@dataclass
class GradcheckResult:
    max_rel_err: float
    worst_coord: tuple
    checked: int

    def __float__(self):
        return self.max_rel_err


def _central_diff(fn, point, index, eps):
    with torch.no_grad():
        orig = point.flatten()[index].item()
        point.flatten()[index] = orig + eps
        f_plus = float(fn(point))
        point.flatten()[index] = orig - eps
        f_minus = float(fn(point))
        point.flatten()[index] = orig
    for label, value in (("f(x+eps)", f_plus), ("f(x-eps)", f_minus)):
        if not torch.isfinite(torch.tensor(value)):
            raise ValueError(f"non-finite evaluation {label} at coordinate {index}")
    return (f_plus - f_minus) / (2.0 * eps)


def finite_diff_gradcheck(fn, point, eps=1e-5, indices=None):
    """Compare autograd gradients of a scalar function with central differences.

    Args:
        fn: scalar-valued function of one tensor.
        point: evaluation tensor (float64 recommended); not modified on exit.
        eps: perturbation half-width.
        indices: optional iterable of flat coordinates to check (all if None).

    Returns:
        GradcheckResult with the max relative error over checked coordinates.
    """
    x = point.detach().clone().requires_grad_(True)
    value = fn(x)
    if value.numel() != 1:
        raise ValueError("fn must be scalar-valued")
    (analytic,) = torch.autograd.grad(value, x)
    analytic = analytic.detach().flatten()

    probe = point.detach().clone()
    if indices is None:
        indices = range(probe.numel())

    worst = (0.0, (-1,))
    checked = 0
    for index in indices:
        numeric = _central_diff(lambda t: fn(t), probe, index, eps)
        a = float(analytic[index])
        rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        if rel > worst[0]:
            worst = (rel, (int(index),))
        checked += 1
    return GradcheckResult(max_rel_err=worst[0], worst_coord=worst[1], checked=checked)


def gradcheck_model_params(loss_fn, module, eps=1e-5, max_coords_per_param=None,
                           max_params=None, rng=None):
    """Gradcheck a module's parameters against central differences.

    Args:
        loss_fn: zero-argument callable returning a scalar that depends on
            the module's current parameters.
        module: torch.nn.Module whose parameters are perturbed in place.
        max_coords_per_param: cap on coordinates checked per tensor
            (random subset when exceeded).
        max_params: optional cap on the number of scalar coordinates checked
            in total, spread over all parameter tensors.

    Returns:
        (max_rel_err, per_parameter dict name -> rel err)
    """
    rng = rng or torch.Generator().manual_seed(0)
    params = [(n, p) for n, p in module.named_parameters() if p.requires_grad]

    module.zero_grad(set_to_none=True)
    loss = loss_fn()
    loss.backward()
    grads = {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
             for n, p in params}

    coords = []
    for name, p in params:
        idx = torch.arange(p.numel())
        if max_coords_per_param is not None and p.numel() > max_coords_per_param:
            perm = torch.randperm(p.numel(), generator=rng)[:max_coords_per_param]
            idx = perm
        coords.extend((name, p, int(i)) for i in idx)
    if max_params is not None and len(coords) > max_params:
        sel = torch.randperm(len(coords), generator=rng)[:max_params]
        coords = [coords[int(i)] for i in sel]

    per_param = {}
    worst = 0.0
    for name, p, index in coords:
        with torch.no_grad():
            flat = p.flatten()
            orig = flat[index].item()
            flat[index] = orig + eps
            f_plus = float(loss_fn())
            flat[index] = orig - eps
            f_minus = float(loss_fn())
            flat[index] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = float(grads[name].flatten()[index])
        rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        per_param[name] = max(per_param.get(name, 0.0), rel)
        worst = max(worst, rel)
    return worst, per_param
