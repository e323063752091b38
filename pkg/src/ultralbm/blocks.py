"""Four-branch perception blocks.

Both blocks flatten the feature map, layer-normalize over channels, split
into four channel quarters, route each quarter through its branch, and
concatenate back:

    global-local block:  [bi-mamba | bi-mamba (same weights) | dw-sep conv | identity]
    local-only block:    [dw-sep conv | dw-sep conv | dw-sep conv | identity]

A single learnable scalar per block scales every branch residual.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .ssm import BiMamba

__all__ = [
    "layer_norm_channels",
    "ChannelLayerNorm",
    "channel_split4",
    "DepthwiseSeparableConv",
    "local_branch",
    "identity_branch",
    "GLMBPBlock",
    "LMBPBlock",
    "glmbp_forward",
    "lmbp_forward",
]


def layer_norm_channels(x, weight=None, bias=None, eps=1e-5):
    """Per-position layer norm over the channel dimension.

    Accepts a (B, N, C) sequence or a (B, C, H, W) map; the affine transform
    is optional so the pre-affine moments can be checked directly.
    """
    if not torch.isfinite(x).all():
        raise ValueError("non-finite values in layer norm input")
    if x.ndim == 3:
        return F.layer_norm(x, (x.shape[-1],), weight, bias, eps)
    if x.ndim == 4:
        y = x.permute(0, 2, 3, 1)
        y = F.layer_norm(y, (y.shape[-1],), weight, bias, eps)
        return y.permute(0, 3, 1, 2)
    raise ValueError(f"expected (B, N, C) or (B, C, H, W), got shape {tuple(x.shape)}")


class ChannelLayerNorm(nn.Module):
    """Learnable-affine wrapper around `layer_norm_channels`."""

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        return layer_norm_channels(x, self.weight, self.bias, self.eps)


def channel_split4(x):
    """Split (B, N, C) into four contiguous channel quarters; C % 4 == 0."""
    c = x.shape[-1]
    if c % 4 != 0:
        raise ValueError(f"channel count {c} not divisible by 4")
    return x.chunk(4, dim=-1)


class DepthwiseSeparableConv(nn.Module):
    """Depthwise k x k (same padding) followed by a pointwise 1 x 1 conv."""

    def __init__(self, channels, kernel_size):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd for same padding")
        self.depthwise = nn.Conv2d(
            channels, channels, kernel_size,
            padding=kernel_size // 2, groups=channels, bias=True,
        )
        self.pointwise = nn.Conv2d(channels, channels, 1, bias=True)

    def forward(self, x):
        return self.pointwise(self.depthwise(x))


def local_branch(x, conv, h, w, gamma):
    """Run a depthwise-separable conv on the 2-D form of a sequence quarter.

    x is (B, N, C') with N == h*w; output is conv(reshape2d(x)) flattened
    back, plus gamma * x.
    """
    b, n, c = x.shape
    if n != h * w:
        raise ValueError(f"sequence length {n} != H*W = {h}*{w}")
    x2d = x.transpose(1, 2).reshape(b, c, h, w)
    y = conv(x2d).reshape(b, c, n).transpose(1, 2)
    return y + gamma * x


def identity_branch(x, gamma):
    """Pass-through branch: (1 + gamma) * x."""
    return x + gamma * x


class GLMBPBlock(nn.Module):
    """Global-local multi-branch block over C channels (C divisible by 4).

    Two quarters go through one shared bidirectional Mamba, one through a
    depthwise-separable conv of the stage kernel size, one through the
    identity branch. Output channel count equals input channel count.
    """

    def __init__(self, channels, kernel_size, d_state=4, d_conv=4, expand=2,
                 dt_rank=None, scan_impl="parallel"):
        super().__init__()
        if channels % 4 != 0:
            raise ValueError(f"GLMBP channels {channels} not divisible by 4")
        self.channels = channels
        self.kernel_size = kernel_size
        c4 = channels // 4
        self.norm = ChannelLayerNorm(channels)
        self.gamma = nn.Parameter(torch.tensor(1.0))
        # one BiMamba serves both global quarters; gamma is the block scalar
        self.bimamba = BiMamba(
            c4, gamma=self.gamma, d_state=d_state, d_conv=d_conv,
            expand=expand, dt_rank=dt_rank, scan_impl=scan_impl,
        )
        self.dwconv = DepthwiseSeparableConv(c4, kernel_size)

    def branches(self, xs, h, w):
        """Route a normalized (B, N, C) sequence through the four branches."""
        x1, x2, x3, x4 = channel_split4(xs)
        y1 = self.bimamba(x1)
        y2 = self.bimamba(x2)
        y3 = local_branch(x3, self.dwconv, h, w, self.gamma)
        y4 = identity_branch(x4, self.gamma)
        return torch.cat([y1, y2, y3, y4], dim=-1)

    def forward(self, x):
        b, c, h, w = x.shape
        xs = x.flatten(2).transpose(1, 2)  # (B, N, C)
        ys = self.branches(self.norm(xs), h, w)
        return ys.transpose(1, 2).reshape(b, c, h, w)


class LMBPBlock(nn.Module):
    """Local-only multi-branch block: three dw-sep conv quarters + identity.

    The conv branches use the stage kernel size (3 at this block's default
    placements; it inherits larger kernels when placed at deeper stages).
    """

    def __init__(self, channels, kernel_size=3):
        super().__init__()
        if channels % 4 != 0:
            raise ValueError(f"LMBP channels {channels} not divisible by 4")
        self.channels = channels
        self.kernel_size = kernel_size
        c4 = channels // 4
        self.norm = ChannelLayerNorm(channels)
        self.gamma = nn.Parameter(torch.tensor(1.0))
        self.convs = nn.ModuleList(
            DepthwiseSeparableConv(c4, kernel_size) for _ in range(3)
        )

    def branches(self, xs, h, w):
        x1, x2, x3, x4 = channel_split4(xs)
        ys = [
            local_branch(xi, conv, h, w, self.gamma)
            for xi, conv in zip((x1, x2, x3), self.convs)
        ]
        ys.append(identity_branch(x4, self.gamma))
        return torch.cat(ys, dim=-1)

    def forward(self, x):
        b, c, h, w = x.shape
        xs = x.flatten(2).transpose(1, 2)
        ys = self.branches(self.norm(xs), h, w)
        return ys.transpose(1, 2).reshape(b, c, h, w)


def glmbp_forward(x, block):
    """Functional alias: run a GLMBP block on a (B, C, H, W) map."""
    return block(x)


def lmbp_forward(x, block):
    """Functional alias: run an LMBP block on a (B, C, H, W) map."""
    return block(x)
