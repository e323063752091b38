"""UltraLBM-UNet assembly: stage graph, skip scaling, head, checkpoints.

Six encoder stages (three plain conv stages, then three four-branch deep
stages) pool down to H/32 x W/32; five decoder stages mirror them, each
running its block at the low resolution, adding the scaled skip, reducing
channels with a 1x1 conv and upsampling bilinearly. The 1x1 head runs at
H/2 and the logits are upsampled once more before the sigmoid.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import GLMBPBlock, LMBPBlock

__all__ = [
    "ConfigError",
    "ModelConfig",
    "ConvStage",
    "TransitionConv",
    "UltraLBMUNet",
    "build_model",
    "scaled_skip_add",
    "save_checkpoint",
    "load_checkpoint",
]

STAGE_KINDS = ("lmbp", "glmbp")
VALID_KERNELS = (3, 5, 7)


class ConfigError(ValueError):
    """Raised when a model configuration violates an invariant."""


@dataclass
class ModelConfig:
    """Declarative description of a network instance.

    channels: widths of encoder stages I..VI. stage_kinds/enc_kernels apply
    to the deep encoder stages IV..VI; the decoder mirrors stage_kinds in
    reverse and uses dec_kernels for its three deep stages.
    """

    channels: tuple = (8, 16, 24, 32, 48, 64)
    stage_kinds: tuple = ("lmbp", "glmbp", "glmbp")
    enc_kernels: tuple = (3, 5, 7)
    dec_kernels: tuple = (7, 5, 3)
    skip_scale_mode: str = "shared"  # none | shared | stage_wise
    skip_scale_init: float = 1.0
    d_state: int = 4
    d_conv: int = 4
    expand: int = 2
    dt_rank: int | None = None  # None -> ceil(C'/8)
    in_channels: int = 3
    out_channels: int = 1
    global_branch: str = "bimamba"  # config hook; only bimamba is implemented
    scan_impl: str = "parallel"

    @classmethod
    def tiny(cls, **overrides):
        """Half-width variant with the same topology."""
        return replace(cls(channels=(4, 8, 12, 16, 24, 32)), **overrides)

    def validate(self):
        if len(self.channels) != 6:
            raise ConfigError(f"expected 6 channel widths, got {len(self.channels)}")
        if any(c < 1 for c in self.channels):
            raise ConfigError("channel widths must be positive")
        if len(self.stage_kinds) != 3 or any(k not in STAGE_KINDS for k in self.stage_kinds):
            raise ConfigError(
                f"stage_kinds must be three of {STAGE_KINDS}, got {self.stage_kinds}"
            )
        for name, sched in (("enc_kernels", self.enc_kernels), ("dec_kernels", self.dec_kernels)):
            if len(sched) != 3 or any(k not in VALID_KERNELS for k in sched):
                raise ConfigError(f"{name} must be three of {VALID_KERNELS}, got {sched}")
        for stage_index, (c, kind) in enumerate(zip(self.channels[3:], self.stage_kinds), start=4):
            if c % 4 != 0:
                raise ConfigError(
                    f"channel width {c} not divisible by 4 at a "
                    f"{kind.upper()} stage (encoder stage {stage_index})"
                )
        for i, (c, kind) in enumerate(
            zip(self.channels[4::-1][:3], reversed(self.stage_kinds)), start=1
        ):
            if c % 4 != 0:
                raise ConfigError(
                    f"channel width {c} not divisible by 4 at a "
                    f"{kind.upper()} stage (decoder stage {i})"
                )
        if self.skip_scale_mode not in ("none", "shared", "stage_wise"):
            raise ConfigError(f"unknown skip_scale_mode {self.skip_scale_mode!r}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("in_channels and out_channels must be >= 1")
        if self.global_branch != "bimamba":
            raise ConfigError(
                f"global branch {self.global_branch!r} is a reserved hook; "
                "only 'bimamba' is implemented"
            )
        if min(self.d_state, self.d_conv, self.expand) < 1:
            raise ConfigError("d_state, d_conv and expand must be >= 1")
        return self


class ConvStage(nn.Module):
    """Standard conv block: 3x3 same-padding conv -> BatchNorm -> ReLU."""

    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1, bias=True)
        self.bn = nn.BatchNorm2d(c_out)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))


def conv_stage(x, stage):
    """Functional alias: run a ConvStage on a (B, C, H, W) map."""
    return stage(x)


class TransitionConv(nn.Module):
    """1x1 channel transition: pointwise conv -> BatchNorm -> ReLU."""

    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 1, bias=True)
        self.bn = nn.BatchNorm2d(c_out)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))


def scaled_skip_add(decoder_feat, encoder_feat, k):
    """Skip fusion X = X_hat + k * t; shapes must match exactly."""
    if decoder_feat.shape != encoder_feat.shape:
        raise ValueError(
            f"skip shape mismatch: {tuple(decoder_feat.shape)} vs {tuple(encoder_feat.shape)}"
        )
    return decoder_feat + k * encoder_feat


def _deep_block(kind, channels, kernel, cfg):
    if kind == "glmbp":
        return GLMBPBlock(
            channels, kernel, d_state=cfg.d_state, d_conv=cfg.d_conv,
            expand=cfg.expand, dt_rank=cfg.dt_rank, scan_impl=cfg.scan_impl,
        )
    return LMBPBlock(channels, kernel)


class UltraLBMUNet(nn.Module):
    """Encoder-decoder segmentation network with four-branch deep stages."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        c = cfg.channels

        self.enc_conv1 = ConvStage(cfg.in_channels, c[0])
        self.enc_conv2 = ConvStage(c[0], c[1])
        self.enc_conv3 = ConvStage(c[1], c[2])
        self.enc_lift4 = TransitionConv(c[2], c[3])
        self.enc_deep4 = _deep_block(cfg.stage_kinds[0], c[3], cfg.enc_kernels[0], cfg)
        self.enc_lift5 = TransitionConv(c[3], c[4])
        self.enc_deep5 = _deep_block(cfg.stage_kinds[1], c[4], cfg.enc_kernels[1], cfg)
        self.enc_lift6 = TransitionConv(c[4], c[5])
        self.enc_deep6 = _deep_block(cfg.stage_kinds[2], c[5], cfg.enc_kernels[2], cfg)

        dec_kinds = tuple(reversed(cfg.stage_kinds))
        self.dec_red1 = TransitionConv(c[5], c[4])
        self.dec_deep1 = _deep_block(dec_kinds[0], c[4], cfg.dec_kernels[0], cfg)
        self.dec_red2 = TransitionConv(c[4], c[3])
        self.dec_deep2 = _deep_block(dec_kinds[1], c[3], cfg.dec_kernels[1], cfg)
        self.dec_red3 = TransitionConv(c[3], c[2])
        self.dec_deep3 = _deep_block(dec_kinds[2], c[2], cfg.dec_kernels[2], cfg)
        self.dec_red4 = TransitionConv(c[2], c[1])
        self.dec_conv4 = ConvStage(c[1], c[1])
        self.dec_red5 = TransitionConv(c[1], c[0])
        self.dec_conv5 = ConvStage(c[0], c[0])
        self.head = nn.Conv2d(c[0], cfg.out_channels, 1, bias=True)

        if cfg.skip_scale_mode == "shared":
            self.skip_scale = nn.Parameter(torch.tensor(float(cfg.skip_scale_init)))
        elif cfg.skip_scale_mode == "stage_wise":
            self.skip_scale = nn.Parameter(
                torch.full((5,), float(cfg.skip_scale_init))
            )
        else:
            self.register_buffer("skip_scale", torch.ones(()))

    def _skip_k(self, i):
        if self.cfg.skip_scale_mode == "stage_wise":
            return self.skip_scale[i]
        return self.skip_scale

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"expected (B, {self.cfg.in_channels}, H, W) input, got {tuple(x.shape)}"
            )
        h, w = x.shape[-2:]
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(f"spatial dims must be divisible by 32, got {h}x{w}")
        if not torch.isfinite(x).all():
            raise ValueError("non-finite values in model input")

        pool = F.max_pool2d
        t1 = pool(self.enc_conv1(x), 2)                      # (c0, H/2)
        t2 = pool(self.enc_conv2(t1), 2)                     # (c1, H/4)
        t3 = pool(self.enc_conv3(t2), 2)                     # (c2, H/8)
        t4 = pool(self.enc_deep4(self.enc_lift4(t3)), 2)     # (c3, H/16)
        t5 = pool(self.enc_deep5(self.enc_lift5(t4)), 2)     # (c4, H/32)
        z = self.enc_deep6(self.enc_lift6(t5))               # (c5, H/32)

        up = lambda t: F.interpolate(t, scale_factor=2, mode="bilinear", align_corners=False)

        y = self.dec_deep1(self.dec_red1(z))
        y = scaled_skip_add(y, t5, self._skip_k(0))
        y = self.dec_deep2(up(self.dec_red2(y)))
        y = scaled_skip_add(y, t4, self._skip_k(1))
        y = self.dec_deep3(up(self.dec_red3(y)))
        y = scaled_skip_add(y, t3, self._skip_k(2))
        y = self.dec_conv4(up(self.dec_red4(y)))
        y = scaled_skip_add(y, t2, self._skip_k(3))
        y = self.dec_conv5(up(self.dec_red5(y)))
        y = scaled_skip_add(y, t1, self._skip_k(4))
        logits = up(self.head(y))                            # (out, H)
        return torch.sigmoid(logits)


def build_model(cfg: ModelConfig) -> UltraLBMUNet:
    """Validate the config and construct the network."""
    return UltraLBMUNet(cfg)


# ---------------------------------------------------------------------------
# checkpoint I/O: single .npz archive with the config JSON plus every named
# parameter and buffer; loading rebuilds and validates names/shapes/dtypes.
# ---------------------------------------------------------------------------

def _config_to_json(cfg: ModelConfig) -> str:
    d = asdict(cfg)
    for key in ("channels", "stage_kinds", "enc_kernels", "dec_kernels"):
        d[key] = list(d[key])
    return json.dumps(d)


def _config_from_json(text: str) -> ModelConfig:
    d = json.loads(text)
    for key in ("channels", "stage_kinds", "enc_kernels", "dec_kernels"):
        d[key] = tuple(d[key])
    return ModelConfig(**d)


def save_checkpoint(model: UltraLBMUNet, path) -> None:
    arrays = {"__config__": np.frombuffer(_config_to_json(model.cfg).encode(), dtype=np.uint8)}
    for name, p in model.named_parameters():
        arrays[f"param/{name}"] = p.detach().cpu().numpy()
    for name, b in model.named_buffers():
        arrays[f"buffer/{name}"] = b.detach().cpu().numpy()
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> UltraLBMUNet:
    with np.load(path) as data:
        if "__config__" not in data:
            raise ValueError(f"not a model checkpoint (missing config): {path}")
        cfg = _config_from_json(bytes(data["__config__"]).decode())
        model = build_model(cfg)

        stored_params = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
        stored_bufs = {k[len("buffer/"):]: data[k] for k in data.files if k.startswith("buffer/")}

        problems = []
        model_params = dict(model.named_parameters())
        model_bufs = dict(model.named_buffers())
        for kind, stored, expected in (
            ("parameter", stored_params, model_params),
            ("buffer", stored_bufs, model_bufs),
        ):
            for name in sorted(set(stored) - set(expected)):
                problems.append(f"unexpected {kind} {name!r}")
            for name in sorted(set(expected) - set(stored)):
                problems.append(f"missing {kind} {name!r}")
            for name in sorted(set(stored) & set(expected)):
                want = tuple(expected[name].shape)
                got = tuple(stored[name].shape)
                if want != got:
                    problems.append(f"{kind} {name!r} shape {got} != model shape {want}")
        if problems:
            raise ValueError(
                f"checkpoint {path} does not match the rebuilt model: " + "; ".join(problems)
            )

        with torch.no_grad():
            for name, p in model_params.items():
                p.copy_(torch.from_numpy(stored_params[name]).to(p.dtype))
            for name, b in model_bufs.items():
                b.copy_(torch.from_numpy(stored_bufs[name]).to(b.dtype))
    return model
