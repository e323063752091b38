"""Dataset loading, preprocessing, and the synthetic lesion generator.

Real data follows the conventional layout `<root>/images/*.{png,jpg,jpeg}`
plus `<root>/masks/<same basename>.png`. Masks are binarized at 127/255 and
resized with nearest-neighbour; images with bilinear. The synthetic
generator produces desk-scale stand-ins: a smooth background gradient with
Gaussian texture noise and one to a few darker elliptical lesions whose
union defines the mask analytically.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "Sample",
    "SynthSpec",
    "load_dataset",
    "load_images",
    "split_dataset",
    "generate_synthetic",
    "save_dataset",
    "compute_norm_stats",
    "normalize_image",
]

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass
class Sample:
    """One image/mask pair. Image is (3, H, W) float32 in [0, 1] before
    normalization; mask is (1, H, W) float32 in {0, 1}."""

    image: np.ndarray
    mask: np.ndarray
    id: str

    def validate(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must be (3, H, W), got {self.image.shape}")
        if self.mask.shape != (1, *self.image.shape[1:]):
            raise ValueError(
                f"mask shape {self.mask.shape} does not match image {self.image.shape}"
            )
        if not np.isfinite(self.image).all():
            raise ValueError("non-finite image values")
        if not np.isin(self.mask, (0.0, 1.0)).all():
            raise ValueError("mask must be binary {0, 1}")
        return self


@dataclass
class SynthSpec:
    """Parameters of the synthetic lesion dataset."""

    count: int = 200
    size: int = 64
    seed: int = 0
    lesions: tuple = (1, 3)          # inclusive range of lesions per image
    axis_frac: tuple = (0.08, 0.22)  # ellipse semi-axes as fraction of size
    noise_sigma: float = 0.12
    gradient_amp: float = 0.15

    def validate(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.size % 32 != 0:
            raise ValueError(f"size must be divisible by 32, got {self.size}")
        if not (1 <= self.lesions[0] <= self.lesions[1]):
            raise ValueError(f"invalid lesions range {self.lesions}")
        if not (0 < self.axis_frac[0] <= self.axis_frac[1] < 0.5):
            raise ValueError(f"invalid axis fraction range {self.axis_frac}")
        if self.noise_sigma < 0 or self.gradient_amp < 0:
            raise ValueError("noise_sigma and gradient_amp must be non-negative")
        return self


def _load_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except Exception as exc:  # noqa: BLE001 - surface the path
        raise ValueError(f"unreadable image file: {path} ({exc})") from exc


def _load_mask(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"))
    except Exception as exc:  # noqa: BLE001
        raise ValueError(f"unreadable mask file: {path} ({exc})") from exc


def load_dataset(root, size=None):
    """Load image/mask pairs from `<root>/images` and `<root>/masks`.

    Returns samples sorted by id. Raises if the directory is empty or any
    image lacks a mask with the same basename.
    """
    root = Path(root)
    image_dir, mask_dir = root / "images", root / "masks"
    if not image_dir.is_dir():
        raise FileNotFoundError(f"no images directory under {root}")
    image_paths = sorted(
        p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
    )
    if not image_paths:
        raise ValueError(f"no samples found under {root}")

    missing = [p.name for p in image_paths if not (mask_dir / f"{p.stem}.png").exists()]
    if missing:
        raise ValueError(f"missing masks for images: {', '.join(missing)}")

    samples = []
    for path in image_paths:
        image = _load_image(path)
        mask = _load_mask(mask_dir / f"{path.stem}.png")
        if size is not None:
            image = np.asarray(
                Image.fromarray(image).resize((size, size), Image.BILINEAR)
            )
            mask = np.asarray(
                Image.fromarray(mask).resize((size, size), Image.NEAREST)
            )
        image = image.astype(np.float32).transpose(2, 0, 1) / 255.0
        mask = (mask > 127).astype(np.float32)[None]
        samples.append(Sample(image=image, mask=mask, id=path.stem).validate())
    return samples


def load_images(root, size=None):
    """Load images only (for prediction); masks are not required."""
    root = Path(root)
    image_dir = root / "images" if (root / "images").is_dir() else root
    image_paths = sorted(
        p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
    )
    if not image_paths:
        raise ValueError(f"no images found under {root}")
    out = []
    for path in image_paths:
        image = _load_image(path)
        if size is not None:
            image = np.asarray(Image.fromarray(image).resize((size, size), Image.BILINEAR))
        out.append((path.stem, image.astype(np.float32).transpose(2, 0, 1) / 255.0))
    return out


def split_dataset(samples, ratio=0.7, seed=0):
    """Seed-deterministic shuffle followed by a ratio split."""
    if not 0 < ratio < 1:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    order = np.random.default_rng(seed).permutation(len(samples))
    cut = int(round(len(samples) * ratio))
    train = [samples[i] for i in order[:cut]]
    test = [samples[i] for i in order[cut:]]
    return train, test


def _ellipse_mask(size, cx, cy, ax, ay, theta):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / ax) ** 2 + (v / ay) ** 2 <= 1.0


def generate_synthetic(spec: SynthSpec):
    """Generate `spec.count` seed-deterministic lesion samples."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    size = spec.size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / max(size - 1, 1)

    samples = []
    for index in range(spec.count):
        # smooth directional background gradient around a skin-tone base
        base = np.array([0.78, 0.62, 0.55], dtype=np.float32)
        base = base + rng.uniform(-0.06, 0.06, size=3).astype(np.float32)
        direction = rng.uniform(0, 2 * np.pi)
        ramp = (np.cos(direction) * xx + np.sin(direction) * yy)
        ramp = (ramp - ramp.mean()) * spec.gradient_amp
        image = base[:, None, None] + ramp[None]

        mask = np.zeros((size, size), dtype=bool)
        n_lesions = int(rng.integers(spec.lesions[0], spec.lesions[1] + 1))
        for _ in range(n_lesions):
            ax = rng.uniform(*spec.axis_frac) * size
            ay = rng.uniform(*spec.axis_frac) * size
            margin = max(ax, ay)
            cx = rng.uniform(margin, size - 1 - margin)
            cy = rng.uniform(margin, size - 1 - margin)
            theta = rng.uniform(0, np.pi)
            lesion = _ellipse_mask(size, cx, cy, ax, ay, theta)
            depth = rng.uniform(0.18, 0.40)
            tint = rng.uniform(0.85, 1.0, size=3).astype(np.float32)
            image = image - (depth * tint)[:, None, None] * lesion[None]
            mask |= lesion

        image = image + rng.normal(0.0, spec.noise_sigma, image.shape).astype(np.float32)
        image = np.clip(image, 0.0, 1.0).astype(np.float32)
        samples.append(
            Sample(
                image=image,
                mask=mask.astype(np.float32)[None],
                id=f"synth_{index:04d}",
            ).validate()
        )
    return samples


def save_dataset(samples, root):
    """Write samples in the images/ + masks/ directory layout (8-bit PNG)."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for s in samples:
        rgb = np.clip(np.rint(s.image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(rgb).save(root / "images" / f"{s.id}.png")
        m = (s.mask[0] > 0.5).astype(np.uint8) * 255
        Image.fromarray(m, mode="L").save(root / "masks" / f"{s.id}.png")


def compute_norm_stats(samples):
    """Per-channel mean/std over a sample list; fallback is (0.5, 0.5)."""
    if not samples:
        return np.full(3, 0.5, np.float32), np.full(3, 0.5, np.float32)
    pixels = np.concatenate([s.image.reshape(3, -1) for s in samples], axis=1)
    mean = pixels.mean(axis=1).astype(np.float32)
    std = pixels.std(axis=1).astype(np.float32)
    std = np.where(std < 1e-6, 1.0, std)
    return mean, std


def normalize_image(image, stats):
    mean, std = stats
    return (image - mean[:, None, None]) / std[:, None, None]
