"""Seeded synthetic image corpus for desk-scale experiments.

Images mix smooth gradients, soft-edged ellipses, and band-limited texture:
enough structure that a small codec learns a useful latent, enough high-
frequency content that coding noise is visible for the post-processor to
remove. Any real image folder works equally well; this exists so the
pipeline can run self-contained.
"""

import os

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import DatasetManifest, Image, build_manifest, save_image


def toy_image(seed, size: int = 128) -> Image:
    """One deterministic synthetic image for a given seed."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = np.zeros((size, size, 3), dtype=np.float64)
    for c in range(3):
        a, b = rng.uniform(-1.0, 1.0, size=2)
        img[..., c] = 0.5 + 0.35 * (a * (xx - 0.5) + b * (yy - 0.5))
    for _ in range(int(rng.integers(3, 7))):
        cx, cy = rng.uniform(0.1, 0.9, size=2)
        rx, ry = rng.uniform(0.06, 0.30, size=2)
        theta = rng.uniform(0.0, np.pi)
        color = rng.uniform(0.0, 1.0, size=3)
        opacity = rng.uniform(0.5, 0.95)
        ct, st = np.cos(theta), np.sin(theta)
        u = (xx - cx) * ct + (yy - cy) * st
        v = -(xx - cx) * st + (yy - cy) * ct
        d = (u / rx) ** 2 + (v / ry) ** 2
        mask = np.clip((1.0 - d) * 8.0, 0.0, 1.0)  # soft edge ~ anti-aliasing
        img += (opacity * mask)[..., None] * (color[None, None, :] - img)
    noise = rng.standard_normal((size, size, 3))
    sigma = rng.uniform(1.0, 3.0)
    texture = gaussian_filter(noise, sigma=(sigma, sigma, 0.0))
    peak = np.abs(texture).max()
    if peak > 0:
        img += 0.08 * texture / peak
    return Image.from_array(np.clip(img, 0.0, 1.0).astype(np.float32))


def generate_corpus(directory: str, count: int, size: int = 128,
                    seed: int = 0, split_tag: str = "toy") -> DatasetManifest:
    """Write `count` PNGs named img_0000.png ... and return their manifest."""
    os.makedirs(directory, exist_ok=True)
    for i in range(count):
        save_image(toy_image((seed, i), size=size),
                   os.path.join(directory, f"img_{i:04d}.png"))
    return build_manifest(directory, split_tag=split_tag)
