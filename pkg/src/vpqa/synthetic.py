"""Synthetic blur-graded dataset for desk-scale runs.

Each image is a dark random texture blurred by a per-image amount; the ground
truth score is a fixed decreasing function of the blur level. Statistics are
tuned so the toy scorer's response is unsaturated and blur is the dominant
quality axis. Everything is deterministic given the seed; images are stored as
float `.npy` arrays so no quantization enters the pipeline.
"""

from __future__ import annotations

import csv
import os

import numpy as np
from scipy.ndimage import gaussian_filter

MOS_LO = 0.0
MOS_HI = 100.0

_BRIGHTNESS = 0.10
_BRIGHTNESS_JITTER = 0.005
_NOISE_AMP = 0.12
_SIGMA_MIN = 0.0
_SIGMA_MAX = 3.0


def blur_level_to_mos(level: np.ndarray) -> np.ndarray:
    """Monotone decreasing map from blur level in [0, 1] to raw MOS in (0, 100)."""
    return 85.0 - 70.0 * np.asarray(level, dtype=np.float64)


def generate_blur_arrays(
    n: int = 200, size: int = 32, seed: int = 2024
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (images (n,3,size,size), blur levels (n,), raw MOS (n,))."""
    rng = np.random.default_rng(seed)
    levels = rng.permutation((np.arange(n) + 0.5) / n)
    images = np.empty((n, 3, size, size))
    for i, u in enumerate(levels):
        brightness = _BRIGHTNESS + _BRIGHTNESS_JITTER * rng.random()
        noise = _NOISE_AMP * rng.uniform(-1.0, 1.0, size=(3, size, size))
        sigma = _SIGMA_MIN + (_SIGMA_MAX - _SIGMA_MIN) * u
        images[i] = np.clip(brightness + gaussian_filter(noise, sigma=(0, sigma, sigma)), 0.0, 1.0)
    return images, levels, blur_level_to_mos(levels)


def make_blur_dataset(out_dir: str, n: int = 200, size: int = 32, seed: int = 2024) -> str:
    """Write images plus a `path,mos` manifest under out_dir; returns the manifest path."""
    images, _, mos = generate_blur_arrays(n=n, size=size, seed=seed)
    image_dir = os.path.join(out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.csv")
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "mos"])
        for i in range(n):
            rel = os.path.join("images", f"{i:04d}.npy")
            np.save(os.path.join(out_dir, rel), images[i])
            writer.writerow([rel, repr(float(mos[i]))])
    return manifest_path
