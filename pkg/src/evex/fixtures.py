"""Synthetic test image with a known region of interest.

The toy scene is a noisy gradient background, one green blob inside the
classifier's center region (the signal the builtin blob model responds to),
and a red distractor blob outside it. The returned ground-truth mask is the
set of green-dominant pixels, i.e. exactly the pixels the blob classifier
counts, so localization quality of an explanation can be scored against it.
"""

from __future__ import annotations

import numpy as np

from .imaging import Image
from .rng import SplitMix64

DEFAULT_BLOB_CENTER = (30, 34)  # (row, col), inside the central 32x32 of a 64x64 image
DEFAULT_BLOB_RADIUS = 9.0


def toy_blob_image(
    size: int = 64,
    noise: int = 12,
    blob_center: tuple[int, int] = DEFAULT_BLOB_CENTER,
    blob_radius: float = DEFAULT_BLOB_RADIUS,
    noise_seed: int = 0xF1D0,
) -> tuple[Image, np.ndarray]:
    """Build the toy scene; returns (image, green-dominant ground-truth mask)."""
    h = w = size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    base = np.empty((h, w, 3))
    base[:, :, 0] = 118.0 + 34.0 * ys / h
    base[:, :, 1] = 120.0 + 30.0 * ys / h
    base[:, :, 2] = 134.0 + 26.0 * ys / h

    def disk(cy: float, cx: float, radius: float) -> np.ndarray:
        # soft 1.5 px rim so the boundary strength varies with blur
        dist = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2)
        return np.clip((radius + 1.5 - dist) / 1.5, 0.0, 1.0)

    green = np.array([52.0, 186.0, 66.0])
    alpha = disk(blob_center[0], blob_center[1], blob_radius)
    base = base * (1.0 - alpha[:, :, None]) + green * alpha[:, :, None]

    red = np.array([186.0, 74.0, 62.0])
    alpha = disk(12.0, 50.0, 6.0)
    base = base * (1.0 - alpha[:, :, None]) + red * alpha[:, :, None]

    rng = SplitMix64(noise_seed)
    jitter = np.array(
        [rng.uniform_int(-noise, noise) for _ in range(h * w * 3)], dtype=np.float64
    ).reshape(h, w, 3)
    pixels = np.clip(base + jitter, 0, 255).astype(np.uint8)

    rgb = pixels.astype(np.int32)
    mask = (rgb[:, :, 1] - rgb[:, :, 0] >= 30) & (rgb[:, :, 1] - rgb[:, :, 2] >= 30)
    return Image(pixels), mask
