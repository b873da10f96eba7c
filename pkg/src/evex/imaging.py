"""Raster types, Gaussian preprocessing, heat-map rendering, and file I/O.

Images are 8-bit RGB rasters; weight/statistic planes are float64 grids.
Grids are persisted in the EVEXMAP text format::

    EVEXMAP 1
    <width> <height>
    <width*height floats, row-major, 9 significant digits>

All functions here are pure: same input, bit-identical output.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Literal

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

if TYPE_CHECKING:
    from .segmentation import SegmentMap

MAP_MAGIC = "EVEXMAP 1"

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class PngError(Exception):
    """Base class for PNG decode problems."""


class MalformedPngError(PngError):
    """The file is not a well-formed PNG."""


class UnsupportedPngError(PngError):
    """The PNG is valid but not 8-bit RGB/RGBA."""


@dataclass(frozen=True, eq=False)
class Image:
    """8-bit RGB raster; ``pixels`` has shape (height, width, 3), dtype uint8."""

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixel array, got shape {px.shape}")
        if px.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {px.dtype}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class FloatGrid:
    """Finite float64 plane; ``values`` has shape (height, width)."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ValueError(f"expected (h, w) value array, got shape {v.shape}")
        if v.dtype != np.float64:
            raise ValueError(f"expected float64 values, got {v.dtype}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid contains non-finite values")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def load_png(path: str | Path) -> Image:
    """Decode an 8-bit RGB/RGBA PNG; alpha is discarded.

    Raises FileNotFoundError, MalformedPngError, or UnsupportedPngError.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(26)
    if len(header) < 26 or header[:8] != _PNG_SIGNATURE:
        raise MalformedPngError(f"{path}: not a PNG file")
    # IHDR layout: length(4) type(4) width(4) height(4) depth(1) color(1)
    if header[12:16] != b"IHDR":
        raise MalformedPngError(f"{path}: missing IHDR chunk")
    bit_depth, color_type = struct.unpack(">BB", header[24:26])
    if bit_depth != 8:
        raise UnsupportedPngError(f"{path}: bit depth {bit_depth}, only 8 supported")
    if color_type not in (2, 6):  # 2 = RGB, 6 = RGBA
        raise UnsupportedPngError(f"{path}: color type {color_type}, only RGB/RGBA supported")
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im)
    except UnidentifiedImageError as exc:
        raise MalformedPngError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise MalformedPngError(f"{path}: truncated or corrupt PNG ({exc})") from exc
    return Image(np.ascontiguousarray(arr[:, :, :3]))


def save_png(image: Image, path: str | Path) -> None:
    """Write a lossless 8-bit RGB PNG."""
    PILImage.fromarray(image.pixels, mode="RGB").save(Path(path), format="PNG")


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(4.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def _blur_plane(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Separable pass along each axis with edge-clamp padding.
    radius = (len(kernel) - 1) // 2
    out = plane
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="edge")
        acc = np.zeros_like(out)
        for i, k in enumerate(kernel):
            if axis == 0:
                acc += k * padded[i : i + out.shape[0], :]
            else:
                acc += k * padded[:, i : i + out.shape[1]]
        out = acc
    return out


def blur_channels(pixels: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian-blur an (h, w, 3) array channel-wise; returns float64.

    Kernel radius is ceil(4*sigma); borders replicate the edge value.
    sigma = 0 is the identity (float conversion only).
    """
    out = pixels.astype(np.float64)
    if sigma <= 0.0:
        return out
    kernel = _gaussian_kernel(sigma)
    return np.stack([_blur_plane(out[:, :, c], kernel) for c in range(3)], axis=-1)


def gaussian_blur(image: Image, sigma: float) -> tuple[FloatGrid, FloatGrid, FloatGrid]:
    """Blur each channel of ``image``; returns one FloatGrid per channel."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    blurred = blur_channels(image.pixels, sigma)
    return tuple(FloatGrid(np.ascontiguousarray(blurred[:, :, c])) for c in range(3))


def _quantize(levels: np.ndarray) -> np.ndarray:
    # round-half-up to the nearest integer level
    return np.floor(levels + 0.5).astype(np.uint8)


def render_heatmap(grid: FloatGrid, mode: Literal["fixed", "auto"] = "fixed") -> Image:
    """Diverging white-anchored render: positive weights blend to blue, negative to red.

    Intensity is |v|/M clamped to [0, 1]; M = 1 in fixed mode, max|v| in auto
    mode (1 if the grid is all zeros).
    """
    if mode not in ("fixed", "auto"):
        raise ValueError(f"unknown mode {mode!r}")
    v = grid.values
    if mode == "auto":
        m = float(np.abs(v).max())
        if m == 0.0:
            m = 1.0
    else:
        m = 1.0
    s = np.clip(np.abs(v) / m, 0.0, 1.0)
    fade = _quantize(255.0 * (1.0 - s))
    out = np.empty((grid.height, grid.width, 3), dtype=np.uint8)
    pos = v >= 0
    out[pos, 0] = fade[pos]
    out[pos, 1] = fade[pos]
    out[pos, 2] = 255
    neg = ~pos
    out[neg, 0] = 255
    out[neg, 1] = fade[neg]
    out[neg, 2] = fade[neg]
    return Image(out)


def render_grayscale(grid: FloatGrid, cap: float, excluded: np.ndarray | None = None) -> Image:
    """Linear white(0) to black(cap) render; excluded pixels become pure green."""
    if cap <= 0:
        raise ValueError("cap must be > 0")
    s = np.clip(grid.values / cap, 0.0, 1.0)
    level = _quantize(255.0 * (1.0 - s))
    out = np.stack([level, level, level], axis=-1)
    if excluded is not None:
        if excluded.shape != grid.values.shape:
            raise ValueError("excluded mask shape does not match grid")
        out[excluded] = (0, 255, 0)
    return Image(out)


def overlay_boundaries(image: Image, segmap: "SegmentMap") -> Image:
    """Recolor segment-boundary pixels (4-connectivity) yellow."""
    labels = segmap.labels
    if labels.shape != image.pixels.shape[:2]:
        raise ValueError("segment map dimensions do not match image")
    boundary = np.zeros(labels.shape, dtype=bool)
    vert = labels[:-1, :] != labels[1:, :]
    boundary[:-1, :] |= vert
    boundary[1:, :] |= vert
    horiz = labels[:, :-1] != labels[:, 1:]
    boundary[:, :-1] |= horiz
    boundary[:, 1:] |= horiz
    out = image.pixels.copy()
    out[boundary] = (255, 255, 0)
    return Image(out)


def save_float_grid(grid: FloatGrid, path: str | Path) -> None:
    """Write a grid in EVEXMAP text format (9 significant digits)."""
    lines = [MAP_MAGIC, f"{grid.width} {grid.height}"]
    for row in grid.values:
        lines.append(" ".join(f"{v:.9g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_float_grid(path: str | Path) -> FloatGrid:
    """Read an EVEXMAP file back into a FloatGrid."""
    path = Path(path)
    text = path.read_text()
    head, _, rest = text.partition("\n")
    if head.strip() != MAP_MAGIC:
        raise ValueError(f"{path}: not an EVEXMAP file")
    dims, _, body = rest.partition("\n")
    parts = dims.split()
    if len(parts) != 2:
        raise ValueError(f"{path}: malformed dimension line {dims!r}")
    width, height = int(parts[0]), int(parts[1])
    values = np.array(body.split(), dtype=np.float64)
    if values.size != width * height:
        raise ValueError(f"{path}: expected {width * height} values, found {values.size}")
    return FloatGrid(values.reshape(height, width))
