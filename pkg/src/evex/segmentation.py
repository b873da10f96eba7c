"""Graph-based superpixel segmentation with evolvable parameters.

The segmenter builds an 8-connected pixel graph over the Gaussian-blurred
image (edge weight = Euclidean RGB distance on the 0..255 float scale),
then runs a Kruskal-style merge: components joined by an edge of weight w
are merged iff w <= min over both sides of (largest weight already merged
inside the component + scale / component size). A second ascending pass
merges away any component smaller than min_size, and labels are finally
densified in row-major first-occurrence order.

Edges are sorted by (weight, source index, destination index) so the whole
pipeline is a pure function of its inputs.

Segment maps are persisted in the EVEXSEG text format::

    EVEXSEG 1
    <width> <height> <segment_count>
    <width*height labels, row-major>
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import Image, blur_channels

SEG_MAGIC = "EVEXSEG 1"

SCALE_RANGE = (1.0, 1000.0)
SIGMA_RANGE = (0.0, 5.0)
MIN_SIZE_RANGE = (15, 500)


@dataclass(frozen=True)
class SegmentationParams:
    """The three genes: scale, blur sigma, and minimum segment size.

    Values are clamped into their closed ranges and then quantized (scale to
    3 decimals, sigma to 2, min_size to int), so equal parameters compare and
    hash equal; ``key()`` is the exact integer form used for memoization.
    """

    scale: float
    sigma: float
    min_size: int

    def __post_init__(self):
        scale = min(max(float(self.scale), SCALE_RANGE[0]), SCALE_RANGE[1])
        sigma = min(max(float(self.sigma), SIGMA_RANGE[0]), SIGMA_RANGE[1])
        min_size = min(max(int(round(self.min_size)), MIN_SIZE_RANGE[0]), MIN_SIZE_RANGE[1])
        object.__setattr__(self, "scale", round(scale * 1000.0) / 1000.0)
        object.__setattr__(self, "sigma", round(sigma * 100.0) / 100.0)
        object.__setattr__(self, "min_size", min_size)

    def key(self) -> tuple[int, int, int]:
        return (round(self.scale * 1000.0), round(self.sigma * 100.0), self.min_size)


@dataclass(frozen=True, eq=False)
class SegmentMap:
    """Dense per-pixel labels 0..segment_count-1; shape (height, width)."""

    labels: np.ndarray
    segment_count: int

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ValueError(f"expected (h, w) label array, got shape {self.labels.shape}")
        if self.segment_count < 1:
            raise ValueError("segment_count must be >= 1")

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]


def _build_edges(blurred: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """8-connectivity edges as (src, dst, weight), src < dst, unsorted."""
    h, w = blurred.shape[:2]
    idx = np.arange(h * w, dtype=np.int64).reshape(h, w)
    srcs, dsts, wts = [], [], []
    # right, down, down-right, down-left; each neighbor index exceeds the source
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        y0 = slice(0, h - dy)
        y1 = slice(dy, h)
        x0 = slice(max(0, -dx), w - max(0, dx))
        x1 = slice(max(0, dx), w + min(0, dx))
        a = idx[y0, x0]
        b = idx[y1, x1]
        if a.size == 0:
            continue
        diff = blurred[y0, x0] - blurred[y1, x1]
        dist = np.sqrt((diff * diff).sum(axis=-1))
        srcs.append(a.ravel())
        dsts.append(b.ravel())
        wts.append(dist.ravel())
    return np.concatenate(srcs), np.concatenate(dsts), np.concatenate(wts)


def felzenszwalb(image: Image, params: SegmentationParams) -> SegmentMap:
    """Segment ``image`` into superpixels under ``params``."""
    h, w = image.height, image.width
    n = h * w
    blurred = blur_channels(image.pixels, params.sigma)

    if n == 1:
        return SegmentMap(np.zeros((1, 1), dtype=np.int32), 1)

    src, dst, wt = _build_edges(blurred)
    order = np.lexsort((dst, src, wt))
    src_l = src[order].tolist()
    dst_l = dst[order].tolist()
    wt_l = wt[order].tolist()

    parent = list(range(n))
    size = [1] * n
    internal = [0.0] * n
    scale = params.scale

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    # Kruskal merge phase
    for a, b, weight in zip(src_l, dst_l, wt_l):
        ra = find(a)
        rb = find(b)
        if ra == rb:
            continue
        if weight <= internal[ra] + scale / size[ra] and weight <= internal[rb] + scale / size[rb]:
            if size[ra] < size[rb]:
                ra, rb = rb, ra
            parent[rb] = ra
            size[ra] += size[rb]
            internal[ra] = weight

    # Small-segment postprocess: same ascending order, merge if either side is small
    min_size = params.min_size
    for a, b in zip(src_l, dst_l):
        ra = find(a)
        rb = find(b)
        if ra == rb:
            continue
        if size[ra] < min_size or size[rb] < min_size:
            if size[ra] < size[rb]:
                ra, rb = rb, ra
            parent[rb] = ra
            size[ra] += size[rb]

    # Dense relabel in row-major first-occurrence order
    labels = np.empty(n, dtype=np.int32)
    remap: dict[int, int] = {}
    for i in range(n):
        root = find(i)
        label = remap.get(root)
        if label is None:
            label = len(remap)
            remap[root] = label
        labels[i] = label
    return SegmentMap(labels.reshape(h, w), len(remap))


def segment_sizes(segmap: SegmentMap) -> list[int]:
    """Pixel count per label, indexed by label."""
    counts = np.bincount(segmap.labels.ravel(), minlength=segmap.segment_count)
    return counts.tolist()


def relative_area(segmap: SegmentMap, label: int) -> float:
    """Fraction of the image covered by ``label``."""
    if not 0 <= label < segmap.segment_count:
        raise ValueError(f"label {label} out of range (0..{segmap.segment_count - 1})")
    count = int((segmap.labels == label).sum())
    return count / (segmap.width * segmap.height)


def save_segmap(segmap: SegmentMap, path: str | Path) -> None:
    lines = [SEG_MAGIC, f"{segmap.width} {segmap.height} {segmap.segment_count}"]
    for row in segmap.labels:
        lines.append(" ".join(str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_segmap(path: str | Path) -> SegmentMap:
    path = Path(path)
    text = path.read_text()
    head, _, rest = text.partition("\n")
    if head.strip() != SEG_MAGIC:
        raise ValueError(f"{path}: not an EVEXSEG file")
    dims, _, body = rest.partition("\n")
    parts = dims.split()
    if len(parts) != 3:
        raise ValueError(f"{path}: malformed header line {dims!r}")
    width, height, count = (int(p) for p in parts)
    labels = np.array(body.split(), dtype=np.int32)
    if labels.size != width * height:
        raise ValueError(f"{path}: expected {width * height} labels, found {labels.size}")
    return SegmentMap(labels.reshape(height, width), count)
