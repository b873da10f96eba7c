"""Cross-seed reproducibility statistics over a stack of explanation grids.

SD is the population standard deviation (divide by the stack size). RSD is
SD over |mean|, computed only where |mean| clears the threshold; everything
below the threshold is flagged excluded and rendered as the green sentinel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .imaging import FloatGrid


@dataclass(frozen=True, eq=False)
class HeatMapStack:
    """Two or more same-sized grids, labeled by their seeds."""

    grids: tuple[FloatGrid, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.grids) < 2:
            raise ValueError("need at least two grids")
        if len(self.labels) != len(self.grids):
            raise ValueError("one label per grid required")
        shape = self.grids[0].values.shape
        for g in self.grids:
            if g.values.shape != shape:
                raise ValueError("stacked grids must share dimensions")

    def as_array(self) -> np.ndarray:
        return np.stack([g.values for g in self.grids], axis=0)


@dataclass(frozen=True, eq=False)
class RSDReport:
    sd_grid: FloatGrid
    mean_grid: FloatGrid
    rsd_grid: FloatGrid  # 0.0 at excluded pixels
    excluded: np.ndarray  # bool mask, True where |mean| below threshold
    threshold: float
    max_rsd: float  # over included pixels; 0 if none included
    excluded_fraction: float


def _stack_stats(stack: HeatMapStack) -> tuple[np.ndarray, np.ndarray]:
    """(mean, population SD) per pixel, exactly permutation-invariant.

    Values are sorted per pixel before summing so the result does not depend
    on stack order, and zero-range pixels are short-circuited so identical
    stacks give exact zeros.
    """
    arr = np.sort(stack.as_array(), axis=0)
    constant = arr[0] == arr[-1]
    mean = np.mean(arr, axis=0)
    mean[constant] = arr[0][constant]
    sd = np.sqrt(np.mean((arr - mean) ** 2, axis=0))
    sd[constant] = 0.0
    return mean, sd


def pixel_sd(stack: HeatMapStack) -> FloatGrid:
    """Pixel-wise population standard deviation across the stack."""
    return FloatGrid(_stack_stats(stack)[1])


def pixel_rsd(stack: HeatMapStack, threshold: float) -> RSDReport:
    """Pixel-wise SD / |mean| with sub-threshold pixels excluded."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    mean, sd = _stack_stats(stack)
    abs_mean = np.abs(mean)
    # |mean| == 0 is always excluded; for threshold > 0 that is already implied
    excluded = (abs_mean < threshold) | (abs_mean == 0.0)
    rsd = np.zeros_like(sd)
    included = ~excluded
    rsd[included] = sd[included] / abs_mean[included]
    max_rsd = float(rsd[included].max()) if included.any() else 0.0
    return RSDReport(
        sd_grid=FloatGrid(sd),
        mean_grid=FloatGrid(mean),
        rsd_grid=FloatGrid(rsd),
        excluded=excluded,
        threshold=threshold,
        max_rsd=max_rsd,
        excluded_fraction=float(excluded.mean()),
    )


def threshold_sweep(stack: HeatMapStack, thresholds: Sequence[float]) -> list[RSDReport]:
    """One RSDReport per threshold; thresholds must be ascending."""
    if not thresholds:
        raise ValueError("no thresholds given")
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be ascending")
    return [pixel_rsd(stack, t) for t in thresholds]
