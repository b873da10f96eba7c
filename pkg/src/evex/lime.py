"""Perturbation-based local explanation of one classification.

One explanation run masks random subsets of superpixels, collects the
black-box probabilities for the perturbed images, and fits a weighted ridge
surrogate whose coefficients are the per-superpixel explanation weights.
Sample row 0 is always the unperturbed image; the remaining mask bits come
from the seeded generator in :mod:`evex.rng`, so the whole run is a pure
function of (image, segmentation, classifier, target class, config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .classifier import Classifier
from .imaging import FloatGrid, Image
from .rng import bernoulli_matrix
from .segmentation import SegmentMap, segment_sizes


class DegenerateSegmentation(Exception):
    """Fewer than two segments: there is nothing to perturb."""


class DegenerateSystem(Exception):
    """Too few samples to fit the surrogate."""


@dataclass(frozen=True)
class LimeConfig:
    n_samples: int = 200
    kernel_width: float = 0.25
    ridge_alpha: float = 1.0
    mask_fill: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.kernel_width <= 0:
            raise ValueError("kernel_width must be > 0")
        if self.ridge_alpha < 0:
            raise ValueError("ridge_alpha must be >= 0")

    def to_json(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "kernel_width": self.kernel_width,
            "ridge_alpha": self.ridge_alpha,
            "mask_fill": list(self.mask_fill),
        }

    @staticmethod
    def from_json(data: dict) -> "LimeConfig":
        return LimeConfig(
            n_samples=int(data.get("n_samples", 200)),
            kernel_width=float(data.get("kernel_width", 0.25)),
            ridge_alpha=float(data.get("ridge_alpha", 1.0)),
            mask_fill=tuple(int(v) for v in data.get("mask_fill", (0, 0, 0))),
        )


class GoalVector(NamedTuple):
    """The three minimization objectives, each in [0, 1]."""

    g1: float  # 1 - explanation score
    g2: float  # 1 - clamped largest weight
    g3: float  # relative area of the most relevant segment


PENALTY_GOALS = GoalVector(1.0, 1.0, 1.0)


@dataclass(frozen=True, eq=False)
class Explanation:
    """Per-superpixel weights for one (segmentation, classifier, seed) triple."""

    weights: np.ndarray  # (k,) float64, signed
    intercept: float
    score: float  # clamped R^2 of the surrogate, in [0, 1]
    segmap: SegmentMap
    pixel_grid: FloatGrid  # weights lifted through the label map


def generate_masks(k: int, cfg: LimeConfig, seed: int) -> np.ndarray:
    """(n_samples, k) uint8 matrix; row 0 all ones, rest Bernoulli(0.5)."""
    if k < 1:
        raise ValueError("need at least one segment")
    masks = np.empty((cfg.n_samples, k), dtype=np.uint8)
    masks[0] = 1
    masks[1:] = bernoulli_matrix(seed, cfg.n_samples - 1, k)
    return masks


def apply_mask(
    image: Image,
    segmap: SegmentMap,
    mask: np.ndarray,
    mask_fill: tuple[int, int, int] = (0, 0, 0),
) -> Image:
    """Keep pixels of segments with mask bit 1, paint the rest mask_fill."""
    if segmap.labels.shape != image.pixels.shape[:2]:
        raise ValueError("segment map dimensions do not match image")
    if len(mask) != segmap.segment_count:
        raise ValueError(f"mask length {len(mask)} != segment count {segmap.segment_count}")
    keep = np.asarray(mask, dtype=bool)[segmap.labels]
    fill = np.array(mask_fill, dtype=np.uint8)
    return Image(np.where(keep[:, :, None], image.pixels, fill))


def kernel_weight(mask: np.ndarray, kernel_width: float) -> float:
    """Sample weight from the cosine distance between the mask and all-ones."""
    k = len(mask)
    if k == 0:
        raise ValueError("empty mask")
    ones = int(np.sum(mask))
    d = 1.0 if ones == 0 else 1.0 - math.sqrt(ones / k)
    return math.sqrt(math.exp(-(d * d) / (kernel_width * kernel_width)))


def fit_weighted_ridge(
    x: np.ndarray, y: np.ndarray, sample_weight: np.ndarray, alpha: float
) -> tuple[np.ndarray, float, float]:
    """Minimize sum_i w_i (y_i - b0 - x_i.b)^2 + alpha * ||b||^2 (intercept unpenalized).

    Solved as a sqrt-weighted augmented least-squares problem (SVD route);
    returns (coefficients, intercept, weighted R^2). R^2 is 0 by definition
    when y is constant on the support of the weights.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(sample_weight, dtype=np.float64)
    n, k = x.shape
    if n < 2:
        raise DegenerateSystem("need at least two samples")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("sample weights must be >= 0 and not all zero")

    sw = np.sqrt(w)
    design = np.empty((n, k + 1))
    design[:, 0] = sw
    design[:, 1:] = x * sw[:, None]
    rhs = y * sw
    if alpha > 0:
        penalty = np.zeros((k, k + 1))
        penalty[:, 1:] = math.sqrt(alpha) * np.eye(k)
        design = np.vstack([design, penalty])
        rhs = np.concatenate([rhs, np.zeros(k)])
    beta, *_ = np.linalg.lstsq(design, rhs, rcond=None)
    intercept = float(beta[0])
    coef = beta[1:]

    support = y[w > 0]
    if np.all(support == support[0]):
        return coef, intercept, 0.0
    y_hat = intercept + x @ coef
    w_mean = float(np.sum(w * y) / np.sum(w))
    ss_tot = float(np.sum(w * (y - w_mean) ** 2))
    ss_res = float(np.sum(w * (y - y_hat) ** 2))
    if ss_tot == 0.0:
        return coef, intercept, 0.0
    return coef, intercept, 1.0 - ss_res / ss_tot


def explain(
    image: Image,
    segmap: SegmentMap,
    clf: Classifier,
    target_class: int,
    cfg: LimeConfig,
    seed: int,
) -> Explanation:
    """Full perturb-predict-fit loop for one segmentation."""
    if segmap.segment_count < 2:
        raise DegenerateSegmentation(f"{segmap.segment_count} segment(s)")
    if not 0 <= target_class < clf.class_count:
        raise ValueError(f"target class {target_class} out of range (< {clf.class_count})")

    masks = generate_masks(segmap.segment_count, cfg, seed)
    perturbed = [apply_mask(image, segmap, row, cfg.mask_fill) for row in masks]
    predictions = clf.predict_batch(perturbed)
    y = np.array([p.probabilities[target_class] for p in predictions])
    w = np.array([kernel_weight(row, cfg.kernel_width) for row in masks])
    coef, intercept, r2 = fit_weighted_ridge(masks.astype(np.float64), y, w, cfg.ridge_alpha)
    score = min(max(r2, 0.0), 1.0)
    pixel_grid = FloatGrid(coef[segmap.labels])
    return Explanation(
        weights=coef, intercept=intercept, score=score, segmap=segmap, pixel_grid=pixel_grid
    )


def goals(expl: Explanation) -> GoalVector:
    """Map an explanation to the three minimization objectives."""
    segmap = expl.segmap
    if segmap.segment_count < 2:
        return PENALTY_GOALS
    weights = expl.weights
    largest = float(weights.max())
    sizes = segment_sizes(segmap)
    # argmax by weight; ties prefer the smaller segment, then the smaller label
    best = min(
        (label for label in range(segmap.segment_count) if weights[label] == largest),
        key=lambda label: (sizes[label], label),
    )
    area = sizes[best] / (segmap.width * segmap.height)
    g2 = 1.0 - min(max(largest, 0.0), 1.0)
    return GoalVector(1.0 - expl.score, g2, area)


def explanation_to_json(
    expl: Explanation,
    params_json: dict,
    seed: int,
    goal_vector: GoalVector,
    pixel_grid_path: str,
) -> dict:
    """Serializable form of an explanation (grid stored as an EVEXMAP file)."""
    weights = expl.weights
    largest = float(weights.max())
    sizes = segment_sizes(expl.segmap)
    argmax = min(
        (label for label in range(expl.segmap.segment_count) if weights[label] == largest),
        key=lambda label: (sizes[label], label),
    )
    return {
        "params": params_json,
        "seed": seed,
        "score": expl.score,
        "intercept": expl.intercept,
        "weights": [float(v) for v in weights],
        "argmax_segment": argmax,
        "goal_vector": list(goal_vector),
        "pixel_grid_path": pixel_grid_path,
    }


def mean_pixel_grid(grids: Sequence[FloatGrid]) -> FloatGrid:
    """Pointwise arithmetic mean of equally sized grids."""
    if not grids:
        raise ValueError("no grids to average")
    acc = np.zeros_like(grids[0].values)
    for grid in grids:
        if grid.values.shape != acc.shape:
            raise ValueError("grid dimensions differ")
        acc += grid.values
    return FloatGrid(acc / len(grids))
