"""NSGA-II evolution of segmentation parameters with memoized fitness.

The generation loop is single-threaded and owns the master generator; LIME
perturbations use the run seed directly and a separate generator, so fitness
values do not depend on evaluation order. Fitness is memoized on the
quantized genome, which also guarantees the same individual always carries
the same evaluation within a run.

Selection is the canonical NSGA-II flow: binary tournament on (rank,
crowding distance) for parents, uniform crossover and per-gene mutation for
variation, and (mu + lambda) environmental selection by rank with a
crowding-sorted cut of the last front.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .classifier import Classifier
from .imaging import FloatGrid, Image
from .lime import (
    PENALTY_GOALS,
    DegenerateSegmentation,
    Explanation,
    GoalVector,
    LimeConfig,
    explain,
    goals,
    mean_pixel_grid,
)
from .rng import SplitMix64
from .segmentation import (
    MIN_SIZE_RANGE,
    SCALE_RANGE,
    SIGMA_RANGE,
    SegmentationParams,
    felzenszwalb,
)

FRONT_QUANT_DECIMALS = 6  # front identity for early stopping


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 80
    max_generations: int = 200
    cxpb: float = 0.5
    mutpb: float = 0.2
    indpb_crossover: float = 0.2
    indpb_mutation: float = 0.2
    scale_mut_sigma: float = 10.0
    sigma_mut_sigma: float = 0.05
    min_size_mut_range: tuple[int, int] = MIN_SIZE_RANGE
    patience: int = 70
    seed: int = 42

    def __post_init__(self):
        for name in ("cxpb", "mutpb", "indpb_crossover", "indpb_mutation"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.max_generations < 1:
            raise ValueError("max_generations must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")

    def to_json(self) -> dict:
        return {
            "population_size": self.population_size,
            "max_generations": self.max_generations,
            "cxpb": self.cxpb,
            "mutpb": self.mutpb,
            "indpb_crossover": self.indpb_crossover,
            "indpb_mutation": self.indpb_mutation,
            "scale_mut_sigma": self.scale_mut_sigma,
            "sigma_mut_sigma": self.sigma_mut_sigma,
            "min_size_mut_range": list(self.min_size_mut_range),
            "patience": self.patience,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(data: dict) -> "GAConfig":
        defaults = GAConfig()
        return GAConfig(
            population_size=int(data.get("population_size", defaults.population_size)),
            max_generations=int(data.get("max_generations", defaults.max_generations)),
            cxpb=float(data.get("cxpb", defaults.cxpb)),
            mutpb=float(data.get("mutpb", defaults.mutpb)),
            indpb_crossover=float(data.get("indpb_crossover", defaults.indpb_crossover)),
            indpb_mutation=float(data.get("indpb_mutation", defaults.indpb_mutation)),
            scale_mut_sigma=float(data.get("scale_mut_sigma", defaults.scale_mut_sigma)),
            sigma_mut_sigma=float(data.get("sigma_mut_sigma", defaults.sigma_mut_sigma)),
            min_size_mut_range=tuple(
                int(v) for v in data.get("min_size_mut_range", defaults.min_size_mut_range)
            ),
            patience=int(data.get("patience", defaults.patience)),
            seed=int(data.get("seed", defaults.seed)),
        )


@dataclass(frozen=True)
class EvaluatedIndividual:
    genome: SegmentationParams
    goals: GoalVector
    explanation: Explanation | None  # None for degenerate segmentations


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """Pareto dominance for minimization: a <= b everywhere, < somewhere."""
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def non_dominated_sort(points: Sequence[Sequence[float]]) -> list[list[int]]:
    """Deb's fast non-dominated sort; returns fronts as index lists."""
    n = len(points)
    if n == 0:
        raise ValueError("empty population")
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    domination_count = [0] * n
    fronts: list[list[int]] = [[]]
    for p in range(n):
        for q in range(p + 1, n):
            if dominates(points[p], points[q]):
                dominated_by[p].append(q)
                domination_count[q] += 1
            elif dominates(points[q], points[p]):
                dominated_by[q].append(p)
                domination_count[p] += 1
    for p in range(n):
        if domination_count[p] == 0:
            fronts[0].append(p)
    i = 0
    while fronts[i]:
        nxt = []
        for p in fronts[i]:
            for q in dominated_by[p]:
                domination_count[q] -= 1
                if domination_count[q] == 0:
                    nxt.append(q)
        fronts.append(sorted(nxt))
        i += 1
    fronts.pop()
    return fronts


def crowding_distance(front_goals: Sequence[Sequence[float]]) -> list[float]:
    """NSGA-II density estimator; boundaries per objective get +inf."""
    n = len(front_goals)
    if n == 0:
        raise ValueError("empty front")
    dist = [0.0] * n
    if n <= 2:
        return [float("inf")] * n
    for m in range(len(front_goals[0])):
        order = sorted(range(n), key=lambda i: front_goals[i][m])
        dist[order[0]] = dist[order[-1]] = float("inf")
        span = front_goals[order[-1]][m] - front_goals[order[0]][m]
        if span <= 0.0:
            continue
        for j in range(1, n - 1):
            gap = front_goals[order[j + 1]][m] - front_goals[order[j - 1]][m]
            dist[order[j]] += gap / span
    return dist


def vary(
    parents: Sequence[SegmentationParams], cfg: GAConfig, rng: SplitMix64
) -> list[SegmentationParams]:
    """Uniform crossover over consecutive pairs, then per-gene mutation.

    Gene operators: scale += N(0, scale_mut_sigma), sigma += N(0,
    sigma_mut_sigma), min_size drawn uniformly from min_size_mut_range.
    Results are clamped and quantized by SegmentationParams.
    """
    genes = [[p.scale, p.sigma, float(p.min_size)] for p in parents]
    for a in range(0, len(genes) - 1, 2):
        b = a + 1
        if rng.next_float() < cfg.cxpb:
            for g in range(3):
                if rng.next_float() < cfg.indpb_crossover:
                    genes[a][g], genes[b][g] = genes[b][g], genes[a][g]
    for ind in genes:
        if rng.next_float() < cfg.mutpb:
            if rng.next_float() < cfg.indpb_mutation:
                ind[0] += rng.gauss(0.0, cfg.scale_mut_sigma)
            if rng.next_float() < cfg.indpb_mutation:
                ind[1] += rng.gauss(0.0, cfg.sigma_mut_sigma)
            if rng.next_float() < cfg.indpb_mutation:
                ind[2] = float(rng.uniform_int(*cfg.min_size_mut_range))
    return [SegmentationParams(g[0], g[1], int(round(g[2]))) for g in genes]


class EvaluationCache:
    """Genome-keyed memo of evaluations; evaluations counts cache misses."""

    def __init__(self):
        self._store: dict[tuple[int, int, int], EvaluatedIndividual] = {}
        self.archive: list[GoalVector] = []

    @property
    def evaluations(self) -> int:
        return len(self._store)

    def get(self, key: tuple[int, int, int]) -> EvaluatedIndividual | None:
        return self._store.get(key)

    def put(self, key: tuple[int, int, int], ind: EvaluatedIndividual) -> EvaluatedIndividual:
        winner = self._store.setdefault(key, ind)  # atomic insert-if-absent
        if winner is ind:
            self.archive.append(ind.goals)
        return winner


def evaluate(
    genome: SegmentationParams,
    image: Image,
    clf: Classifier,
    target_class: int,
    lime_cfg: LimeConfig,
    run_seed: int,
    cache: EvaluationCache,
) -> EvaluatedIndividual:
    """Segment, explain, and score one genome (memoized)."""
    key = genome.key()
    cached = cache.get(key)
    if cached is not None:
        return cached
    segmap = felzenszwalb(image, genome)
    try:
        expl = explain(image, segmap, clf, target_class, lime_cfg, run_seed)
        ind = EvaluatedIndividual(genome, goals(expl), expl)
    except DegenerateSegmentation:
        ind = EvaluatedIndividual(genome, PENALTY_GOALS, None)
    return cache.put(key, ind)


def hypervolume3(
    points: Iterable[Sequence[float]], reference: Sequence[float] = (1.0, 1.0, 1.0)
) -> float:
    """Lebesgue measure of the union of boxes [p, reference] (dimension sweep).

    Points are swept in ascending third coordinate; each slab contributes the
    2-D staircase area of the points seen so far times the slab height.
    """
    rx, ry, rz = (float(r) for r in reference)
    pts = []
    for p in points:
        x, y, z = (float(v) for v in p)
        if not (0.0 <= x <= rx and 0.0 <= y <= ry and 0.0 <= z <= rz):
            raise ValueError(f"point {(x, y, z)} outside [0, reference] box")
        pts.append((z, x, y))
    if not pts:
        return 0.0
    pts.sort()
    volume = 0.0
    for i, (z, _, _) in enumerate(pts):
        z_next = pts[i + 1][0] if i + 1 < len(pts) else rz
        if z_next > z:
            volume += _staircase_area([(x, y) for (_, x, y) in pts[: i + 1]], rx, ry) * (
                z_next - z
            )
    return volume


def _staircase_area(points: list[tuple[float, float]], rx: float, ry: float) -> float:
    area = 0.0
    min_y = ry
    for x, y in sorted(points):
        if y < min_y:
            area += (rx - x) * (min_y - y)
            min_y = y
    return area


@dataclass
class EarlyStopState:
    """Counts generations whose Pareto front matches any previously seen front."""

    patience: int
    seen: set[frozenset] = field(default_factory=set)
    counter: int = 0

    def check(self, front_goals: Iterable[GoalVector]) -> bool:
        """Record one generation's front; True means stop now."""
        key = frozenset(
            tuple(round(g, FRONT_QUANT_DECIMALS) for g in gv) for gv in front_goals
        )
        if key in self.seen:
            self.counter += 1
            return self.counter >= self.patience
        self.seen.add(key)
        self.counter = 0
        return False


@dataclass(frozen=True)
class FrontMember:
    genome: SegmentationParams
    goals: GoalVector

    def to_json(self) -> dict:
        return {
            "scale": self.genome.scale,
            "sigma": self.genome.sigma,
            "min_size": self.genome.min_size,
            "goals": list(self.goals),
        }


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    front: tuple[FrontMember, ...]  # unique genomes, canonical order
    hypervolume: float  # of this generation's population front
    archive_hypervolume: float  # of every goal vector evaluated so far
    evaluations: int  # cumulative distinct evaluations

    def to_json(self) -> dict:
        return {
            "generation": self.generation,
            "front": [m.to_json() for m in self.front],
            "front_size": len(self.front),
            "hypervolume": self.hypervolume,
            "archive_hypervolume": self.archive_hypervolume,
            "evaluations": self.evaluations,
        }


@dataclass(eq=False)
class RunRecord:
    """Everything needed to replay or analyze one evolution run."""

    seed: int
    config: dict
    generations: list[GenerationRecord]
    termination: str  # "early-stop" | "max-generations"
    total_evaluations: int
    final_front: tuple[FrontMember, ...]
    final_front_grids: tuple[FloatGrid | None, ...]  # None for degenerate members
    averaged_grid: FloatGrid

    def to_json_dict(
        self,
        averaged_grid_path: str = "averaged.evexmap",
        front_grid_paths: Sequence[str | None] | None = None,
    ) -> dict:
        members = [m.to_json() for m in self.final_front]
        if front_grid_paths is not None:
            for member, path in zip(members, front_grid_paths):
                member["grid_path"] = path
        return {
            "seed": self.seed,
            "config": self.config,
            "sd_convention": "population",
            "termination": self.termination,
            "total_evaluations": self.total_evaluations,
            "generations": [g.to_json() for g in self.generations],
            "final_front": members,
            "averaged_grid_path": averaged_grid_path,
        }


def _rank_and_crowd(pop_goals: list[GoalVector]) -> tuple[list[int], list[float]]:
    fronts = non_dominated_sort(pop_goals)
    rank = [0] * len(pop_goals)
    crowd = [0.0] * len(pop_goals)
    for r, front in enumerate(fronts):
        cds = crowding_distance([pop_goals[i] for i in front])
        for i, cd in zip(front, cds):
            rank[i] = r
            crowd[i] = cd
    return rank, crowd


def _tournament(rng: SplitMix64, rank: list[int], crowd: list[float]) -> int:
    i = rng.uniform_int(0, len(rank) - 1)
    j = rng.uniform_int(0, len(rank) - 1)
    if rank[j] < rank[i] or (rank[j] == rank[i] and crowd[j] > crowd[i]):
        return j
    return i  # ties keep the first-drawn candidate


def _environmental_select(
    pop: list[EvaluatedIndividual], mu: int
) -> list[EvaluatedIndividual]:
    fronts = non_dominated_sort([ind.goals for ind in pop])
    selected: list[EvaluatedIndividual] = []
    for front in fronts:
        if len(selected) + len(front) <= mu:
            selected.extend(pop[i] for i in front)
        else:
            cds = crowding_distance([pop[i].goals for i in front])
            order = sorted(range(len(front)), key=lambda j: (-cds[j], front[j]))
            selected.extend(pop[front[j]] for j in order[: mu - len(selected)])
            break
    return selected


def _unique_front(pop: list[EvaluatedIndividual]) -> tuple[FrontMember, ...]:
    front_idx = non_dominated_sort([ind.goals for ind in pop])[0]
    members: dict[tuple[int, int, int], FrontMember] = {}
    for i in front_idx:
        ind = pop[i]
        members.setdefault(ind.genome.key(), FrontMember(ind.genome, ind.goals))
    return tuple(members[k] for k in sorted(members))


def random_genome(rng: SplitMix64) -> SegmentationParams:
    return SegmentationParams(
        scale=rng.uniform(*SCALE_RANGE),
        sigma=rng.uniform(*SIGMA_RANGE),
        min_size=rng.uniform_int(*MIN_SIZE_RANGE),
    )


def image_digest(image: Image) -> str:
    return hashlib.sha256(image.pixels.tobytes()).hexdigest()


def evolve(
    image: Image,
    clf: Classifier,
    target_class: int,
    ga_cfg: GAConfig,
    lime_cfg: LimeConfig,
) -> RunRecord:
    """Run the full evolution; deterministic given its arguments."""
    rng = SplitMix64(ga_cfg.seed)
    cache = EvaluationCache()
    mu = ga_cfg.population_size

    def eval_genome(genome: SegmentationParams) -> EvaluatedIndividual:
        return evaluate(genome, image, clf, target_class, lime_cfg, ga_cfg.seed, cache)

    pop = [eval_genome(random_genome(rng)) for _ in range(mu)]

    generations: list[GenerationRecord] = []
    early = EarlyStopState(ga_cfg.patience)
    termination = "max-generations"

    def record(gen_index: int) -> tuple[FrontMember, ...]:
        front = _unique_front(pop)
        front_goals = {m.goals for m in front}
        generations.append(
            GenerationRecord(
                generation=gen_index,
                front=front,
                hypervolume=hypervolume3(front_goals),
                archive_hypervolume=hypervolume3(cache.archive),
                evaluations=cache.evaluations,
            )
        )
        return front

    front = record(0)
    early.check(m.goals for m in front)  # stores the first front; never stops
    for gen in range(1, ga_cfg.max_generations + 1):
        rank, crowd = _rank_and_crowd([ind.goals for ind in pop])
        parent_genomes = [pop[_tournament(rng, rank, crowd)].genome for _ in range(mu)]
        offspring = [eval_genome(g) for g in vary(parent_genomes, ga_cfg, rng)]
        pop = _environmental_select(pop + offspring, mu)
        front = record(gen)
        if early.check(m.goals for m in front):
            termination = "early-stop"
            break

    final_front = generations[-1].front
    front_grids: list[FloatGrid | None] = []
    for member in final_front:
        cached = cache.get(member.genome.key())
        if cached is not None and cached.explanation is not None:
            front_grids.append(cached.explanation.pixel_grid)
        else:
            front_grids.append(None)
    contributing = [g for g in front_grids if g is not None]
    if contributing:
        averaged = mean_pixel_grid(contributing)
    else:
        averaged = FloatGrid(np.zeros((image.height, image.width), dtype=np.float64))

    return RunRecord(
        seed=ga_cfg.seed,
        config={
            "image": {
                "width": image.width,
                "height": image.height,
                "sha256": image_digest(image),
            },
            "classifier": clf.spec.to_json(),
            "target_class": target_class,
            "ga": ga_cfg.to_json(),
            "lime": lime_cfg.to_json(),
        },
        generations=generations,
        termination=termination,
        total_evaluations=cache.evaluations,
        final_front=final_front,
        final_front_grids=tuple(front_grids),
        averaged_grid=averaged,
    )
