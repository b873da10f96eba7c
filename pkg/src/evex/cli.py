"""Command-line front end: run evolutions and regenerate analysis artifacts.

Subcommands: init, segment, explain, evolve, rsd, hv-curve. All randomness
flows from the config's seeds; outputs are written atomically (temp file then
rename) so reruns with identical inputs are byte-identical. Exit codes:
0 success, 1 usage/validation, 2 classifier failure, 3 I/O.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from . import analysis, imaging, lime, moo, segmentation
from .classifier import Classifier, ClassifierError, ClassifierSpec, builtin_blob, external_handshake
from .imaging import FloatGrid, PngError
from .lime import DegenerateSegmentation, LimeConfig
from .moo import GAConfig, RunRecord
from .segmentation import (
    MIN_SIZE_RANGE,
    SCALE_RANGE,
    SIGMA_RANGE,
    SegmentationParams,
)

log = logging.getLogger("evex")

DEFAULT_SEEDS = (42, 43, 44, 45)
DEFAULT_THRESHOLDS = (0.1, 0.3, 0.5, 0.8)


class UsageError(Exception):
    """Bad flags or config; maps to exit code 1."""


@dataclass(frozen=True)
class RunConfig:
    image: str
    classifier: ClassifierSpec
    target_class: int
    ga: GAConfig
    lime: LimeConfig
    seeds: tuple[int, ...]
    output_dir: str

    def __post_init__(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise UsageError("seeds must be distinct")
        if not self.seeds:
            raise UsageError("at least one seed required")
        if not 0 <= self.target_class < self.classifier.class_count:
            raise UsageError(
                f"target_class {self.target_class} out of range for "
                f"{self.classifier.class_count} classes"
            )

    def to_json(self) -> dict:
        return {
            "image": self.image,
            "classifier": self.classifier.to_json(),
            "target_class": self.target_class,
            "ga": self.ga.to_json(),
            "lime": self.lime.to_json(),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    @staticmethod
    def from_json(data: dict) -> "RunConfig":
        return RunConfig(
            image=str(data.get("image", "input.png")),
            classifier=ClassifierSpec.from_json(data.get("classifier", builtin_blob().to_json())),
            target_class=int(data.get("target_class", 1)),
            ga=GAConfig.from_json(data.get("ga", {})),
            lime=LimeConfig.from_json(data.get("lime", {})),
            seeds=tuple(int(s) for s in data.get("seeds", DEFAULT_SEEDS)),
            output_dir=str(data.get("output_dir", "evex-out")),
        )


def default_config() -> RunConfig:
    return RunConfig(
        image="input.png",
        classifier=builtin_blob(),
        target_class=1,
        ga=GAConfig(),
        lime=LimeConfig(),
        seeds=DEFAULT_SEEDS,
        output_dir="evex-out",
    )


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _atomic_write(path: Path, writer) -> None:
    """Run ``writer(tmp_path)`` then rename the temp file into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _json_dumps(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return default_config()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: invalid JSON ({exc})") from exc
    try:
        return RunConfig.from_json(data)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"config {path}: {exc}") from exc


def _parse_params(args) -> SegmentationParams:
    lo, hi = SCALE_RANGE
    if not lo <= args.scale <= hi:
        raise UsageError(f"--scale must be in [{lo:g}, {hi:g}]")
    lo, hi = SIGMA_RANGE
    if not lo <= args.sigma <= hi:
        raise UsageError(f"--sigma must be in [{lo:g}, {hi:g}]")
    lo, hi = MIN_SIZE_RANGE
    if not lo <= args.min_size <= hi:
        raise UsageError(f"--min-size must be in [{lo}, {hi}]")
    return SegmentationParams(args.scale, args.sigma, args.min_size)


def cmd_init(args) -> int:
    path = Path(args.config or "evex-config.json")
    _atomic_write_text(path, _json_dumps(default_config().to_json()))
    log.info("wrote %s", path)
    return 0


def cmd_segment(args) -> int:
    params = _parse_params(args)
    image = imaging.load_png(args.image)
    segmap = segmentation.felzenszwalb(image, params)
    out = Path(args.out)
    _atomic_write(out / "overlay.png", lambda p: imaging.save_png(
        imaging.overlay_boundaries(image, segmap), p
    ))
    _atomic_write(out / "segmap.evexseg", lambda p: segmentation.save_segmap(segmap, p))
    log.info("%d segments -> %s", segmap.segment_count, out)
    return 0


def cmd_explain(args) -> int:
    params = _parse_params(args)
    cfg = _load_config(args.config)
    image = imaging.load_png(args.image)
    seed = args.seed[0] if args.seed else cfg.ga.seed
    target = args.target_class if args.target_class is not None else cfg.target_class
    segmap = segmentation.felzenszwalb(image, params)
    out = Path(args.out)
    with Classifier(cfg.classifier) as clf:
        expl = lime.explain(image, segmap, clf, target, cfg.lime, seed)
    gv = lime.goals(expl)
    _atomic_write(out / "pixel-grid.evexmap", lambda p: imaging.save_float_grid(expl.pixel_grid, p))
    _atomic_write(out / "heatmap.png", lambda p: imaging.save_png(
        imaging.render_heatmap(expl.pixel_grid, "fixed"), p
    ))
    doc = lime.explanation_to_json(
        expl,
        {"scale": params.scale, "sigma": params.sigma, "min_size": params.min_size},
        seed,
        gv,
        "pixel-grid.evexmap",
    )
    _atomic_write_text(out / "explanation.json", _json_dumps(doc))
    log.info("score %.4f, goals %s -> %s", expl.score, list(gv), out)
    return 0


def write_run_artifacts(record: RunRecord, run_dir: Path) -> None:
    """Serialize one RunRecord: JSON record, EVEXMAP grids, renders, HV CSV."""
    front_paths: list[str | None] = []
    for i, grid in enumerate(record.final_front_grids):
        if grid is None:
            front_paths.append(None)
            continue
        rel = f"front/front-{i:03d}.evexmap"
        _atomic_write(run_dir / rel, (lambda g: lambda p: imaging.save_float_grid(g, p))(grid))
        front_paths.append(rel)
    _atomic_write(run_dir / "averaged.evexmap",
                  lambda p: imaging.save_float_grid(record.averaged_grid, p))
    _atomic_write(run_dir / "heatmap-fixed.png", lambda p: imaging.save_png(
        imaging.render_heatmap(record.averaged_grid, "fixed"), p
    ))
    _atomic_write(run_dir / "heatmap-auto.png", lambda p: imaging.save_png(
        imaging.render_heatmap(record.averaged_grid, "auto"), p
    ))
    rows = ["generation,hypervolume,front_size,evaluations"]
    for gen in record.generations:
        rows.append(f"{gen.generation},{gen.hypervolume!r},{len(gen.front)},{gen.evaluations}")
    _atomic_write_text(run_dir / "hv.csv", "\n".join(rows) + "\n")
    _atomic_write_text(
        run_dir / "run.json",
        _json_dumps(record.to_json_dict("averaged.evexmap", front_paths)),
    )


def run_one_seed(cfg: RunConfig, seed: int, out_dir: Path) -> Path:
    """Evolve one seed and write its artifacts; returns the run directory."""
    image = imaging.load_png(cfg.image)
    ga = replace(cfg.ga, seed=seed)
    with Classifier(cfg.classifier) as clf:
        record = moo.evolve(image, clf, cfg.target_class, ga, cfg.lime)
    record.config["image"]["path"] = cfg.image
    run_dir = out_dir / f"seed-{seed}"
    write_run_artifacts(record, run_dir)
    return run_dir


def _run_seed_job(cfg_json: dict, seed: int, out_dir: str) -> str:
    # process-pool entry point; reconstructs the config in the worker
    cfg = RunConfig.from_json(cfg_json)
    return str(run_one_seed(cfg, seed, Path(out_dir)))


def cmd_evolve(args) -> int:
    cfg = _load_config(args.config)
    if args.seed:
        cfg = replace(cfg, seeds=tuple(args.seed))
    if args.image:
        cfg = replace(cfg, image=args.image)
    out_dir = Path(args.out) if args.out else Path(cfg.output_dir)
    if not Path(cfg.image).exists():
        raise UsageError(f"input image {cfg.image} not found")
    if cfg.classifier.kind == "external":
        external_handshake(cfg.classifier)  # fail fast before any evolution work
    jobs = max(1, args.jobs)
    if jobs == 1 or len(cfg.seeds) == 1:
        for seed in cfg.seeds:
            run_dir = run_one_seed(cfg, seed, out_dir)
            log.info("seed %d done -> %s", seed, run_dir)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(_run_seed_job, cfg.to_json(), seed, str(out_dir)): seed
                for seed in cfg.seeds
            }
            for fut in concurrent.futures.as_completed(futures):
                log.info("seed %d done -> %s", futures[fut], fut.result())
    return 0


def _load_record(path: Path) -> tuple[dict, FloatGrid]:
    data = json.loads(path.read_text())
    if "averaged_grid_path" not in data:
        raise UsageError(f"{path}: not a run record (no averaged_grid_path)")
    grid_path = path.parent / data["averaged_grid_path"]
    return data, imaging.load_float_grid(grid_path)


def cmd_rsd(args) -> int:
    if len(args.records) < 2:
        raise UsageError("need at least 2 run records")
    thresholds = _parse_thresholds(args.thresholds)
    grids, labels = [], []
    for rec_path in args.records:
        data, grid = _load_record(Path(rec_path))
        grids.append(grid)
        labels.append(str(data.get("seed", rec_path)))
    try:
        stack = analysis.HeatMapStack(tuple(grids), tuple(labels))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    reports = analysis.threshold_sweep(stack, thresholds)
    sd = analysis.pixel_sd(stack)
    _atomic_write(out / "sd.evexmap", lambda p: imaging.save_float_grid(sd, p))
    sd_cap = float(sd.values.max()) or 1.0
    _atomic_write(out / "sd.png", lambda p: imaging.save_png(
        imaging.render_grayscale(sd, sd_cap), p
    ))
    mean = reports[0].mean_grid
    _atomic_write(out / "mean.evexmap", lambda p: imaging.save_float_grid(mean, p))
    _atomic_write(out / "mean.png", lambda p: imaging.save_png(
        imaging.render_heatmap(mean, "fixed"), p
    ))
    summary = []
    for report in reports:
        name = f"rsd-{report.threshold:g}"
        _atomic_write(out / f"{name}.evexmap",
                      (lambda r: lambda p: imaging.save_float_grid(r.rsd_grid, p))(report))
        _atomic_write(out / f"{name}.png", (lambda r: lambda p: imaging.save_png(
            imaging.render_grayscale(r.rsd_grid, 1.0, r.excluded), p
        ))(report))
        summary.append({
            "threshold": report.threshold,
            "max_rsd": report.max_rsd,
            "excluded_fraction": report.excluded_fraction,
            "rsd_grid_path": f"{name}.evexmap",
        })
    rows = ["threshold,max_rsd,excluded_fraction"]
    for report in reports:
        rows.append(f"{report.threshold!r},{report.max_rsd!r},{report.excluded_fraction!r}")
    _atomic_write_text(out / "sweep.csv", "\n".join(rows) + "\n")
    _atomic_write_text(out / "report.json", _json_dumps({
        "seeds": labels,
        "sd_grid_path": "sd.evexmap",
        "mean_grid_path": "mean.evexmap",
        "thresholds": summary,
    }))
    log.info("rsd artifacts -> %s", out)
    return 0


def cmd_hv_curve(args) -> int:
    data = json.loads(Path(args.record).read_text())
    gens = data.get("generations", [])
    if not gens:
        raise UsageError(f"{args.record}: record has no generations")
    rows = ["generation,hypervolume,archive_hypervolume,front_size,evaluations"]
    try:
        for gen in gens:
            rows.append(
                f"{gen['generation']},{gen['hypervolume']!r},{gen['archive_hypervolume']!r},"
                f"{gen['front_size']},{gen['evaluations']}"
            )
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{args.record}: malformed generation entry ({exc})") from exc
    out = Path(args.out)
    _atomic_write_text(out / "hv-curve.csv", "\n".join(rows) + "\n")
    log.info("hv curve -> %s", out / "hv-curve.csv")
    return 0


def _parse_thresholds(text: str | None) -> tuple[float, ...]:
    if not text:
        return DEFAULT_THRESHOLDS
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise UsageError(f"bad threshold list {text!r}") from exc
    if any(v < 0 for v in values):
        raise UsageError("thresholds must be >= 0")
    if any(b < a for a, b in zip(values, values[1:])):
        raise UsageError("thresholds must be ascending")
    return values


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with code 2
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evex", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_out=True):
        p.add_argument("--config", help="JSON config file (see `evex init`)")
        p.add_argument("--seed", type=int, action="append", default=[],
                       help="seed (repeatable; overrides config seeds)")
        p.add_argument("--jobs", type=int, default=1, help="max parallel runs")
        if needs_out:
            p.add_argument("--out", default="evex-out", help="output directory")

    p = sub.add_parser("init", help="write a config file with full defaults")
    p.add_argument("--config", help="where to write the config (default evex-config.json)")
    p.set_defaults(func=cmd_init)

    def add_params(p):
        p.add_argument("--scale", type=float, required=True)
        p.add_argument("--sigma", type=float, required=True)
        p.add_argument("--min-size", type=int, required=True)

    p = sub.add_parser("segment", help="segment an image and render boundaries")
    p.add_argument("--image", required=True)
    add_params(p)
    add_common(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("explain", help="one explanation for fixed parameters")
    p.add_argument("--image", required=True)
    add_params(p)
    p.add_argument("--target-class", type=int, default=None)
    add_common(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evolve", help="evolve explanations for each seed")
    p.add_argument("--image", help="override the config's input image")
    add_common(p)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("rsd", help="cross-seed SD/RSD analysis of run records")
    p.add_argument("records", nargs="+", help="run.json files from `evex evolve`")
    p.add_argument("--thresholds", help="comma-separated ascending weight thresholds")
    p.add_argument("--out", default="evex-out", help="output directory")
    p.set_defaults(func=cmd_rsd)

    p = sub.add_parser("hv-curve", help="per-generation hypervolume CSV from a record")
    p.add_argument("record", help="run.json file")
    p.add_argument("--out", default="evex-out", help="output directory")
    p.set_defaults(func=cmd_hv_curve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("EVEX_LOG", "INFO").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        level = "INFO"
    logging.basicConfig(
        stream=sys.stderr,
        level=level,
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"evex: {exc}", file=sys.stderr)
        return 1
    except DegenerateSegmentation as exc:
        print(f"evex: segmentation produced {exc}; nothing to explain", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"evex: {exc}", file=sys.stderr)
        return 1
    except ClassifierError as exc:
        print(f"evex: classifier failure: {exc}", file=sys.stderr)
        return 2
    except (PngError, OSError) as exc:
        print(f"evex: I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
