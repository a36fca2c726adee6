"""Batch front-end: generate occupancy files, inspect them, score them.

    ldo generate --manifest M --config C --out O [--jobs N]
    ldo stats    --occ O [--bin-size 0.5]
    ldo metrics  --pred P --gt G --classes M

Exit codes: 0 success, 1 usage error, 2 input validation error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IoFailure, LdoError
from .heights import (
    HeightIntervalSet,
    default_interval_set,
    height_histogram,
    histogram_edges,
    slices_in_interval,
)
from .ingest import load_scene
from .metrics import evaluate
from .voxelizer import (
    EMPTY,
    GridSpec,
    WEIGHT_BASE_PLUS_FACTOR,
    WEIGHT_FACTOR_ONLY,
    build_ldo,
    load_occ,
    save_occ,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3

_DEFAULT_GRID = {
    "min": [-51.2, -51.2, -5.0],
    "max": [51.2, 51.2, 3.0],
    "voxel_size": [0.8, 0.8, 0.8],
}


@dataclass(frozen=True)
class PipelineConfig:
    """Everything cmd_generate needs; defaults reproduce the stock setup."""

    grid: GridSpec = field(
        default_factory=lambda: GridSpec(
            np.array(_DEFAULT_GRID["min"]),
            np.array(_DEFAULT_GRID["max"]),
            np.array(_DEFAULT_GRID["voxel_size"]),
        )
    )
    intervals: HeightIntervalSet = field(default_factory=default_interval_set)
    margin: float = 0.0
    beta: float = 0.9
    class_count: int = 17
    weight_mode: str = WEIGHT_BASE_PLUS_FACTOR
    background_class: int = 1

    def __post_init__(self) -> None:
        if self.margin < 0:
            raise ConfigError(f"margin must be non-negative, got {self.margin}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.class_count < 2:
            raise ConfigError(f"class_count must be >= 2, got {self.class_count}")
        if not (1 <= self.background_class < self.class_count):
            raise ConfigError(
                f"background_class {self.background_class} outside [1, {self.class_count})"
            )
        if self.weight_mode not in (WEIGHT_BASE_PLUS_FACTOR, WEIGHT_FACTOR_ONLY):
            raise ConfigError(f"unknown weight_mode {self.weight_mode!r}")


def load_config(path) -> PipelineConfig:
    """Parse a JSON config file; missing keys fall back to the defaults."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(doc, where=str(path))


def config_from_dict(doc: dict, where: str = "config") -> PipelineConfig:
    known = {"grid", "intervals", "margin", "beta", "class_count", "weight_mode",
             "background_class"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")

    grid_doc = dict(_DEFAULT_GRID)
    grid_doc.update(doc.get("grid", {}))
    extra = set(grid_doc) - set(_DEFAULT_GRID)
    if extra:
        raise ConfigError(f"{where}: unknown grid keys {sorted(extra)}")
    grid = GridSpec(
        np.asarray(grid_doc["min"], dtype=np.float64),
        np.asarray(grid_doc["max"], dtype=np.float64),
        np.asarray(grid_doc["voxel_size"], dtype=np.float64),
    )

    if "intervals" in doc:
        entries = doc["intervals"]
        if not isinstance(entries, list) or not entries:
            raise ConfigError(f"{where}: intervals must be a non-empty array")
        triples = []
        for i, entry in enumerate(entries):
            if not isinstance(entry, list) or len(entry) != 3:
                raise ConfigError(f"{where}: intervals[{i}] must be [z_min, z_max, layer]")
            triples.append(entry)
        intervals = HeightIntervalSet(
            intervals=tuple((float(a), float(b)) for a, b, _ in triples),
            layers=tuple(str(layer) for _, _, layer in triples),
        )
    else:
        intervals = default_interval_set()

    return PipelineConfig(
        grid=grid,
        intervals=intervals,
        margin=float(doc.get("margin", 0.0)),
        beta=float(doc.get("beta", 0.9)),
        class_count=int(doc.get("class_count", 17)),
        weight_mode=str(doc.get("weight_mode", WEIGHT_BASE_PLUS_FACTOR)),
        background_class=int(doc.get("background_class", 1)),
    )


def cmd_generate(manifest: str, config: str | None, out: str, jobs: int = 1) -> int:
    cfg = load_config(config) if config is not None else PipelineConfig()
    scene = load_scene(manifest)
    if scene.class_count > cfg.class_count:
        raise ConfigError(
            f"scene declares {scene.class_count} classes but config allows {cfg.class_count}"
        )
    grid = build_ldo(
        scene,
        cfg.grid,
        margin=cfg.margin,
        weight_mode=cfg.weight_mode,
        background_class=cfg.background_class,
        jobs=jobs,
    )
    save_occ(out, grid)
    return EXIT_OK


def render_stats(occ_path: str, bin_size: float) -> str:
    grid = load_occ(occ_path)
    labels = grid.labels.reshape(-1)
    lines = [f"occupied_voxels: {grid.occupied_count}"]
    counts = np.bincount(labels)
    for cls in np.flatnonzero(counts):
        if cls != EMPTY:
            lines.append(f"class {cls}: {counts[cls]}")
    lines.append(f"z_histogram bin_size={bin_size:g}")
    hist = height_histogram(grid, bin_size)
    edges = histogram_edges(grid.spec, bin_size)
    for i, n in enumerate(hist):
        lines.append(f"[{edges[i]:g},{edges[i + 1]:g}): {n}")

    occupied_per_slice = np.count_nonzero(
        grid.labels.reshape(-1, grid.spec.dims[2]) != EMPTY, axis=0
    )
    total = grid.occupied_count
    for layer in ("BL", "UL", "EFL"):
        covered = np.zeros(grid.spec.dims[2], dtype=bool)
        for interval in default_interval_set().for_layer(layer):
            covered[slices_in_interval(grid.spec, interval)] = True
        n = int(occupied_per_slice[covered].sum())
        frac = n / total if total else 0.0
        lines.append(f"layer {layer}: {n} ({frac:.4f})")
    return "\n".join(lines)


def cmd_stats(occ: str, bin_size: float = 0.5) -> int:
    print(render_stats(occ, bin_size))
    return EXIT_OK


def cmd_metrics(pred: str, gt: str, classes: int) -> int:
    pred_grid = load_occ(pred)
    gt_grid = load_occ(gt)
    report = evaluate(pred_grid.labels, gt_grid.labels, classes)
    print(report.render())
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract wants 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ldo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="build an occupancy file from a scene manifest")
    gen.add_argument("--manifest", required=True)
    gen.add_argument("--config", default=None, help="JSON config; defaults used if omitted")
    gen.add_argument("--out", required=True)
    gen.add_argument("--jobs", type=int, default=1, help="frame-level parallelism")

    stats = sub.add_parser("stats", help="summarize an occupancy file")
    stats.add_argument("--occ", required=True)
    stats.add_argument("--bin-size", type=float, default=0.5)

    met = sub.add_parser("metrics", help="score a predicted occupancy file against a ground truth")
    met.add_argument("--pred", required=True)
    met.add_argument("--gt", required=True)
    met.add_argument("--classes", type=int, required=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            if args.jobs < 1:
                print("ldo: error: --jobs must be >= 1", file=sys.stderr)
                return EXIT_USAGE
            return cmd_generate(args.manifest, args.config, args.out, args.jobs)
        if args.command == "stats":
            if args.bin_size <= 0:
                print("ldo: error: --bin-size must be positive", file=sys.stderr)
                return EXIT_USAGE
            return cmd_stats(args.occ, args.bin_size)
        if args.command == "metrics":
            return cmd_metrics(args.pred, args.gt, args.classes)
        raise AssertionError(f"unhandled command {args.command!r}")
    except IoFailure as exc:
        print(f"ldo: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except LdoError as exc:
        print(f"ldo: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
