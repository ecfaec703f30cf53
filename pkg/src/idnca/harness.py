"""Two-seed proximity experiments: enumeration, execution, metrics, CSVs.

Each run grows a pair of organisms for a fixed number of steps and scores
the final scene against an idealised composite image: RGBA RMSE, bounding
box displacement and area ratio of living cells, a movement flag, and a
full per-step error trace.

Every run draws its randomness from a generator seeded by (master seed,
config index), and rows are sorted by config index before writing, so any
degree of worker parallelism produces byte-identical CSVs.
"""

from __future__ import annotations

import csv
import math
import multiprocessing
import os
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .grid import SeedSpec, alive_mask, bounding_box, composite_ideal
from .io import save_grid_png
from .model import ModelWeights, grow

SEED_TIMES = (0, 10, 50, 100, 150, 200, 250)
LATERAL_DISTANCES = (6, 9, 12, 15, 18)
VERTICAL_OFFSETS = (0, 5, 10, 15)
TOTAL_STEPS = 1000

# Default scene: the pair sits around the middle of a 96x64 grid so every
# enumerated placement stays at least 12 cells from any edge.
DEFAULT_GRID = (96, 64)
DEFAULT_ANCHOR = (39, 32)


@dataclass(frozen=True)
class ExperimentConfig:
    """One two-seed run: who grows where, when, and with which identity."""

    variant: str
    seed_time_delta: int
    lateral_distance: int
    offset_a: int
    offset_b: int
    seed_identity_a: float = 1.0
    seed_identity_b: float = 1.0
    total_steps: int = TOTAL_STEPS
    index: int = 0


@dataclass
class MetricRecord:
    """Outcome of one run; bbox fields are NaN when the organisms died."""

    config: ExperimentConfig
    rmse: float
    bbox_dx: float
    bbox_dy: float
    area_ratio: float
    moved: bool
    died: bool
    error_trace: np.ndarray


@dataclass
class RunSettings:
    """Scene geometry, target image and heuristics shared by all runs."""

    target: np.ndarray
    master_seed: int = 0
    grid_width: int = DEFAULT_GRID[0]
    grid_height: int = DEFAULT_GRID[1]
    anchor_x: int = DEFAULT_ANCHOR[0]
    anchor_y: int = DEFAULT_ANCHOR[1]
    movement_min_shift: float = 3.0
    movement_area_low: float = 0.6
    movement_area_high: float = 1.7
    frame_steps: tuple = ()
    frames_dir: str | None = None


def enumerate_configs(variant: str, seed_identity_a: float = 1.0,
                      seed_identity_b: float = 1.0, index_base: int = 0,
                      total_steps: int = TOTAL_STEPS) -> list[ExperimentConfig]:
    """The full 7 x 5 x 4 x 4 = 560 parameter grid, in a fixed order."""
    out = []
    index = index_base
    for seed_time in SEED_TIMES:
        for distance in LATERAL_DISTANCES:
            for offset_a in VERTICAL_OFFSETS:
                for offset_b in VERTICAL_OFFSETS:
                    out.append(ExperimentConfig(
                        variant=variant, seed_time_delta=seed_time,
                        lateral_distance=distance, offset_a=offset_a,
                        offset_b=offset_b, seed_identity_a=seed_identity_a,
                        seed_identity_b=seed_identity_b,
                        total_steps=total_steps, index=index))
                    index += 1
    return out


def experiment_configs(variants=("A", "B", "C"), seed_identity_a: float = 1.0,
                       index_base: int = 0,
                       total_steps: int = TOTAL_STEPS) -> list[ExperimentConfig]:
    """Main experiment: the 560-grid for each variant, 1680 in total."""
    out = []
    index = index_base
    for variant in variants:
        block = enumerate_configs(variant, seed_identity_a, index_base=index,
                                  total_steps=total_steps)
        out.extend(block)
        index = block[-1].index + 1
    return out


def sweep_seed_configs(seed_values=(0.0, 0.5), variants=("A", "B", "C"),
                       index_base: int = 1680,
                       total_steps: int = TOTAL_STEPS) -> list[ExperimentConfig]:
    """Seed-identity sweep: rerun the full grid with other first-seed values."""
    out = []
    index = index_base
    for value in seed_values:
        for variant in variants:
            block = enumerate_configs(variant, seed_identity_a=value,
                                      index_base=index, total_steps=total_steps)
            out.extend(block)
            index = block[-1].index + 1
    return out


def spot_grid_configs(index_base: int = 10000,
                      total_steps: int = TOTAL_STEPS) -> list[ExperimentConfig]:
    """Nine variant-C runs at lateral distance 6, relative offset 5, with
    every (seed_a, seed_b) identity combination from {0.0, 0.5, 1.0}."""
    values = (0.0, 0.5, 1.0)
    out = []
    index = index_base
    for id_a in values:
        for id_b in values:
            out.append(ExperimentConfig(
                variant="C", seed_time_delta=0, lateral_distance=6,
                offset_a=0, offset_b=5, seed_identity_a=id_a,
                seed_identity_b=id_b, total_steps=total_steps, index=index))
            index += 1
    return out


# ---------------------------------------------------------------------------
# metrics


def rmse_rgba(grid: np.ndarray, ideal: np.ndarray) -> float:
    """Root mean squared RGBA difference over every cell."""
    rgba = grid[..., :4]
    if rgba.shape != ideal.shape:
        raise ValueError(f"shape mismatch: {rgba.shape} vs {ideal.shape}")
    diff = rgba.astype(np.float64) - ideal
    return float(np.sqrt((diff * diff).mean()))


def bbox_metrics(grid: np.ndarray, ideal: np.ndarray):
    """(dx, dy, area ratio) of living-cell box vs ideal box; None if all dead."""
    ideal_box = bounding_box(ideal[..., 3] > 0.1)
    if ideal_box is None:
        raise ValueError("ideal image has no alpha > 0.1 cells")
    grown_box = bounding_box(alive_mask(grid))
    if grown_box is None:
        return None
    gx0, gy0, gx1, gy1 = grown_box
    ix0, iy0, ix1, iy1 = ideal_box
    grown_area = (gx1 - gx0 + 1) * (gy1 - gy0 + 1)
    ideal_area = (ix1 - ix0 + 1) * (iy1 - iy0 + 1)
    return float(gx0 - ix0), float(gy0 - iy0), float(grown_area / ideal_area)


def movement_flag(dx: float, dy: float, area_ratio: float,
                  min_shift: float = 3.0, area_low: float = 0.6,
                  area_high: float = 1.7) -> bool:
    """Moved-but-intact heuristic: clear top-left shift with a sane box area.

    An automated stand-in for eyeballing runs; breakdown cases (area ratio
    far from 1, e.g. scattered debris) do not count as movement.
    """
    if not (math.isfinite(dx) and math.isfinite(dy) and math.isfinite(area_ratio)):
        return False
    return max(abs(dx), abs(dy)) > min_shift and area_low <= area_ratio <= area_high


def classify_movement(record: MetricRecord, min_shift: float = 3.0,
                      area_low: float = 0.6, area_high: float = 1.7) -> bool:
    return movement_flag(record.bbox_dx, record.bbox_dy, record.area_ratio,
                         min_shift, area_low, area_high)


# ---------------------------------------------------------------------------
# execution


def pair_positions(config: ExperimentConfig, settings: RunSettings):
    ax, ay = settings.anchor_x, settings.anchor_y
    bx = ax + config.lateral_distance
    by = ay + (config.offset_b - config.offset_a)
    return (ax, ay), (bx, by)


def run_pair(config: ExperimentConfig, weights: ModelWeights,
             settings: RunSettings) -> MetricRecord:
    """Grow one seeded pair and measure it against its ideal composite."""
    if weights.variant != config.variant:
        raise ValueError(
            f"weights are variant {weights.variant}, config wants {config.variant}")
    grid_size = (settings.grid_width, settings.grid_height)
    pos_a, pos_b = pair_positions(config, settings)
    ideal = composite_ideal(settings.target.astype(weights.dtype), pos_a, pos_b,
                            grid_size)
    seeds = [
        SeedSpec(pos_a[0], pos_a[1], 0, config.seed_identity_a),
        SeedSpec(pos_b[0], pos_b[1], config.seed_time_delta, config.seed_identity_b),
    ]
    rng = np.random.default_rng([settings.master_seed, config.index])
    trace = np.zeros(config.total_steps, dtype=np.float64)

    def observe(step, state):
        trace[step - 1] = rmse_rgba(state, ideal)
        if settings.frames_dir and step in settings.frame_steps:
            path = os.path.join(settings.frames_dir,
                                f"run{config.index:05d}_t{step:04d}.png")
            save_grid_png(state, path)

    result = grow(weights, grid_size, seeds, config.total_steps, rng,
                  observer=observe)
    final = result.final
    rmse = float(trace[-1]) if config.total_steps > 0 else rmse_rgba(final, ideal)
    metrics = bbox_metrics(final, ideal)
    if metrics is None:
        dx = dy = ratio = float("nan")
        died = True
    else:
        dx, dy, ratio = metrics
        died = False
    moved = movement_flag(dx, dy, ratio, settings.movement_min_shift,
                          settings.movement_area_low, settings.movement_area_high)
    return MetricRecord(config=config, rmse=rmse, bbox_dx=dx, bbox_dy=dy,
                        area_ratio=ratio, moved=moved, died=died,
                        error_trace=trace)


_WORKER_STATE: dict = {}


def _init_worker(weights_by_variant, settings):
    # One BLAS thread per worker: avoids oversubscription and keeps results
    # independent of the worker count.
    _WORKER_STATE["limits"] = threadpool_limits(limits=1)
    _WORKER_STATE["weights"] = weights_by_variant
    _WORKER_STATE["settings"] = settings


def _run_one(config: ExperimentConfig) -> MetricRecord:
    weights = _WORKER_STATE["weights"][config.variant]
    return run_pair(config, weights, _WORKER_STATE["settings"])


def run_many(configs, weights_by_variant: dict, settings: RunSettings,
             workers: int = 1, progress=None) -> list[MetricRecord]:
    """Execute runs (optionally in parallel) and return them sorted by index."""
    records = []
    if workers <= 1:
        with threadpool_limits(limits=1):
            for i, config in enumerate(configs):
                records.append(run_pair(config, weights_by_variant[config.variant],
                                        settings))
                if progress is not None:
                    progress(i + 1, len(configs))
    else:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers, initializer=_init_worker,
                      initargs=(weights_by_variant, settings)) as pool:
            for i, record in enumerate(pool.imap_unordered(_run_one, configs)):
                records.append(record)
                if progress is not None:
                    progress(i + 1, len(configs))
    records.sort(key=lambda r: r.config.index)
    return records


# ---------------------------------------------------------------------------
# CSV I/O

RESULT_COLUMNS = ("config_index", "variant", "seed_time", "lateral_distance",
                  "offset_a", "offset_b", "seed_id_a", "seed_id_b", "rmse",
                  "bbox_dx", "bbox_dy", "area_ratio", "moved", "died")


def write_results_csv(records, path) -> None:
    records = sorted(records, key=lambda r: r.config.index)
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for rec in records:
            cfg = rec.config
            writer.writerow([
                cfg.index, cfg.variant, cfg.seed_time_delta,
                cfg.lateral_distance, cfg.offset_a, cfg.offset_b,
                repr(float(cfg.seed_identity_a)), repr(float(cfg.seed_identity_b)),
                repr(float(rec.rmse)), repr(float(rec.bbox_dx)),
                repr(float(rec.bbox_dy)), repr(float(rec.area_ratio)),
                int(rec.moved), int(rec.died),
            ])


def read_results_csv(path) -> list[dict]:
    """Typed result rows; NaNs stay NaN, flags become bools."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({
                "config_index": int(row["config_index"]),
                "variant": row["variant"],
                "seed_time": int(row["seed_time"]),
                "lateral_distance": int(row["lateral_distance"]),
                "offset_a": int(row["offset_a"]),
                "offset_b": int(row["offset_b"]),
                "seed_id_a": float(row["seed_id_a"]),
                "seed_id_b": float(row["seed_id_b"]),
                "rmse": float(row["rmse"]),
                "bbox_dx": float(row["bbox_dx"]),
                "bbox_dy": float(row["bbox_dy"]),
                "area_ratio": float(row["area_ratio"]),
                "moved": row["moved"] == "1",
                "died": row["died"] == "1",
            })
    return out


def write_traces_csv(records, path) -> None:
    """Per-step error traces, one wide row per run, keyed by config index."""
    records = sorted(records, key=lambda r: r.config.index)
    steps = len(records[0].error_trace) if records else 0
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["config_index"] + [f"step{i + 1}" for i in range(steps)])
        for rec in records:
            writer.writerow([rec.config.index] +
                            [repr(float(v)) for v in rec.error_trace])
