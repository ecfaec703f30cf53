"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import harness, io, stats, training
from .grid import SeedSpec
from .model import grow

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise UsageError(f"bad size {text!r}, want WIDTHxHEIGHT")


def _parse_steps_list(text: str) -> tuple[int, ...]:
    if not text:
        return ()
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise UsageError(f"bad step list {text!r}, want e.g. 100,900")


def _parse_seed_spec(text: str) -> SeedSpec:
    parts = text.split(",")
    if len(parts) not in (2, 3, 4):
        raise UsageError(f"bad seed {text!r}, want x,y[,time[,identity]]")
    try:
        x, y = int(parts[0]), int(parts[1])
        t = int(parts[2]) if len(parts) > 2 else 0
        ident = float(parts[3]) if len(parts) > 3 else 1.0
    except ValueError:
        raise UsageError(f"bad seed {text!r}, want x,y[,time[,identity]]")
    return SeedSpec(x, y, t, ident)


def _load_target(args) -> np.ndarray:
    if args.target:
        return io.load_target(args.target, args.target_width)
    return io.builtin_gecko(args.target_width)


def _add_target_args(p):
    p.add_argument("--target", help="RGBA PNG target (default: built-in gecko)")
    p.add_argument("--target-width", type=int, default=20,
                   help="resample target to this width in cells")


def _progress_printer(label):
    def cb(done, total=None):
        if total is None:
            print(f"{label}: {done}", file=sys.stderr)
        elif done % 50 == 0 or done == total:
            print(f"{label}: {done}/{total}", file=sys.stderr)
    return cb


# ---------------------------------------------------------------------------
# subcommands


def cmd_make_target(args) -> int:
    io.write_gecko_png(args.out, args.width)
    print(args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    items = []
    if args.config:
        items.extend(training.parse_config_file(args.config))
    for pair in args.set or []:
        if "=" not in pair:
            raise UsageError(f"--set wants key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        items.append((key.strip(), value.strip()))
    try:
        config = training.TrainConfig.from_items(items)
    except ValueError as exc:
        raise UsageError(str(exc))
    if args.iterations is not None:
        config = config.replace(iterations=args.iterations)
    if args.seed is not None:
        config = config.replace(seed=args.seed)

    target = _load_target(args)
    padded_target = _padded_training_target(target, config)

    def progress(i, batch_loss):
        print(f"iter {i}: loss {batch_loss:.6f} lr {training.schedule_lr(config, i):.2e}",
              file=sys.stderr)

    weights, losses = training.train(args.variant, config, padded_target,
                                     progress=progress)
    meta = ";".join(f"{k}={v}" for k, v in sorted(vars(config).items()))
    io.save_checkpoint(weights, args.out, metadata=meta)
    if args.loss_csv:
        _append_loss_csv(args.loss_csv, args.variant, config, losses)
    print(f"trained variant {args.variant}: final loss {losses[-1]:.6f} -> {args.out}")
    return EXIT_OK


def _padded_training_target(target: np.ndarray, config: training.TrainConfig) -> np.ndarray:
    from .grid import pad_target
    center = (config.grid_width // 2, config.grid_height // 2)
    return pad_target(target, (config.grid_width, config.grid_height), center)


def _append_loss_csv(path, variant, config, losses) -> None:
    new = not (os.path.exists(path) and os.path.getsize(path) > 0)
    with open(path, "a", newline="\n") as fh:
        if new:
            fh.write("iteration,loss,lr,variant\n")
        for i, value in enumerate(losses, start=1):
            fh.write(f"{i},{value!r},{training.schedule_lr(config, i)!r},{variant}\n")


def cmd_grow(args) -> int:
    weights = io.load_checkpoint(args.checkpoint)
    seeds = [_parse_seed_spec(text) for text in args.seed]
    if not seeds:
        raise UsageError("at least one --seed is required")
    grid_size = _parse_size(args.grid)
    frames = _parse_steps_list(args.frames)
    rng = np.random.default_rng(args.rng_seed)
    want = set(frames) or {args.steps}
    bad = [s for s in want if not 0 <= s <= args.steps]
    if bad:
        raise UsageError(f"frame step(s) {bad} outside 0..{args.steps}")
    result = grow(weights, grid_size, seeds, args.steps, rng,
                  snapshot_steps=sorted(want))
    os.makedirs(args.out_dir, exist_ok=True)
    for step in sorted(want):
        state = result.snapshots[step]
        io.save_grid_png(state, os.path.join(args.out_dir, f"frame_t{step:04d}.png"))
        if args.save_states:
            io.save_state(state, os.path.join(args.out_dir, f"state_t{step:04d}.npy"))
    print(f"wrote {len(want)} frame(s) to {args.out_dir}")
    return EXIT_OK


def _load_triple(args) -> dict:
    weights = {
        "A": io.load_checkpoint(args.checkpoint_a),
        "B": io.load_checkpoint(args.checkpoint_b),
        "C": io.load_checkpoint(args.checkpoint_c),
    }
    for variant, w in weights.items():
        if w.variant != variant:
            raise UsageError(
                f"checkpoint for slot {variant} is tagged variant {w.variant}")
    return weights


def _run_settings(args, target) -> harness.RunSettings:
    gw, gh = _parse_size(args.grid)
    try:
        ax, ay = (int(v) for v in args.anchor.split(","))
    except ValueError:
        raise UsageError(f"bad anchor {args.anchor!r}, want X,Y")
    return harness.RunSettings(
        target=target, master_seed=args.master_seed,
        grid_width=gw, grid_height=gh, anchor_x=ax, anchor_y=ay,
        movement_min_shift=args.move_shift,
        movement_area_low=args.area_low, movement_area_high=args.area_high,
        frame_steps=_parse_steps_list(args.frames),
        frames_dir=args.frames_dir)


def _add_run_args(p):
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--grid", default="96x64")
    p.add_argument("--anchor", default="39,32")
    p.add_argument("--steps", type=int, default=harness.TOTAL_STEPS)
    p.add_argument("--move-shift", type=float, default=3.0)
    p.add_argument("--area-low", type=float, default=0.6)
    p.add_argument("--area-high", type=float, default=1.7)
    p.add_argument("--frames", default="",
                   help="comma-separated steps to dump as PNG per run")
    p.add_argument("--frames-dir")
    p.add_argument("--max-runs", type=int,
                   help="truncate the run list (smoke tests)")


def cmd_experiment(args) -> int:
    weights = _load_triple(args)
    target = _load_target(args)
    settings = _run_settings(args, target)
    manifest = io.RunManifest(
        master_seed=args.master_seed, grid_width=settings.grid_width,
        grid_height=settings.grid_height, target_path=args.target,
        anchor_x=settings.anchor_x, anchor_y=settings.anchor_y,
        results_path=args.out, traces_path=args.traces,
        frames_dir=args.frames_dir)
    manifest.validate()
    configs = harness.experiment_configs(seed_identity_a=args.seed_identity_a,
                                         total_steps=args.steps)
    if args.max_runs is not None:
        configs = configs[:args.max_runs]
    records = harness.run_many(configs, weights, settings, workers=args.workers,
                               progress=_progress_printer("experiment"))
    harness.write_results_csv(records, args.out)
    if args.traces:
        harness.write_traces_csv(records, args.traces)
    died = sum(r.died for r in records)
    moved = sum(r.moved for r in records)
    print(f"{len(records)} runs -> {args.out} ({died} died, {moved} moved)")
    return EXIT_OK


def cmd_sweep_seed(args) -> int:
    weights = _load_triple(args)
    target = _load_target(args)
    settings = _run_settings(args, target)
    configs = harness.sweep_seed_configs(total_steps=args.steps)
    if args.max_runs is not None:
        configs = configs[:args.max_runs]
    records = harness.run_many(configs, weights, settings, workers=args.workers,
                               progress=_progress_printer("sweep-seed"))
    harness.write_results_csv(records, args.out)
    if args.traces:
        harness.write_traces_csv(records, args.traces)
    if args.spot_csv:
        spot = harness.spot_grid_configs(total_steps=args.steps)
        spot_records = harness.run_many(spot, weights, settings,
                                        workers=args.workers)
        harness.write_results_csv(spot_records, args.spot_csv)
    print(f"{len(records)} sweep runs -> {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    try:
        rows = harness.read_results_csv(args.results)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"malformed results CSV {args.results}: {exc}")
    comparisons = stats.grouped_comparisons(
        rows, group_key=args.group_key, compare_key=args.compare_key,
        alpha=args.alpha)
    if args.out_csv:
        stats.write_report_csv(comparisons, args.out_csv)
    text = stats.format_report(comparisons)
    if args.out_txt:
        with open(args.out_txt, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_render(args) -> int:
    names = sorted(n for n in os.listdir(args.states_dir) if n.endswith(".npy"))
    if not names:
        raise UsageError(f"no .npy states in {args.states_dir}")
    os.makedirs(args.out_dir, exist_ok=True)
    for name in names:
        state = io.load_state(os.path.join(args.states_dir, name))
        out = os.path.join(args.out_dir, name[:-4] + ".png")
        io.save_grid_png(state, out)
    print(f"rendered {len(names)} state(s) to {args.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="idnca",
                description="Identity-channel neural cellular automata: "
                            "training, growth, proximity experiments, stats.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    mk = sub.add_parser("make-target", help="write the built-in gecko PNG")
    mk.add_argument("--out", required=True)
    mk.add_argument("--width", type=int, default=64,
                    help="image width in pixels (loadable at any cell width)")
    mk.set_defaults(func=cmd_make_target)

    tr = sub.add_parser("train", help="train one model variant")
    tr.add_argument("--variant", required=True, choices=("A", "B", "C"))
    _add_target_args(tr)
    tr.add_argument("--iterations", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--out", required=True, help="checkpoint path")
    tr.add_argument("--config", help="key=value training config file")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override one training option")
    tr.add_argument("--loss-csv", help="append per-iteration losses here")
    tr.set_defaults(func=cmd_train)

    gr = sub.add_parser("grow", help="grow organisms from explicit seeds")
    gr.add_argument("--checkpoint", required=True)
    gr.add_argument("--seed", action="append", default=[],
                    metavar="X,Y[,T[,IDENTITY]]")
    gr.add_argument("--steps", type=int, default=1000)
    gr.add_argument("--grid", default="96x64")
    gr.add_argument("--frames", default="", help="steps to snapshot, e.g. 100,900")
    gr.add_argument("--out-dir", required=True)
    gr.add_argument("--save-states", action="store_true",
                    help="also save raw .npy states for `render`")
    gr.add_argument("--rng-seed", type=int, default=0)
    gr.set_defaults(func=cmd_grow)

    ex = sub.add_parser("experiment", help="run the two-seed proximity grid")
    ex.add_argument("--checkpoint-a", required=True)
    ex.add_argument("--checkpoint-b", required=True)
    ex.add_argument("--checkpoint-c", required=True)
    _add_target_args(ex)
    ex.add_argument("--out", required=True, help="results CSV")
    ex.add_argument("--traces", help="sidecar per-step error trace CSV")
    ex.add_argument("--seed-identity-a", type=float, default=1.0)
    _add_run_args(ex)
    ex.set_defaults(func=cmd_experiment)

    sw = sub.add_parser("sweep-seed", help="rerun the grid with seed "
                                           "identity 0.0 and 0.5")
    sw.add_argument("--checkpoint-a", required=True)
    sw.add_argument("--checkpoint-b", required=True)
    sw.add_argument("--checkpoint-c", required=True)
    _add_target_args(sw)
    sw.add_argument("--out", required=True)
    sw.add_argument("--traces")
    sw.add_argument("--spot-csv",
                    help="also run the 9-permutation identity grid (distance 6, "
                         "relative offset 5) and write it here")
    _add_run_args(sw)
    sw.set_defaults(func=cmd_sweep_seed)

    st = sub.add_parser("stats", help="grouped rank-sum comparisons of a results CSV")
    st.add_argument("--results", required=True)
    st.add_argument("--group-key", default="lateral_distance")
    st.add_argument("--compare-key", default="rmse")
    st.add_argument("--alpha", type=float, default=0.05)
    st.add_argument("--out-csv")
    st.add_argument("--out-txt")
    st.set_defaults(func=cmd_stats)

    rd = sub.add_parser("render", help="convert saved .npy states to PNG")
    rd.add_argument("--states-dir", required=True)
    rd.add_argument("--out-dir", required=True)
    rd.set_defaults(func=cmd_render)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError,
            io.CheckpointError, io.TargetImageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except training.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
