"""Command-line entry point: ``viewfusion {generate,compare,slices,validate-config}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import experiments as ex
from .config import ConfigError, RunConfig, load_config
from .metrics import spacetime_slice
from .numerics import ShapeError, read_pnm, write_pnm

log = logging.getLogger("viewfusion")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}


class UsageError(Exception):
    pass


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _load(path: str, seed: int | None, out: str | None) -> RunConfig:
    cfg = load_config(path).with_overrides(seed, out)
    world = ex.build_world(cfg)
    try:
        ex.build_conditions(cfg, world)
    except ShapeError as e:
        raise ConfigError(str(e), "conditions", None, path) from e
    return cfg


def write_run(result: ex.RunResult, cfg: RunConfig, out: Path, figures: bool = True) -> dict:
    """Frames, trace, consistency report, effective config and timings for one run."""
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for s in result.trace.stages:
        name = f"frame_{s.index:03d}.pgm" if s.frame.shape[-1] == 1 else f"frame_{s.index:03d}.ppm"
        write_pnm(out / name, s.frame)
        names.append(name)
    trace = result.trace.to_dict()
    trace["frame_files"] = names
    _dump_json(out / "trace.json", trace)
    _dump_json(out / "config.json", cfg.effective())
    _dump_json(out / "timings.json", {"stage_seconds": result.trace.wall_times,
                                      "total_seconds": result.seconds})
    rep = result.report
    _dump_json(out / "consistency.json", None if rep is None else rep.to_dict())
    if rep is not None:
        _write_csv(out / "consistency.csv", rep.csv_rows())
    if figures and names:
        from .plotting import contact_sheet
        order, _ = ex.spatial_order(result.trace)
        contact_sheet([result.trace.stages[i].frame for i in order],
                      [f"{math.degrees(result.trace.stages[i].target.d_azimuth):+.1f}" for i in order],
                      out / "frames.png", title=f"{result.variant}, seed {result.seed}")
    return result.summary()


def _generate_one(args):
    data, seed, out = args
    cfg = RunConfig(data)
    res = ex.run_one(cfg, None, seed)
    return write_run(res, cfg.with_overrides(seed=seed), Path(out))


def cmd_generate(config_path: str, seed: int | None = None, out: str | None = None,
                 jobs: int = 1) -> int:
    """Run the configured variant for every seed and write artifacts; returns an exit code."""
    return _guard(lambda: _generate(config_path, seed, out, jobs))


def _generate(config_path, seed, out, jobs) -> int:
    cfg = _load(config_path, seed, out)
    root = Path(cfg["output_dir"])
    seeds = cfg["seeds"]
    dirs = [root if len(seeds) == 1 else root / f"seed_{s}" for s in seeds]
    tasks = [(cfg.effective(), s, str(d)) for s, d in zip(seeds, dirs)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_generate_one, tasks))
    else:
        summaries = [_generate_one(t) for t in tasks]
    for s, d in zip(summaries, dirs):
        print(json.dumps({**s, "output_dir": str(d)}, sort_keys=True))
    return EXIT_OK


def cmd_compare(config_path: str, seed: int | None = None, out: str | None = None,
                jobs: int = 1) -> int:
    """Run every listed variant on identical seeds and write a comparison table."""
    return _guard(lambda: _compare(config_path, seed, out, jobs))


def _compare(config_path, seed, out, jobs) -> int:
    cfg = _load(config_path, seed, out)
    variants = cfg["variants"] or []
    if len(variants) < 2:
        raise ConfigError("compare needs at least two variants", "variants", None, config_path)
    seeds = cfg["seeds"]
    results = ex.run_many(cfg, variants, seeds, jobs)
    table = ex.compare_table(results, variants, seeds)
    root = Path(cfg["output_dir"])
    root.mkdir(parents=True, exist_ok=True)
    _dump_json(root / "compare.json", table)
    text = ex.format_table(table)
    (root / "compare.txt").write_text(text)
    _dump_json(root / "config.json", cfg.effective())
    runs = [["variant", "seed", "mean_ssim", "mean_psnr", "agreement", "mean_truth_psnr"]]
    for r in results:
        s = r.summary()
        runs.append([s["variant"], s["seed"]] + [s.get(k) for k in runs[0][2:]])
    _write_csv(root / "runs.csv", runs)
    from .plotting import compare_figure
    compare_figure(table, root / "compare.png")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_slices(frames_dir: str, scanline: int | None = None, out: str | None = None) -> int:
    """Stack one scanline of every frame in a directory into a space-time slice."""
    return _guard(lambda: _slices(frames_dir, scanline, out))


def _spatial_files(d: Path, files: list[Path]) -> list[Path]:
    """Reorder spin frames by azimuth when the directory holds a trace; else keep name order."""
    try:
        trace = json.loads((d / "trace.json").read_text())
        if trace["trajectory"]["mode"] != "spin":
            return files
        az = {name: st["target"]["azimuth_deg"] for name, st in zip(trace["frame_files"], trace["stages"])}
    except (OSError, KeyError, TypeError, ValueError):
        return files
    if not all(f.name in az for f in files):
        return files
    return sorted(files, key=lambda f: az[f.name])


def _slices(frames_dir, scanline, out) -> int:
    d = Path(frames_dir)
    if not d.is_dir():
        raise UsageError(f"{d}: not a directory")
    files = sorted(list(d.glob("frame_*.pgm")) + list(d.glob("frame_*.ppm")))
    if not files:
        raise UsageError(f"{d}: no frame_*.pgm/ppm files")
    files = _spatial_files(d, files)
    frames = [read_pnm(f) for f in files]
    if len({f.shape for f in frames}) != 1:
        raise UsageError(f"{d}: frames differ in shape")
    if scanline is None:
        scanline = frames[0].shape[0] // 2
    if not 0 <= scanline < frames[0].shape[0]:
        raise UsageError(f"scanline {scanline} outside [0, {frames[0].shape[0]})")
    grid = spacetime_slice(frames, scanline)
    dest = Path(out) if out else d
    dest.mkdir(parents=True, exist_ok=True)
    ext = "pgm" if grid.shape[-1] == 1 else "ppm"
    write_pnm(dest / f"slice_{scanline:03d}.{ext}", grid)
    from .plotting import slice_figure
    slice_figure(grid, dest / f"slice_{scanline:03d}.png", scanline)
    print(json.dumps({"frames": len(files), "scanline": scanline,
                      "slice": str(dest / f"slice_{scanline:03d}.{ext}")}))
    return EXIT_OK


def cmd_validate_config(config_path: str) -> int:
    """Print the effective config (defaults filled) or a line-anchored error."""
    def run():
        sys.stdout.write(_load(config_path, None, None).dumps())
        return EXIT_OK
    return _guard(run)


def _guard(fn) -> int:
    try:
        return fn()
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - every other failure is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def _setup_logging() -> None:
    level = os.environ.get("VIEWFUSION_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"VIEWFUSION_LOG must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="viewfusion",
                                description="Interpolated-denoising multi-view generation on a toy world.")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", required=True, metavar="PATH", help="JSON run config")
        if seed:
            sp.add_argument("--seed", type=int, help="run only this seed")
            sp.add_argument("--out", metavar="DIR", help="override output_dir")
            sp.add_argument("--jobs", type=int, default=1, metavar="K", help="parallel worker processes")

    common(sub.add_parser("generate", help="generate frames for each seed"))
    common(sub.add_parser("compare", help="compare variants over a seed sweep"))
    common(sub.add_parser("validate-config", help="check a config and print it with defaults"), seed=False)
    sl = sub.add_parser("slices", help="space-time slice of a frame directory")
    sl.add_argument("frames_dir")
    sl.add_argument("--scanline", type=int, help="row index (default: middle row)")
    sl.add_argument("--out", metavar="DIR", help="write the slice here instead of frames_dir")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.verb == "generate":
        return cmd_generate(args.config, args.seed, args.out, args.jobs)
    if args.verb == "compare":
        return cmd_compare(args.config, args.seed, args.out, args.jobs)
    if args.verb == "slices":
        return cmd_slices(args.frames_dir, args.scanline, args.out)
    return cmd_validate_config(args.config)


if __name__ == "__main__":
    sys.exit(main())
