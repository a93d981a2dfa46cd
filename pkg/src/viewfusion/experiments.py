"""Turn a :class:`RunConfig` into worlds, samplers and scored runs."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .conditioning import PoseOffset, Trajectory, WeightParams, plan_single_target, plan_spin
from .config import RunConfig
from .metrics import ConsistencyReport, adjacent_consistency
from .numerics import ShapeError, psnr, read_pnm
from .samplers import GenerationTrace, SamplerConfig, run_variant
from .schedule import NoiseSchedule, linear_schedule
from .toyworld import ConditionView, ToyWorld

log = logging.getLogger(__name__)

SMALL_SAMPLE = 2


def pose_from_config(d: dict | None) -> PoseOffset:
    d = d or {}
    return PoseOffset.from_degrees(d.get("azimuth_deg", 0.0), d.get("elevation_deg", 0.0),
                                   d.get("distance", 0.0))


def build_world(cfg: RunConfig) -> ToyWorld:
    w = cfg["world"]
    return ToyWorld(height=w["height"], width=w["width"], channels=w["channels"],
                    renderer=w["renderer"], n_modes=w["n_modes"], n_sectors=w["n_sectors"],
                    sigma_data=float(w["sigma_data"]),
                    prior=None if w["prior"] is None else tuple(w["prior"]))


def build_schedule(cfg: RunConfig) -> NoiseSchedule:
    s = cfg["schedule"]
    return linear_schedule(s["T"], s["beta_start"], s["beta_end"])


def build_sampler_config(cfg: RunConfig, variant: str | None = None, seed: int = 0) -> SamplerConfig:
    s = cfg["sampler"]
    return SamplerConfig(guidance_scale=float(s["guidance_scale"]), sampler=s["kind"],
                         variant=variant or s["variant"], n_steps=s["n_steps"],
                         eta=float(s["eta"]), max_conditions_per_step=s["max_conditions_per_step"],
                         weights=WeightParams(**cfg["weights"]),
                         literal_alg1_x0=s["literal_alg1_x0"], seed=int(seed))


def build_conditions(cfg: RunConfig, world: ToyWorld) -> list[ConditionView]:
    out = []
    for c in cfg["conditions"]:
        pose = pose_from_config(c["pose"])
        if "mode" in c:
            img = world.render(c["mode"], pose)
        else:
            img = read_pnm(c["path"])
            if img.shape != world.shape:
                raise ShapeError(f"{c['path']}: image shape {img.shape} != world shape {world.shape}")
        out.append(ConditionView(img, pose, "given"))
    return out


def build_trajectory(cfg: RunConfig) -> Trajectory:
    """Trajectory anchored at the first condition's pose.

    Spins circle around it and single-target paths start from it; the target
    itself is given in the same reference frame as the condition poses.
    """
    tr = cfg["trajectory"]
    delta = math.radians(tr["delta_deg"])
    start = pose_from_config(cfg["conditions"][0]["pose"])
    if tr["mode"] == "spin":
        plan = plan_spin(delta, tr["n_views"])
    else:
        plan = plan_single_target(pose_from_config(tr["target"]) - start, delta)
    if start.is_identity():
        return plan
    return Trajectory(tuple(start + p for p in plan.poses), plan.mode, plan.degenerate)


def truth_mode(cfg: RunConfig) -> int | None:
    """The shared mode of all synthetic conditions, if there is one."""
    modes = {c.get("mode") for c in cfg["conditions"]}
    return modes.pop() if len(modes) == 1 and None not in modes else None


def spatial_order(trace: GenerationTrace) -> tuple[list[int], bool]:
    """Stage indices in spatial order and whether the sequence wraps around.

    Spin frames are sorted by azimuth and scored cyclically; single-target
    frames are already ordered along the path.
    """
    n = len(trace.stages)
    if trace.trajectory.mode == "spin":
        return sorted(range(n), key=lambda i: trace.stages[i].target.d_azimuth), True
    return list(range(n)), False


def score_trace(world: ToyWorld, trace: GenerationTrace, mode: int | None = None) -> ConsistencyReport | None:
    """Adjacent-frame consistency of a trace, plus PSNR to the true mode when known."""
    order, cyclic = spatial_order(trace)
    if len(order) < 2:
        return None
    frames = [trace.stages[i].frame for i in order]
    poses = [trace.stages[i].target for i in order]
    rep = adjacent_consistency(frames, cyclic=cyclic, world=world, poses=poses)
    rep.extra["order"] = order
    if mode is not None:
        gt = [psnr(f, world.render(mode, p)) for f, p in zip(frames, poses)]
        rep.extra["truth_mode"] = mode
        rep.extra["truth_psnr"] = gt
        rep.extra["mean_truth_psnr"] = float(np.mean(gt))
    return rep


@dataclass
class RunResult:
    variant: str
    seed: int
    trace: GenerationTrace
    report: ConsistencyReport | None
    seconds: float

    def summary(self) -> dict:
        r = self.report
        d = {"variant": self.variant, "seed": self.seed, "n_frames": len(self.trace.stages)}
        if r is not None:
            d.update(mean_ssim=r.mean_ssim, mean_psnr=r.mean_psnr, agreement=r.agreement,
                     mean_truth_psnr=r.extra.get("mean_truth_psnr"))
        return d


def run_one(cfg: RunConfig, variant: str | None = None, seed: int | None = None) -> RunResult:
    """Build everything from ``cfg`` and run one (variant, seed)."""
    seed = cfg["seeds"][0] if seed is None else seed
    variant = variant or cfg["sampler"]["variant"]
    world = build_world(cfg)
    t0 = time.perf_counter()
    trace = run_variant(world, build_conditions(cfg, world), build_trajectory(cfg),
                        build_sampler_config(cfg, variant, seed), build_schedule(cfg))
    report = score_trace(world, trace, truth_mode(cfg))
    return RunResult(variant, seed, trace, report, time.perf_counter() - t0)


def _job(args):
    data, variant, seed = args
    return run_one(RunConfig(data), variant, seed)


def run_many(cfg: RunConfig, variants: list[str], seeds: list[int], jobs: int = 1) -> list[RunResult]:
    """Every (variant, seed) pair, in parallel processes when ``jobs > 1``.

    Results come back in (variant, seed) order regardless of ``jobs``.
    """
    tasks = [(cfg.effective(), v, s) for v in variants for s in seeds]
    if jobs <= 1 or len(tasks) == 1:
        return [_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_job, tasks))


def _stat(values) -> dict:
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "stderr": None, "n": 0}
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else None
    return {"mean": float(v.mean()), "stderr": se, "n": int(v.size)}


def compare_table(results: list[RunResult], variants: list[str], seeds: list[int]) -> dict:
    """Per-variant means (with standard errors) of SSIM, PSNR, agreement and truth PSNR."""
    rows = []
    for v in variants:
        rs = [r for r in results if r.variant == v]
        reps = [r.report for r in rs if r.report is not None]
        rows.append({"variant": v,
                     "mean_ssim": _stat(r.mean_ssim for r in reps),
                     "mean_psnr": _stat(r.mean_psnr for r in reps),
                     "agreement": _stat(r.agreement for r in reps),
                     "truth_psnr": _stat(r.extra.get("mean_truth_psnr") for r in reps)})
    table = {"variants": variants, "seeds": seeds, "n_seeds": len(seeds), "rows": rows}
    if len(seeds) < SMALL_SAMPLE:
        table["warning"] = f"small sample: {len(seeds)} seed(s); differences are not meaningful"
    return table


def format_table(table: dict) -> str:
    cols = [("mean_ssim", "ssim"), ("mean_psnr", "psnr_db"), ("agreement", "agreement"),
            ("truth_psnr", "truth_psnr_db")]

    def cell(s):
        if s["mean"] is None:
            return "-"
        return f"{s['mean']:.4f}" + (f" ±{s['stderr']:.4f}" if s["stderr"] is not None else "")

    body = [["variant"] + [c[1] for c in cols]]
    for r in table["rows"]:
        body.append([r["variant"]] + [cell(r[k]) for k, _ in cols])
    widths = [max(len(row[i]) for row in body) for i in range(len(body[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    lines.append(f"seeds: {table['n_seeds']}")
    if "warning" in table:
        lines.append(f"warning: {table['warning']}")
    return "\n".join(lines) + "\n"
