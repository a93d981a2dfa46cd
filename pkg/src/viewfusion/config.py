"""Run configuration: JSON loading, validation and default filling."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

SCHEMA_VERSION = 1

DEFAULTS: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "world": {"height": 16, "width": 16, "channels": 1, "renderer": "backside",
              "n_modes": 2, "n_sectors": 8, "sigma_data": 0.05, "prior": None},
    "schedule": {"T": 1000, "beta_start": 1e-4, "beta_end": 0.02},
    "sampler": {"kind": "ddim", "n_steps": 50, "eta": 0.0, "guidance_scale": 3.0,
                "variant": "interpolated-denoising", "max_conditions_per_step": None,
                "literal_alg1_x0": False},
    "weights": {"tau_c": 0.5, "tau_g": 1.0},
    "trajectory": {"mode": "spin", "delta_deg": 22.5, "n_views": 16, "target": None},
    "conditions": [{"pose": {"azimuth_deg": 0.0, "elevation_deg": 0.0, "distance": 0.0},
                    "mode": 1}],
    "seeds": [0],
    "variants": None,
    "output_dir": "viewfusion_out",
}


class ConfigError(ValueError):
    """Invalid configuration; ``str()`` is anchored to a file line when known."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None,
                 path: str | None = None):
        self.field = field
        self.line = line
        self.path = path
        where = path or "<config>"
        if line is not None:
            where = f"{where}:{line}"
        prefix = f"{where}: " + (f"{field}: " if field else "")
        super().__init__(prefix + message)


def _locate(text: str | None, dotted: str) -> int | None:
    """Best-effort 1-based line of the (nested) key ``dotted`` in JSON ``text``."""
    if not text:
        return None
    pos = 0
    for part in dotted.split("."):
        if part.isdigit():
            continue
        i = text.find(f'"{part}"', pos)
        if i < 0:
            return text.count("\n", 0, pos) + 1 if pos else None
        pos = i
    return text.count("\n", 0, pos) + 1


def _merge(base: dict, over: dict, prefix: str, text: str | None, path: str | None) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        name = f"{prefix}{k}"
        if k not in base:
            raise ConfigError("unknown field", name, _locate(text, name), path)
        if isinstance(base[k], dict) and isinstance(v, dict) and k != "target":
            out[k] = _merge(base[k], v, name + ".", text, path)
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    data: dict
    source: str | None = None
    text: str | None = None

    def __getitem__(self, key):
        return self.data[key]

    def effective(self) -> dict:
        return copy.deepcopy(self.data)

    def dumps(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None) -> "RunConfig":
        d = self.effective()
        if seed is not None:
            d["seeds"] = [int(seed)]
        if output_dir is not None:
            d["output_dir"] = str(output_dir)
        return RunConfig(d, self.source, self.text)


def _expand_seeds(seeds, err) -> list[int]:
    if isinstance(seeds, dict):
        if set(seeds) - {"start", "count"}:
            err("seeds", "sweep form takes only 'start' and 'count'")
        start, count = seeds.get("start", 0), seeds.get("count", 1)
        if not isinstance(start, int) or not isinstance(count, int) or count < 1:
            err("seeds", "start must be an integer and count a positive integer")
        return list(range(start, start + count))
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        return [seeds]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        err("seeds", "must be a non-empty list of integers or {start, count}")
    return list(seeds)


def validate(data: dict, text: str | None = None, path: str | None = None,
             base_dir: Path | None = None) -> dict:
    """Check field types and ranges; returns the normalized config dict."""
    def err(field, msg):
        raise ConfigError(msg, field, _locate(text, field), path)

    def positive(field, value, integer=False):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) and value > 0
        if integer:
            ok = ok and isinstance(value, int)
        if not ok:
            err(field, f"must be a positive {'integer' if integer else 'number'}, got {value!r}")

    if data.get("schema_version") != SCHEMA_VERSION:
        err("schema_version", f"expected {SCHEMA_VERSION}, got {data.get('schema_version')!r}")

    w = data["world"]
    for k in ("height", "width", "channels", "n_modes", "n_sectors"):
        positive(f"world.{k}", w[k], integer=True)
    if w["channels"] not in (1, 3):
        err("world.channels", "must be 1 or 3")
    positive("world.sigma_data", w["sigma_data"])
    if w["renderer"] not in ("backside", "sectors"):
        err("world.renderer", "must be 'backside' or 'sectors'")
    if w["prior"] is not None:
        p = w["prior"]
        if not isinstance(p, list) or any(not isinstance(x, (int, float)) or x < 0 for x in p):
            err("world.prior", "must be a list of non-negative numbers")
        if abs(sum(p) - 1.0) > 1e-12:
            err("world.prior", "must sum to 1")

    s = data["schedule"]
    positive("schedule.T", s["T"], integer=True)
    if s["T"] < 2:
        err("schedule.T", "must be >= 2")
    if not (isinstance(s["beta_start"], (int, float)) and isinstance(s["beta_end"], (int, float))
            and 0 < s["beta_start"] <= s["beta_end"] < 1):
        err("schedule.beta_start", "need 0 < beta_start <= beta_end < 1")

    sm = data["sampler"]
    if sm["kind"] not in ("ddpm", "ddim"):
        err("sampler.kind", "must be 'ddpm' or 'ddim'")
    positive("sampler.n_steps", sm["n_steps"], integer=True)
    if sm["n_steps"] > s["T"]:
        err("sampler.n_steps", "cannot exceed schedule.T")
    if not isinstance(sm["eta"], (int, float)) or not 0 <= sm["eta"] <= 1:
        err("sampler.eta", "must lie in [0, 1]")
    if not isinstance(sm["guidance_scale"], (int, float)) or sm["guidance_scale"] < 0:
        err("sampler.guidance_scale", "must be >= 0")
    from .samplers import VARIANTS
    if sm["variant"] not in VARIANTS:
        err("sampler.variant", f"must be one of {', '.join(VARIANTS)}")
    if sm["max_conditions_per_step"] is not None:
        positive("sampler.max_conditions_per_step", sm["max_conditions_per_step"], integer=True)
    if not isinstance(sm["literal_alg1_x0"], bool):
        err("sampler.literal_alg1_x0", "must be true or false")

    for k in ("tau_c", "tau_g"):
        positive(f"weights.{k}", data["weights"][k])

    tr = data["trajectory"]
    positive("trajectory.delta_deg", tr["delta_deg"])
    if tr["mode"] == "spin":
        positive("trajectory.n_views", tr["n_views"], integer=True)
        if tr["n_views"] < 2 or not math.isclose(tr["delta_deg"] * tr["n_views"], 360.0, rel_tol=1e-9):
            err("trajectory.n_views", "delta_deg * n_views must equal 360")
    elif tr["mode"] == "single-target":
        if not isinstance(tr["target"], dict):
            err("trajectory.target", "single-target mode needs a target pose")
        if set(tr["target"]) - {"azimuth_deg", "elevation_deg", "distance"}:
            err("trajectory.target", "pose keys are azimuth_deg, elevation_deg, distance")
    else:
        err("trajectory.mode", "must be 'spin' or 'single-target'")

    conds = data["conditions"]
    if not isinstance(conds, list) or not conds:
        err("conditions", "need at least one condition view")
    n_modes = 2 ** w["n_sectors"] if w["renderer"] == "sectors" else w["n_modes"]
    for i, c in enumerate(conds):
        if not isinstance(c, dict) or ("mode" in c) == ("path" in c):
            err(f"conditions.{i}", "each condition needs exactly one of 'mode' or 'path'")
        if set(c) - {"pose", "mode", "path"}:
            err(f"conditions.{i}", f"unknown keys {sorted(set(c) - {'pose', 'mode', 'path'})}")
        if "mode" in c and not (isinstance(c["mode"], int) and 1 <= c["mode"] <= n_modes):
            err(f"conditions.{i}.mode", f"must be an integer in [1, {n_modes}]")
        if "path" in c:
            p = Path(c["path"])
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            if not p.exists():
                err(f"conditions.{i}.path", f"file not found: {p}")
            c["path"] = str(p)
        c.setdefault("pose", {"azimuth_deg": 0.0, "elevation_deg": 0.0, "distance": 0.0})

    data["seeds"] = _expand_seeds(data["seeds"], err)
    if data["variants"] is not None:
        v = data["variants"]
        if not isinstance(v, list) or any(x not in VARIANTS for x in v):
            err("variants", f"must be a list drawn from {', '.join(VARIANTS)}")
    if not isinstance(data["output_dir"], str) or not data["output_dir"]:
        err("output_dir", "must be a non-empty path string")
    return data


def parse_config(obj: dict, text: str | None = None, path: str | None = None,
                 base_dir: Path | None = None) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("top level must be a JSON object", None, 1, path)
    data = _merge(DEFAULTS, obj, "", text, path)
    return RunConfig(validate(data, text, path, base_dir), path, text)


def load_config(path: str | Path) -> RunConfig:
    """Read, merge with defaults and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", None, None, str(path)) from e
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg} (column {e.colno})", None, e.lineno, str(path)) from e
    return parse_config(obj, text, str(path), path.parent)
