"""Reverse-process samplers and the auto-regressive multi-view orchestrator.

Every stage draws its starting noise and all per-step noises from one stream
keyed by ``(seed, stage)``; condition subsampling uses a second stream.  All
variants therefore see the same noise at the same stage, which keeps variant
comparisons paired and makes single-condition runs collapse bit-for-bit onto
the direct sampler.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .conditioning import PoseOffset, Trajectory, WeightParams, compute_weights, view_delta
from .numerics import SeededRng, axpy_grids
from .schedule import DdimSubSchedule, NoiseSchedule, ddim_subschedule, ddpm_subschedule
from .toyworld import ConditionView, ToyWorld, eps_from_log_resp, eps_rows, log_responsibilities

log = logging.getLogger(__name__)

VARIANTS = ("direct", "interpolated-denoising", "standard-autoregression",
            "interpolated-conditions", "interpolated-outputs", "stochastic-conditioning")
SAMPLERS = ("ddpm", "ddim")

NOISE_STREAM = 0
SELECT_STREAM = 1


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    guidance_scale: float = 3.0
    sampler: str = "ddim"
    variant: str = "interpolated-denoising"
    n_steps: int = 50
    eta: float = 0.0
    max_conditions_per_step: int | None = None
    weights: WeightParams = WeightParams()
    literal_alg1_x0: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.guidance_scale >= 0:
            raise ValueError("guidance_scale must be >= 0")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.max_conditions_per_step is not None and self.max_conditions_per_step < 1:
            raise ValueError("max_conditions_per_step must be >= 1 or None")

    def subschedule(self, sched: NoiseSchedule) -> DdimSubSchedule:
        if self.sampler == "ddpm":
            return ddpm_subschedule(sched)
        return ddim_subschedule(sched, self.n_steps, self.eta)

    def to_dict(self) -> dict:
        return asdict(self)


# --- single reverse steps -------------------------------------------------

def guided_eps(eps_uncond: np.ndarray, eps_cond: np.ndarray, u: float) -> np.ndarray:
    """Classifier-free guidance: ``eps_0 + u (eps_c - eps_0)``.

    ``u = 1`` returns the conditional prediction exactly.
    """
    if u == 1.0:
        return np.array(eps_cond, dtype=np.float64)
    return eps_uncond + u * (eps_cond - eps_uncond)


def ddpm_reverse_step(x_t: np.ndarray, t: int, eps_hat: np.ndarray, sched: NoiseSchedule,
                      noise: np.ndarray | None = None, rng: SeededRng | None = None) -> np.ndarray:
    """Ancestral step ``x_t -> x_{t-1}`` with posterior standard deviation.

    The noise is taken from ``noise`` if given, else drawn from ``rng``; no
    noise is added at ``t = 1``.
    """
    mean = (x_t - sched.beta(t) / math.sqrt(1.0 - sched.alpha_bar(t)) * eps_hat) / math.sqrt(sched.alpha(t))
    if t == 1:
        return mean
    if noise is None:
        if rng is None:
            raise ValueError("need noise or rng for t > 1")
        noise = rng.normal(np.shape(x_t))
    return mean + sched.sigma(t) * noise


def ddim_step(x_t: np.ndarray, eps: np.ndarray, t: int, t_prev: int, sched: NoiseSchedule,
              eta: float, eps_prime: np.ndarray, literal_x0: bool = False) -> np.ndarray:
    """Generalized DDIM update from ``t`` to ``t_prev``.

    With ``literal_x0`` the clean-image estimate uses ``sqrt(1 - abar_{t_prev})``
    in place of ``sqrt(1 - abar_t)``.
    """
    if not t > t_prev >= 0:
        raise ValueError(f"need t > t_prev >= 0, got {t}, {t_prev}")
    ab_t = sched.alpha_bar(t)
    ab_p = sched.alpha_bar(t_prev)
    sigma = sched.ddim_sigma(t, t_prev, eta)
    radicand = 1.0 - ab_p - sigma * sigma
    if radicand < 0.0:
        if radicand < -1e-12:
            raise SamplerError(f"infeasible DDIM step {t}->{t_prev}: sigma^2 > 1 - alpha_bar_prev")
        radicand = 0.0
    noise_coef = math.sqrt(1.0 - (ab_p if literal_x0 else ab_t))
    x0_hat = (x_t - noise_coef * eps) / math.sqrt(ab_t)
    out = math.sqrt(ab_p) * x0_hat + math.sqrt(radicand) * eps
    if sigma > 0.0:
        out = out + sigma * eps_prime
    return out


def reverse_step(x_t, eps, t, t_prev, sched, config: SamplerConfig, eps_prime):
    if config.sampler == "ddpm":
        return ddpm_reverse_step(x_t, t, eps, sched, noise=eps_prime)
    return ddim_step(x_t, eps, t, t_prev, sched, config.eta, eps_prime, config.literal_alg1_x0)


class _Predictor:
    """Guided per-condition noise predictions at a fixed target pose."""

    def __init__(self, world: ToyWorld, conditions: Sequence[ConditionView],
                 target_pose: PoseOffset, u: float):
        self.world = world
        self.u = u
        self.mus = world.render_all(target_pose).reshape(world.n_modes, -1)
        self.log_prior = world.log_prior
        self.log_r = np.stack([log_responsibilities(world, [c]) for c in conditions]) \
            if conditions else np.empty((0, world.n_modes))

    def guided(self, x: np.ndarray, t: int, sched: NoiseSchedule,
               idx: Sequence[int] | None = None) -> list[np.ndarray]:
        """Guided eps for the conditions in ``idx`` (all by default)."""
        rows = self.log_r if idx is None else self.log_r[list(idx)]
        logs = np.concatenate([self.log_prior[None], rows])
        eps = eps_from_log_resp(x.reshape(1, -1), sched.alpha_bar(t), self.world.sigma_data,
                                logs, self.mus)
        shape = x.shape
        e0 = eps[0, 0].reshape(shape)
        return [guided_eps(e0, eps[i, 0].reshape(shape), self.u) for i in range(1, eps.shape[0])]

    def guided_rows(self, xs: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
        """Guided eps where row ``i`` of ``xs`` is paired with condition ``i`` only."""
        n = xs.shape[0]
        flat = xs.reshape(n, -1)
        ab = sched.alpha_bar(t)
        sd = self.world.sigma_data
        e0 = eps_rows(flat, ab, sd, np.broadcast_to(self.log_prior, self.log_r.shape), self.mus)
        ec = eps_rows(flat, ab, sd, self.log_r, self.mus)
        return guided_eps(e0, ec, self.u).reshape(xs.shape)


def ddim_guided_step(world: ToyWorld, x_t: np.ndarray, t: int, t_prev: int,
                     condition: ConditionView, target_pose: PoseOffset, sched: NoiseSchedule,
                     u: float, eps_prime: np.ndarray, eta: float = 0.0,
                     literal_x0: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """One guided DDIM step for a single condition; returns ``(x_prev, eps_used)``."""
    eps = _Predictor(world, [condition], target_pose, u).guided(x_t, t, sched)[0]
    return ddim_step(x_t, eps, t, t_prev, sched, eta, eps_prime, literal_x0), eps


# --- stages ---------------------------------------------------------------

def stage_rngs(seed: int, stage: int) -> tuple[SeededRng, SeededRng]:
    return SeededRng(seed, (stage, NOISE_STREAM)), SeededRng(seed, (stage, SELECT_STREAM))


def _chain(world: ToyWorld, sched: NoiseSchedule, config: SamplerConfig, noise_rng: SeededRng,
           eps_fn: Callable[[np.ndarray, int], np.ndarray],
           state_fn: Callable | None = None) -> tuple[np.ndarray, list[float]]:
    """Run one reverse chain from fresh starting noise.

    ``eps_fn(x, t)`` returns the eps used for the step.  ``state_fn``, when
    given, replaces the update and receives ``(x, t, t_prev, eps_prime)``.
    """
    x = noise_rng.normal(world.shape)
    norms = []
    for t, t_prev in config.subschedule(sched).pairs():
        eps_prime = noise_rng.normal(world.shape)
        if state_fn is not None:
            x, eps = state_fn(x, t, t_prev, eps_prime)
        else:
            eps = eps_fn(x, t)
            x = reverse_step(x, eps, t, t_prev, sched, config, eps_prime)
        norms.append(float(np.linalg.norm(eps)))
    return x, norms


def interpolated_denoise_stage(world: ToyWorld, conditions: Sequence[ConditionView],
                               target_pose: PoseOffset, weights: Sequence[float],
                               sched: NoiseSchedule, config: SamplerConfig,
                               noise_rng: SeededRng, select_rng: SeededRng | None = None,
                               fusion: str = "eps") -> tuple[np.ndarray, list[float]]:
    """One full reverse chain guided by every condition at once.

    At each step the guided eps of each condition is computed against the
    shared state and fused with ``weights``.  ``fusion="state"`` instead steps
    each condition separately (same state, same per-step noise) and averages
    the next states; the update is affine in eps so both orders agree.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if len(conditions) == 0:
        raise SamplerError("condition set is empty")
    if len(weights) != len(conditions):
        raise SamplerError(f"{len(weights)} weights for {len(conditions)} conditions")
    if fusion not in ("eps", "state"):
        raise ValueError("fusion must be 'eps' or 'state'")
    pred = _Predictor(world, conditions, target_pose, config.guidance_scale)
    cap = config.max_conditions_per_step

    def pick():
        if cap is None or cap >= len(conditions):
            return None, weights
        if select_rng is None:
            raise ValueError("max_conditions_per_step needs a selection rng")
        idx = np.sort(select_rng.choice_without_replacement(len(conditions), cap))
        w = weights[idx]
        return idx, w / w.sum()

    def eps_fn(x, t):
        idx, w = pick()
        return axpy_grids(w, pred.guided(x, t, sched, idx))

    def state_fn(x, t, t_prev, eps_prime):
        idx, w = pick()
        eps_list = pred.guided(x, t, sched, idx)
        nxt = [reverse_step(x, e, t, t_prev, sched, config, eps_prime) for e in eps_list]
        return axpy_grids(w, nxt), axpy_grids(w, eps_list)

    if fusion == "eps":
        return _chain(world, sched, config, noise_rng, eps_fn)
    return _chain(world, sched, config, noise_rng, None, state_fn)


def stochastic_conditioning_stage(world, conditions, target_pose, sched, config,
                                  noise_rng, select_rng):
    """Reverse chain that re-draws one condition uniformly at every step."""
    pred = _Predictor(world, conditions, target_pose, config.guidance_scale)
    chosen: list[int] = []

    def eps_fn(x, t):
        i = int(select_rng.integers(len(conditions)))
        chosen.append(i)
        return pred.guided(x, t, sched, [i])[0]

    x, norms = _chain(world, sched, config, noise_rng, eps_fn)
    return x, norms, chosen


def interpolated_outputs_stage(world, conditions, target_pose, weights, sched, config,
                               noise_rng) -> tuple[list[np.ndarray], list[float]]:
    """Independent single-condition chains sharing start and per-step noise.

    Returns the per-condition outputs (to be averaged by the caller) and the
    weight-averaged eps norms.  One condition reduces to the direct chain.
    """
    if len(conditions) == 1:
        out, norms = interpolated_denoise_stage(world, conditions, target_pose, [1.0], sched,
                                                config, noise_rng)
        return [out], norms
    pred = _Predictor(world, conditions, target_pose, config.guidance_scale)
    n = len(conditions)
    x0 = noise_rng.normal(world.shape)
    xs = np.repeat(x0[None], n, axis=0)
    w = np.asarray(weights, dtype=np.float64)
    norms = []
    for t, t_prev in config.subschedule(sched).pairs():
        eps_prime = noise_rng.normal(world.shape)
        eps = pred.guided_rows(xs, t, sched)
        xs = reverse_step(xs, eps, t, t_prev, sched, config, eps_prime[None])
        norms.append(float(np.dot(w, np.linalg.norm(eps.reshape(n, -1), axis=1))))
    return list(xs), norms


def sample_batch(world: ToyWorld, conditions: Sequence[ConditionView] | None,
                 target_pose: PoseOffset, sched: NoiseSchedule, config: SamplerConfig,
                 rng: SeededRng, batch: int) -> np.ndarray:
    """``batch`` independent guided chains for one condition set (no fusion).

    With several conditions they are treated jointly (a single Bayes
    posterior), which is the exact multi-view conditional, not a fused one.
    """
    mus = world.render_all(target_pose).reshape(world.n_modes, -1)
    logs = np.stack([world.log_prior, log_responsibilities(world, conditions)])
    x = rng.normal((batch,) + world.shape)
    for t, t_prev in config.subschedule(sched).pairs():
        eps_prime = rng.normal(x.shape)
        e = eps_from_log_resp(x.reshape(batch, -1), sched.alpha_bar(t), world.sigma_data, logs, mus)
        eps = guided_eps(e[0], e[1], config.guidance_scale).reshape(x.shape)
        x = reverse_step(x, eps, t, t_prev, sched, config, eps_prime)
    return x


# --- auto-regressive runs -------------------------------------------------

@dataclass
class StageRecord:
    index: int
    target: PoseOffset
    conditions: list[dict]
    weights: list[float]
    eps_norms: list[float]
    frame: np.ndarray
    branch_outputs: list[np.ndarray] | None = None
    chosen: list[int] | None = None

    def to_dict(self) -> dict:
        d = {"index": self.index, "target": self.target.to_dict(),
             "conditions": self.conditions, "weights": self.weights,
             "weight_sum": float(sum(self.weights)), "eps_norms": self.eps_norms}
        if self.chosen is not None:
            d["chosen_conditions"] = self.chosen
        return d


@dataclass
class GenerationTrace:
    config: dict
    seed: int
    trajectory: Trajectory
    stages: list[StageRecord] = field(default_factory=list)
    wall_times: list[float] = field(default_factory=list)

    @property
    def frames(self) -> list[np.ndarray]:
        return [s.frame for s in self.stages]

    @property
    def poses(self) -> list[PoseOffset]:
        return [s.target for s in self.stages]

    def to_dict(self) -> dict:
        """JSON-ready record.  Wall times are left out so traces stay byte-reproducible."""
        return {"seed": self.seed, "config": self.config,
                "trajectory": self.trajectory.to_dict(),
                "n_frames": len(self.stages),
                "stages": [s.to_dict() for s in self.stages]}


def _snapshot(views: Sequence[ConditionView], target: PoseOffset) -> list[dict]:
    return [{"pose": v.pose.to_dict(), "origin": v.origin,
             "offset_to_target": (target - v.pose).to_dict(),
             "delta": view_delta(v.pose, target)} for v in views]


def _fused_condition(views: Sequence[ConditionView], weights: np.ndarray,
                     target: PoseOffset) -> ConditionView:
    """Blend condition images and their offsets to the target with ``weights``."""
    if len(views) == 1:
        return views[0]
    img = np.clip(axpy_grids(weights, [v.image for v in views]), -1.0, 1.0)
    offs = [v.pose - target for v in views]
    pose = target + PoseOffset(
        float(np.dot(weights, [o.d_azimuth for o in offs])),
        float(np.dot(weights, [o.d_elevation for o in offs])),
        float(np.dot(weights, [o.d_distance for o in offs])))
    return ConditionView(img, pose, "given")


def _fusion_weights(views: Sequence[ConditionView], target: PoseOffset,
                    params: WeightParams) -> np.ndarray:
    given = [view_delta(v.pose, target) for v in views if v.origin == "given"]
    gen = [view_delta(v.pose, target) for v in views if v.origin == "generated"]
    if not given:
        # Only generated members (standard auto-regression): they share all mass.
        e = np.exp(-np.asarray(gen) / params.tau_g)
        return e / e.sum()
    return compute_weights(given, gen, params)


def run_variant(world: ToyWorld, initial_conditions: Sequence[ConditionView],
                trajectory: Trajectory, config: SamplerConfig,
                sched: NoiseSchedule) -> GenerationTrace:
    """Generate every trajectory waypoint in order with ``config.variant``.

    Generated frames (clipped to ``[-1, 1]``) join the view set as
    ``generated`` conditions.  The variants differ only in which members of the
    set condition each stage and how their guidance is combined.
    """
    if not initial_conditions:
        raise SamplerError("at least one given condition is required")
    given = [c if c.origin == "given" else replace(c, origin="given") for c in initial_conditions]
    views: list[ConditionView] = list(given)
    trace = GenerationTrace(config.to_dict(), config.seed, trajectory)
    variant = config.variant
    for stage, target in enumerate(trajectory):
        t0 = time.perf_counter()
        noise_rng, select_rng = stage_rngs(config.seed, stage)
        if variant == "direct":
            members = given
        elif variant == "standard-autoregression":
            members = [views[-1]]
        else:
            members = views
        weights = _fusion_weights(members, target, config.weights)
        chosen = branches = None

        if variant in ("direct", "interpolated-denoising", "standard-autoregression"):
            frame, norms = interpolated_denoise_stage(world, members, target, weights, sched,
                                                      config, noise_rng, select_rng)
        elif variant == "interpolated-conditions":
            cond = _fused_condition(members, weights, target)
            frame, norms = interpolated_denoise_stage(world, [cond], target, [1.0], sched,
                                                      config, noise_rng, select_rng)
        elif variant == "interpolated-outputs":
            branches, norms = interpolated_outputs_stage(world, members, target, weights, sched,
                                                         config, noise_rng)
            frame = axpy_grids(weights, branches)
        else:
            frame, norms, chosen = stochastic_conditioning_stage(world, members, target, sched,
                                                                 config, noise_rng, select_rng)
            weights = np.bincount(chosen, minlength=len(members)) / len(chosen)

        if not np.all(np.isfinite(frame)):
            raise SamplerError(f"stage {stage} produced non-finite values")
        frame = np.clip(frame, -1.0, 1.0)
        trace.stages.append(StageRecord(stage, target, _snapshot(members, target),
                                        [float(w) for w in weights], norms, frame,
                                        branches, chosen))
        trace.wall_times.append(time.perf_counter() - t0)
        views.append(ConditionView(frame, target, "generated"))
        log.debug("stage %d (%s) done in %.3fs", stage, variant, trace.wall_times[-1])
    return trace


def run_autoregressive(world: ToyWorld, initial_conditions: Sequence[ConditionView],
                       trajectory: Trajectory, config: SamplerConfig,
                       sched: NoiseSchedule) -> GenerationTrace:
    """Interpolated-denoising auto-regression over ``trajectory``."""
    return run_variant(world, initial_conditions, trajectory,
                       replace(config, variant="interpolated-denoising"), sched)
