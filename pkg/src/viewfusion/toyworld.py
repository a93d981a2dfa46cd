"""An analytically tractable multi-view scene family.

Each latent *mode* is a textured vertical cylinder rendered by a tiny
ray-caster onto a small grid.  The clean-view distribution at a pose is the
isotropic Gaussian mixture ``sum_m r_m N(render(m, pose), sigma_data^2 I)``,
so conditioning on views, the Bayes-optimal noise predictor, and exact
sampling are all closed-form.  These stand in for a trained pose-conditioned
network.

Renderer variants
-----------------
``backside``
    ``n_modes`` objects that share the front half of the surface and differ
    only in the brightness of the back half.  A view straight from the
    reference azimuth sees none of the back, so it carries no mode
    information: the forward view is ambiguous and every mode is plausible
    behind it.
``sectors``
    ``2**n_sectors`` objects whose surface is cut into equal azimuthal sectors
    with a binary brightness each.  Any view reveals only the sectors facing
    it, so consistency across a spin depends on remembering earlier views.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .conditioning import PoseOffset, wrap_angle
from .numerics import SeededRng, as_grid
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

BACKGROUND = -0.8
FRONT_BASE = 0.1
MARKER = 0.7
MARKER_HALF_WIDTH = math.radians(20.0)
CAP = 0.45
SUPERSAMPLE = 4
RENDERERS = ("backside", "sectors")


@dataclass(frozen=True, eq=False)
class ToyWorld:
    height: int = 16
    width: int = 16
    channels: int = 1
    renderer: str = "backside"
    n_modes: int = 2
    n_sectors: int = 8
    sigma_data: float = 0.05
    prior: tuple[float, ...] | None = None
    reference: PoseOffset = PoseOffset(0.0, 0.0, 0.0)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.renderer not in RENDERERS:
            raise ValueError(f"unknown renderer {self.renderer!r}; choose from {RENDERERS}")
        if self.renderer == "sectors":
            if not 1 <= self.n_sectors <= 12:
                raise ValueError("n_sectors must lie in [1, 12]")
            object.__setattr__(self, "n_modes", 2 ** self.n_sectors)
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if min(self.height, self.width, self.channels) < 1:
            raise ValueError("grid dims must be positive")
        if not self.sigma_data > 0:
            raise ValueError("sigma_data must be positive")
        prior = np.full(self.n_modes, 1.0 / self.n_modes) if self.prior is None \
            else np.asarray(self.prior, dtype=np.float64)
        if prior.shape != (self.n_modes,) or np.any(prior < 0):
            raise ValueError(f"prior must be {self.n_modes} non-negative reals")
        if abs(prior.sum() - 1.0) > 1e-12:
            raise ValueError(f"prior must sum to 1, sums to {prior.sum()!r}")
        object.__setattr__(self, "prior", tuple(float(p) for p in prior))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    @property
    def dim(self) -> int:
        return self.height * self.width * self.channels

    @property
    def log_prior(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(self.prior))

    def resolve(self, offset: PoseOffset) -> PoseOffset:
        """Absolute pose of a reference-relative offset."""
        return self.reference + offset

    # -- rendering ---------------------------------------------------------

    def _texture(self, theta: np.ndarray) -> np.ndarray:
        """Surface brightness for every mode at surface angles ``theta``; shape (M, n)."""
        th = np.vectorize(wrap_angle, otypes=[float])(theta) if theta.size else theta
        if self.renderer == "backside":
            base = np.where(np.abs(th) < MARKER_HALF_WIDTH, MARKER, FRONT_BASE)
            levels = np.linspace(0.9, -0.5, self.n_modes) if self.n_modes > 1 else np.array([0.9])
            back = np.abs(th) > math.pi / 2
            return np.where(back[None, :], levels[:, None], base[None, :])
        k = self.n_sectors
        idx = np.floor((th + math.pi) / (2.0 * math.pi / k)).astype(int) % k
        bits = (np.arange(self.n_modes)[:, None] >> idx[None, :]) & 1
        return 0.15 + 0.5 * (2.0 * bits - 1.0)

    def render_all(self, pose: PoseOffset) -> np.ndarray:
        """Clean renderings of every mode at a reference-relative pose, shape (M, H, W, C)."""
        key = (round(pose.d_azimuth, 12), round(pose.d_elevation, 12), round(pose.d_distance, 12))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        out = self._render_uncached(self.resolve(pose))
        out.setflags(write=False)
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[key] = out
        return out

    def _render_uncached(self, pose: PoseOffset) -> np.ndarray:
        H, W, S = self.height, self.width, SUPERSAMPLE
        scale = 1.0 / (1.0 + 0.5 * pose.d_distance)
        hw = 0.36 * W * scale
        hh = 0.36 * H * scale
        cy = H / 2.0 + 0.12 * H * math.sin(pose.d_elevation)
        cx = W / 2.0
        offs = (np.arange(S) + 0.5) / S
        ys = (np.arange(H)[:, None] + offs[None, :]).reshape(-1)
        xs = (np.arange(W)[:, None] + offs[None, :]).reshape(-1)
        Y, X = np.meshgrid(ys, xs, indexing="ij")
        u = (X - cx) / hw
        v = (Y - cy) / hh
        body = (np.abs(u) < 1.0) & (np.abs(v) < 1.0)
        vals = np.full((self.n_modes,) + Y.shape, BACKGROUND)

        cap_h = 0.5 * hw * abs(math.sin(pose.d_elevation))
        if cap_h > 0:
            cap_cy = cy - hh * math.copysign(1.0, pose.d_elevation)
            cap = (((X - cx) / hw) ** 2 + ((Y - cap_cy) / cap_h) ** 2 < 1.0) & ~body
            vals[:, cap] = CAP

        ub = u[body]
        theta = pose.d_azimuth + np.arcsin(ub)
        shade = 0.55 + 0.45 * np.sqrt(1.0 - ub * ub)
        tex = self._texture(theta)
        vals[:, body] = BACKGROUND + (tex - BACKGROUND) * shade[None, :]

        px = vals.reshape(self.n_modes, H, S, W, S).mean(axis=(2, 4))
        tint = np.linspace(1.0, 0.8, self.channels) if self.channels > 1 else np.ones(1)
        return np.clip(px[..., None] * tint[None, None, None, :], -1.0, 1.0)

    def render(self, mode: int, pose: PoseOffset) -> np.ndarray:
        """Clean rendering of ``mode`` (1-based) at a reference-relative pose."""
        if not 1 <= mode <= self.n_modes:
            raise ValueError(f"mode {mode} outside [1, {self.n_modes}]")
        return np.array(self.render_all(pose)[mode - 1])

    def mode_separation(self, pose: PoseOffset) -> float:
        """Smallest L2 distance between renderings of two distinct modes."""
        if self.n_modes < 2:
            return math.inf
        r = self.render_all(pose).reshape(self.n_modes, -1)
        if self.n_modes <= 64:
            diff = r[:, None, :] - r[None, :, :]
            d2 = np.einsum("ijd,ijd->ij", diff, diff)
        else:
            # Gram form keeps memory linear in M; round-off is ~1e-7 in distance.
            sq = np.sum(r * r, axis=1)
            d2 = sq[:, None] + sq[None, :] - 2.0 * r @ r.T
        np.fill_diagonal(d2, np.inf)
        return float(np.sqrt(max(d2.min(), 0.0)))


@dataclass(frozen=True, eq=False)
class ConditionView:
    """A conditioning image with its reference-relative pose."""

    image: np.ndarray
    pose: PoseOffset
    origin: str = "given"

    def __post_init__(self):
        img = as_grid(self.image)
        if img.min() < -1.0 or img.max() > 1.0:
            raise ValueError("condition images must lie in [-1, 1]")
        if self.origin not in ("given", "generated"):
            raise ValueError(f"origin must be 'given' or 'generated', got {self.origin!r}")
        img.setflags(write=False)
        object.__setattr__(self, "image", img)


class Posterior(NamedTuple):
    probs: np.ndarray
    fallback: bool


def log_responsibilities(world: ToyWorld, conditions: Sequence[ConditionView] | None) -> np.ndarray:
    """Log posterior over modes given the condition views (log prior if none)."""
    logp = world.log_prior.copy()
    if not conditions:
        return logp
    s2 = world.sigma_data ** 2
    for c in conditions:
        if c.image.shape != world.shape:
            raise ValueError(f"condition shape {c.image.shape} != world shape {world.shape}")
        mus = world.render_all(c.pose)
        d = mus - c.image[None]
        logp = logp - np.sum(d * d, axis=(1, 2, 3)) / (2.0 * s2)
    return logp - logsumexp(logp)


def posterior_responsibilities(world: ToyWorld, conditions: Sequence[ConditionView]) -> Posterior:
    """Posterior probabilities of each mode given the condition views."""
    if not conditions:
        raise ValueError("at least one condition view is required")
    lr = log_responsibilities(world, conditions)
    p = np.exp(lr)
    if not np.all(np.isfinite(p)) or p.sum() <= 0:
        log.warning("degenerate likelihoods; falling back to the prior")
        return Posterior(np.asarray(world.prior), True)
    return Posterior(p / p.sum(), False)


def eps_from_log_resp(x: np.ndarray, alpha_bar: float, sigma_data: float,
                      log_r: np.ndarray, mus: np.ndarray) -> np.ndarray:
    """Bayes-optimal noise prediction for a batch of states and responsibility sets.

    ``x`` is (B, D), ``log_r`` is (N, M) and ``mus`` is (M, D); returns (N, B, D).
    Each mode contributes its Gaussian posterior mean
    ``mu + k (x - sqrt(abar) mu)`` with ``k = sqrt(abar) s^2 / v``, weighted by
    responsibilities updated with the ``x`` likelihood.
    """
    sab = math.sqrt(alpha_bar)
    v = alpha_bar * sigma_data ** 2 + 1.0 - alpha_bar
    k = sab * sigma_data ** 2 / v
    diff = x[:, None, :] - sab * mus[None, :, :]
    d2 = np.einsum("bmd,bmd->bm", diff, diff)
    logits = log_r[:, None, :] - d2[None, :, :] / (2.0 * v)
    logits = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=-1, keepdims=True)
    mean_mu = np.einsum("nbm,md->nbd", w, mus)
    x0_hat = (1.0 - k * sab) * mean_mu + k * x[None]
    return (x[None] - sab * x0_hat) / math.sqrt(1.0 - alpha_bar)


def eps_rows(x: np.ndarray, alpha_bar: float, sigma_data: float,
             log_r: np.ndarray, mus: np.ndarray) -> np.ndarray:
    """Row-paired variant of :func:`eps_from_log_resp`: state ``i`` with ``log_r[i]``.

    ``x`` and ``log_r`` are (N, D) and (N, M); returns (N, D).
    """
    sab = math.sqrt(alpha_bar)
    v = alpha_bar * sigma_data ** 2 + 1.0 - alpha_bar
    k = sab * sigma_data ** 2 / v
    diff = x[:, None, :] - sab * mus[None, :, :]
    logits = log_r - np.einsum("nmd,nmd->nm", diff, diff) / (2.0 * v)
    logits = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=-1, keepdims=True)
    x0_hat = (1.0 - k * sab) * (w @ mus) + k * x
    return (x - sab * x0_hat) / math.sqrt(1.0 - alpha_bar)


def optimal_eps(world: ToyWorld, x_t: np.ndarray, t: int, sched: NoiseSchedule,
                conditions: Sequence[ConditionView] | None, target_pose: PoseOffset) -> np.ndarray:
    """Closed-form optimal noise predictor at ``target_pose``.

    ``conditions=None`` (or empty) gives the unconditional predictor: the image
    conditions are marginalized while the target geometry is kept.
    ``x_t`` may carry leading batch dimensions.
    """
    x = np.asarray(x_t, dtype=np.float64)
    lead = x.shape[:-3]
    if x.shape[-3:] != world.shape:
        raise ValueError(f"state shape {x.shape[-3:]} != world shape {world.shape}")
    mus = world.render_all(target_pose).reshape(world.n_modes, -1)
    log_r = log_responsibilities(world, conditions)[None, :]
    eps = eps_from_log_resp(x.reshape(-1, world.dim), sched.alpha_bar(t), world.sigma_data, log_r, mus)
    return eps[0].reshape(lead + world.shape)


def log_marginal_density(world: ToyWorld, x_t: np.ndarray, t: int, sched: NoiseSchedule,
                         conditions: Sequence[ConditionView] | None, target_pose: PoseOffset) -> float:
    """``log q_t(x_t)``: the mixture convolved with the forward kernel, evaluated directly."""
    ab = sched.alpha_bar(t)
    v = ab * world.sigma_data ** 2 + 1.0 - ab
    mus = world.render_all(target_pose).reshape(world.n_modes, -1)
    x = np.asarray(x_t, dtype=np.float64).reshape(-1)
    d = x[None, :] - math.sqrt(ab) * mus
    comp = (log_responsibilities(world, conditions) - np.sum(d * d, axis=1) / (2.0 * v)
            - 0.5 * world.dim * math.log(2.0 * math.pi * v))
    return float(logsumexp(comp))


def oracle_sample_view(world: ToyWorld, conditions: Sequence[ConditionView] | None,
                       target_pose: PoseOffset, rng: SeededRng) -> tuple[np.ndarray, int]:
    """Exact sample of the target view: draw a mode, render it, add data noise.

    Returns the image and the 1-based mode drawn.
    """
    probs = np.exp(log_responsibilities(world, conditions))
    probs = probs / probs.sum()
    mode = int(rng.choice(world.n_modes, probs)) + 1
    img = world.render(mode, target_pose) + world.sigma_data * rng.normal(world.shape)
    return img, mode
