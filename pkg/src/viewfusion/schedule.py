"""Diffusion noise schedules (1-indexed timesteps) and DDIM sub-schedules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep constants for a T-step forward process.

    Arrays are stored 0-based internally; use the accessor methods, which take
    the 1-based ``t`` and treat ``t = 0`` as the clean data
    (``alpha_bar(0) == 1``).
    """

    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must lie in (0, 1)")
        if np.any(np.diff(b) < 0):
            raise ValueError("betas must be non-decreasing")
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)
        alphas = 1.0 - b
        ab = np.cumprod(alphas)
        ab_prev = np.concatenate([[1.0], ab[:-1]])
        denom = 1.0 - ab
        sig2 = np.divide(b * (1.0 - ab_prev), denom, out=np.zeros_like(b), where=denom > 0)
        for name, arr in (("alphas", alphas), ("alpha_bars", ab),
                          ("alpha_bars_prev", ab_prev), ("sigmas", np.sqrt(sig2))):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def _check(self, t: int, allow_zero: bool = False) -> int:
        lo = 0 if allow_zero else 1
        if not lo <= t <= self.T:
            raise IndexError(f"timestep {t} outside [{lo}, {self.T}]")
        return t - 1

    def beta(self, t: int) -> float:
        return float(self.betas[self._check(t)])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check(t)])

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        return float(self.alpha_bars[self._check(t)])

    def sigma(self, t: int) -> float:
        """DDPM posterior standard deviation, ``sqrt(beta_t (1 - abar_{t-1}) / (1 - abar_t))``."""
        return float(self.sigmas[self._check(t)])

    def ddim_sigma(self, t: int, t_prev: int, eta: float) -> float:
        ab_t = self.alpha_bar(t)
        ab_p = self.alpha_bar(t_prev)
        if eta == 0.0 or ab_t >= 1.0:
            return 0.0
        return float(eta * np.sqrt((1.0 - ab_p) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_p))


def linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly spaced betas from ``beta_start`` to ``beta_end``."""
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T, dtype=np.float64))


def forward_diffuse(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Sample ``x_t`` given clean ``x0`` and the noise draw ``eps``."""
    if np.shape(x0) != np.shape(eps):
        raise ValueError(f"shape mismatch: {np.shape(x0)} vs {np.shape(eps)}")
    sched._check(t)
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=np.float64)


@dataclass(frozen=True)
class DdimSubSchedule:
    """Descending subset of timesteps ending at 1, with stochasticity ``eta``."""

    steps: tuple[int, ...]
    eta: float = 0.0

    def __post_init__(self):
        steps = tuple(int(s) for s in self.steps)
        object.__setattr__(self, "steps", steps)
        if not steps:
            raise ValueError("sub-schedule needs at least one step")
        if any(a <= b for a, b in zip(steps, steps[1:])):
            raise ValueError("steps must be strictly decreasing")
        if steps[-1] != 1:
            raise ValueError("last step must be t=1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")

    def pairs(self):
        """Yield ``(t, t_prev)`` with ``t_prev = 0`` after the last step."""
        nxt = self.steps[1:] + (0,)
        return list(zip(self.steps, nxt))


def ddim_subschedule(sched: NoiseSchedule, n_steps: int = 50, eta: float = 0.0) -> DdimSubSchedule:
    """Evenly strided sub-schedule ``1, 1+k, 1+2k, ...`` reversed.

    For T=1000 and 50 steps this is ``981, 961, ..., 21, 1``.
    """
    if not 1 <= n_steps <= sched.T:
        raise ValueError(f"n_steps must lie in [1, {sched.T}], got {n_steps}")
    stride = sched.T // n_steps
    steps = 1 + stride * np.arange(n_steps)
    return DdimSubSchedule(tuple(int(s) for s in steps[::-1]), float(eta))


def ddpm_subschedule(sched: NoiseSchedule) -> DdimSubSchedule:
    """The full chain ``T, T-1, ..., 1`` as a sub-schedule (used by the DDPM sampler)."""
    return DdimSubSchedule(tuple(range(sched.T, 0, -1)), 0.0)
