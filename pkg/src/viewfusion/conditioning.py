"""Pose offsets, view-distance weights and generation trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Guards ceil() against binary round-off, e.g. radians(20)/radians(10) > 2.
_CEIL_SLACK = 1e-9


def wrap_angle(a: float) -> float:
    """Wrap an angle in radians into ``(-pi, pi]``."""
    w = math.pi - math.fmod(math.pi - a, 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    elif w > math.pi:
        w -= 2.0 * math.pi
    return w


@dataclass(frozen=True)
class PoseOffset:
    """Camera offset in spherical coordinates (radians, radians, unitless).

    Used both for offsets between two views and for a view's pose relative to
    the reference (first given) view.
    """

    d_azimuth: float = 0.0
    d_elevation: float = 0.0
    d_distance: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "d_azimuth", wrap_angle(float(self.d_azimuth)))
        object.__setattr__(self, "d_elevation", float(self.d_elevation))
        object.__setattr__(self, "d_distance", float(self.d_distance))

    @classmethod
    def from_degrees(cls, azimuth: float = 0.0, elevation: float = 0.0, distance: float = 0.0) -> "PoseOffset":
        return cls(math.radians(azimuth), math.radians(elevation), distance)

    def __add__(self, other: "PoseOffset") -> "PoseOffset":
        return PoseOffset(self.d_azimuth + other.d_azimuth,
                          self.d_elevation + other.d_elevation,
                          self.d_distance + other.d_distance)

    def __sub__(self, other: "PoseOffset") -> "PoseOffset":
        return PoseOffset(self.d_azimuth - other.d_azimuth,
                          self.d_elevation - other.d_elevation,
                          self.d_distance - other.d_distance)

    def __neg__(self) -> "PoseOffset":
        return PoseOffset(-self.d_azimuth, -self.d_elevation, -self.d_distance)

    def scaled(self, k: float) -> "PoseOffset":
        return PoseOffset(self.d_azimuth * k, self.d_elevation * k, self.d_distance * k)

    def delta(self) -> float:
        """Scalar view distance ``|da|/pi + |de|/pi + |dd|``."""
        return (abs(self.d_azimuth) / math.pi + abs(self.d_elevation) / math.pi
                + abs(self.d_distance))

    def is_identity(self) -> bool:
        return self.d_azimuth == 0.0 and self.d_elevation == 0.0 and self.d_distance == 0.0

    def to_dict(self) -> dict:
        return {"azimuth_deg": math.degrees(self.d_azimuth),
                "elevation_deg": math.degrees(self.d_elevation),
                "distance": self.d_distance}

    @classmethod
    def from_dict(cls, d: dict) -> "PoseOffset":
        return cls.from_degrees(d.get("azimuth_deg", 0.0), d.get("elevation_deg", 0.0),
                                d.get("distance", 0.0))


def view_delta(view_pose: PoseOffset, target_pose: PoseOffset) -> float:
    """Distance between two reference-relative poses."""
    return (target_pose - view_pose).delta()


@dataclass(frozen=True)
class WeightParams:
    tau_c: float = 0.5
    tau_g: float = 1.0

    def __post_init__(self):
        if not self.tau_c > 0:
            raise ValueError(f"tau_c must be positive, got {self.tau_c}")
        if not self.tau_g > 0:
            raise ValueError(f"tau_g must be positive, got {self.tau_g}")


def _normalized_exp(deltas: np.ndarray, tau: float) -> np.ndarray:
    # Shift by the minimum so tiny temperatures do not underflow to 0/0.
    z = -(deltas - deltas.min()) / tau
    e = np.exp(z)
    return e / e.sum()


def compute_weights(given_deltas: Sequence[float], generated_deltas: Sequence[float],
                    params: WeightParams = WeightParams()) -> np.ndarray:
    """Fusion weights for ``k`` given views followed by the generated views.

    Given view ``n``: ``exp(-d_n/tau_c) * p_n`` with ``p`` the normalized
    exponential over the given views.  Generated views share the remaining
    mass ``1 - sum(given)`` in proportion to ``exp(-d_n/tau_g)``.  With no
    generated views the given weights are renormalized to sum to one.
    """
    g = np.asarray(given_deltas, dtype=np.float64).reshape(-1)
    q = np.asarray(generated_deltas, dtype=np.float64).reshape(-1)
    if g.size == 0:
        raise ValueError("at least one given view is required")
    if np.any(g < 0) or np.any(q < 0):
        raise ValueError("view distances must be non-negative")
    given = np.exp(-g / params.tau_c) * _normalized_exp(g, params.tau_c)
    if q.size == 0:
        return given / given.sum()
    rest = 1.0 - given.sum()
    return np.concatenate([given, rest * _normalized_exp(q, params.tau_g)])


def single_view_weights(given_delta: float, generated_deltas: Sequence[float],
                        params: WeightParams = WeightParams()) -> np.ndarray:
    """The one-given-view special case written out directly.

    ``w_1 = exp(-d_1/tau_c)`` and the generated views split ``1 - w_1``.
    Kept as an independent path to cross-check :func:`compute_weights`.
    """
    w1 = math.exp(-given_delta / params.tau_c)
    q = np.asarray(generated_deltas, dtype=np.float64)
    if q.size == 0:
        return np.array([1.0])
    e = np.exp(-q / params.tau_g)
    return np.concatenate([[w1], (1.0 - w1) * e / e.sum()])


@dataclass(frozen=True)
class Trajectory:
    """Ordered target poses (relative to the reference view)."""

    poses: tuple[PoseOffset, ...]
    mode: str = "single-target"
    degenerate: bool = False

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "degenerate": self.degenerate,
                "poses": [p.to_dict() for p in self.poses]}


def plan_single_target(target: PoseOffset, delta_max: float) -> Trajectory:
    """Equally spaced waypoints from the reference to ``target``.

    The count is ``max(ceil(|da|/delta), ceil(|de|/delta))`` (at least one for a
    distance-only move); the last waypoint is exactly ``target``.  An identity
    target yields an empty, degenerate trajectory.
    """
    if not delta_max > 0:
        raise ValueError(f"delta_max must be positive, got {delta_max}")
    if target.is_identity():
        return Trajectory((), "single-target", degenerate=True)
    s = max(math.ceil(abs(target.d_azimuth) / delta_max - _CEIL_SLACK),
            math.ceil(abs(target.d_elevation) / delta_max - _CEIL_SLACK), 1)
    poses = [PoseOffset(target.d_azimuth * n / s, target.d_elevation * n / s,
                        target.d_distance * n / s) for n in range(1, s)]
    poses.append(target)
    return Trajectory(tuple(poses), "single-target")


def plan_spin(delta: float, n_views: int) -> Trajectory:
    """Azimuth-only skip order ``delta, -delta, 2 delta, -2 delta, ...``.

    ``n_views`` counts the condition view, so ``n_views - 1`` targets are
    emitted; for even ``n_views`` the last one is the opposite view at pi.
    """
    if n_views < 2:
        raise ValueError(f"n_views must be >= 2, got {n_views}")
    if not delta > 0 or not math.isclose(delta * n_views, 2.0 * math.pi, rel_tol=1e-9):
        raise ValueError(f"delta={math.degrees(delta):g} deg does not split the circle into {n_views} views")
    poses = []
    for m in range(1, (n_views - 1) // 2 + 1):
        poses.append(PoseOffset(m * delta))
        poses.append(PoseOffset(-m * delta))
    if n_views % 2 == 0:
        poses.append(PoseOffset(math.pi))
    return Trajectory(tuple(poses), "spin")
