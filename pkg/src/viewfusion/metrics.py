"""Image-quality and multi-view consistency measures for generated sequences."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .conditioning import PoseOffset
from .numerics import ShapeError, psnr
from .toyworld import ToyWorld

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 7
DATA_RANGE = 2.0
TIE_TOL = 1e-9


def ssim(a: np.ndarray, b: np.ndarray, window: int = SSIM_WINDOW,
         k1: float = SSIM_K1, k2: float = SSIM_K2, data_range: float = DATA_RANGE) -> float:
    """Mean structural similarity over all valid uniform ``window x window`` patches.

    Channels are scored independently and averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if window % 2 != 1 or window > min(a.shape[:2]):
        raise ValueError(f"window must be odd and <= {min(a.shape[:2])}, got {window}")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def local_mean(x):
        return sliding_window_view(x, (window, window), axis=(0, 1)).mean(axis=(-2, -1))

    mu_a, mu_b = local_mean(a), local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def decode_mode_scored(world: ToyWorld, frame: np.ndarray, pose: PoseOffset) -> tuple[int, bool]:
    """Nearest-rendering mode (1-based) and whether the best match was a tie."""
    if np.shape(frame) != world.shape:
        raise ShapeError(f"frame shape {np.shape(frame)} != world shape {world.shape}")
    r = world.render_all(pose).reshape(world.n_modes, -1)
    d = np.sum((r - np.asarray(frame).reshape(1, -1)) ** 2, axis=1)
    best = int(np.argmin(d))
    tie = bool(np.sum(d <= d[best] + TIE_TOL) > 1)
    return best + 1, tie


def decode_mode(world: ToyWorld, frame: np.ndarray, pose: PoseOffset) -> int:
    """Mode whose rendering at ``pose`` is closest in L2; ties go to the lowest index."""
    return decode_mode_scored(world, frame, pose)[0]


@dataclass
class PairMetrics:
    i: int
    j: int
    psnr: float
    ssim: float
    l1: float
    same_mode: bool | None = None


@dataclass
class ConsistencyReport:
    pairs: list[PairMetrics]
    cyclic: bool
    modes: list[int] | None = None
    ties: list[bool] | None = None
    mean_psnr: float = 0.0
    mean_ssim: float = 0.0
    mean_l1: float = 0.0
    min_psnr: float = 0.0
    min_ssim: float = 0.0
    agreement: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_rows(self) -> list[list]:
        rows = [["i", "j", "psnr", "ssim", "l1", "same_mode"]]
        for p in self.pairs:
            rows.append([p.i, p.j, f"{p.psnr:.6f}", f"{p.ssim:.6f}", f"{p.l1:.6f}",
                         "" if p.same_mode is None else int(p.same_mode)])
        return rows


def mode_agreement(modes: Sequence[int], cyclic: bool) -> float:
    n = len(modes)
    idx = [(i, (i + 1) % n) for i in range(n if cyclic else n - 1)]
    return float(np.mean([modes[i] == modes[j] for i, j in idx]))


def adjacent_consistency(frames: Sequence[np.ndarray], cyclic: bool = False,
                         world: ToyWorld | None = None,
                         poses: Sequence[PoseOffset] | None = None,
                         modes: Sequence[int] | None = None) -> ConsistencyReport:
    """Pairwise PSNR/SSIM/L1 between consecutive frames, wrapping when ``cyclic``.

    Frames must already be in spatial order.  Mode agreement is filled in when
    ``modes`` are supplied or can be decoded from ``world`` and ``poses``.
    """
    n = len(frames)
    if n < 2:
        raise ValueError(f"need at least 2 frames, got {n}")
    ties = None
    if modes is None and world is not None:
        if poses is None or len(poses) != n:
            raise ValueError("decoding modes needs one pose per frame")
        scored = [decode_mode_scored(world, f, p) for f, p in zip(frames, poses)]
        modes = [m for m, _ in scored]
        ties = [t for _, t in scored]
    idx = [(i, (i + 1) % n) for i in range(n if cyclic else n - 1)]
    pairs = []
    for i, j in idx:
        pairs.append(PairMetrics(i, j, psnr(frames[i], frames[j]), ssim(frames[i], frames[j]),
                                 float(np.mean(np.abs(np.asarray(frames[i]) - np.asarray(frames[j])))),
                                 None if modes is None else bool(modes[i] == modes[j])))
    ps = [p.psnr for p in pairs]
    ss = [p.ssim for p in pairs]
    return ConsistencyReport(
        pairs=pairs, cyclic=cyclic,
        modes=None if modes is None else [int(m) for m in modes], ties=ties,
        mean_psnr=float(np.mean(ps)), mean_ssim=float(np.mean(ss)),
        mean_l1=float(np.mean([p.l1 for p in pairs])),
        min_psnr=float(np.min(ps)), min_ssim=float(np.min(ss)),
        agreement=None if modes is None else mode_agreement(modes, cyclic))


def spacetime_slice(frames: Sequence[np.ndarray], scanline: int) -> np.ndarray:
    """Stack row ``scanline`` of every frame into a (n_frames, W, C) grid."""
    if len(frames) == 0:
        raise ValueError("no frames")
    h = np.shape(frames[0])[0]
    if not 0 <= scanline < h:
        raise ValueError(f"scanline {scanline} outside [0, {h})")
    return np.stack([np.asarray(f, dtype=np.float64)[scanline] for f in frames])
