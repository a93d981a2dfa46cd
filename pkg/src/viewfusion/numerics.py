"""Small dense-grid arithmetic, seeded randomness and image file I/O.

Grids are plain ``numpy`` arrays of shape ``(H, W, C)`` in float64.  Clean
images live in ``[-1, 1]``; noisy diffusion states are unbounded.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

PSNR_CAP_DB = 99.0


class ShapeError(ValueError):
    """Raised when grids that must share a shape do not."""


def as_grid(data, height: int | None = None, width: int | None = None,
            channels: int | None = None) -> np.ndarray:
    """Coerce ``data`` into a finite float64 ``(H, W, C)`` grid.

    A 2-D input is promoted to a single channel.  Optional dimensions are
    checked when given.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"expected a (H, W, C) grid, got ndim={arr.ndim}")
    for name, want, got in (("height", height, arr.shape[0]),
                            ("width", width, arr.shape[1]),
                            ("channels", channels, arr.shape[2])):
        if want is not None and want != got:
            raise ShapeError(f"{name} mismatch: expected {want}, got {got}")
    if min(arr.shape) < 1:
        raise ShapeError(f"grid dims must be positive, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("grid contains non-finite values")
    return arr


class SeededRng:
    """One deterministic random stream, keyed by ``(seed, stream_id)``.

    Backed by PCG64 seeded through ``SeedSequence`` so that identical keys give
    bit-identical draws on every platform numpy supports.  Distinct stream ids
    are statistically independent.
    """

    def __init__(self, seed: int, stream_id: int | Sequence[int] = 0):
        self.seed = int(seed)
        key = (stream_id,) if isinstance(stream_id, (int, np.integer)) else tuple(stream_id)
        self.stream_id = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(entropy=self.seed & (2**64 - 1), spawn_key=self.stream_id)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def integers(self, high: int, size=None):
        return self._gen.integers(0, high, size=size)

    def uniform(self) -> float:
        return float(self._gen.random())

    def choice(self, n: int, p=None) -> int:
        return int(self._gen.choice(n, p=p))

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        return self._gen.permutation(n)[:k]

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, stream_id={self.stream_id})"


def sample_standard_normal(rng: SeededRng, shape: Sequence[int]) -> np.ndarray:
    """Draw an i.i.d. standard-normal grid, advancing ``rng``."""
    shape = tuple(int(s) for s in shape)
    if not shape or min(shape) < 1:
        raise ValueError(f"shape dims must be positive, got {shape}")
    return rng.normal(shape)


def axpy_grids(coeffs: Sequence[float], grids: Sequence[np.ndarray]) -> np.ndarray:
    """Return the elementwise linear combination ``sum_i coeffs[i] * grids[i]``.

    The accumulation starts from the first term (not from zero), so a single
    grid with coefficient 1.0 is returned bit-for-bit.
    """
    if len(coeffs) != len(grids):
        raise ShapeError(f"{len(coeffs)} coefficients for {len(grids)} grids")
    if len(grids) == 0:
        raise ShapeError("need at least one grid")
    shape = np.shape(grids[0])
    for i, g in enumerate(grids):
        if np.shape(g) != shape:
            raise ShapeError(f"grid {i} has shape {np.shape(g)}, expected {shape}")
    out = float(coeffs[0]) * np.asarray(grids[0], dtype=np.float64)
    for c, g in zip(coeffs[1:], grids[1:]):
        out = out + float(c) * np.asarray(g, dtype=np.float64)
    return out


def _check_same(a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    _check_same(a, b)
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(d * d))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 2.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at ``PSNR_CAP_DB`` for equal grids."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / err)))


# --- PGM / PPM emitters ---------------------------------------------------

def to_bytes(grid: np.ndarray) -> np.ndarray:
    """Map ``[-1, 1]`` linearly onto ``[0, 255]`` with clamping."""
    g = np.clip(np.asarray(grid, dtype=np.float64), -1.0, 1.0)
    return np.rint((g + 1.0) * 127.5).astype(np.uint8)


def from_bytes(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 127.5 - 1.0


def write_pnm(path: str | Path, grid: np.ndarray) -> Path:
    """Write a 1-channel grid as binary PGM (P5) or a 3-channel grid as PPM (P6)."""
    grid = as_grid(grid)
    h, w, c = grid.shape
    if c == 1:
        magic = b"P5"
    elif c == 3:
        magic = b"P6"
    else:
        raise ShapeError(f"PNM output supports 1 or 3 channels, got {c}")
    path = Path(path)
    header = magic + b"\n%d %d\n255\n" % (w, h)
    path.write_bytes(header + to_bytes(grid).tobytes())
    return path


def _tokens(data: bytes):
    """Yield whitespace-separated header tokens and the offset after each."""
    i = 0
    n = len(data)
    while True:
        while i < n and (data[i:i + 1].isspace() or data[i:i + 1] == b"#"):
            if data[i:i + 1] == b"#":
                while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                    i += 1
            else:
                i += 1
        j = i
        while j < n and not data[j:j + 1].isspace():
            j += 1
        yield data[i:j], j
        i = j


def read_pnm(path: str | Path) -> np.ndarray:
    """Read an 8-bit binary PGM/PPM back into a ``[-1, 1]`` grid."""
    data = Path(path).read_bytes()
    tok = _tokens(data)
    magic, _ = next(tok)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported PNM magic {magic!r}")
    w = int(next(tok)[0])
    h = int(next(tok)[0])
    maxval_tok, end = next(tok)
    if int(maxval_tok) != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    c = 1 if magic == b"P5" else 3
    body = np.frombuffer(data, dtype=np.uint8, count=h * w * c, offset=end + 1)
    return from_bytes(body.reshape(h, w, c))
