import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from viewfusion.conditioning import PoseOffset
from viewfusion.numerics import PSNR_CAP_DB, SeededRng, ShapeError
from viewfusion.metrics import (adjacent_consistency, decode_mode, decode_mode_scored,
                                mode_agreement, spacetime_slice, ssim)
from viewfusion.toyworld import ToyWorld


def az(d):
    return PoseOffset.from_degrees(d)


def test_ssim_identity_and_negation():
    a = ToyWorld().render(1, az(40))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    # Zero-mean checkerboard: negation flips structure while luminance stays near 1.
    yy, xx = np.mgrid[:16, :16]
    board = (0.5 * (-1.0) ** (yy + xx))[..., None]
    assert ssim(board, -board) < 0


def test_ssim_small_noise():
    a = ToyWorld().render(2, az(120))
    b = a + 0.01 * SeededRng(0).normal(a.shape)
    assert ssim(a, b) > 0.95


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_ssim_symmetric_and_bounded(seed):
    rng = SeededRng(seed)
    a, b = np.clip(rng.normal((12, 12, 1)), -1, 1), np.clip(rng.normal((12, 12, 1)), -1, 1)
    assert ssim(a, b) == ssim(b, a)
    assert -1.0 <= ssim(a, b) <= 1.0


def test_ssim_errors():
    with pytest.raises(ShapeError):
        ssim(np.zeros((8, 8, 1)), np.zeros((8, 9, 1)))
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8, 1)), np.zeros((8, 8, 1)), window=6)
    with pytest.raises(ValueError):
        ssim(np.zeros((5, 5, 1)), np.zeros((5, 5, 1)), window=7)


def test_decode_mode_cases():
    w = ToyWorld()
    assert decode_mode(w, w.render(2, az(90)), az(90)) == 2
    mid = 0.5 * (w.render(1, az(90)) + w.render(2, az(90)))
    assert decode_mode_scored(w, mid, az(90)) == (1, True)
    assert decode_mode_scored(w, w.render(2, az(90)), az(90)) == (2, False)
    with pytest.raises(ShapeError):
        decode_mode(w, np.zeros((4, 4, 1)), az(0))


def test_decode_mode_under_data_noise():
    w = ToyWorld()
    rng = SeededRng(1)
    pose = az(60)
    assert w.mode_separation(pose) >= 4 * w.sigma_data
    hits = sum(decode_mode(w, w.render(1, pose) + w.sigma_data * rng.normal(w.shape), pose) == 1
               for _ in range(2000))
    assert hits == 2000


def test_adjacent_consistency_identical_frames():
    f = ToyWorld().render(1, az(0))
    rep = adjacent_consistency([f, f, f], cyclic=True, modes=[1, 1, 1])
    assert len(rep.pairs) == 3
    assert rep.mean_psnr == PSNR_CAP_DB and rep.mean_ssim == pytest.approx(1.0)
    assert rep.agreement == 1.0


def test_adjacent_consistency_alternating_modes():
    w = ToyWorld()
    poses = [az(90)] * 4
    frames = [w.render(1 + i % 2, p) for i, p in enumerate(poses)]
    rep = adjacent_consistency(frames, cyclic=False, world=w, poses=poses)
    assert len(rep.pairs) == 3 and rep.agreement == 0.0
    assert rep.modes == [1, 2, 1, 2] and rep.ties == [False] * 4
    rows = rep.csv_rows()
    assert rows[0][0] == "i" and len(rows) == 4


def test_adjacent_consistency_errors():
    with pytest.raises(ValueError):
        adjacent_consistency([np.zeros((8, 8, 1))])
    w = ToyWorld()
    with pytest.raises(ValueError):
        adjacent_consistency([w.render(1, az(0))] * 2, world=w, poses=[az(0)])


def test_independent_generation_agreement_near_half():
    w = ToyWorld()
    rng = SeededRng(5)
    from viewfusion.toyworld import oracle_sample_view
    rates = []
    for _ in range(200):
        poses = [az(30 * k) for k in range(1, 12)]
        modes = [oracle_sample_view(w, None, p, rng)[1] for p in poses]
        rates.append(mode_agreement(modes, cyclic=True))
    assert abs(np.mean(rates) - 0.5) < 0.05


def test_agreement_invariant_to_relabeling():
    modes = [1, 1, 2, 2, 1, 2, 2]
    swapped = [3 - m for m in modes]
    assert mode_agreement(modes, True) == mode_agreement(swapped, True)


def test_spacetime_slice_cases():
    w = ToyWorld()
    f = w.render(1, az(10))
    assert np.array_equal(spacetime_slice([f], 8), f[8][None])
    const = [np.full((6, 5, 1), 0.3)] * 4
    assert np.all(spacetime_slice(const, 2) == 0.3)
    with pytest.raises(ValueError):
        spacetime_slice([f], 16)
    with pytest.raises(ValueError):
        spacetime_slice([], 0)


def test_spacetime_slice_rotating_marker_band():
    # The front marker of a slowly rotating cylinder traces a continuous diagonal band.
    w = ToyWorld(width=32, height=16)
    frames = [w.render(2, az(d)) for d in range(-40, 41, 5)]
    sl = spacetime_slice(frames, 8)[..., 0]
    peaks = np.array([int(np.argmax(row)) for row in sl])
    steps = np.diff(peaks)
    assert peaks[0] > peaks[-1]
    assert np.all(steps <= 0) and np.all(np.abs(steps) <= 2)
