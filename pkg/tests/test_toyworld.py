import math

import numpy as np
import pytest

from viewfusion.conditioning import PoseOffset
from viewfusion.numerics import SeededRng
from viewfusion.schedule import forward_diffuse, linear_schedule
from viewfusion.toyworld import (BACKGROUND, MARKER, ConditionView, ToyWorld, log_marginal_density,
                                 log_responsibilities, optimal_eps, oracle_sample_view,
                                 posterior_responsibilities)

SCHED = linear_schedule()


def az(d):
    return PoseOffset.from_degrees(d)


def test_world_validation():
    with pytest.raises(ValueError):
        ToyWorld(renderer="nope")
    with pytest.raises(ValueError):
        ToyWorld(prior=(0.6, 0.5))
    with pytest.raises(ValueError):
        ToyWorld(sigma_data=0.0)
    with pytest.raises(ValueError):
        ToyWorld(n_modes=0)
    assert ToyWorld(renderer="sectors", n_sectors=3).n_modes == 8


def test_render_deterministic_and_in_range():
    w = ToyWorld()
    a, b = w.render(1, az(0)), ToyWorld().render(1, az(0))
    assert np.array_equal(a, b)
    assert a.shape == (16, 16, 1) and a.min() >= -1 and a.max() <= 1
    with pytest.raises(ValueError):
        w.render(3, az(0))
    with pytest.raises(ValueError):
        w.render(0, az(0))


def test_render_cache_is_read_only():
    w = ToyWorld()
    r = w.render_all(az(30))
    with pytest.raises(ValueError):
        r[0, 0, 0, 0] = 1.0
    w.render(1, az(30))[0, 0, 0] = 5.0  # render returns a copy
    assert w.render_all(az(30))[0, 0, 0, 0] != 5.0


@pytest.mark.parametrize("deg", [15, 30, 90, 135, 180, -45, -150])
def test_modes_separable_where_back_is_visible(deg):
    w = ToyWorld()
    d = np.linalg.norm(w.render(1, az(deg)) - w.render(2, az(deg)))
    assert d >= 4 * w.sigma_data


def test_front_view_is_blind_to_mode():
    w = ToyWorld()
    assert np.array_equal(w.render(1, az(0)), w.render(2, az(0)))
    assert w.mode_separation(az(0)) == 0.0


def test_one_sided_marker():
    w = ToyWorld()
    front, back = w.render(2, az(0)), w.render(2, az(180))
    # The bright front marker shows on the centre column from the front only.
    assert front[:, 8, 0].max() > 0.5 and back[:, 8, 0].max() < 0.0
    assert MARKER > 0.5 > BACKGROUND


def test_elevation_and_distance_change_rendering():
    w = ToyWorld()
    base = w.render(1, az(0))
    assert not np.array_equal(base, w.render(1, PoseOffset.from_degrees(0, 20)))
    far = w.render(1, PoseOffset(0, 0, 0.8))
    assert np.sum(far > BACKGROUND + 1e-9) < np.sum(base > BACKGROUND + 1e-9)


def test_three_channel_world():
    w = ToyWorld(channels=3)
    img = w.render(2, az(60))
    assert img.shape == (16, 16, 3)
    assert not np.array_equal(img[..., 0], img[..., 2])


def test_sectors_world_reveals_only_facing_sectors():
    w = ToyWorld(renderer="sectors", n_sectors=4)
    # Modes 1 and 1 + 2**2 differ only in sector 2 (azimuth [0, 90) from the back-left).
    r = w.render_all(az(0))
    assert w.n_modes == 16
    assert np.linalg.norm(r[0] - r[15]) > 4 * w.sigma_data
    assert w.mode_separation(az(0)) == 0.0


def test_condition_view_validation():
    with pytest.raises(ValueError):
        ConditionView(np.full((4, 4, 1), 1.5), PoseOffset())
    c = ConditionView(np.zeros((4, 4)), PoseOffset())
    assert c.image.shape == (4, 4, 1) and c.origin == "given"


def test_responsibilities_exact_match_small_sigma():
    w = ToyWorld(sigma_data=0.01)
    c = ConditionView(w.render(2, az(90)), az(90))
    post = posterior_responsibilities(w, [c])
    assert post.probs[1] > 0.999 and not post.fallback


def test_responsibilities_equidistant_condition():
    w = ToyWorld()
    mid = 0.5 * (w.render(1, az(90)) + w.render(2, az(90)))
    p = posterior_responsibilities(w, [ConditionView(mid, az(90))]).probs
    assert p == pytest.approx([0.5, 0.5], abs=1e-12)


def test_blind_condition_returns_prior():
    w = ToyWorld(prior=(0.3, 0.7))
    p = posterior_responsibilities(w, [ConditionView(w.render(1, az(0)), az(0))]).probs
    assert p == pytest.approx([0.3, 0.7], abs=1e-12)
    with pytest.raises(ValueError):
        posterior_responsibilities(w, [])


def test_degenerate_likelihood_falls_back_to_prior():
    w = ToyWorld(prior=(0.0, 1.0))
    # Condition matches mode 1 exactly, which the prior rules out.
    img = w.render(1, az(180))
    far = ConditionView(img, az(180))
    post = posterior_responsibilities(w, [far])
    assert post.probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_responsibilities_normalized_and_monotone():
    w = ToyWorld(renderer="backside", n_modes=4)
    rng = SeededRng(0)
    conds = []
    for k in range(6):
        pose = az(rng.uniform() * 360 - 180)
        img = np.clip(w.render(3, pose) + 0.5 * w.sigma_data * rng.normal(w.shape), -1, 1)
        before = np.exp(log_responsibilities(w, conds))
        conds.append(ConditionView(img, pose))
        after = np.exp(log_responsibilities(w, conds))
        assert after.sum() == pytest.approx(1.0, abs=1e-12)
        assert after[2] >= before[2] - 1e-12


def test_optimal_eps_single_point_limit():
    w = ToyWorld(n_modes=1, sigma_data=1e-9)
    mu = w.render(1, az(40))
    x = SeededRng(1).normal(w.shape)
    for t in (1, 50, 500, 1000):
        ab = SCHED.alpha_bar(t)
        ref = (x - math.sqrt(ab) * mu) / math.sqrt(1 - ab)
        assert np.allclose(optimal_eps(w, x, t, SCHED, None, az(40)), ref, atol=1e-7)


def test_optimal_eps_small_for_clean_state():
    w = ToyWorld()
    c = ConditionView(w.render(2, az(120)), az(120))
    x = forward_diffuse(w.render(2, az(150)), 300, np.zeros(w.shape), SCHED)
    e = optimal_eps(w, x, 300, SCHED, [c], az(150))
    assert np.linalg.norm(e) < 0.05 * math.sqrt(w.dim)


def test_optimal_eps_batched_matches_single():
    w = ToyWorld()
    xs = SeededRng(2).normal((3,) + w.shape)
    batch = optimal_eps(w, xs, 400, SCHED, None, az(60))
    for i in range(3):
        assert np.allclose(batch[i], optimal_eps(w, xs[i], 400, SCHED, None, az(60)), atol=1e-14)
    with pytest.raises(ValueError):
        optimal_eps(w, np.zeros((4, 4, 1)), 10, SCHED, None, az(0))


@pytest.mark.parametrize("t", [5, 120, 600, 990])
def test_score_identity_few_points(t):
    w = ToyWorld()
    rng = SeededRng(t)
    target = az(100)
    x0 = w.render(1 + t % 2, target)
    x = forward_diffuse(x0 + w.sigma_data * rng.normal(w.shape), t, rng.normal(w.shape), SCHED)
    h = 1e-5
    grad = np.zeros(w.dim)
    flat = x.reshape(-1)
    for i in range(w.dim):
        e = np.zeros(w.dim)
        e[i] = h
        grad[i] = (log_marginal_density(w, (flat + e).reshape(w.shape), t, SCHED, None, target)
                   - log_marginal_density(w, (flat - e).reshape(w.shape), t, SCHED, None, target)) / (2 * h)
    ref = -math.sqrt(1 - SCHED.alpha_bar(t)) * grad
    eps = optimal_eps(w, x, t, SCHED, None, target).reshape(-1)
    assert np.linalg.norm(eps - ref) / np.linalg.norm(ref) < 1e-3


def test_oracle_sampler_counts_and_determinism():
    w = ToyWorld()
    rng = SeededRng(11)
    modes = [oracle_sample_view(w, None, az(90), rng)[1] for _ in range(1000)]
    assert abs(modes.count(1) - 500) <= 50
    a = oracle_sample_view(w, None, az(90), SeededRng(3))
    b = oracle_sample_view(w, None, az(90), SeededRng(3))
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


def test_oracle_sampler_map_mode_when_peaked():
    w = ToyWorld(sigma_data=1e-6)
    c = ConditionView(w.render(2, az(180)), az(180))
    img, mode = oracle_sample_view(w, [c], az(90), SeededRng(0))
    assert mode == 2
    assert np.allclose(img, w.render(2, az(90)), atol=1e-4)
