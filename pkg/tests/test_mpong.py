import math

import numpy as np
import pytest

from mentalsim import mpong
from mentalsim.mpong import (BoardSpec, InsufficientContext, context_indices, generate_conditions,
                             oracle_latents, render_frames, simulate_trajectory)

SPEC = BoardSpec()


def test_default_79_conditions_frame_range(conds79):
    assert len(conds79) == 79
    n = [c.n_frames for c in conds79]
    assert 89 <= min(n) and max(n) <= 217


def test_deterministic():
    a = generate_conditions(SPEC, 10, 123)
    b = generate_conditions(SPEC, 10, 123)
    assert a.to_json() == b.to_json()
    assert generate_conditions(SPEC, 10, 124).to_json() != a.to_json()


def test_starts_distinct(conds79):
    starts = {(c.start_pos, c.start_angle) for c in conds79}
    assert len(starts) == 79


def test_straight_right_from_center():
    traj = simulate_trajectory(SPEC, (10.0, 5.0), 0.0)
    assert np.all(traj.position[:, 1] == 5.0)
    assert np.all(traj.velocity == traj.velocity[0])
    # shortest possible path: every other heading from the centre takes at least as many frames
    for angle in np.linspace(-1.0, 1.0, 9):
        assert len(simulate_trajectory(SPEC, (10.0, 5.0), angle)) >= len(traj)
    assert traj.position[-1, 0] >= SPEC.paddle_x > traj.position[-2, 0]


def test_top_wall_reflection():
    angle = math.radians(50)
    traj = simulate_trajectory(SPEC, (3.0, 8.0), angle)
    vy = traj.velocity[:, 1]
    flip = np.nonzero(np.sign(vy[1:]) != np.sign(vy[:-1]))[0]
    assert flip.size >= 1
    k = flip[0]
    assert vy[k] > 0 > vy[k + 1]
    assert traj.velocity[k + 1, 0] == traj.velocity[k, 0]
    speed = np.hypot(*traj.velocity[k + 1])
    assert abs(speed - SPEC.ball_speed) < 1e-9 * SPEC.ball_speed


def _reflection_errors(traj):
    errs = []
    v = traj.velocity
    for k in range(len(v) - 1):
        for axis in (0, 1):
            if np.sign(v[k + 1, axis]) != np.sign(v[k, axis]) and v[k, axis] != 0:
                other = 1 - axis
                # angle to the wall normal before and after
                a_in = math.atan2(abs(v[k, other]), abs(v[k, axis]))
                a_out = math.atan2(abs(v[k + 1, other]), abs(v[k + 1, axis]))
                errs.append(abs(a_in - a_out))
    return errs


def test_leftward_start_bounces_off_left_wall():
    traj = simulate_trajectory(SPEC, (2.0, 5.0), math.radians(170))
    assert traj.velocity[0, 0] < 0 and traj.velocity[-1, 0] > 0
    assert traj.position[:, 0].min() >= SPEC.ball_radius - 1e-12
    assert max(_reflection_errors(traj)) < 1e-9


def test_speed_and_bounds_randomized(conds79):
    r = SPEC.ball_radius
    for traj in conds79.trajectories()[:20]:
        speed = np.hypot(traj.velocity[:, 0], traj.velocity[:, 1])
        assert np.max(np.abs(speed - SPEC.ball_speed)) < 1e-9 * SPEC.ball_speed
        assert traj.position[:, 1].min() >= r - 1e-12
        assert traj.position[:, 1].max() <= SPEC.height - r + 1e-12
        errs = _reflection_errors(traj)
        assert not errs or max(errs) < 1e-9


def test_per_step_displacement_matches_speed():
    # unfolded path length per frame equals speed * dt (no energy lost at bounces)
    traj = simulate_trajectory(SPEC, (3.0, 2.0), math.radians(55))
    dx = np.diff(traj.position[:, 0])
    assert np.allclose(dx, SPEC.ball_speed * math.cos(math.radians(55)) / SPEC.frame_rate, atol=1e-12)


def test_epoch_partition(conds79):
    for c, traj in zip(conds79, conds79.trajectories()):
        x = traj.position[:, 0]
        assert x[c.visible_end] < SPEC.occluder[0] <= x[c.visible_end + 1]
        assert len(c.occluded_frames) > 0
        mask = c.occluded_mask()
        assert mask.sum() + c.n_visible == c.n_frames
        assert not mask[: c.n_visible].any()


def test_invalid_starts():
    with pytest.raises(ValueError):
        simulate_trajectory(SPEC, (15.0, 5.0), 0.0)
    with pytest.raises(ValueError):
        simulate_trajectory(SPEC, (-1.0, 5.0), 0.0)


def test_generation_error_when_paddle_unreachable():
    spec = BoardSpec(frame_cap=50)
    with pytest.raises(mpong.GenerationError):
        generate_conditions(spec, 1, 0)


def test_spec_validation():
    with pytest.raises(ValueError):
        BoardSpec(occluder=(13.0, 0.0, 13.5, 10.0), paddle_x=13.4)
    with pytest.raises(ValueError):
        BoardSpec(ball_speed=0.0)


@pytest.mark.parametrize("V,T,expected", [
    (37, 7, [0, 6, 12, 18, 24, 30, 36]),
    (7, 7, [0, 1, 2, 3, 4, 5, 6]),
])
def test_context_indices(V, T, expected):
    assert context_indices(V, T) == expected


def test_context_indices_rounding_enumerated():
    # brute-force oracle: nearest integer to k(V-1)/(T-1), halves rounded up, via exact fractions
    from fractions import Fraction
    for V in range(7, 80):
        for T in (2, 3, 7):
            want = [int(Fraction(k * (V - 1), T - 1) + Fraction(1, 2)) for k in range(T)]
            got = context_indices(V, T)
            assert got == want
            assert all(b > a for a, b in zip(got, got[1:]))
            assert got[0] == 0 and got[-1] == V - 1


def test_context_indices_insufficient():
    with pytest.raises(InsufficientContext):
        context_indices(6, 7)


def test_render_occluded_frame_has_no_ball():
    c = mpong.make_condition(SPEC, (3.0, 5.0), 0.3)
    traj = simulate_trajectory(SPEC, (3.0, 5.0), 0.3)
    frames = render_frames(SPEC, traj, (64, 128), c.visible_end)
    H, W = 64, 128
    xs = (np.arange(W) + 0.5) * SPEC.width / W
    occ_cols = (xs >= SPEC.occluder[0]) & (xs <= SPEC.occluder[2])
    for i in c.occluded_frames:
        assert not np.any(frames[i][:, occ_cols] == 1.0)
        assert np.all(frames[i][:, occ_cols] == 0.5)


def test_render_disk_area():
    traj = simulate_trajectory(SPEC, (3.0, 5.0), 0.3)
    res = (128, 256)
    frames = render_frames(SPEC, traj, res, 0)
    r_px = SPEC.ball_radius * res[1] / SPEC.width
    expected = math.pi * r_px ** 2
    for i in range(0, 40, 5):
        white = int(np.sum(frames[i] == 1.0))
        assert abs(white - expected) <= 0.15 * expected


def test_render_deterministic_and_typed():
    traj = simulate_trajectory(SPEC, (3.0, 5.0), 0.3)
    a = render_frames(SPEC, traj, (32, 64))
    b = render_frames(SPEC, traj, (32, 64))
    assert a.dtype == np.float32 and a.shape == (len(traj), 32, 64)
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0 and a.max() <= 1


def test_occluder_flag():
    spec = BoardSpec(occluder_always=False)
    traj = simulate_trajectory(spec, (3.0, 5.0), 0.0)
    frames = render_frames(spec, traj, (32, 64), visible_end=5)
    assert not np.any(frames[0] == 0.5)
    assert np.any(frames[6] == 0.5)
    with pytest.raises(ValueError):
        render_frames(spec, traj, (16, 64))


def test_oracle_kinds():
    traj = simulate_trajectory(SPEC, (3.0, 5.0), 0.0)
    both = oracle_latents(traj, "position+velocity")
    assert both.shape[1] == 4
    assert np.array_equal(both, np.hstack([oracle_latents(traj, "position"),
                                           oracle_latents(traj, "velocity")]))
    vel = oracle_latents(traj, "velocity")
    assert np.all(vel == vel[0])
    with pytest.raises(ValueError):
        oracle_latents(traj, "acceleration")


def test_conditions_json_roundtrip(conds79):
    back = mpong.ConditionSet.from_json(conds79.to_json())
    assert back == conds79
