"""Spline evaluation against a de Boor oracle plus feasibility checks."""

import numpy as np
import pytest

from fovplan.splines import (
    DynamicLimits,
    TrajectorySpline,
    check_dynamic_feasibility,
    clamped_uniform_knots,
    constant_trajectory,
    start_constrained_points,
    start_constrained_yaw,
    stop_trajectory,
)


# ---------------------------------------------------------------------------
# Oracle: independent recursive de Boor point evaluation
# ---------------------------------------------------------------------------

def deboor_eval(knots, ctrl, degree, u):
    """Triangular de Boor scheme, written independently of the main path."""
    ctrl = np.asarray(ctrl, dtype=float)
    u = float(u)
    hi = knots[-degree - 1] if degree else knots[-1]
    # locate the knot span [knots[k], knots[k+1])
    k = None
    for i in range(len(knots) - 1):
        if knots[i] <= u < knots[i + 1]:
            k = i
    if k is None:  # u at (or past) the right end
        k = max(i for i in range(len(knots) - 1) if knots[i] < knots[i + 1])
        u = min(u, knots[-1])
    d = [ctrl[j + k - degree].astype(float) if ctrl.ndim > 1
         else float(ctrl[j + k - degree]) for j in range(degree + 1)]
    for r in range(1, degree + 1):
        for j in range(degree, r - 1, -1):
            denom = knots[j + 1 + k - r] - knots[j + k - degree]
            alpha = 0.0 if denom == 0.0 else (u - knots[j + k - degree]) / denom
            d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j]
    return d[degree]


def random_traj(rng, n_ctrl=6, total_time=None, t_start=0.0):
    total_time = total_time if total_time is not None else rng.uniform(1.0, 8.0)
    return TrajectorySpline(
        pos_ctrl=rng.uniform(-5.0, 5.0, size=(n_ctrl, 3)),
        yaw_ctrl=rng.uniform(-np.pi, np.pi, size=n_ctrl),
        total_time=total_time,
        t_start=t_start,
    )


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def test_constant_spline_everywhere():
    traj = constant_trajectory([1.0, 2.0, 3.0], 0.5, duration=4.0)
    for t in (-1.0, 0.0, 1.7, 4.0, 9.0):
        pos, yaw = traj.eval(t, 0)
        assert np.allclose(pos, [1.0, 2.0, 3.0])
        assert yaw == pytest.approx(0.5)


def test_clamped_endpoints():
    rng = np.random.default_rng(7)
    for _ in range(20):
        traj = random_traj(rng, n_ctrl=rng.integers(4, 10), t_start=rng.uniform(-3, 3))
        pos0, yaw0 = traj.eval(traj.t_start, 0)
        posT, yawT = traj.eval(traj.t_end, 0)
        assert np.allclose(pos0, traj.pos_ctrl[0], atol=1e-12)
        assert yaw0 == pytest.approx(traj.yaw_ctrl[0], abs=1e-12)
        assert np.allclose(posT, traj.pos_ctrl[-1], atol=1e-12)
        assert yawT == pytest.approx(traj.yaw_ctrl[-1], abs=1e-12)


def test_eval_matches_deboor_and_finite_difference_oracle():
    rng = np.random.default_rng(42)
    traj = random_traj(rng, n_ctrl=6, total_time=5.0)
    knots = clamped_uniform_knots(6)
    t = 0.37 * traj.total_time
    s = t / traj.total_time

    pos, yaw = traj.eval(t, 0)
    pos_oracle = deboor_eval(knots, traj.pos_ctrl, 3, s)
    yaw_oracle = deboor_eval(knots, traj.yaw_ctrl, 3, s)
    assert np.linalg.norm(pos - pos_oracle) / np.linalg.norm(pos_oracle) < 1e-6
    assert abs(yaw - yaw_oracle) / abs(yaw_oracle) < 1e-6

    # velocity against central finite differences of the de Boor values
    h = 1e-6
    vel, yaw_rate = traj.eval(t, 1)
    vel_fd = (deboor_eval(knots, traj.pos_ctrl, 3, s + h / traj.total_time)
              - deboor_eval(knots, traj.pos_ctrl, 3, s - h / traj.total_time)) / (2 * h)
    assert np.linalg.norm(vel - vel_fd) / np.linalg.norm(vel_fd) < 1e-6
    yawr_fd = (deboor_eval(knots, traj.yaw_ctrl, 3, s + h / traj.total_time)
               - deboor_eval(knots, traj.yaw_ctrl, 3, s - h / traj.total_time)) / (2 * h)
    assert abs(yaw_rate - yawr_fd) / abs(yawr_fd) < 1e-6


def test_derivative_orders_consistent_numerically():
    # numeric derivative of order k matches order k+1 away from knots
    rng = np.random.default_rng(3)
    traj = random_traj(rng, n_ctrl=8, total_time=4.0)
    knot_times = np.linspace(0, traj.total_time, 8 - 3 + 1)
    ts = np.linspace(0.05, traj.total_time - 0.05, 60)
    ts = np.array([t for t in ts if np.min(np.abs(knot_times - t)) > 0.02])
    h = 1e-5
    for order in (0, 1, 2):
        hi, _ = traj.eval(ts + h, order)
        lo, _ = traj.eval(ts - h, order)
        numeric = (hi - lo) / (2 * h)
        exact, _ = traj.eval(ts, order + 1)
        denom = np.maximum(np.linalg.norm(exact, axis=1), 1e-6)
        rel = np.linalg.norm(numeric - exact, axis=1) / denom
        assert np.max(rel) < 1e-5


def test_constant_hold_outside_window():
    rng = np.random.default_rng(11)
    traj = random_traj(rng, t_start=2.0, total_time=3.0)
    pos_before, _ = traj.eval(0.0, 0)
    pos_after, _ = traj.eval(100.0, 0)
    assert np.allclose(pos_before, traj.pos_ctrl[0])
    assert np.allclose(pos_after, traj.pos_ctrl[-1])
    for order in (1, 2, 3):
        d_before, y_before = traj.eval(0.0, order)
        d_after, y_after = traj.eval(100.0, order)
        assert np.allclose(d_before, 0.0) and np.allclose(d_after, 0.0)
        assert y_before == 0.0 and y_after == 0.0


def test_eval_deterministic_and_pure():
    rng = np.random.default_rng(5)
    traj = random_traj(rng)
    ts = np.linspace(-1, traj.total_time + 1, 33)
    a_pos, a_yaw = traj.eval(ts, 1)
    b_pos, b_yaw = traj.eval(ts, 1)
    assert np.array_equal(a_pos, b_pos) and np.array_equal(a_yaw, b_yaw)


def test_control_points_immutable():
    traj = constant_trajectory([0, 0, 0], 0.0)
    with pytest.raises(ValueError):
        traj.pos_ctrl[0, 0] = 5.0


def test_serialization_round_trip():
    rng = np.random.default_rng(13)
    traj = random_traj(rng, t_start=1.25)
    rec = traj.to_record()
    back = TrajectorySpline.from_record(rec)
    assert np.allclose(back.pos_ctrl, traj.pos_ctrl)
    assert np.allclose(back.yaw_ctrl, traj.yaw_ctrl)
    assert back.total_time == traj.total_time and back.t_start == traj.t_start


# ---------------------------------------------------------------------------
# feasibility
# ---------------------------------------------------------------------------

def test_stationary_feasible_all_zero_ratios():
    traj = constant_trajectory([1, 1, 1], 0.3, duration=2.0)
    rep = check_dynamic_feasibility(traj, DynamicLimits())
    assert rep.ok
    assert all(r == 0.0 for r in rep.ratios.values())


def test_harness_default_limits_are_stated_values():
    lim = DynamicLimits()
    assert (lim.v_max, lim.a_max, lim.j_max) == (2.0, 10.0, 30.0)


def test_feasibility_matches_denser_oracle():
    rng = np.random.default_rng(21)
    lim = DynamicLimits()
    for _ in range(5):
        traj = random_traj(rng, n_ctrl=8, total_time=rng.uniform(2, 6))
        rep = check_dynamic_feasibility(traj, lim, dt=1e-3)
        dense = check_dynamic_feasibility(traj, lim, dt=1e-4)
        for key in rep.ratios:
            assert rep.ratios[key] == pytest.approx(dense.ratios[key], rel=0.02)


def test_invalid_limits_rejected():
    with pytest.raises(ValueError):
        DynamicLimits(v_max=0.0)


# ---------------------------------------------------------------------------
# boundary helpers and stop trajectory
# ---------------------------------------------------------------------------

def test_start_constrained_points_reproduce_state():
    rng = np.random.default_rng(31)
    for _ in range(10):
        pos = rng.uniform(-3, 3, 3)
        vel = rng.uniform(-2, 2, 3)
        acc = rng.uniform(-4, 4, 3)
        T = rng.uniform(1.0, 6.0)
        n = 8
        p0, p1, p2 = start_constrained_points(pos, vel, acc, T, n)
        ctrl = np.vstack([p0, p1, p2] + [rng.uniform(-3, 3, 3) for _ in range(n - 3)])
        yaw0, yaw1 = start_constrained_yaw(0.7, -0.5, T, n)
        yctrl = np.concatenate([[yaw0, yaw1], rng.uniform(-1, 1, n - 2)])
        traj = TrajectorySpline(ctrl, yctrl, T)
        p, v, a, y, yr = traj.state(0.0)
        assert np.allclose(p, pos, atol=1e-9)
        assert np.allclose(v, vel, atol=1e-9)
        assert np.allclose(a, acc, atol=1e-8)
        assert y == pytest.approx(0.7, abs=1e-9)
        assert yr == pytest.approx(-0.5, abs=1e-9)


def test_stop_from_rest_is_constant():
    traj = stop_trajectory([1, 2, 3], [0, 0, 0], 0.2, DynamicLimits())
    pos, yaw = traj.eval(traj.t_start + 0.5 * traj.total_time, 0)
    assert np.allclose(pos, [1, 2, 3])
    assert yaw == pytest.approx(0.2)


def test_stop_respects_kinematic_lower_bound():
    lim = DynamicLimits(v_max=3.0, a_max=10.0, j_max=30.0)
    traj = stop_trajectory([0, 0, 0], [2.0, 0, 0], 0.0, lim)
    assert traj.total_time >= 2.0 / 10.0
    vel_end, _ = traj.eval(traj.t_end, 1)
    assert np.allclose(vel_end, 0.0)


def test_stop_outputs_pass_feasibility():
    rng = np.random.default_rng(8)
    lim = DynamicLimits()
    for _ in range(20):
        pos = rng.uniform(-5, 5, 3)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        vel = direction * rng.uniform(0.0, lim.v_max)
        traj = stop_trajectory(pos, vel, rng.uniform(-3, 3), lim)
        rep = check_dynamic_feasibility(traj, lim)
        assert rep.ok, rep.ratios
        p0, v0, _, _, _ = traj.state(traj.t_start)
        assert np.allclose(p0, pos, atol=1e-9)
        assert np.allclose(v0, vel, atol=1e-9)
