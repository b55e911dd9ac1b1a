"""Optimization-based expert planner for coupled position + yaw splines.

The planner minimizes jerk effort, terminal goal distance, and a visibility
reward (integrated cubed FOV score over all obstacles), optionally plus the
trajectory duration when ``free_time`` is set.  Dynamic limits and clearance
against obstacle boxes and peer trajectories are enforced with exterior
quadratic penalties whose weight grows over an outer loop; the inner loop is
plain gradient descent with a backtracking line search over the free control
points (and the duration, when free).

Boundary conditions are baked into the parameterization rather than
penalized: the leading control points reproduce the start state exactly and
the trailing ones enforce a rest end state, so every candidate starts from
the agent's current state and decelerates to a hold.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .splines import (
    DynamicLimits,
    TrajectorySpline,
    basis_for,
    check_dynamic_feasibility,
    start_constrained_points,
    start_constrained_yaw,
)
from .world import (
    CameraModel,
    ObstaclePrediction,
    box_signed_distance,
    box_signed_distance_grad,
    in_fov_grad,
)


# ---------------------------------------------------------------------------
# Problem and result types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlanWeights:
    # alpha_time must exceed n_obstacles * alpha_fov: the visibility reward
    # saturates at alpha_fov per obstacle per second, so a smaller time
    # weight makes free-duration solves loiter instead of finishing.
    alpha_fov: float = 10.0
    alpha_jerk: float = 1e-3
    alpha_goal: float = 200.0  # strong enough that gazing never parks the
    alpha_time: float = 25.0   # endpoint outside the goal tolerance


    def __post_init__(self):
        for name in ("alpha_fov", "alpha_jerk", "alpha_goal", "alpha_time"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class SolverConfig:
    """Iteration limits, penalty schedule, and sampling resolutions."""

    # More control points shorten both the pinned rest tail (last three
    # points) and the knot segments that speed-profile ramps smear across;
    # 8 points wastes ~40% of the window as dwell, 12 keeps it near 10%.
    n_ctrl: int = 12
    quad_points: int = 5            # Gauss-Legendre points per spline segment
    outer_iters: int = 30
    inner_iters: int = 50
    grad_tol: float = 1e-6
    rho_init: float = 50.0
    rho_growth: float = 3.0
    # summed squared normalized violations; the slack headroom absorbs
    # residuals of this size, so pushing further only stiffens the walls
    feas_tol: float = 1e-4
    constraint_dt: float = 0.03     # target spacing of the penalty grid, seconds
    check_dt: float = 0.01          # a posteriori hard-check resolution
    # headroom so penalty-grid feasibility survives the denser hard check
    vel_slack: float = 0.05
    acc_slack: float = 0.10
    jerk_slack: float = 0.05
    yaw_rate_slack: float = 0.05
    clearance_slack: float = 0.12   # meters
    # heuristic duration = factor * dist / v_max; the rest tail dwells over
    # the last ~30% of the window, so the factor carries that headroom
    time_factor: float = 2.2
    min_time: float = 1.0
    guess_offset_lo: float = 0.8    # meters, lateral/vertical seed offsets
    guess_offset_hi: float = 2.0


@dataclass(frozen=True)
class StartState:
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    yaw: float
    yaw_rate: float

    def __post_init__(self):
        object.__setattr__(self, "pos", np.asarray(self.pos, dtype=float))
        object.__setattr__(self, "vel", np.asarray(self.vel, dtype=float))
        object.__setattr__(self, "acc", np.asarray(self.acc, dtype=float))

    @staticmethod
    def resting(pos, yaw: float = 0.0) -> "StartState":
        return StartState(np.asarray(pos, float), np.zeros(3), np.zeros(3),
                          float(yaw), 0.0)

    @staticmethod
    def from_trajectory(traj: TrajectorySpline, t: float) -> "StartState":
        p, v, a, y, yr = traj.state(t)
        return StartState(p, v, a, float(y), float(yr))


@dataclass(frozen=True)
class PlanProblem:
    start: StartState
    goal_pos: np.ndarray
    obstacles: tuple = ()
    peer_trajs: tuple = ()
    lim: DynamicLimits = field(default_factory=DynamicLimits)
    cam: CameraModel = field(default_factory=CameraModel)
    weights: PlanWeights = field(default_factory=PlanWeights)
    n_guesses: int = 1
    free_time: bool = False          # False: fixed-duration mode
    safety_margin: float = 0.35
    t_start: float = 0.0             # absolute time the plan begins
    fixed_total_time: float | None = None   # fixed-duration override
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        object.__setattr__(self, "goal_pos", np.asarray(self.goal_pos, dtype=float))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "peer_trajs", tuple(self.peer_trajs))
        if self.n_guesses < 1:
            raise ValueError("n_guesses must be at least 1")
        if self.safety_margin <= 0:
            raise ValueError("safety_margin must be positive")


@dataclass(frozen=True)
class PlanResult:
    traj: TrajectorySpline
    cost: float
    breakdown: dict
    solver_iterations: int
    wall_time_ms: float
    feasible: bool


# ---------------------------------------------------------------------------
# Quadrature and public cost terms
# ---------------------------------------------------------------------------

_QUAD_MEMO: dict = {}


def _segment_quadrature(n_seg: int, points: int):
    """Gauss-Legendre nodes/weights per uniform segment, on [0, 1] overall."""
    hit = _QUAD_MEMO.get((n_seg, points))
    if hit is not None:
        return hit
    x, w = np.polynomial.legendre.leggauss(points)
    nodes, weights = [], []
    width = 1.0 / n_seg
    for k in range(n_seg):
        lo = k * width
        nodes.append(lo + (x + 1.0) * 0.5 * width)
        weights.append(w * 0.5 * width)
    out = _QUAD_MEMO[(n_seg, points)] = (np.concatenate(nodes),
                                         np.concatenate(weights))
    return out


def fov_term(traj: TrajectorySpline, obstacles, cam: CameraModel,
             alpha_fov: float, points_per_segment: int = 80) -> float:
    """Visibility reward: -alpha * sum_i integral of score_i(t)^3 over the span.

    More time with obstacles in view makes the term more negative.  The dense
    default resolves the sharp logistic transits when an obstacle crosses the
    FOV boundary; the solver's internal grid is much coarser (the integration
    error there only smooths the landscape, scoring needs the accuracy).
    """
    obstacles = list(obstacles)
    if not obstacles or alpha_fov == 0.0:
        return 0.0
    n_seg = len(traj.pos_ctrl) - traj.degree
    s, w = _segment_quadrature(n_seg, points_per_segment)
    ts = traj.t_start + s * traj.total_time
    pos, yaw = traj.eval(ts, 0)
    total = 0.0
    for obs in obstacles:
        target = obs.position(ts)
        score, _, _, _ = in_fov_grad(pos, yaw, cam, target)
        total += np.sum(w * score ** 3)
    return -alpha_fov * traj.total_time * total


def total_cost(traj: TrajectorySpline, prob: PlanProblem,
               points_per_segment: int = 80):
    """Soft objective of a trajectory under a problem: (cost, breakdown).

    Works for any trajectory (not just solver output); penalties are not
    included, so an infeasible trajectory can still be scored.
    """
    pps = points_per_segment
    n_seg = len(traj.pos_ctrl) - traj.degree
    s, w = _segment_quadrature(n_seg, pps)
    ts = traj.t_start + s * traj.total_time
    jerk, _ = traj.eval(ts, 3)
    jerk_term = prob.weights.alpha_jerk * traj.total_time * float(
        np.sum(w * np.sum(jerk ** 2, axis=1)))
    end_pos, _ = traj.eval(traj.t_end, 0)
    goal_term = prob.weights.alpha_goal * float(
        np.sum((end_pos - prob.goal_pos) ** 2))
    fov = fov_term(traj, prob.obstacles, prob.cam, prob.weights.alpha_fov, pps)
    time_term = prob.weights.alpha_time * traj.total_time if prob.free_time else 0.0
    breakdown = {
        "jerk": jerk_term,
        "goal": goal_term,
        "fov": fov,
        "time": time_term,
    }
    breakdown["total"] = sum(breakdown.values())
    return breakdown["total"], breakdown


def clearance(traj: TrajectorySpline, body, margin: float,
              window: tuple[float, float] | None = None,
              dt: float = 0.01) -> float:
    """Minimum signed clearance of a trajectory to a body over a time window.

    body is an ObstaclePrediction (clearance = box surface distance - margin)
    or a peer TrajectorySpline (clearance = center distance - margin).
    Nonnegative means clear.  Both trajectories extend constantly outside
    their spans.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    lo, hi = window if window is not None else (traj.t_start, traj.t_end)
    # power-of-two sample count: never coarser than dt, and repeated
    # normalized grids hit the basis cache
    n = 1 << max(int(np.ceil((hi - lo) / dt)) - 1, 1).bit_length()
    ts = np.linspace(lo, hi, n + 1)
    pos, _ = traj.eval(ts, 0)
    if isinstance(body, ObstaclePrediction):
        centers = body.position(ts)
        sdf = box_signed_distance(pos, centers, body.half_extents)
        return float(np.min(sdf) - margin)
    other, _ = body.eval(ts, 0)
    dist = np.linalg.norm(pos - other, axis=1)
    return float(np.min(dist) - margin)


# ---------------------------------------------------------------------------
# Parameterization: packed variables <-> control points
# ---------------------------------------------------------------------------

class _Layout:
    """Index bookkeeping for the packed free-variable vector.

    Position rows 0..2 are pinned to the start state, the last three rows
    share one free point (rest end); yaw rows 0..1 are pinned, the last two
    share one free value (zero end rate).
    """

    def __init__(self, n_ctrl: int, free_time: bool):
        self.n = n_ctrl
        self.free_time = free_time
        self.mid_rows = list(range(3, n_ctrl - 3))          # free position rows
        self.yaw_rows = list(range(2, n_ctrl - 2))          # free yaw rows
        self.n_mid = len(self.mid_rows)
        self.n_yaw = len(self.yaw_rows)
        self.size = 3 * self.n_mid + 3 + self.n_yaw + 1 + (1 if free_time else 0)

    def pack(self, P, Y, T):
        parts = [P[self.mid_rows].ravel(), P[-1], Y[self.yaw_rows], [Y[-1]]]
        if self.free_time:
            parts.append([T])
        return np.concatenate(parts)

    def unpack(self, x, prob: PlanProblem, T_fixed: float):
        n = self.n
        k = 3 * self.n_mid
        T = float(x[-1]) if self.free_time else T_fixed
        P = np.empty((n, 3))
        p0, p1, p2 = start_constrained_points(prob.start.pos, prob.start.vel,
                                              prob.start.acc, T, n)
        P[0], P[1], P[2] = p0, p1, p2
        P[self.mid_rows] = x[:k].reshape(self.n_mid, 3)
        P[n - 3:] = x[k:k + 3]
        Y = np.empty(n)
        y0, y1 = start_constrained_yaw(prob.start.yaw, prob.start.yaw_rate, T, n)
        Y[0], Y[1] = y0, y1
        Y[self.yaw_rows] = x[k + 3:k + 3 + self.n_yaw]
        Y[n - 2:] = x[k + 3 + self.n_yaw]
        return P, Y, T

    def boundary_time_sensitivity(self, prob: PlanProblem, T: float):
        """dP/dT for the pinned rows (rows 1 and 2) and dY1/dT."""
        cache = basis_for(self.n)
        b1 = cache.design(np.array([0.0]), 1)[0]
        b2 = cache.design(np.array([0.0]), 2)[0]
        dp1 = prob.start.vel / b1[1]
        dp2 = (2.0 * T * prob.start.acc - b2[1] * dp1) / b2[2]
        dy1 = prob.start.yaw_rate / b1[1]
        return dp1, dp2, dy1

    def fold(self, dP, dY, dT):
        """Collapse full control-point gradients into the packed layout."""
        parts = [dP[self.mid_rows].ravel(), dP[-3] + dP[-2] + dP[-1],
                 dY[self.yaw_rows], [dY[-2] + dY[-1]]]
        if self.free_time:
            parts.append([dT])
        return np.concatenate(parts)


class _Workspace:
    """Grids, design matrices, and peer tracks shared across evaluations."""

    def __init__(self, prob: PlanProblem, T_ref: float):
        cfg = prob.solver
        n = cfg.n_ctrl
        n_seg = n - 3
        cache = basis_for(n)
        self.layout = _Layout(n, prob.free_time)
        # quadrature grid (cost terms)
        self.sq, self.wq = _segment_quadrature(n_seg, cfg.quad_points)
        self.Aq = [cache.design(self.sq, r) for r in range(4)]
        # constraint grid (penalties), endpoint-inclusive uniform
        n_check = int(np.clip(np.ceil(T_ref / cfg.constraint_dt), 48, 400))
        self.sc = np.linspace(0.0, 1.0, n_check + 1)
        self.Ac = [cache.design(self.sc, r) for r in range(4)]
        # effective limits with slack headroom
        lim = prob.lim
        self.v_eff = lim.v_max * (1 - cfg.vel_slack)
        self.a_eff = lim.a_max * (1 - cfg.acc_slack)
        self.j_eff = lim.j_max * (1 - cfg.jerk_slack)
        self.yr_eff = lim.yaw_rate_max * (1 - cfg.yaw_rate_slack)
        self.margin_eff = prob.safety_margin + cfg.clearance_slack
        # peer tracks sampled densely in absolute time (broadcast samples)
        horizon = prob.t_start + 4.0 * T_ref + 1.0
        self.peer_ts = np.arange(prob.t_start, horizon, cfg.check_dt)
        self.peers = []
        for peer in prob.peer_trajs:
            pp, _ = peer.eval(self.peer_ts, 0)
            pv, _ = peer.eval(self.peer_ts, 1)
            self.peers.append((pp, pv))

    def peer_state(self, idx: int, ts: np.ndarray):
        """Linear-interp peer position and velocity at absolute times ts."""
        pp, pv = self.peers[idx]
        pos = np.stack([np.interp(ts, self.peer_ts, pp[:, k]) for k in range(3)],
                       axis=1)
        vel = np.stack([np.interp(ts, self.peer_ts, pv[:, k]) for k in range(3)],
                       axis=1)
        return pos, vel


def _penalized(x, prob: PlanProblem, ws: _Workspace, rho: float, T_fixed: float,
               want_grad: bool = True):
    """Penalized objective (and gradient) at packed variables x.

    Returns (value, grad, info) where info carries the soft-cost breakdown
    and the summed squared normalized constraint violation.
    """
    lay = ws.layout
    w = prob.weights
    P, Y, T = lay.unpack(x, prob, T_fixed)
    dP = np.zeros_like(P)
    dY = np.zeros_like(Y)
    dT = 0.0

    # ----- jerk effort: alpha_j * T^-5 * sum w ||C'''(s)||^2
    J3 = ws.Aq[3] @ P
    jerk_quad = float(np.sum(ws.wq * np.sum(J3 ** 2, axis=1)))
    jerk_term = w.alpha_jerk * jerk_quad / T ** 5
    value = jerk_term
    if want_grad:
        dP += (2.0 * w.alpha_jerk / T ** 5) * (ws.Aq[3].T @ (ws.wq[:, None] * J3))
        dT += -5.0 * jerk_term / T

    # ----- goal: alpha_g ||P_last - goal||^2
    diff = P[-1] - prob.goal_pos
    value += w.alpha_goal * float(diff @ diff)
    if want_grad:
        dP[-1] += 2.0 * w.alpha_goal * diff

    # ----- time
    if prob.free_time:
        value += w.alpha_time * T
        if want_grad:
            dT += w.alpha_time

    # ----- FOV reward
    fov_val = 0.0
    if prob.obstacles and w.alpha_fov > 0.0:
        pos_q = ws.Aq[0] @ P
        yaw_q = ws.Aq[0] @ Y
        ts_q = prob.t_start + ws.sq * T
        for obs in prob.obstacles:
            target = obs.position(ts_q)
            score, g_pos, g_yaw, g_target = in_fov_grad(pos_q, yaw_q, prob.cam,
                                                        target)
            cube = score ** 3
            fov_val += float(np.sum(ws.wq * cube))
            if want_grad:
                coef = -w.alpha_fov * T * 3.0 * ws.wq * score ** 2
                dP += ws.Aq[0].T @ (coef[:, None] * g_pos)
                dY += ws.Aq[0].T @ (coef * g_yaw)
                if prob.free_time:
                    tgt_vel = obs.velocity(ts_q)
                    dT += -w.alpha_fov * float(np.sum(ws.wq * cube))
                    dT += float(np.sum(coef * np.sum(g_target * tgt_vel, axis=1)
                                       * ws.sq))
        value += -w.alpha_fov * T * fov_val

    # ----- dynamic-limit penalties (normalized squared magnitudes)
    viol_sq = 0.0

    def dyn_penalty(deriv, A, scale, order):
        nonlocal viol_sq, dP, dT
        r = np.sum(deriv ** 2, axis=1) / scale ** 2
        g = r - 1.0
        act = np.maximum(g, 0.0)
        pen = float(np.sum(act ** 2))
        viol_sq += pen
        if want_grad and pen > 0.0:
            coef = rho * 2.0 * act / scale ** 2          # d pen / d r * rho
            dP[:] += A.T @ ((2.0 * coef)[:, None] * deriv)
            dT_local = float(np.sum(rho * 2.0 * act * (-2.0 * order) * r / T))
            return dT_local
        return 0.0

    V = (ws.Ac[1] @ P) / T
    dT += dyn_penalty(V, ws.Ac[1] / T, ws.v_eff, 1)
    Aacc = (ws.Ac[2] @ P) / T ** 2
    dT += dyn_penalty(Aacc, ws.Ac[2] / T ** 2, ws.a_eff, 2)
    Jc = (ws.Ac[3] @ P) / T ** 3
    dT += dyn_penalty(Jc, ws.Ac[3] / T ** 3, ws.j_eff, 3)

    yr = (ws.Ac[1] @ Y) / T
    g_yr = yr ** 2 / ws.yr_eff ** 2 - 1.0
    act = np.maximum(g_yr, 0.0)
    pen_yr = float(np.sum(act ** 2))
    viol_sq += pen_yr
    if want_grad and pen_yr > 0.0:
        coef = rho * 4.0 * act * yr / (ws.yr_eff ** 2 * T)
        dY += ws.Ac[1].T @ coef
        dT += float(np.sum(rho * 2.0 * act * (-2.0) * (yr ** 2 / ws.yr_eff ** 2) / T))

    # ----- clearance penalties
    pos_c = ws.Ac[0] @ P
    ts_c = prob.t_start + ws.sc * T
    m = ws.margin_eff
    for obs in prob.obstacles:
        centers = obs.position(ts_c)
        sdf, g_sdf = box_signed_distance_grad(pos_c, centers, obs.half_extents)
        act = np.maximum((m - sdf) / m, 0.0)
        pen = float(np.sum(act ** 2))
        viol_sq += pen
        if want_grad and pen > 0.0:
            coef = rho * 2.0 * act * (-1.0 / m)
            dP += ws.Ac[0].T @ (coef[:, None] * g_sdf)
            if prob.free_time:
                c_vel = obs.velocity(ts_c)
                dT += float(np.sum(coef * (-np.sum(g_sdf * c_vel, axis=1)) * ws.sc))
    for k in range(len(prob.peer_trajs)):
        p_pos, p_vel = ws.peer_state(k, ts_c)
        rel = pos_c - p_pos
        dist = np.maximum(np.linalg.norm(rel, axis=1), 1e-9)
        act = np.maximum((m - dist) / m, 0.0)
        pen = float(np.sum(act ** 2))
        viol_sq += pen
        if want_grad and pen > 0.0:
            unit = rel / dist[:, None]
            coef = rho * 2.0 * act * (-1.0 / m)
            dP += ws.Ac[0].T @ (coef[:, None] * unit)
            if prob.free_time:
                dT += float(np.sum(coef * (-np.sum(unit * p_vel, axis=1)) * ws.sc))

    value += rho * viol_sq

    info = {
        "soft_cost": value - rho * viol_sq,
        "violation": viol_sq,
    }
    if not want_grad:
        return value, None, info

    # chain boundary rows' T-dependence into dT
    if prob.free_time:
        dp1, dp2, dy1 = lay.boundary_time_sensitivity(prob, T)
        dT += float(dP[1] @ dp1 + dP[2] @ dp2 + dY[1] * dy1)

    grad = lay.fold(dP, dY, dT)
    return value, grad, info


def gradient(x, prob: PlanProblem, rho: float = 0.0,
             T_fixed: float | None = None) -> np.ndarray:
    """Gradient of the penalized objective w.r.t. the packed variables.

    When the problem's duration is fixed, the packed vector has no duration
    entry and the gradient matches its (shorter) length.
    """
    T_ref = T_fixed if T_fixed is not None else _heuristic_time(prob)
    ws = _Workspace(prob, T_ref)
    _, g, _ = _penalized(np.asarray(x, float), prob, ws, rho, T_ref)
    return g


def penalized_objective(x, prob: PlanProblem, rho: float,
                        T_fixed: float | None = None) -> float:
    T_ref = T_fixed if T_fixed is not None else _heuristic_time(prob)
    ws = _Workspace(prob, T_ref)
    v, _, _ = _penalized(np.asarray(x, float), prob, ws, rho, T_ref,
                         want_grad=False)
    return v


# ---------------------------------------------------------------------------
# Initialization and the solve loop
# ---------------------------------------------------------------------------

def _heuristic_time(prob: PlanProblem) -> float:
    if prob.fixed_total_time is not None and not prob.free_time:
        return prob.fixed_total_time
    dist = float(np.linalg.norm(prob.goal_pos - prob.start.pos))
    cfg = prob.solver
    return max(cfg.time_factor * dist / prob.lim.v_max, cfg.min_time)


def _greville(n_ctrl: int) -> np.ndarray:
    knots = basis_for(n_ctrl).knots
    return np.array([np.mean(knots[i + 1:i + 1 + 3]) for i in range(n_ctrl)])


def _trapezoid_arc(dist: float, v0: float, v_cruise: float, accel: float):
    """Arc length s(t) of a ramp/cruise/ramp speed profile covering dist.

    Returns (profile function, profile duration).  Degenerates to a
    triangular profile when the distance is too short to reach cruise."""
    v0 = max(min(v0, v_cruise), 0.0)
    d_min = (v_cruise ** 2 - v0 ** 2) / (2 * accel) + v_cruise ** 2 / (2 * accel)
    if d_min > dist:
        v_cruise = max(np.sqrt(max(accel * dist + v0 ** 2 / 2, 0.0)), v0, 0.1)
    t1 = (v_cruise - v0) / accel
    d1 = (v0 + v_cruise) / 2 * t1
    t3 = v_cruise / accel
    d3 = v_cruise ** 2 / (2 * accel)
    t2 = max(dist - d1 - d3, 0.0) / v_cruise
    total = t1 + t2 + t3

    def arc(t):
        t = np.clip(t, 0.0, total)
        s = np.where(
            t < t1,
            v0 * t + 0.5 * accel * t ** 2,
            np.where(t < t1 + t2,
                     d1 + v_cruise * (t - t1),
                     dist - 0.5 * accel * np.maximum(total - t, 0.0) ** 2))
        return np.minimum(s, dist)

    return arc, total


def _initial_guess(prob: PlanProblem, lay: _Layout, T: float, guess_idx: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Straight-line seed toward the goal, bowed laterally/vertically for
    secondary guesses.  Free-duration seeds follow a trapezoidal speed
    profile so the solver starts near a time-efficient basin."""
    start = prob.start.pos
    goal = prob.goal_pos
    line = goal - start
    dist = np.linalg.norm(line)
    u = line / dist if dist > 1e-9 else np.array([1.0, 0.0, 0.0])
    perp1 = np.cross(u, [0.0, 0.0, 1.0])
    if np.linalg.norm(perp1) < 1e-6:
        perp1 = np.cross(u, [0.0, 1.0, 0.0])
    perp1 /= np.linalg.norm(perp1)
    perp2 = np.cross(u, perp1)

    cfg = prob.solver
    if guess_idx == 0:
        offset = np.zeros(3)
    else:
        angle = 2.0 * np.pi * (guess_idx - 1) / 5.0 + rng.uniform(-0.3, 0.3)
        radius = rng.uniform(cfg.guess_offset_lo, cfg.guess_offset_hi)
        offset = radius * (np.cos(angle) * perp1 + np.sin(angle) * perp2)

    n = lay.n
    xi = _greville(n)
    if prob.free_time and dist > 0.2:
        v0_along = float(max(np.dot(prob.start.vel, u), 0.0))
        arc, t_prof = _trapezoid_arc(dist, v0_along,
                                     0.95 * prob.lim.v_max * (1 - cfg.vel_slack),
                                     0.5 * prob.lim.a_max * (1 - cfg.acc_slack))
        T = max(t_prof / xi[n - 3], cfg.min_time)
        frac = arc(xi * T) / dist
    else:
        frac = xi
    P = start + frac[:, None] * line \
        + np.sin(np.pi * frac)[:, None] * offset
    # symmetry breaker: a head-on seed through a box center is a saddle
    P[1:-1] += rng.normal(0.0, 0.02, size=(n - 2, 3))
    goal_yaw = np.arctan2(line[1], line[0]) if dist > 1e-9 else prob.start.yaw
    # stay on the same winding as the current yaw
    goal_yaw = prob.start.yaw + np.arctan2(np.sin(goal_yaw - prob.start.yaw),
                                           np.cos(goal_yaw - prob.start.yaw))
    Y = np.full(n, goal_yaw)
    return lay.pack(P, Y, T)


def _hard_checks(traj: TrajectorySpline, prob: PlanProblem) -> bool:
    cfg = prob.solver
    if not check_dynamic_feasibility(traj, prob.lim, cfg.check_dt).ok:
        return False
    for obs in prob.obstacles:
        if clearance(traj, obs, prob.safety_margin, dt=cfg.check_dt) < 0.0:
            return False
    for peer in prob.peer_trajs:
        if clearance(traj, peer, prob.safety_margin, dt=cfg.check_dt) < 0.0:
            return False
    return True


def solve(prob: PlanProblem, trace: list | None = None) -> PlanResult:
    """Run n_guesses penalty solves and return the best hard-checked result.

    Deterministic given the problem plus its seed.  When no guess survives
    the a posteriori checks the lowest-penalty candidate is returned with
    feasible=False; the caller is expected to keep its previous trajectory.
    ``trace``, if given, collects (guess, rho, penalized value) per accepted
    step so the non-increasing descent invariant can be audited.
    """
    t0 = time.perf_counter()
    cfg = prob.solver
    T_ref = _heuristic_time(prob)
    ws = _Workspace(prob, T_ref)
    lay = ws.layout
    rng = np.random.default_rng(prob.seed)

    T_lo = max(0.2, 0.25 * T_ref)
    T_hi = 4.0 * T_ref

    best = None          # (cost, traj, breakdown, feasible)
    fallback = None      # (penalized value, traj)
    total_iters = 0

    for guess_idx in range(prob.n_guesses):
        x = _initial_guess(prob, lay, T_ref, guess_idx, rng)
        rho = cfg.rho_init
        f_val, g, info = _penalized(x, prob, ws, rho, T_ref)
        step = 1.0
        for outer in range(cfg.outer_iters):
            stalls = 0
            for _ in range(cfg.inner_iters):
                total_iters += 1
                gnorm = float(np.linalg.norm(g))
                if gnorm < cfg.grad_tol * (1.0 + abs(f_val)):
                    break
                accepted = False
                step = min(step * 2.0, 1e3)
                direction = -g
                while step > 1e-14:
                    x_new = x + step * direction
                    if lay.free_time:
                        x_new[-1] = np.clip(x_new[-1], T_lo, T_hi)
                    f_new, g_new, info_new = _penalized(x_new, prob, ws, rho, T_ref)
                    if f_new < f_val:
                        stalls = stalls + 1 if f_val - f_new < 1e-9 * (1 + abs(f_val)) else 0
                        x, f_val, g, info = x_new, f_new, g_new, info_new
                        accepted = True
                        if trace is not None:
                            trace.append((guess_idx, rho, f_val))
                        break
                    step *= 0.5
                if not accepted or stalls >= 3:
                    break
            if info["violation"] < cfg.feas_tol:
                break
            rho *= cfg.rho_growth
            f_val, g, info = _penalized(x, prob, ws, rho, T_ref)

        P, Y, T = lay.unpack(x, prob, T_ref)
        traj = TrajectorySpline(P, Y, T, prob.t_start)
        if fallback is None or f_val < fallback[0]:
            fallback = (f_val, traj)
        if _hard_checks(traj, prob):
            cost, breakdown = total_cost(traj, prob)
            if best is None or cost < best[0]:
                best = (cost, traj, breakdown)

    wall_ms = (time.perf_counter() - t0) * 1e3
    if best is not None:
        cost, traj, breakdown = best
        return PlanResult(traj, cost, breakdown, total_iters, wall_ms, True)
    cost, breakdown = total_cost(fallback[1], prob)
    return PlanResult(fallback[1], cost, breakdown, total_iters, wall_ms, False)


@dataclass(frozen=True)
class ExpertPlanner:
    """Planner interface over solve() for the replanning state machine.

    free_time=False plans over a heuristic fixed duration; free_time=True
    additionally optimizes the duration (slower, less conservative).
    """

    n_guesses: int = 6
    free_time: bool = True
    lim: DynamicLimits = field(default_factory=DynamicLimits)
    cam: CameraModel = field(default_factory=CameraModel)
    weights: PlanWeights = field(default_factory=PlanWeights)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def plan(self, start: StartState, goal, obstacles, peer_trajs,
             t_start: float, margin: float, seed: int) -> PlanResult:
        prob = PlanProblem(
            start=start, goal_pos=goal, obstacles=obstacles,
            peer_trajs=peer_trajs, lim=self.lim, cam=self.cam,
            weights=self.weights, n_guesses=self.n_guesses,
            free_time=self.free_time, safety_margin=margin,
            t_start=t_start, seed=seed, solver=self.solver)
        return solve(prob)
