"""Clamped cubic B-spline trajectories over position (3-D) and yaw (1-D).

A trajectory is a pair of splines sharing one uniform clamped knot vector,
parameterized on [0, 1] and scaled to a duration ``total_time``.  Evaluation
outside the time window extends the terminal state with zero derivatives, so
every trajectory is a total function of time: an agent that reaches the end
of its plan simply holds position.

All types here are immutable after construction and all operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEGREE = 3  # cubic; jerk is piecewise constant inside segments


# ---------------------------------------------------------------------------
# Basis machinery (normalized parameter s in [0, 1])
# ---------------------------------------------------------------------------

def clamped_uniform_knots(n_ctrl: int, degree: int = DEGREE) -> np.ndarray:
    """Clamped uniform knot vector on [0, 1] for ``n_ctrl`` control points."""
    if n_ctrl < degree + 1:
        raise ValueError(f"need at least {degree + 1} control points, got {n_ctrl}")
    n_seg = n_ctrl - degree
    interior = np.linspace(0.0, 1.0, n_seg + 1)[1:-1]
    return np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])


def _basis(knots: np.ndarray, degree: int, s: np.ndarray) -> np.ndarray:
    """Cox-de Boor basis values N_{i,degree}(s), shape (len(s), n_basis)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    n_int = len(knots) - 1
    N = ((s[:, None] >= knots[None, :-1])
         & (s[:, None] < knots[None, 1:])).astype(float)
    # close the last nonempty span so s = knots[-1] evaluates to the endpoint
    at_end = s >= knots[-1]
    if np.any(at_end):
        last = max(i for i in range(n_int) if knots[i] < knots[i + 1])
        N[at_end, :] = 0.0
        N[at_end, last] = 1.0
    for k in range(1, degree + 1):
        m = n_int - k
        left_den = knots[k:k + m] - knots[:m]
        right_den = knots[k + 1:k + 1 + m] - knots[1:1 + m]
        left = np.where(left_den > 0,
                        (s[:, None] - knots[None, :m])
                        / np.where(left_den > 0, left_den, 1.0), 0.0)
        right = np.where(right_den > 0,
                         (knots[None, k + 1:k + 1 + m] - s[:, None])
                         / np.where(right_den > 0, right_den, 1.0), 0.0)
        N = left * N[:, :m] + right * N[:, 1:1 + m]
    return N


def _diff_matrix(knots: np.ndarray, degree: int) -> np.ndarray:
    """Matrix mapping control points to derivative-spline control points."""
    n = len(knots) - degree - 1
    D = np.zeros((n - 1, n))
    for i in range(n - 1):
        den = knots[i + degree + 1] - knots[i + 1]
        D[i, i] = -degree / den
        D[i, i + 1] = degree / den
    return D


class _BasisCache:
    """Knot vector plus control-point-to-derivative chains for one layout."""

    def __init__(self, n_ctrl: int, degree: int = DEGREE):
        self.n_ctrl = n_ctrl
        self.degree = degree
        self.knots = clamped_uniform_knots(n_ctrl, degree)
        self.sub_knots = [self.knots]
        self.chain = [np.eye(n_ctrl)]
        kn = self.knots
        for r in range(1, degree + 1):
            D = _diff_matrix(kn, degree - r + 1)
            self.chain.append(D @ self.chain[-1])
            kn = kn[1:-1]
            self.sub_knots.append(kn)

    def design(self, s: np.ndarray, order: int) -> np.ndarray:
        """Design matrix: order-r derivative values (in s) = design @ ctrl."""
        B = _basis(self.sub_knots[order], self.degree - order, s)
        return B @ self.chain[order]


_CACHE: dict[tuple[int, int], _BasisCache] = {}


def basis_for(n_ctrl: int, degree: int = DEGREE) -> _BasisCache:
    key = (n_ctrl, degree)
    if key not in _CACHE:
        _CACHE[key] = _BasisCache(n_ctrl, degree)
    return _CACHE[key]


# evaluation grids recur heavily (quadrature nodes, check grids), so basis
# matrices are memoized on the exact byte pattern of the parameter vector;
# scattered little lookups (single eval points) stay unmemoized or they
# would thrash the cache
_BASIS_MEMO: dict = {}


def _basis_memo(knots_key, knots, degree, s: np.ndarray) -> np.ndarray:
    if s.size < 32:
        return _basis(knots, degree, s)
    key = (knots_key, degree, s.tobytes())
    hit = _BASIS_MEMO.get(key)
    if hit is None:
        if len(_BASIS_MEMO) > 1024:
            _BASIS_MEMO.clear()
        hit = _BASIS_MEMO[key] = _basis(knots, degree, s)
    return hit


def design_matrix(n_ctrl: int, s, order: int = 0, degree: int = DEGREE) -> np.ndarray:
    """Public helper: (len(s), n_ctrl) matrix of order-r basis derivatives in s."""
    return basis_for(n_ctrl, degree).design(np.atleast_1d(s), order)


# ---------------------------------------------------------------------------
# Trajectory type
# ---------------------------------------------------------------------------

def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TrajectorySpline:
    """Clamped cubic splines for position and yaw over [t_start, t_start + T].

    The clamped knot vector pins the spline to its first and last control
    points, so ``eval(t_start)`` returns ``pos_ctrl[0]`` / ``yaw_ctrl[0]``
    exactly and ``eval(t_start + total_time)`` the last ones.
    """

    pos_ctrl: np.ndarray        # (N_p, 3), meters
    yaw_ctrl: np.ndarray        # (N_y,), radians
    total_time: float           # seconds, > 0
    t_start: float = 0.0        # absolute simulation time, seconds
    degree: int = DEGREE

    def __post_init__(self):
        pos = _frozen(self.pos_ctrl).reshape(-1, 3)
        yaw = _frozen(np.ravel(self.yaw_ctrl))
        object.__setattr__(self, "pos_ctrl", pos)
        object.__setattr__(self, "yaw_ctrl", yaw)
        if self.total_time <= 0.0:
            raise ValueError("total_time must be positive")
        for n in (len(pos), len(yaw)):
            if n < self.degree + 1:
                raise ValueError("not enough control points for the degree")

    @property
    def t_end(self) -> float:
        return self.t_start + self.total_time

    def eval(self, t, order: int = 0):
        """Evaluate position and yaw (or a time derivative) at time(s) t.

        order 0..3 selects value / velocity / acceleration / jerk.  Outside
        [t_start, t_end] the value holds the nearest endpoint and every
        derivative is zero.  Returns (pos, yaw): shapes (3,) and () for a
        scalar t, (K, 3) and (K,) for an array.
        """
        if order not in (0, 1, 2, 3):
            raise ValueError("order must be 0..3")
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        s_raw = (t_arr - self.t_start) / self.total_time
        s = np.clip(s_raw, 0.0, 1.0)
        # derivative control points first: keeps constant splines exactly flat
        cp = basis_for(len(self.pos_ctrl), self.degree)
        cy = basis_for(len(self.yaw_ctrl), self.degree)
        Bp = _basis_memo((len(self.pos_ctrl), order), cp.sub_knots[order],
                         self.degree - order, s)
        By = _basis_memo((len(self.yaw_ctrl), order), cy.sub_knots[order],
                         self.degree - order, s)
        scale = self.total_time ** order
        pos = (Bp @ (cp.chain[order] @ self.pos_ctrl)) / scale
        yaw = (By @ (cy.chain[order] @ self.yaw_ctrl)) / scale
        if order > 0:
            outside = (s_raw < 0.0) | (s_raw > 1.0)
            pos[outside] = 0.0
            yaw[outside] = 0.0
        if np.isscalar(t) or np.ndim(t) == 0:
            return pos[0], yaw[0]
        return pos, yaw

    def position(self, t) -> np.ndarray:
        return self.eval(t, 0)[0]

    def state(self, t):
        """Full kinematic state at t: (pos, vel, acc, yaw, yaw_rate)."""
        p, y = self.eval(t, 0)
        v, yr = self.eval(t, 1)
        a, _ = self.eval(t, 2)
        return p, v, a, y, yr

    def to_record(self) -> dict:
        """Flat record shared by message payloads and log files."""
        return {
            "t_start": float(self.t_start),
            "total_time": float(self.total_time),
            "degree": int(self.degree),
            "pos_ctrl": [[float(x) for x in p] for p in self.pos_ctrl],
            "yaw_ctrl": [float(y) for y in self.yaw_ctrl],
        }

    @staticmethod
    def from_record(rec: dict) -> "TrajectorySpline":
        return TrajectorySpline(
            pos_ctrl=np.array(rec["pos_ctrl"], dtype=float),
            yaw_ctrl=np.array(rec["yaw_ctrl"], dtype=float),
            total_time=float(rec["total_time"]),
            t_start=float(rec["t_start"]),
            degree=int(rec.get("degree", DEGREE)),
        )


def constant_trajectory(pos, yaw: float, t_start: float = 0.0,
                        duration: float = 1.0, n_ctrl: int = 4) -> TrajectorySpline:
    """Trajectory that holds one pose for its entire (and extended) lifetime."""
    pos = np.asarray(pos, dtype=float)
    return TrajectorySpline(
        pos_ctrl=np.tile(pos, (n_ctrl, 1)),
        yaw_ctrl=np.full(n_ctrl, float(yaw)),
        total_time=duration,
        t_start=t_start,
    )


# ---------------------------------------------------------------------------
# Dynamic limits and feasibility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DynamicLimits:
    """Hard per-axis-norm limits on the flat outputs."""

    v_max: float = 2.0           # m/s
    a_max: float = 10.0          # m/s^2
    j_max: float = 30.0          # m/s^3
    yaw_rate_max: float = 4.0    # rad/s

    def __post_init__(self):
        for name in ("v_max", "a_max", "j_max", "yaw_rate_max"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class FeasibilityReport:
    ok: bool
    ratios: dict  # quantity name -> max sampled magnitude / limit

    @property
    def worst(self) -> float:
        return max(self.ratios.values())


def check_dynamic_feasibility(traj: TrajectorySpline, lim: DynamicLimits,
                              dt: float = 0.01) -> FeasibilityReport:
    """Sample derivatives on a grid of step at most dt over the trajectory's
    own window.

    Conservative-approximate: feasibility between samples is not certified,
    only bounded by the grid resolution.  The sample count is rounded up to
    a power of two so identical normalized grids recur across trajectories
    of different durations (they hit the basis cache).
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    n = 1 << max(int(np.ceil(traj.total_time / dt)) - 1, 1).bit_length()
    ts = traj.t_start + np.linspace(0.0, 1.0, n + 1) * traj.total_time
    vel, yaw_rate = traj.eval(ts, 1)
    acc, _ = traj.eval(ts, 2)
    jerk, _ = traj.eval(ts, 3)
    ratios = {
        "vel": float(np.max(np.linalg.norm(vel, axis=1)) / lim.v_max),
        "acc": float(np.max(np.linalg.norm(acc, axis=1)) / lim.a_max),
        "jerk": float(np.max(np.linalg.norm(jerk, axis=1)) / lim.j_max),
        "yaw_rate": float(np.max(np.abs(yaw_rate)) / lim.yaw_rate_max),
    }
    return FeasibilityReport(ok=all(r <= 1.0 for r in ratios.values()), ratios=ratios)


# ---------------------------------------------------------------------------
# Boundary-condition helpers and the stop fallback
# ---------------------------------------------------------------------------

def start_constrained_points(pos, vel, acc, total_time: float, n_ctrl: int):
    """First three position control points matching pos/vel/acc at t = 0.

    Uses the basis derivative rows at s = 0, which touch only the leading
    control points of a clamped spline, and solves them in sequence.
    """
    cache = basis_for(n_ctrl)
    b1 = cache.design(np.array([0.0]), 1)[0]
    b2 = cache.design(np.array([0.0]), 2)[0]
    pos = np.asarray(pos, dtype=float)
    vel = np.asarray(vel, dtype=float)
    acc = np.asarray(acc, dtype=float)
    p0 = pos
    p1 = (vel * total_time - b1[0] * p0) / b1[1]
    p2 = (acc * total_time ** 2 - b2[0] * p0 - b2[1] * p1) / b2[2]
    return p0, p1, p2


def start_constrained_yaw(yaw: float, yaw_rate: float, total_time: float,
                          n_ctrl: int):
    cache = basis_for(n_ctrl)
    b1 = cache.design(np.array([0.0]), 1)[0]
    y0 = float(yaw)
    y1 = (yaw_rate * total_time - b1[0] * y0) / b1[1]
    return y0, y1


def stop_trajectory(pos, vel, yaw: float, lim: DynamicLimits,
                    t_start: float = 0.0, n_ctrl: int = 8) -> TrajectorySpline:
    """Feasible deceleration to rest from the given state.

    Starts from a kinematic duration guess and stretches it until the
    sampled feasibility check passes; this is the fallback that guarantees a
    committed trajectory always exists.
    """
    pos = np.asarray(pos, dtype=float)
    vel = np.asarray(vel, dtype=float)
    speed = float(np.linalg.norm(vel))
    if speed < 1e-9:
        return constant_trajectory(pos, yaw, t_start=t_start)
    duration = max(2.0 * speed / lim.a_max, 0.4)
    knots = clamped_uniform_knots(n_ctrl)
    greville = np.array([np.mean(knots[i + 1:i + 1 + DEGREE])
                         for i in range(n_ctrl)])
    for _ in range(25):
        # constant-deceleration profile x(t) = pos + v t - v t^2 / (2 T)
        def profile(f):
            return pos + vel * (f * duration) - vel * (f * duration) ** 2 / (2 * duration)

        p0, p1, p2 = start_constrained_points(pos, vel, -vel / duration,
                                              duration, n_ctrl)
        ctrl = np.array([profile(f) for f in greville])
        ctrl[0], ctrl[1], ctrl[2] = p0, p1, p2
        ctrl[-2] = ctrl[-1]          # zero terminal velocity
        traj = TrajectorySpline(ctrl, np.full(n_ctrl, float(yaw)), duration, t_start)
        if check_dynamic_feasibility(traj, lim).ok:
            return traj
        duration *= 1.4
    raise RuntimeError("could not build a feasible stop trajectory")
