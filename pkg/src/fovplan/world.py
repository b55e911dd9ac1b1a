"""Obstacles, trefoil-knot motion, and camera field-of-view geometry.

The FOV comes in two flavours: a smooth, differentiable score in [0, 1] that
the planner maximizes, and a hard binary test used by the benchmark metrics.
The smooth score is a product of logistic gates on the viewing angle and on
the near/far range, sharp enough to track the binary test almost everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# default logistic sharpness: angle gate and range gates
K_ANGLE = 20.0
K_RANGE = 10.0  # 1/m


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# Obstacles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObstaclePrediction:
    """Axis-aligned box riding a trefoil knot.

    Position at time t is
        center + scale * (sin(u) + 2 sin(2u), cos(u) - 2 cos(2u), -sin(3u)) / 3
    with u = angular_rate * t + phase, so the per-axis excursion is bounded
    by roughly the per-axis scale.
    """

    id: str
    half_extents: np.ndarray          # (3,), meters, > 0
    center: np.ndarray                # (3,), meters
    scale: np.ndarray                 # (3,), meters (0 = static at center)
    angular_rate: float               # rad/s
    phase: float = 0.0                # rad
    valid_from: float = 0.0           # seconds

    def __post_init__(self):
        object.__setattr__(self, "half_extents", _frozen(self.half_extents))
        object.__setattr__(self, "center", _frozen(self.center))
        object.__setattr__(self, "scale", _frozen(self.scale))
        if np.any(self.half_extents <= 0):
            raise ValueError("half_extents must be positive componentwise")

    def position(self, t):
        """Box center at time(s) t; shape (3,) or (K, 3)."""
        u = self.angular_rate * np.asarray(t, dtype=float) + self.phase
        curve = np.stack([
            np.sin(u) + 2.0 * np.sin(2.0 * u),
            np.cos(u) - 2.0 * np.cos(2.0 * u),
            -np.sin(3.0 * u),
        ], axis=-1) / 3.0
        return self.center + self.scale * curve

    def velocity(self, t):
        """Time derivative of position; same shape rules as position()."""
        u = self.angular_rate * np.asarray(t, dtype=float) + self.phase
        d_curve = np.stack([
            np.cos(u) + 4.0 * np.cos(2.0 * u),
            -np.sin(u) + 4.0 * np.sin(2.0 * u),
            -3.0 * np.cos(3.0 * u),
        ], axis=-1) / 3.0
        return self.scale * d_curve * self.angular_rate

    def max_reach(self) -> np.ndarray:
        """Per-axis bound on |position - center| (curve components are <= 3/3)."""
        return self.scale * 1.0 + self.half_extents

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "half_extents": list(map(float, self.half_extents)),
            "center": list(map(float, self.center)),
            "scale": list(map(float, self.scale)),
            "angular_rate": float(self.angular_rate),
            "phase": float(self.phase),
            "valid_from": float(self.valid_from),
        }

    @staticmethod
    def from_record(rec: dict) -> "ObstaclePrediction":
        return ObstaclePrediction(
            id=rec["id"],
            half_extents=rec["half_extents"],
            center=rec["center"],
            scale=rec["scale"],
            angular_rate=rec["angular_rate"],
            phase=rec.get("phase", 0.0),
            valid_from=rec.get("valid_from", 0.0),
        )


def box_signed_distance(points, centers, half_extents) -> np.ndarray:
    """Signed distance from point(s) to axis-aligned box(es).

    Positive outside, negative inside; exact for the box surface.  Shapes
    broadcast: points (..., 3), centers (..., 3), half_extents (3,).
    """
    q = np.abs(np.asarray(points) - np.asarray(centers)) - np.asarray(half_extents)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def box_signed_distance_grad(points, centers, half_extents):
    """Signed distance plus its gradient w.r.t. the point.

    The gradient is the unit outward direction (a subgradient on the
    measure-zero kink set); inside the box it pushes along the axis of
    least penetration.
    """
    points = np.asarray(points, dtype=float)
    rel = points - np.asarray(centers)
    q = np.abs(rel) - np.asarray(half_extents)
    q_pos = np.maximum(q, 0.0)
    out_norm = np.linalg.norm(q_pos, axis=-1)
    sdf = out_norm + np.minimum(np.max(q, axis=-1), 0.0)
    sign = np.sign(rel)
    outside = out_norm > 0.0
    safe = np.where(outside, out_norm, 1.0)
    grad = sign * q_pos / safe[..., None]
    if np.any(~outside):
        scalar = points.ndim == 1
        if scalar:
            grad = np.zeros(3)
            ax = int(np.argmax(q))
            grad[ax] = sign[ax] if sign[ax] != 0 else 1.0
        else:
            axis = np.argmax(q, axis=-1)
            idx = np.nonzero(~outside)
            grad[idx] = 0.0
            ax = axis[idx]
            sg = sign[idx + (ax,)]
            grad[idx + (ax,)] = np.where(sg != 0, sg, 1.0)
    return sdf, grad


# ---------------------------------------------------------------------------
# Camera model and visibility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraModel:
    """Conical FOV: half-angle about a body-fixed optical axis, plus a depth range."""

    half_angle: float = np.deg2rad(45.0)     # rad, in (0, pi/2)
    depth_range: float = 6.0                 # meters
    mount_dir: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    k_angle: float = K_ANGLE
    k_range: float = K_RANGE

    def __post_init__(self):
        if not 0.0 < self.half_angle < np.pi / 2:
            raise ValueError("half_angle must be in (0, pi/2)")
        if self.depth_range <= 0.0:
            raise ValueError("depth_range must be positive")
        m = np.asarray(self.mount_dir, dtype=float)
        m = m / np.linalg.norm(m)
        object.__setattr__(self, "mount_dir", _frozen(m))

    def optical_axis(self, yaw):
        """World-frame optical axis for yaw angle(s); shape (3,) or (K, 3)."""
        yaw = np.asarray(yaw, dtype=float)
        c, s = np.cos(yaw), np.sin(yaw)
        mx, my, mz = self.mount_dir
        return np.stack([c * mx - s * my, s * mx + c * my,
                         np.broadcast_to(mz, c.shape)], axis=-1)

    def to_record(self) -> dict:
        return {
            "half_angle": float(self.half_angle),
            "depth_range": float(self.depth_range),
            "mount_dir": list(map(float, self.mount_dir)),
            "k_angle": float(self.k_angle),
            "k_range": float(self.k_range),
        }

    @staticmethod
    def from_record(rec: dict) -> "CameraModel":
        return CameraModel(
            half_angle=rec.get("half_angle", np.deg2rad(45.0)),
            depth_range=rec.get("depth_range", 6.0),
            mount_dir=np.asarray(rec.get("mount_dir", [1.0, 0.0, 0.0])),
            k_angle=rec.get("k_angle", K_ANGLE),
            k_range=rec.get("k_range", K_RANGE),
        )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_EPS_DIST = 1e-9


def in_fov(agent_pos, agent_yaw, cam: CameraModel, target) -> np.ndarray:
    """Smooth visibility score in [0, 1]; batched over leading dimensions.

    Product of three logistic gates: cos(angle to axis) above cos(half_angle),
    distance below depth_range, and distance above zero.
    """
    agent_pos = np.asarray(agent_pos, dtype=float)
    target = np.asarray(target, dtype=float)
    rel = target - agent_pos
    d = np.maximum(np.linalg.norm(rel, axis=-1), _EPS_DIST)
    axis = cam.optical_axis(agent_yaw)
    cos_t = np.sum(axis * rel, axis=-1) / d
    gate_angle = _sigmoid(cam.k_angle * (cos_t - np.cos(cam.half_angle)))
    gate_far = _sigmoid(cam.k_range * (cam.depth_range - d))
    gate_near = _sigmoid(cam.k_range * d)
    return gate_angle * gate_far * gate_near


def in_fov_grad(agent_pos, agent_yaw, cam: CameraModel, target):
    """Score plus analytic partials w.r.t. agent position, yaw, and target.

    Returns (score, d_pos (...,3), d_yaw (...), d_target (...,3)).  Shapes
    broadcast like in_fov.
    """
    agent_pos = np.asarray(agent_pos, dtype=float)
    target = np.asarray(target, dtype=float)
    yaw = np.asarray(agent_yaw, dtype=float)
    rel = target - agent_pos
    d = np.maximum(np.linalg.norm(rel, axis=-1), _EPS_DIST)
    unit = rel / d[..., None]
    axis = cam.optical_axis(yaw)
    cos_t = np.sum(axis * unit, axis=-1)

    g1 = _sigmoid(cam.k_angle * (cos_t - np.cos(cam.half_angle)))
    g2 = _sigmoid(cam.k_range * (cam.depth_range - d))
    g3 = _sigmoid(cam.k_range * d)
    score = g1 * g2 * g3
    dg1 = cam.k_angle * g1 * (1.0 - g1)         # d gate / d cos_t
    dg2 = -cam.k_range * g2 * (1.0 - g2)        # d gate / d distance
    dg3 = cam.k_range * g3 * (1.0 - g3)

    # cos_t partials: through the unit vector and through yaw
    dcos_dtarget = (axis - cos_t[..., None] * unit) / d[..., None]
    c, s = np.cos(yaw), np.sin(yaw)
    mx, my, mz = cam.mount_dir
    daxis_dyaw = np.stack([-s * mx - c * my, c * mx - s * my,
                           np.zeros_like(c)], axis=-1)
    dcos_dyaw = np.sum(daxis_dyaw * unit, axis=-1)

    dd_dtarget = unit

    common = g2 * g3 * dg1
    d_target = (common[..., None] * dcos_dtarget
                + (g1 * (dg2 * g3 + g2 * dg3))[..., None] * dd_dtarget)
    d_pos = -d_target
    d_yaw = common * dcos_dyaw
    return score, d_pos, d_yaw, d_target


def in_fov_binary(agent_pos, agent_yaw, cam: CameraModel, target) -> np.ndarray:
    """Hard visibility test for the metrics: inside the cone and in range."""
    agent_pos = np.asarray(agent_pos, dtype=float)
    target = np.asarray(target, dtype=float)
    rel = target - agent_pos
    d = np.linalg.norm(rel, axis=-1)
    axis = cam.optical_axis(agent_yaw)
    with np.errstate(invalid="ignore"):
        cos_t = np.where(d > 0, np.sum(axis * rel, axis=-1) / np.maximum(d, _EPS_DIST), -1.0)
    return (cos_t >= np.cos(cam.half_angle)) & (d > 0.0) & (d <= cam.depth_range)
