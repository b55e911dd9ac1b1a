"""Learned student planner: LSTM entity encoder + fully connected trunk.

The network consumes a variable-length sequence of entity descriptors (one
per obstacle or peer agent) through a single LSTM layer whose final hidden
state is a fixed-size latent regardless of the entity count.  That latent,
concatenated with the agent's own-state features, feeds a 4 x 1024 ReLU trunk
that emits several candidate trajectories ("heads"), each decoded into
position/yaw spline control-point offsets (anchored to the current pose, in
the agent's yaw-aligned frame) plus a softplus-mapped duration.

Everything is plain numpy with manual backpropagation; the networks are
desk-scale and the forward pass is the planner's whole per-replan compute.

Entity ordering matters to an LSTM, so observations are built with a
canonical ordering (nearest entity last, where it has the strongest effect
on the final state); the end-to-end policy is therefore invariant to the
order in which entities are handed in.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, asdict

import numpy as np

from .optimizer import PlanProblem, PlanResult, StartState, clearance, total_cost
from .splines import TrajectorySpline, check_dynamic_feasibility

# featurization constants (fixed, not tied to runtime limits); the entity
# samples must span a whole plan horizon or the network cannot see the
# sweep it has to avoid
ENTITY_TIME_OFFSETS = (0.0, 0.8, 1.6, 2.4, 3.2, 4.0)
POS_SCALE = 6.0
VEL_SCALE = 2.0
ACC_SCALE = 10.0
YAW_RATE_SCALE = 4.0
OWN_DIM = 10
ENTITY_DIM = 3 * len(ENTITY_TIME_OFFSETS) + 3


@dataclass(frozen=True)
class PolicyConfig:
    hidden: int = 64
    trunk_width: int = 1024
    trunk_layers: int = 4
    n_heads: int = 6
    n_ctrl: int = 8
    t_floor: float = 1.0          # duration decode floor, seconds
    entity_dim: int = ENTITY_DIM
    own_dim: int = OWN_DIM

    @property
    def head_dim(self) -> int:
        return 4 * self.n_ctrl + 1     # 3 per position point + yaw + duration

    @property
    def out_dim(self) -> int:
        return self.n_heads * self.head_dim


def init_params(cfg: PolicyConfig, seed: int = 0) -> dict:
    """Seeded parameter dict; output layer starts small so the initial
    policy decodes near-hold trajectories."""
    rng = np.random.default_rng(seed)
    H, D = cfg.hidden, cfg.entity_dim
    params = {
        "lstm_Wx": rng.uniform(-1, 1, (4 * H, D)) / np.sqrt(D),
        "lstm_Wh": rng.uniform(-1, 1, (4 * H, H)) / np.sqrt(H),
        "lstm_b": np.zeros(4 * H),
    }
    params["lstm_b"][H:2 * H] = 1.0      # forget-gate bias
    fan_in = cfg.own_dim + H
    for layer in range(cfg.trunk_layers):
        width = cfg.trunk_width
        params[f"fc{layer}_W"] = rng.normal(0, np.sqrt(2.0 / fan_in), (width, fan_in))
        params[f"fc{layer}_b"] = np.zeros(width)
        fan_in = width
    params["out_W"] = rng.normal(0, 0.01 / np.sqrt(fan_in), (cfg.out_dim, fan_in))
    params["out_b"] = np.zeros(cfg.out_dim)
    return params


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Observation:
    own: np.ndarray            # (OWN_DIM,)
    entities: np.ndarray       # (E, ENTITY_DIM), canonical order
    anchor_pos: np.ndarray     # (3,)
    anchor_yaw: float
    t_start: float


def _yaw_rotation(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def build_observation(start: StartState, goal, obstacles=(), peer_trajs=(),
                      t_start: float = 0.0, margin: float = 0.35) -> Observation:
    """Featurize a planning query in the agent's yaw-aligned local frame."""
    R_inv = _yaw_rotation(-start.yaw)
    goal_local = R_inv @ (np.asarray(goal, float) - start.pos)
    own = np.concatenate([
        R_inv @ start.vel / VEL_SCALE,
        R_inv @ start.acc / ACC_SCALE,
        [start.yaw_rate / YAW_RATE_SCALE],
        goal_local / POS_SCALE,
    ])
    ts = t_start + np.asarray(ENTITY_TIME_OFFSETS)
    rows = []
    for obs in obstacles:
        pts = (obs.position(ts) - start.pos) @ R_inv.T
        rows.append(np.concatenate([pts.ravel() / POS_SCALE, obs.half_extents]))
    for peer in peer_trajs:
        pts = (peer.eval(ts, 0)[0] - start.pos) @ R_inv.T
        extents = np.full(3, margin)
        rows.append(np.concatenate([pts.ravel() / POS_SCALE, extents]))
    if rows:
        entities = np.array(rows)
        # nearest entity last: it gets the final word on the LSTM state
        dist = np.linalg.norm(entities[:, :3], axis=1)
        order = np.lexsort(tuple(entities[:, k] for k in range(entities.shape[1] - 1, -1, -1))
                           + (-dist,))
        entities = entities[order]
    else:
        entities = np.zeros((0, ENTITY_DIM))
    return Observation(own=own, entities=entities, anchor_pos=start.pos.copy(),
                       anchor_yaw=float(start.yaw), t_start=float(t_start))


# ---------------------------------------------------------------------------
# Forward / backward passes
# ---------------------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_forward(params: dict, seqs: np.ndarray, lengths: np.ndarray):
    """Batched LSTM over padded sequences; returns (h_final (B, H), cache).

    Steps beyond a sequence's length leave its state untouched, so the final
    state is the state right after the last real entity (zero for empty)."""
    B, L, _ = seqs.shape
    H = params["lstm_Wh"].shape[1]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    for t in range(L):
        x = seqs[:, t, :]
        z = x @ params["lstm_Wx"].T + h @ params["lstm_Wh"].T + params["lstm_b"]
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        mask = (t < lengths)[:, None]
        steps.append((x, h, c, i, f, g, o, c_new, mask))
        h = np.where(mask, h_new, h)
        c = np.where(mask, c_new, c)
    return h, (steps, H, params)


def lstm_backward(cache, dh_final: np.ndarray) -> dict:
    """Backprop through time; returns gradients for the LSTM parameters."""
    steps, H, params = cache
    dh = dh_final.copy()
    dc = np.zeros_like(dh)
    grads = {
        "lstm_Wx": np.zeros_like(params["lstm_Wx"]),
        "lstm_Wh": np.zeros_like(params["lstm_Wh"]),
        "lstm_b": np.zeros_like(params["lstm_b"]),
    }
    for x, h_prev, c_prev, i, f, g, o, c_new, mask in reversed(steps):
        dh_t = np.where(mask, dh, 0.0)
        dc_t = np.where(mask, dc, 0.0)
        tanh_c = np.tanh(c_new)
        do = dh_t * tanh_c
        dc_inner = dc_t + dh_t * o * (1.0 - tanh_c ** 2)
        di = dc_inner * g
        df = dc_inner * c_prev
        dg = dc_inner * i
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g ** 2),
            do * o * (1.0 - o),
        ], axis=1)
        grads["lstm_Wx"] += dz.T @ x
        grads["lstm_Wh"] += dz.T @ h_prev
        grads["lstm_b"] += dz.sum(axis=0)
        dh_prev = dz @ params["lstm_Wh"]
        dh = np.where(mask, dh_prev, dh)        # carried state where masked
        dc = np.where(mask, dc_inner * f, dc)
    return grads


def encode_entities(params: dict, descriptors: np.ndarray) -> np.ndarray:
    """Latent for one descriptor sequence (E, ENTITY_DIM); empty -> zeros."""
    H = params["lstm_Wh"].shape[1]
    descriptors = np.asarray(descriptors, dtype=float)
    if descriptors.size == 0:
        return np.zeros(H)
    h, _ = lstm_forward(params, descriptors[None, :, :],
                        np.array([len(descriptors)]))
    return h[0]


def trunk_forward(params: dict, x: np.ndarray, cfg: PolicyConfig):
    """ReLU MLP + linear output head; returns (out (B, out_dim), cache)."""
    acts = [x]
    h = x
    for layer in range(cfg.trunk_layers):
        h = np.maximum(h @ params[f"fc{layer}_W"].T + params[f"fc{layer}_b"], 0.0)
        acts.append(h)
    out = h @ params["out_W"].T + params["out_b"]
    return out, acts


def trunk_backward(params: dict, acts: list, dout: np.ndarray,
                   cfg: PolicyConfig):
    """Returns (param grads, gradient w.r.t. the trunk input)."""
    grads = {"out_W": dout.T @ acts[-1], "out_b": dout.sum(axis=0)}
    dh = dout @ params["out_W"]
    for layer in range(cfg.trunk_layers - 1, -1, -1):
        dh = dh * (acts[layer + 1] > 0.0)
        grads[f"fc{layer}_W"] = dh.T @ acts[layer]
        grads[f"fc{layer}_b"] = dh.sum(axis=0)
        dh = dh @ params[f"fc{layer}_W"]
    return grads, dh


def forward_batch(params: dict, observations: list, cfg: PolicyConfig):
    """Raw head outputs for a batch of observations: (raw (B, out_dim), cache)."""
    B = len(observations)
    lengths = np.array([len(o.entities) for o in observations])
    L = max(int(lengths.max()), 1) if B else 1
    seqs = np.zeros((B, L, cfg.entity_dim))
    for k, o in enumerate(observations):
        if len(o.entities):
            seqs[k, :len(o.entities)] = o.entities
    latent, lstm_cache = lstm_forward(params, seqs, lengths)
    own = np.stack([o.own for o in observations])
    trunk_in = np.concatenate([own, latent], axis=1)
    raw, acts = trunk_forward(params, trunk_in, cfg)
    return raw, (lstm_cache, acts, cfg)


def backward_batch(params: dict, cache, draw: np.ndarray) -> dict:
    """Parameter gradients given d loss / d raw outputs."""
    lstm_cache, acts, cfg = cache
    grads, dx = trunk_backward(params, acts, draw, cfg)
    dlatent = dx[:, cfg.own_dim:]
    grads.update(lstm_backward(lstm_cache, dlatent))
    return grads


# ---------------------------------------------------------------------------
# Decoding raw outputs into trajectories
# ---------------------------------------------------------------------------

def softplus(x):
    return np.logaddexp(0.0, x)


def decode_arrays(raw: np.ndarray, anchor_pos, anchor_yaw, cfg: PolicyConfig):
    """Vectorized decode of head outputs (..., head_dim) into control points.

    Returns (P (..., n_ctrl, 3) world frame, Y (..., n_ctrl), T (...)).
    The first control point is anchored to the current pose exactly.
    """
    n = cfg.n_ctrl
    lead = raw.shape[:-1]
    off_pos = raw[..., :3 * n].reshape(*lead, n, 3).copy()
    off_yaw = raw[..., 3 * n:4 * n].copy()
    off_pos[..., 0, :] = 0.0
    off_yaw[..., 0] = 0.0
    R = _yaw_rotation(anchor_yaw)
    P = np.asarray(anchor_pos) + off_pos @ R.T
    Y = anchor_yaw + off_yaw
    T = cfg.t_floor + softplus(raw[..., 4 * n])
    return P, Y, T


def decode_arrays_backward(raw: np.ndarray, dP: np.ndarray, dY: np.ndarray,
                           dT: np.ndarray, anchor_yaw, cfg: PolicyConfig):
    """Adjoint of decode_arrays: gradients w.r.t. the raw head outputs."""
    n = cfg.n_ctrl
    lead = raw.shape[:-1]
    draw = np.zeros_like(raw)
    R = _yaw_rotation(anchor_yaw)
    d_off = dP @ R                       # (dP @ R^T^T)
    d_off[..., 0, :] = 0.0
    draw[..., :3 * n] = d_off.reshape(*lead, 3 * n)
    dy = dY.copy()
    dy[..., 0] = 0.0
    draw[..., 3 * n:4 * n] = dy
    draw[..., 4 * n] = dT * _sigmoid(raw[..., 4 * n])
    return draw


def policy_heads(params: dict, obs: Observation, cfg: PolicyConfig):
    """All candidate trajectories for one observation."""
    raw, _ = forward_batch(params, [obs], cfg)
    heads = raw[0].reshape(cfg.n_heads, cfg.head_dim)
    P, Y, T = decode_arrays(heads, obs.anchor_pos, obs.anchor_yaw, cfg)
    return [TrajectorySpline(P[k], Y[k], float(T[k]), obs.t_start)
            for k in range(cfg.n_heads)]


def policy_forward(params: dict, obs: Observation, cfg: PolicyConfig) -> TrajectorySpline:
    """Primary candidate trajectory (first head) for one observation."""
    return policy_heads(params, obs, cfg)[0]


# ---------------------------------------------------------------------------
# Imitation loss
# ---------------------------------------------------------------------------

def wrap_angle(a):
    return np.arctan2(np.sin(a), np.cos(a))


def sample_trajectory(traj: TrajectorySpline, k: int):
    """K samples at uniform normalized times over the trajectory's own span."""
    s = (np.arange(k) + 0.5) / k
    ts = traj.t_start + s * traj.total_time
    pos, yaw = traj.eval(ts, 0)
    return pos, yaw


def il_loss(student: TrajectorySpline, expert: TrajectorySpline,
            alpha_yaw: float = 70.0, samples: int = 50):
    """Weighted imitation loss: mean squared position error plus alpha times
    mean squared wrapped yaw error, each over normalized-time samples.

    Returns (total, {"pos": ..., "yaw": ...}).
    """
    sp, sy = sample_trajectory(student, samples)
    ep, ey = sample_trajectory(expert, samples)
    l_pos = float(np.mean(np.sum((sp - ep) ** 2, axis=1)))
    l_yaw = float(np.mean(wrap_angle(sy - ey) ** 2))
    return l_pos + alpha_yaw * l_yaw, {"pos": l_pos, "yaw": l_yaw}


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: dict, cfg: PolicyConfig) -> None:
    np.savez(path, __version__=np.array(CHECKPOINT_VERSION),
             __config__=np.frombuffer(json.dumps(asdict(cfg)).encode(), dtype=np.uint8),
             **params)


def load_checkpoint(path):
    data = np.load(path)
    version = int(data["__version__"])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    cfg = PolicyConfig(**json.loads(bytes(data["__config__"]).decode()))
    params = {k: data[k] for k in data.files
              if k not in ("__version__", "__config__")}
    return params, cfg


# ---------------------------------------------------------------------------
# Planner wrapper
# ---------------------------------------------------------------------------

class StudentPlanner:
    """Runs the policy as a drop-in planner for the replanning state machine.

    Decodes every head, keeps those passing the same a posteriori checks the
    expert uses, and returns the lowest-cost survivor.  The wall time covers
    the full per-replan compute (forward pass, decode, checks, scoring).
    """

    def __init__(self, params: dict, cfg: PolicyConfig, lim=None, cam=None,
                 weights=None, check_dt: float = 0.02):
        from .optimizer import PlanWeights
        from .splines import DynamicLimits
        from .world import CameraModel
        self.params = params
        self.cfg = cfg
        self.lim = lim or DynamicLimits()
        self.cam = cam or CameraModel()
        self.weights = weights or PlanWeights()
        self.check_dt = check_dt
        self.forward_times_ms: list[float] = []

    def plan(self, start: StartState, goal, obstacles, peer_trajs,
             t_start: float, margin: float, seed: int) -> PlanResult:
        t0 = time.perf_counter()
        obs = build_observation(start, goal, obstacles, peer_trajs,
                                t_start, margin)
        heads = policy_heads(self.params, obs, self.cfg)
        self.forward_times_ms.append((time.perf_counter() - t0) * 1e3)
        prob = PlanProblem(start=start, goal_pos=goal, obstacles=obstacles,
                           peer_trajs=peer_trajs, lim=self.lim, cam=self.cam,
                           weights=self.weights, free_time=True,
                           safety_margin=margin, t_start=t_start, seed=seed)
        goal_arr = np.asarray(goal, float)
        goal_dist = float(np.linalg.norm(goal_arr - start.pos))
        fallback = None   # least-regressing head, scored only if ever needed

        def admit(traj):
            nonlocal fallback
            end_pos, _ = traj.eval(traj.t_end, 0)
            end_dist = float(np.linalg.norm(end_pos - goal_arr))
            if fallback is None or end_dist < fallback[0]:
                fallback = (end_dist, traj)
            # progress gate: a candidate must end meaningfully closer to the
            # goal (or inside the tolerance); a stray head that parks the
            # agent elsewhere drags it out of the training distribution,
            # where every future decode is garbage
            if end_dist > max(goal_dist - 0.2, 0.25):
                return False
            if not check_dynamic_feasibility(traj, self.lim, self.check_dt).ok:
                return False
            if any(clearance(traj, o, margin, dt=self.check_dt) < 0.0
                   for o in obstacles):
                return False
            return not any(clearance(traj, p, margin, dt=self.check_dt) < 0.0
                           for p in peer_trajs)

        survivors = [h for h in heads if admit(h)]
        if not survivors:
            # time dilation keeps each path but slows it down: it repairs
            # small dynamic-limit overshoots and can also clear a moving
            # obstacle by shifting the encounter timing
            for dilation in (1.2, 1.5, 2.0):
                survivors = [t for t in (TrajectorySpline(
                    h.pos_ctrl, h.yaw_ctrl, h.total_time * dilation, h.t_start)
                    for h in heads) if admit(t)]
                if survivors:
                    break
        if survivors:
            scored = [(total_cost(t, prob, points_per_segment=10), t)
                      for t in survivors]
            (cost, breakdown), traj = min(scored, key=lambda x: x[0][0])
            feasible = True
        else:
            traj = fallback[1]
            cost, breakdown = total_cost(traj, prob, points_per_segment=10)
            feasible = False
        wall_ms = (time.perf_counter() - t0) * 1e3
        return PlanResult(traj, cost, breakdown, 0, wall_ms, feasible)
