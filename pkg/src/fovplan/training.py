"""Imitation training of the student against the optimization expert.

Data collection follows dataset aggregation: each round rolls the current
(beta-mixed) policy through randomized scenes, queries the expert at every
visited state, and appends the labels to a growing dataset; the network then
takes minibatch steps with an adaptive two-moment first-order optimizer.

The per-sample loss between a decoded head and the expert demonstration is
the weighted imitation loss (position + alpha * wrapped yaw, over samples at
normalized times) plus a small duration-matching term: normalized-time
sampling cancels the duration out of the imitation loss, so the duration
head needs its own supervision to learn the expert's timing.  With several
heads, the closest head takes most of the gradient (winner-take-most), which
lets heads specialize to distinct expert behaviors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .optimizer import PlanProblem, StartState, total_cost
from .policy import (
    Observation,
    PolicyConfig,
    build_observation,
    decode_arrays,
    decode_arrays_backward,
    forward_batch,
    backward_batch,
    policy_heads,
    sample_trajectory,
    wrap_angle,
)
from .splines import TrajectorySpline, check_dynamic_feasibility, design_matrix


@dataclass(frozen=True)
class TrainConfig:
    alpha_yaw: float = 70.0
    dagger_rounds: int = 3
    betas: tuple = (1.0, 0.5, 0.25)   # expert-action probability per round
    demos_per_round: int = 180
    steps_per_round: int = 1200
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    loss_samples: int = 50
    time_loss_weight: float = 1.0
    wta_epsilon: float = 0.03         # gradient share left to losing heads
    replan_interval: float = 0.4      # seconds between rollout replans
    max_rollout_steps: int = 16
    two_agent_fraction: float = 0.25
    goal_tolerance: float = 0.3
    margin: float = 0.35
    # expert demonstrations use a wider margin than deployment so the
    # student's imitation error still clears real obstacles
    demo_margin: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.alpha_yaw <= 0:
            raise ValueError("alpha_yaw must be positive")
        betas = tuple(self.betas)
        if len(betas) < self.dagger_rounds:
            betas = betas + (betas[-1],) * (self.dagger_rounds - len(betas))
        if any(b < 0 or b > 1 for b in betas):
            raise ValueError("betas must lie in [0, 1]")
        if any(b2 > b1 + 1e-12 for b1, b2 in zip(betas, betas[1:])):
            raise ValueError("beta schedule must be non-increasing")
        object.__setattr__(self, "betas", betas)


@dataclass(frozen=True)
class Demonstration:
    obs: Observation
    expert_pos: np.ndarray      # (K, 3) normalized-time samples
    expert_yaw: np.ndarray      # (K,)
    expert_time: float
    expert_traj: TrajectorySpline
    scene_seed: int


def make_demonstration(obs: Observation, expert_traj: TrajectorySpline,
                       samples: int, scene_seed: int = 0) -> Demonstration:
    pos, yaw = sample_trajectory(expert_traj, samples)
    return Demonstration(obs, pos, yaw, float(expert_traj.total_time),
                         expert_traj, scene_seed)


# ---------------------------------------------------------------------------
# Loss and gradients over a batch
# ---------------------------------------------------------------------------

def _head_losses(P, Y, T, demo: Demonstration, basis, alpha_yaw, time_w):
    """Per-head loss pieces for one demo; shapes (n_heads, ...)."""
    pos_s = np.einsum("kn,hnd->hkd", basis, P)
    yaw_s = Y @ basis.T
    d_pos = pos_s - demo.expert_pos
    d_yaw = wrap_angle(yaw_s - demo.expert_yaw)
    l_pos = np.mean(np.sum(d_pos ** 2, axis=2), axis=1)
    l_yaw = np.mean(d_yaw ** 2, axis=1)
    l_time = (T - demo.expert_time) ** 2
    total = l_pos + alpha_yaw * l_yaw + time_w * l_time
    return total, l_pos, l_yaw, d_pos, d_yaw


def net_gradients(params: dict, demos: list, pcfg: PolicyConfig,
                  tcfg: TrainConfig):
    """Exact parameter gradients of the mean training loss over a batch.

    Returns (grads, stats) with stats carrying the mean total/pos/yaw loss
    of the winning heads.
    """
    B = len(demos)
    K = tcfg.loss_samples
    s = (np.arange(K) + 0.5) / K
    basis = design_matrix(pcfg.n_ctrl, s, 0)
    raw, cache = forward_batch(params, [d.obs for d in demos], pcfg)
    heads = raw.reshape(B, pcfg.n_heads, pcfg.head_dim)
    draw = np.zeros_like(heads)
    eps = tcfg.wta_epsilon if pcfg.n_heads > 1 else 0.0
    tot_loss = pos_loss = yaw_loss = 0.0
    for b, demo in enumerate(demos):
        P, Y, T = decode_arrays(heads[b], demo.obs.anchor_pos,
                                demo.obs.anchor_yaw, pcfg)
        total, l_pos, l_yaw, d_pos, d_yaw = _head_losses(
            P, Y, T, demo, basis, tcfg.alpha_yaw, tcfg.time_loss_weight)
        win = int(np.argmin(total))
        wgt = np.full(pcfg.n_heads, eps / max(pcfg.n_heads - 1, 1))
        wgt[win] = 1.0 - eps
        tot_loss += total[win]
        pos_loss += l_pos[win]
        yaw_loss += l_yaw[win]
        scale = wgt / B
        dP = np.einsum("kn,hkd->hnd", basis, d_pos * (2.0 / K)) * scale[:, None, None]
        dY = (d_yaw * (2.0 * tcfg.alpha_yaw / K)) @ basis * scale[:, None]
        dT = 2.0 * tcfg.time_loss_weight * (T - demo.expert_time) * scale
        draw[b] = decode_arrays_backward(heads[b], dP, dY, dT,
                                         demo.obs.anchor_yaw, pcfg)
    grads = backward_batch(params, cache, draw.reshape(B, -1))
    stats = {"total": tot_loss / max(B, 1), "pos": pos_loss / max(B, 1),
             "yaw": yaw_loss / max(B, 1)}
    return grads, stats


def batch_loss(params: dict, demos: list, pcfg: PolicyConfig,
               tcfg: TrainConfig) -> dict:
    """Mean winning-head loss without gradients (evaluation helper)."""
    _, stats = net_gradients(params, demos, pcfg, tcfg)
    return stats


class AdamOptimizer:
    """Standard two-moment adaptive update with bias correction."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c)
                                                        + self.eps)


# ---------------------------------------------------------------------------
# Scene generation and rollouts
# ---------------------------------------------------------------------------

def random_scene(rng: np.random.Generator, n_obstacles=None, radius=3.0):
    """Randomized exchange scene: rim-to-rim goal, trefoil obstacles, and a
    start state that is either at rest on the rim or already mid-flight.

    Mid-flight starts matter: the policy visits them constantly when
    deployed, and a distribution of rest-only demonstrations leaves it
    without supervision exactly where imitation errors compound.
    """
    from .harness import random_benchmark_obstacles
    angle = rng.uniform(0, 2 * np.pi)
    z = rng.uniform(1.2, 1.8)
    rim = np.array([radius * np.cos(angle), radius * np.sin(angle), z])
    goal_angle = angle + np.pi + rng.uniform(-0.5, 0.5)
    goal = np.array([radius * np.cos(goal_angle), radius * np.sin(goal_angle),
                     z + rng.uniform(-0.3, 0.3)])
    n_obs = int(n_obstacles if n_obstacles is not None else rng.integers(1, 3))
    obstacles = random_benchmark_obstacles(n_obs, rng, z=z, radius=radius)

    if rng.random() < 0.6:
        pos = rim
        vel = np.zeros(3)
        yaw_rate = 0.0
    else:
        f = rng.uniform(0.1, 0.85)
        lateral = rng.normal(0.0, 0.4, 3)
        lateral[2] *= 0.4
        pos = rim + f * (goal - rim) + lateral
        direction = goal - pos
        direction /= max(np.linalg.norm(direction), 1e-9)
        vel = direction * rng.uniform(0.0, 1.7) + rng.normal(0.0, 0.15, 3)
        speed = np.linalg.norm(vel)
        if speed > 1.8:
            vel *= 1.8 / speed
        yaw_rate = float(rng.uniform(-1.0, 1.0))
    yaw = float(np.arctan2(goal[1] - pos[1], goal[0] - pos[0])
                + rng.uniform(-0.4, 0.4))
    start = StartState(pos, vel, np.zeros(3), yaw, yaw_rate)
    return start, goal, tuple(obstacles)


def _student_action(params, pcfg, start, goal, obstacles, peers, t, tcfg):
    """Best feasible head by cost, or the lowest-cost head as a fallback."""
    obs = build_observation(start, goal, obstacles, peers, t, tcfg.margin)
    heads = policy_heads(params, obs, pcfg)
    prob = PlanProblem(start=start, goal_pos=goal, obstacles=obstacles,
                       peer_trajs=peers, free_time=True,
                       safety_margin=tcfg.margin, t_start=t)
    scored = [(total_cost(h, prob, points_per_segment=10)[0], k, h)
              for k, h in enumerate(heads)]
    feasible = [(c, k, h) for c, k, h in scored
                if check_dynamic_feasibility(h, prob.lim, 0.02).ok]
    pool = feasible or scored
    return min(pool)[2]


def rollout(params: dict, pcfg: PolicyConfig, expert, scene, beta: float,
            rng: np.random.Generator, tcfg: TrainConfig, scene_seed: int = 0):
    """Roll the beta-mixed policy through one scene, labeling every visited
    state with the expert.  Returns (demos, skipped_count)."""
    start, goal, obstacles = scene
    demos = []
    skipped = 0
    state = start
    t = 0.0
    for step in range(tcfg.max_rollout_steps):
        label = expert.plan(state, goal, obstacles, (), t, tcfg.demo_margin,
                            seed=scene_seed * 1009 + step)
        if label.feasible:
            obs = build_observation(state, goal, obstacles, (), t, tcfg.margin)
            demos.append(make_demonstration(obs, label.traj, tcfg.loss_samples,
                                            scene_seed))
            action = label.traj
        else:
            skipped += 1
            action = None
        if rng.random() >= beta or action is None:
            action = _student_action(params, pcfg, state, goal, obstacles,
                                     (), t, tcfg)
        t += tcfg.replan_interval
        state = StartState.from_trajectory(action, t)
        if np.linalg.norm(state.pos - goal) < tcfg.goal_tolerance:
            break
    return demos, skipped


def rollout_two_agents(params, pcfg, expert, beta: float,
                       rng: np.random.Generator, tcfg: TrainConfig,
                       scene_seed=0):
    """Two students exchanging positions; each step labels both agents with
    the expert, constrained by the other agent's current trajectory."""
    s0, goal0, obstacles = random_scene(rng)
    start1 = StartState.resting(goal0 + np.array([0.0, 0.4, 0.0]),
                                yaw=s0.yaw + np.pi)
    goal1 = s0.pos + np.array([0.0, 0.4, 0.0])
    states = [s0, start1]
    goals = [goal0, goal1]
    actions = [None, None]
    demos = []
    skipped = 0
    t = 0.0
    for step in range(tcfg.max_rollout_steps):
        for i in (0, 1):
            peers = tuple(a for a in (actions[1 - i],) if a is not None)
            label = expert.plan(states[i], goals[i], obstacles, peers, t,
                                tcfg.demo_margin,
                                seed=scene_seed * 2003 + 2 * step + i)
            if label.feasible:
                obs = build_observation(states[i], goals[i], obstacles, peers,
                                        t, tcfg.margin)
                demos.append(make_demonstration(obs, label.traj,
                                                tcfg.loss_samples, scene_seed))
                action = label.traj
            else:
                skipped += 1
                action = None
            if rng.random() >= beta or action is None:
                action = _student_action(params, pcfg, states[i], goals[i],
                                         obstacles, peers, t, tcfg)
            actions[i] = action
        t += tcfg.replan_interval
        states = [StartState.from_trajectory(a, t) for a in actions]
        if all(np.linalg.norm(s.pos - g) < tcfg.goal_tolerance
               for s, g in zip(states, goals)):
            break
    return demos, skipped


def beta_of(tcfg: TrainConfig, round_idx: int) -> float:
    return tcfg.betas[min(round_idx, len(tcfg.betas) - 1)]


# ---------------------------------------------------------------------------
# DAgger
# ---------------------------------------------------------------------------

def train_dagger(expert, cfg: TrainConfig, pcfg: PolicyConfig | None = None,
                 scene_factory=None, params: dict | None = None,
                 log=print):
    """Dataset-aggregation training loop.

    Returns (params, history): history has one record per round with the
    dataset size, the expert-mixing beta, skipped expert-infeasible states,
    and the training loss before/after that round's gradient steps.
    """
    from .policy import init_params
    pcfg = pcfg or PolicyConfig()
    params = params if params is not None else init_params(pcfg, cfg.seed)
    scene_factory = scene_factory or random_scene
    rng = np.random.default_rng(cfg.seed)
    optimizer = AdamOptimizer(params, cfg.lr, cfg.beta1, cfg.beta2)
    dataset: list[Demonstration] = []
    history = []

    for round_idx in range(cfg.dagger_rounds):
        beta = beta_of(cfg, round_idx)
        round_demos = []
        skipped = 0
        scene_counter = 0
        while len(round_demos) < cfg.demos_per_round:
            scene_seed = cfg.seed * 7919 + round_idx * 613 + scene_counter
            scene_counter += 1
            if rng.random() < cfg.two_agent_fraction:
                demos, sk = rollout_two_agents(params, pcfg, expert, beta, rng,
                                               cfg, scene_seed)
            else:
                scene = scene_factory(np.random.default_rng(scene_seed))
                demos, sk = rollout(params, pcfg, expert, scene, beta, rng,
                                    cfg, scene_seed)
            round_demos.extend(demos)
            skipped += sk
        dataset.extend(round_demos)

        probe = dataset[:: max(len(dataset) // 256, 1)]
        loss_before = batch_loss(params, probe, pcfg, cfg)["total"]
        for step in range(cfg.steps_per_round):
            idx = rng.choice(len(dataset), size=min(cfg.batch_size, len(dataset)),
                             replace=False)
            grads, stats = net_gradients(params, [dataset[i] for i in idx],
                                         pcfg, cfg)
            optimizer.step(params, grads)
        loss_after = batch_loss(params, probe, pcfg, cfg)["total"]
        record = {
            "round": round_idx,
            "beta": beta,
            "dataset_size": len(dataset),
            "new_demos": len(round_demos),
            "skipped_infeasible": skipped,
            "loss_before": float(loss_before),
            "loss_after": float(loss_after),
        }
        history.append(record)
        if log:
            log(f"round {round_idx}: beta={beta:.2f} dataset={len(dataset)} "
                f"loss {loss_before:.4f} -> {loss_after:.4f} "
                f"(skipped {skipped})")
    return params, history


# ---------------------------------------------------------------------------
# Demonstration dataset files
# ---------------------------------------------------------------------------

def save_dataset(path, demos: list) -> None:
    """One JSON record per demonstration."""
    with open(path, "w") as f:
        for d in demos:
            rec = {
                "own": d.obs.own.tolist(),
                "entities": d.obs.entities.tolist(),
                "anchor_pos": d.obs.anchor_pos.tolist(),
                "anchor_yaw": d.obs.anchor_yaw,
                "t_start": d.obs.t_start,
                "expert_traj": d.expert_traj.to_record(),
                "scene_seed": d.scene_seed,
            }
            f.write(json.dumps(rec) + "\n")


def load_dataset(path, samples: int = 50) -> list:
    from .policy import ENTITY_DIM
    demos = []
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            ents = np.array(rec["entities"], dtype=float)
            if ents.size == 0:
                ents = np.zeros((0, ENTITY_DIM))
            obs = Observation(
                own=np.array(rec["own"]),
                entities=ents,
                anchor_pos=np.array(rec["anchor_pos"]),
                anchor_yaw=rec["anchor_yaw"],
                t_start=rec["t_start"],
            )
            traj = TrajectorySpline.from_record(rec["expert_traj"])
            demos.append(make_demonstration(obs, traj, samples,
                                            rec["scene_seed"]))
    return demos
