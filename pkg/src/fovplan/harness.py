"""Scenario construction, the end-to-end simulation driver, benchmark
metrics, and aggregated comparison tables.

A run drives every agent's replanning state machine over one shared
discrete-event timeline: agent timers (cycle start, plan ready, delay-check
end) interleave with network deliveries, with all messages due by an event's
time delivered before the event fires.  Simulated planner compute time is a
fixed, configured per-planner duration so runs are reproducible on any
machine; real wall time per replan is recorded separately for the
computation-time metric.

Metrics are computed post hoc on a fixed 10 Hz frame clock over the flown
(concatenated committed) trajectories, independent of the replanning
cadence:

1. mean replan compute time (real milliseconds)
2. success: every agent reached its goal and the safety audit found no
   collision (inter-agent distance >= margin, obstacle box distance >= 0)
3. travel time to enter the goal tolerance
4. FOV rate: % of (frame, obstacle) pairs within camera depth range where
   the obstacle passes the hard visibility test
5. longest consecutive run of visible frames, averaged over obstacles
6. translational dynamic-limit violation rate (% of flight frames)
7. yaw-rate violation rate (% of flight frames)

plus the mean committed-plan cost and smoothness integrals (squared
acceleration and jerk over the flown path) used by the comparison tables.
"""

from __future__ import annotations

import csv
import heapq
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .network import Network, NetworkConfig
from .optimizer import ExpertPlanner, PlanWeights, SolverConfig
from .protocol import AgentProcess, CycleOutcome
from .splines import DynamicLimits, TrajectorySpline
from .world import CameraModel, ObstaclePrediction, box_signed_distance, in_fov_binary

PLANNER_KINDS = ("expert-fixed", "expert-free", "student")
DEFAULT_COMPUTE_TIME = {"expert-fixed": 0.35, "expert-free": 0.5, "student": 0.01}
METRIC_HZ = 10.0


@dataclass(frozen=True)
class AgentSpec:
    id: str
    start: tuple
    goal: tuple
    yaw: float = 0.0
    planner: str = "expert-free"
    n_guesses: int = 6

    def __post_init__(self):
        if self.planner not in PLANNER_KINDS:
            raise ValueError(f"unknown planner kind {self.planner!r}")


@dataclass
class Scenario:
    agents: list
    obstacles: list
    lim: DynamicLimits = field(default_factory=DynamicLimits)
    cam: CameraModel = field(default_factory=CameraModel)
    net: NetworkConfig = field(default_factory=lambda: NetworkConfig(
        delay_min=0.01, delay_max=0.05))
    weights: PlanWeights = field(default_factory=PlanWeights)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sim_duration: float = 60.0
    margin: float = 0.35
    goal_tolerance: float = 0.3
    delay_check_duration: float = 0.11
    compute_time: dict = field(default_factory=lambda: dict(DEFAULT_COMPUTE_TIME))
    share_obstacles: bool = True
    seed: int = 0

    def __post_init__(self):
        starts = [np.asarray(a.start, float) for a in self.agents]
        for i in range(len(starts)):
            for j in range(i + 1, len(starts)):
                if np.linalg.norm(starts[i] - starts[j]) < self.margin:
                    raise ValueError("agent starts closer than the margin")

    def to_dict(self) -> dict:
        return {
            "agents": [asdict(a) for a in self.agents],
            "obstacles": [o.to_record() for o in self.obstacles],
            "limits": asdict(self.lim),
            "camera": self.cam.to_record(),
            "network": asdict(self.net),
            "weights": asdict(self.weights),
            "solver": asdict(self.solver),
            "sim_duration": self.sim_duration,
            "margin": self.margin,
            "goal_tolerance": self.goal_tolerance,
            "delay_check_duration": self.delay_check_duration,
            "compute_time": self.compute_time,
            "share_obstacles": self.share_obstacles,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "Scenario":
        return Scenario(
            agents=[AgentSpec(**{**a, "start": tuple(a["start"]),
                                 "goal": tuple(a["goal"])})
                    for a in d["agents"]],
            obstacles=[ObstaclePrediction.from_record(o) for o in d["obstacles"]],
            lim=DynamicLimits(**d.get("limits", {})),
            cam=CameraModel.from_record(d.get("camera", {})),
            net=NetworkConfig(**d.get("network", {})),
            weights=PlanWeights(**d.get("weights", {})),
            solver=SolverConfig(**d.get("solver", {})),
            sim_duration=d.get("sim_duration", 60.0),
            margin=d.get("margin", 0.35),
            goal_tolerance=d.get("goal_tolerance", 0.3),
            delay_check_duration=d.get("delay_check_duration", 0.11),
            compute_time={**DEFAULT_COMPUTE_TIME, **d.get("compute_time", {})},
            share_obstacles=d.get("share_obstacles", True),
            seed=d.get("seed", 0),
        )

    @staticmethod
    def load(path) -> "Scenario":
        with open(path) as f:
            return Scenario.from_dict(json.load(f))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)


def random_benchmark_obstacles(n: int, rng: np.random.Generator,
                               z: float = 1.5, radius: float = 3.0,
                               margin: float = 0.35):
    """Trefoil obstacles placed off the direct exchange corridors.

    Centers sit on a ring around the middle (so an agent that never turns
    its camera genuinely loses sight of them) and rejection sampling keeps
    each box's whole sweep clear of the rim, where agents start, hold, and
    finish."""
    out = []
    half = np.array([0.25] * 3)
    for i in range(n):
        for _ in range(200):
            ring = rng.uniform(0.8, 1.35)
            theta = rng.uniform(0, 2 * np.pi)
            center = np.array([ring * np.cos(theta), ring * np.sin(theta),
                               z + rng.uniform(-0.3, 0.3)])
            scale = np.array([rng.uniform(0.4, 0.9), rng.uniform(0.4, 0.9),
                              rng.uniform(0.3, 0.6)])
            reach = scale + half
            worst_xy = np.linalg.norm(center[:2]) + np.linalg.norm(reach[:2])
            if worst_xy <= radius - margin - 0.1:
                break
        out.append(ObstaclePrediction(
            id=f"obs{i}", half_extents=half, center=center, scale=scale,
            angular_rate=float(rng.uniform(0.6, 1.2)),
            phase=float(rng.uniform(0, 2 * np.pi))))
    return out


def build_circle_exchange(n_agents: int, radius: float = 3.0,
                          n_obstacles: int = 2, seed: int = 0,
                          planner: str = "expert-free", n_guesses: int = 6,
                          z: float = 1.5, **scenario_kwargs) -> Scenario:
    """Agents evenly spaced on a circle exchanging to antipodal points."""
    if n_agents < 1:
        raise ValueError("need at least one agent")
    rng = np.random.default_rng(seed)
    agents = []
    for k in range(n_agents):
        angle = 2 * np.pi * k / n_agents
        start = np.array([radius * np.cos(angle), radius * np.sin(angle), z])
        goal = -start[:2]
        goal = np.array([goal[0], goal[1], z])
        yaw = float(np.arctan2(goal[1] - start[1], goal[0] - start[0]))
        agents.append(AgentSpec(id=f"agent{k}", start=tuple(start),
                                goal=tuple(goal), yaw=yaw, planner=planner,
                                n_guesses=n_guesses))
    obstacles = random_benchmark_obstacles(n_obstacles, rng, z)
    return Scenario(agents=agents, obstacles=obstacles, seed=seed,
                    **scenario_kwargs)


# ---------------------------------------------------------------------------
# Planner construction
# ---------------------------------------------------------------------------

def make_planner(spec: AgentSpec, scn: Scenario, student_params=None,
                 student_cfg=None):
    if spec.planner == "student":
        from .policy import StudentPlanner
        if student_params is None:
            raise ValueError("student agents need checkpoint parameters")
        return StudentPlanner(student_params, student_cfg, lim=scn.lim,
                              cam=scn.cam, weights=scn.weights)
    return ExpertPlanner(n_guesses=spec.n_guesses,
                         free_time=(spec.planner == "expert-free"),
                         lim=scn.lim, cam=scn.cam, weights=scn.weights,
                         solver=scn.solver)


# ---------------------------------------------------------------------------
# Simulation driver
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    metrics: dict
    agent_metrics: dict
    events: list
    agents: dict          # id -> AgentProcess (final state)
    frames: np.ndarray    # metric clock
    states: dict          # id -> dict of sampled kinematics


def run(scn: Scenario, student_params=None, student_cfg=None,
        log_path=None) -> RunResult:
    """Simulate a scenario to completion or timeout and compute metrics."""
    net = Network(scn.net, [a.id for a in scn.agents])
    events = []
    agents: dict[str, AgentProcess] = {}
    compute = {}

    for idx, spec in enumerate(scn.agents):
        planner = make_planner(spec, scn, student_params, student_cfg)
        agent = AgentProcess(
            agent_id=spec.id, start_pos=np.asarray(spec.start, float),
            start_yaw=spec.yaw, goal=np.asarray(spec.goal, float),
            planner=planner, lim=scn.lim, margin=scn.margin,
            delay_check_duration=scn.delay_check_duration,
            obstacles=scn.obstacles, goal_tolerance=scn.goal_tolerance,
            seed=scn.seed * 1013 + idx)
        agents[spec.id] = agent
        compute[spec.id] = scn.compute_time[spec.planner]

    timer_heap = []
    seq = 0

    def schedule(t, agent_id, kind):
        nonlocal seq
        heapq.heappush(timer_heap, (t, seq, agent_id, kind))
        seq += 1

    def record(event, t, **fields):
        events.append({"event": event, "t": round(float(t), 6), **fields})

    # spawn: announce the initial committed hold, stagger first cycles
    for idx, spec in enumerate(scn.agents):
        agent = agents[spec.id]
        net.broadcast(spec.id, agent.committed_message(0.0), 0.0)
        if scn.share_obstacles:
            net.broadcast(spec.id, agent.obstacle_share_message(0.0), 0.0)
        schedule(0.037 * idx, spec.id, "cycle")
        record("spawn", 0.0, agent=spec.id)

    done: set[str] = set()

    def deliver_until(t):
        for d in net.advance(t):
            agents[d.recipient].receive(d.message, d.deliver_at)
            record("deliver", d.deliver_at, to=d.recipient,
                   kind=d.message.kind.value, sender=d.message.sender_id)

    end_time = scn.sim_duration
    while timer_heap:
        t, _, agent_id, kind = heapq.heappop(timer_heap)
        if t > scn.sim_duration:
            break
        deliver_until(t)
        agent = agents[agent_id]
        if kind == "cycle":
            if agent.goal_reached(t):
                done.add(agent_id)
                record("goal_reached", t, agent=agent_id)
                if len(done) == len(agents):
                    # let the final committed trajectories settle onto their
                    # terminal holds so the frame clock sees the arrivals
                    end_time = min(max(a.committed.t_end for a in agents.values()),
                                   scn.sim_duration)
                    break
                continue
            dur = compute[agent_id]
            agent.begin_cycle(t, plan_effective_at=t + dur
                              + scn.delay_check_duration)
            rec = agent.plan_records[-1]
            record("plan", t, agent=agent_id, wall_ms=rec["wall_ms"],
                   cost=rec["cost"], feasible=rec["feasible"])
            schedule(t + dur, agent_id, "ready")
        elif kind == "ready":
            outcome, tentative = agent.finish_optimization(t)
            if tentative is not None:
                net.broadcast(agent_id, tentative, t)
                record("tentative", t, agent=agent_id)
                schedule(t + scn.delay_check_duration, agent_id, "delay_end")
            else:
                record("outcome", t, agent=agent_id, outcome=outcome.value)
                schedule(t, agent_id, "cycle")
        elif kind == "delay_end":
            outcome, msg = agent.finish_delay_check(t)
            net.broadcast(agent_id, msg, t)
            record("outcome", t, agent=agent_id, outcome=outcome.value)
            if outcome is CycleOutcome.COMMITTED_NEW:
                record("committed", t, agent=agent_id,
                       traj=agent.committed.to_record())
            schedule(t, agent_id, "cycle")

    metrics, agent_metrics, frames, states = compute_metrics(scn, agents,
                                                             end_time, done)
    record("end", end_time, success=metrics["success"])
    if log_path is not None:
        with open(log_path, "w") as f:
            for e in events:
                f.write(json.dumps(e) + "\n")
    return RunResult(metrics, agent_metrics, events, agents, frames, states)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def flown_state(agent: AgentProcess, ts: np.ndarray):
    """Kinematics of the flown (concatenated committed) path at frame times."""
    switch_times = np.array([t for t, _ in agent.committed_log])
    idx = np.searchsorted(switch_times, ts, side="right") - 1
    idx = np.maximum(idx, 0)
    out = {k: np.empty((len(ts), 3)) for k in ("pos", "vel", "acc", "jerk")}
    out["yaw"] = np.empty(len(ts))
    out["yaw_rate"] = np.empty(len(ts))
    for k in np.unique(idx):
        traj = agent.committed_log[k][1]
        sel = idx == k
        tsel = ts[sel]
        out["pos"][sel], out["yaw"][sel] = traj.eval(tsel, 0)
        out["vel"][sel], out["yaw_rate"][sel] = traj.eval(tsel, 1)
        out["acc"][sel], _ = traj.eval(tsel, 2)
        out["jerk"][sel], _ = traj.eval(tsel, 3)
    return out


def fov_metrics(visible: np.ndarray, in_range: np.ndarray):
    """FOV rate and mean longest visible streak from per-frame boolean
    (n_frames, n_obstacles) masks.  Frames outside depth range are excluded
    from the rate's denominator; an empty denominator reports 0 with a flag.
    """
    n_range = int(np.sum(in_range))
    if n_range == 0:
        rate, empty = 0.0, True
    else:
        rate = 100.0 * float(np.sum(visible & in_range)) / n_range
        empty = False
    streaks = []
    for j in range(visible.shape[1]):
        best = cur = 0
        for v in visible[:, j]:
            cur = cur + 1 if v else 0
            best = max(best, cur)
        streaks.append(best)
    mean_streak = float(np.mean(streaks)) if streaks else 0.0
    return rate, mean_streak, empty


def compute_metrics(scn: Scenario, agents: dict, end_time: float,
                    done: set):
    dt = 1.0 / METRIC_HZ
    frames = np.arange(0.0, end_time + dt / 2, dt)
    states = {aid: flown_state(agent, frames) for aid, agent in agents.items()}
    obstacle_pos = {o.id: o.position(frames) for o in scn.obstacles}

    agent_metrics = {}
    collision = False
    ids = list(agents)
    # safety audit over every frame: agent-agent spacing and box clearance
    for i, ai in enumerate(ids):
        for aj in ids[i + 1:]:
            d = np.linalg.norm(states[ai]["pos"] - states[aj]["pos"], axis=1)
            if np.any(d < scn.margin):
                collision = True
    for aid in ids:
        for o in scn.obstacles:
            sdf = box_signed_distance(states[aid]["pos"], obstacle_pos[o.id],
                                      o.half_extents)
            if np.any(sdf < 0.0):
                collision = True

    for aid, agent in agents.items():
        st = states[aid]
        goal = agent.goal
        dist_goal = np.linalg.norm(st["pos"] - goal, axis=1)
        reached = dist_goal <= scn.goal_tolerance
        if np.any(reached):
            travel_time = float(frames[np.argmax(reached)])
            flight_end = travel_time
        else:
            travel_time = float("nan")
            flight_end = end_time
        flight = frames <= max(flight_end, dt)

        v = np.linalg.norm(st["vel"], axis=1)
        a = np.linalg.norm(st["acc"], axis=1)
        j = np.linalg.norm(st["jerk"], axis=1)
        trans_viol = (v > scn.lim.v_max) | (a > scn.lim.a_max) | (j > scn.lim.j_max)
        yaw_viol = np.abs(st["yaw_rate"]) > scn.lim.yaw_rate_max
        n_flight = max(int(np.sum(flight)), 1)

        visible = np.zeros((len(frames), len(scn.obstacles)), dtype=bool)
        in_range = np.zeros_like(visible)
        for k, o in enumerate(scn.obstacles):
            target = obstacle_pos[o.id]
            d = np.linalg.norm(target - st["pos"], axis=1)
            in_range[:, k] = (d > 0) & (d <= scn.cam.depth_range) & flight
            visible[:, k] = in_fov_binary(st["pos"], st["yaw"], scn.cam,
                                          target) & flight
        rate, streak, empty = fov_metrics(visible, in_range)

        records = agent.plan_records
        committed_costs = [r["cost"] for r in records if r["committed"]]
        smooth_acc = float(np.sum(a[flight] ** 2) * dt)
        smooth_jerk = float(np.sum(j[flight] ** 2) * dt)
        agent_metrics[aid] = {
            "avg_compute_ms": float(np.mean([r["wall_ms"] for r in records]))
            if records else 0.0,
            "n_replans": len(records),
            "travel_time": travel_time,
            "reached": bool(np.any(reached)),
            "fov_rate": rate,
            "fov_rate_empty_denominator": empty,
            "max_consecutive_fov_frames": streak,
            "trans_violation_rate": 100.0 * float(np.sum(trans_viol[flight])) / n_flight,
            "yaw_violation_rate": 100.0 * float(np.sum(yaw_viol[flight])) / n_flight,
            "avg_cost": float(np.mean(committed_costs)) if committed_costs
            else float("nan"),
            "smoothness_acc": smooth_acc,
            "smoothness_jerk": smooth_jerk,
        }

    all_reached = all(m["reached"] for m in agent_metrics.values()) \
        if agent_metrics else True
    per = list(agent_metrics.values())

    def agg(key):
        vals = [m[key] for m in per if not np.isnan(m[key])]
        return float(np.mean(vals)) if vals else float("nan")

    metrics = {
        "success": bool(all_reached and not collision),
        "collision": bool(collision),
        "all_reached": bool(all_reached),
        "avg_compute_ms": agg("avg_compute_ms") if per else 0.0,
        "travel_time": agg("travel_time") if per else 0.0,
        "fov_rate": agg("fov_rate") if per else 0.0,
        "max_consecutive_fov_frames": agg("max_consecutive_fov_frames") if per else 0.0,
        "trans_violation_rate": agg("trans_violation_rate") if per else 0.0,
        "yaw_violation_rate": agg("yaw_violation_rate") if per else 0.0,
        "avg_cost": agg("avg_cost") if per else float("nan"),
        "smoothness_acc": agg("smoothness_acc") if per else 0.0,
        "smoothness_jerk": agg("smoothness_jerk") if per else 0.0,
        "end_time": end_time,
    }
    return metrics, agent_metrics, frames, states


# ---------------------------------------------------------------------------
# Benchmark tables
# ---------------------------------------------------------------------------

TABLE_COLUMNS = ["env", "method", "n_guesses", "avg_compute_ms", "success_rate",
                 "travel_time", "fov_rate", "max_consecutive_fov_frames",
                 "trans_violation_rate", "yaw_violation_rate", "avg_cost",
                 "smoothness_acc", "smoothness_jerk", "repetitions"]


@dataclass(frozen=True)
class BenchmarkSpec:
    environments: tuple = ((1, 2), (3, 2))     # (n_agents, n_obstacles)
    methods: tuple = (("expert-fixed", 1), ("expert-fixed", 6),
                      ("expert-free", 1), ("expert-free", 6),
                      ("student", 6))
    repetitions: int = 10
    seed: int = 0
    sim_duration: float = 40.0

    @staticmethod
    def load(path) -> "BenchmarkSpec":
        with open(path) as f:
            d = json.load(f)
        return BenchmarkSpec(
            environments=tuple(tuple(e) for e in d.get("environments",
                                                       ((1, 2), (3, 2)))),
            methods=tuple((m["planner"], m["n_guesses"])
                          for m in d.get("methods", [])) or
            BenchmarkSpec().methods,
            repetitions=d.get("repetitions", 10),
            seed=d.get("seed", 0),
            sim_duration=d.get("sim_duration", 40.0),
        )


def benchmark(spec: BenchmarkSpec, student_params=None, student_cfg=None,
              out_dir=None, log=print):
    """Mean metrics per (environment, method, n_guesses) over seeded
    repetitions; returns table rows and writes CSV/JSON plus plot-data
    series when out_dir is given."""
    rows = []
    series = []   # per-run records for the plot-data files
    for n_agents, n_obstacles in spec.environments:
        for planner, n_guesses in spec.methods:
            if planner == "student" and student_params is None:
                if log:
                    log(f"skipping student rows (no checkpoint)")
                continue
            per_run = []
            for rep in range(spec.repetitions):
                scn = build_circle_exchange(
                    n_agents, n_obstacles=n_obstacles,
                    seed=spec.seed + 7 * rep, planner=planner,
                    n_guesses=n_guesses, sim_duration=spec.sim_duration)
                result = run(scn, student_params, student_cfg)
                per_run.append(result.metrics)
                wall = [r["wall_ms"] for a in result.agents.values()
                        for r in a.plan_records]
                series.append({
                    "env": f"{n_agents}a{n_obstacles}o", "method": planner,
                    "n_guesses": n_guesses, "rep": rep,
                    "compute_ms": wall,
                    "travel_time": result.metrics["travel_time"],
                    "smoothness_acc": result.metrics["smoothness_acc"],
                    "smoothness_jerk": result.metrics["smoothness_jerk"],
                })
            row = {"env": f"{n_agents}a{n_obstacles}o", "method": planner,
                   "n_guesses": n_guesses, "repetitions": spec.repetitions}
            row["success_rate"] = 100.0 * float(
                np.mean([m["success"] for m in per_run]))
            for key in ("avg_compute_ms", "travel_time", "fov_rate",
                        "max_consecutive_fov_frames", "trans_violation_rate",
                        "yaw_violation_rate", "avg_cost", "smoothness_acc",
                        "smoothness_jerk"):
                vals = [m[key] for m in per_run if not np.isnan(m[key])]
                row[key] = float(np.mean(vals)) if vals else float("nan")
            rows.append(row)
            if log:
                log(f"{row['env']} {planner} x{n_guesses}: "
                    f"compute {row['avg_compute_ms']:.1f} ms, "
                    f"success {row['success_rate']:.0f}%, "
                    f"travel {row['travel_time']:.2f} s, "
                    f"fov {row['fov_rate']:.1f}%")
    if out_dir is not None:
        write_benchmark_outputs(rows, series, out_dir)
    return rows


def write_benchmark_outputs(rows, series, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "table.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in TABLE_COLUMNS})
    with open(out / "table.json", "w") as f:
        json.dump(rows, f, indent=2)
    # plot-data series: one compute-time file, one run-summary file
    with open(out / "plot_compute_time.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["env", "method", "n_guesses", "rep", "replan_index",
                    "compute_ms"])
        for s in series:
            for i, ms in enumerate(s["compute_ms"]):
                w.writerow([s["env"], s["method"], s["n_guesses"], s["rep"],
                            i, ms])
    with open(out / "plot_run_summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["env", "method", "n_guesses", "rep", "travel_time",
                    "smoothness_acc", "smoothness_jerk"])
        for s in series:
            w.writerow([s["env"], s["method"], s["n_guesses"], s["rep"],
                        s["travel_time"], s["smoothness_acc"],
                        s["smoothness_jerk"]])


def write_run_outputs(result: RunResult, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.json", "w") as f:
        json.dump({"aggregate": result.metrics,
                   "per_agent": result.agent_metrics}, f, indent=2)
    with open(out / "metrics.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["agent"] + list(next(iter(result.agent_metrics.values()))))
        for aid, m in result.agent_metrics.items():
            w.writerow([aid] + list(m.values()))
    with open(out / "events.jsonl", "w") as f:
        for e in result.events:
            f.write(json.dumps(e) + "\n")


def plot_data_from_log(log_path, out_dir):
    """Extract per-figure series (compute time, trajectory commits) from a
    run event log."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plans, commits = [], []
    with open(log_path) as f:
        for line in f:
            e = json.loads(line)
            if e["event"] == "plan":
                plans.append((e["t"], e["agent"], e["wall_ms"], e["cost"]))
            elif e["event"] == "committed":
                commits.append((e["t"], e["agent"], e["traj"]))
    with open(out / "compute_time.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "agent", "wall_ms", "cost"])
        w.writerows(plans)
    with open(out / "trajectories.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t_commit", "agent", "t", "x", "y", "z", "yaw"])
        for t_commit, agent, rec in commits:
            traj = TrajectorySpline.from_record(rec)
            ts = np.arange(traj.t_start, traj.t_end + 1e-9, 1.0 / METRIC_HZ)
            pos, yaw = traj.eval(ts, 0)
            for k in range(len(ts)):
                w.writerow([t_commit, agent, round(float(ts[k]), 3),
                            *np.round(pos[k], 4), round(float(yaw[k]), 4)])
    return {"plans": len(plans), "commits": len(commits)}
