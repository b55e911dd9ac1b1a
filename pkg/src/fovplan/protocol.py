"""Asynchronous trajectory deconfliction: optimize, check, delay-check, commit.

Each agent repeatedly plans a new trajectory against a snapshot of its peers'
latest broadcast trajectories, then guards the result through two phases
before flying it:

* check: the candidate is tested against every trajectory message that
  arrived while the optimizer ran; any conflict reverts the cycle.
* delay check: the candidate is broadcast as TENTATIVE, and for a fixed
  window every arriving trajectory message is tested against it.  A conflict
  discards the candidate (the previously committed trajectory keeps flying
  and is re-broadcast); a clean window commits and broadcasts COMMITTED.

With every message delivered within delay D and a delay-check window of at
least 2D, two agents can never commit mutually conflicting trajectories:
whoever tentatively published second sees the other's tentative before its
own window closes.  The committed trajectory is always defined (agents spawn
on a stop trajectory) and is only ever replaced at a commit instant by a
candidate planned to start exactly then.

Agents never block on each other: a cycle reads only local state and the
inbox, and all cross-agent traffic rides the network's event queue.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .optimizer import PlanResult, StartState
from .splines import DynamicLimits, TrajectorySpline, stop_trajectory
from .world import ObstaclePrediction


class MessageKind(enum.Enum):
    TENTATIVE = "tentative"
    COMMITTED = "committed"
    OBSTACLE_SHARE = "obstacle_share"


class CycleOutcome(enum.Enum):
    COMMITTED_NEW = "committed_new"
    REVERTED = "reverted"
    SKIPPED = "skipped"


class Phase(enum.Enum):
    IDLE = "idle"
    OPTIMIZING = "optimizing"
    CHECKING = "checking"
    DELAY_CHECKING = "delay_checking"


@dataclass(frozen=True)
class PlanMessage:
    sender_id: str
    kind: MessageKind
    sent_at: float
    traj: TrajectorySpline | None = None
    obstacles: tuple = ()

    def to_record(self) -> dict:
        rec = {"sender_id": self.sender_id, "kind": self.kind.value,
               "sent_at": self.sent_at}
        if self.traj is not None:
            rec["traj"] = self.traj.to_record()
        if self.obstacles:
            rec["obstacles"] = [o.to_record() for o in self.obstacles]
        return rec

    @staticmethod
    def from_record(rec: dict) -> "PlanMessage":
        return PlanMessage(
            sender_id=rec["sender_id"],
            kind=MessageKind(rec["kind"]),
            sent_at=rec["sent_at"],
            traj=TrajectorySpline.from_record(rec["traj"]) if "traj" in rec else None,
            obstacles=tuple(ObstaclePrediction.from_record(o)
                            for o in rec.get("obstacles", ())),
        )


def conflict(a: TrajectorySpline, b: TrajectorySpline, margin: float,
             dt: float = 0.01) -> bool:
    """True iff the two trajectories ever come within ``margin`` of each other.

    Sampled over the union of both spans (constant extension outside), so a
    trajectory that ends near another's path still conflicts with its hold.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    lo = min(a.t_start, b.t_start)
    hi = max(a.t_end, b.t_end)
    n = max(int(np.ceil((hi - lo) / dt)), 1)
    ts = np.linspace(lo, hi, n + 1)
    pa, _ = a.eval(ts, 0)
    pb, _ = b.eval(ts, 0)
    return bool(np.min(np.linalg.norm(pa - pb, axis=1)) < margin)


def merge_obstacle_share(table: dict, msg: PlanMessage) -> dict:
    """Fold a share message into an obstacle table, keeping the freshest
    prediction per id.  Returns the updated table (also mutated in place)."""
    if msg.kind is not MessageKind.OBSTACLE_SHARE:
        raise ValueError("not an obstacle share message")
    for obs in msg.obstacles:
        cur = table.get(obs.id)
        if cur is None or obs.valid_from > cur.valid_from:
            table[obs.id] = obs
    return table


@dataclass
class _CycleState:
    t0: float
    result: PlanResult | None = None
    tentative_at: float | None = None


class AgentProcess:
    """One agent's replanning state machine.

    The simulation driver owns timing: it calls ``begin_cycle`` (which runs
    the planner), then ``finish_optimization`` after the modeled compute
    duration, then ``finish_delay_check`` after the delay-check window,
    delivering inbound messages via ``receive`` whenever they arrive.
    """

    def __init__(self, agent_id: str, start_pos, start_yaw: float, goal,
                 planner, lim: DynamicLimits, margin: float,
                 delay_check_duration: float, obstacles=(),
                 goal_tolerance: float = 0.3, conflict_dt: float = 0.01,
                 spawn_time: float = 0.0, seed: int = 0):
        self.id = agent_id
        self.goal = np.asarray(goal, dtype=float)
        self.planner = planner
        self.lim = lim
        self.margin = margin
        self.delay_check_duration = delay_check_duration
        self.goal_tolerance = goal_tolerance
        self.conflict_dt = conflict_dt
        self.seed = seed

        self.committed = stop_trajectory(start_pos, np.zeros(3), start_yaw, lim,
                                         t_start=spawn_time)
        self.committed_log: list[tuple[float, TrajectorySpline]] = [
            (spawn_time, self.committed)]
        self.phase = Phase.IDLE
        self.inbox: list[tuple[float, PlanMessage]] = []
        self.peer_table: dict[str, dict[MessageKind, PlanMessage]] = {}
        self.obstacle_table: dict[str, ObstaclePrediction] = {
            o.id: o for o in obstacles}
        self.cycle_count = 0
        self.outcomes: list[tuple[float, CycleOutcome]] = []
        self.plan_records: list[dict] = []   # per-cycle planner stats
        self._cycle: _CycleState | None = None

    # -- messaging ----------------------------------------------------------

    def receive(self, msg: PlanMessage, now: float) -> None:
        self.inbox.append((now, msg))
        if msg.kind is MessageKind.OBSTACLE_SHARE:
            merge_obstacle_share(self.obstacle_table, msg)
            return
        table = self.peer_table.setdefault(msg.sender_id, {})
        cur = table.get(msg.kind)
        if cur is None or msg.sent_at >= cur.sent_at:
            table[msg.kind] = msg

    def committed_message(self, now: float) -> PlanMessage:
        return PlanMessage(self.id, MessageKind.COMMITTED, now, self.committed)

    def obstacle_share_message(self, now: float) -> PlanMessage:
        return PlanMessage(self.id, MessageKind.OBSTACLE_SHARE, now,
                           obstacles=tuple(self.obstacle_table.values()))

    # -- observations of own state ------------------------------------------

    def position(self, now: float):
        pos, _ = self.committed.eval(now, 0)
        return pos

    def goal_reached(self, now: float) -> bool:
        return float(np.linalg.norm(self.position(now) - self.goal)) \
            <= self.goal_tolerance

    def peer_constraints(self) -> list[TrajectorySpline]:
        """Latest committed plus any tentative fresher than it, per peer."""
        out = []
        for table in self.peer_table.values():
            committed = table.get(MessageKind.COMMITTED)
            tentative = table.get(MessageKind.TENTATIVE)
            if committed is not None:
                out.append(committed.traj)
            if tentative is not None and (
                    committed is None or tentative.sent_at > committed.sent_at):
                out.append(tentative.traj)
        return out

    # -- cycle steps ---------------------------------------------------------

    def begin_cycle(self, now: float, plan_effective_at: float) -> bool:
        """Snapshot peers and run the planner for a trajectory that would
        activate at ``plan_effective_at``.  Returns False when the goal is
        already reached (cycle skipped)."""
        if self.phase is not Phase.IDLE:
            raise RuntimeError(f"{self.id}: begin_cycle while {self.phase}")
        if self.goal_reached(now):
            self.outcomes.append((now, CycleOutcome.SKIPPED))
            return False
        self.phase = Phase.OPTIMIZING
        self._cycle = _CycleState(t0=now)
        start = StartState.from_trajectory(self.committed, plan_effective_at)
        self._cycle.result = self.planner.plan(
            start=start,
            goal=self.goal,
            obstacles=tuple(self.obstacle_table.values()),
            peer_trajs=tuple(self.peer_constraints()),
            t_start=plan_effective_at,
            margin=self.margin,
            seed=self.seed * 100003 + self.cycle_count,
        )
        self.cycle_count += 1
        self.plan_records.append({
            "t": now,
            "wall_ms": self._cycle.result.wall_time_ms,
            "cost": self._cycle.result.cost,
            "feasible": self._cycle.result.feasible,
            "committed": False,
        })
        return True

    def _conflicting_messages(self, since: float, now: float) -> bool:
        cand = self._cycle.result.traj
        for arrived, msg in self.inbox:
            if arrived < since or arrived > now:
                continue
            if msg.kind is MessageKind.OBSTACLE_SHARE:
                continue
            if conflict(cand, msg.traj, self.margin, self.conflict_dt):
                return True
        return False

    def finish_optimization(self, now: float):
        """Check step.  Returns (outcome, tentative message or None); a None
        outcome means the cycle proceeds into the delay check."""
        if self.phase is not Phase.OPTIMIZING:
            raise RuntimeError(f"{self.id}: finish_optimization while {self.phase}")
        result = self._cycle.result
        if not result.feasible:
            return self._revert(now), None
        self.phase = Phase.CHECKING
        if self._conflicting_messages(self._cycle.t0, now):
            return self._revert(now), None
        self.phase = Phase.DELAY_CHECKING
        self._cycle.tentative_at = now
        return None, PlanMessage(self.id, MessageKind.TENTATIVE, now, result.traj)

    def finish_delay_check(self, now: float):
        """Commit or revert at the end of the delay-check window.  Returns
        (outcome, broadcast message)."""
        if self.phase is not Phase.DELAY_CHECKING:
            raise RuntimeError(f"{self.id}: finish_delay_check while {self.phase}")
        if self._conflicting_messages(self._cycle.t0, now):
            # candidate discarded; peers drop the stale tentative on receipt
            outcome = self._revert(now)
            return outcome, self.committed_message(now)
        self.committed = self._cycle.result.traj
        self.committed_log.append((now, self.committed))
        self.plan_records[-1]["committed"] = True
        self.phase = Phase.IDLE
        self._cycle = None
        self.outcomes.append((now, CycleOutcome.COMMITTED_NEW))
        return CycleOutcome.COMMITTED_NEW, self.committed_message(now)

    def _revert(self, now: float) -> CycleOutcome:
        self.phase = Phase.IDLE
        self._cycle = None
        self.outcomes.append((now, CycleOutcome.REVERTED))
        return CycleOutcome.REVERTED


def run_cycle(agent: AgentProcess, net, agents_by_id: dict, now: float,
              opt_duration: float):
    """Drive one full cycle of one agent against a network, delivering
    messages to every registered agent as the clock advances.  Convenience
    for single-agent runs and protocol tests; the benchmark harness uses its
    own multi-agent driver.  Returns (outcome, end_time)."""
    def deliver_until(t):
        for d in net.advance(t):
            agents_by_id[d.recipient].receive(d.message, d.deliver_at)

    t_ready = now + opt_duration
    t_commit = t_ready + agent.delay_check_duration
    if not agent.begin_cycle(now, plan_effective_at=t_commit):
        return CycleOutcome.SKIPPED, now
    deliver_until(t_ready)
    outcome, tentative = agent.finish_optimization(t_ready)
    if outcome is not None:
        return outcome, t_ready
    net.broadcast(agent.id, tentative, t_ready)
    deliver_until(t_commit)
    outcome, broadcast = agent.finish_delay_check(t_commit)
    net.broadcast(agent.id, broadcast, t_commit)
    return outcome, t_commit
