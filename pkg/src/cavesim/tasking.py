"""Decentralized market-based task allocation.

Each agent greedily builds a bundle of tasks, bidding the marginal increase in
discounted bundle reward, and resolves conflicts with peers through consensus
on the highest bid.  Rewards decay exponentially with the time at which a task
would be completed, so near tasks are preferred and stale plans fade.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .config import TaskingConfig

KIND_EXPLORE = "explore"
KIND_SYNC = "sync"
KIND_DROP_NODE = "drop_node"

# Travel-time callable: (src node or None for the agent pose, dst node) ->
# seconds, or None when unreachable.
TravelFn = Callable[[Optional[str], str], Optional[float]]

EXPLORE_REWARD = 1.0  # all exploration tasks share one fixed reward


@dataclass(frozen=True)
class Task:
    id: str
    kind: str
    location: str                    # graph node id
    reward: float
    duration: float                  # T(j), seconds
    generator: str                   # agent that generated the task


@dataclass
class Bid:
    task_id: str
    agent_id: str
    value: float
    timestamp: float

    def to_record(self) -> dict:
        return {"v": 1, "task": self.task_id, "agent": self.agent_id,
                "value": self.value, "ts": self.timestamp}

    @staticmethod
    def from_record(rec: dict) -> "Bid":
        if rec.get("v") != 1:
            raise ValueError("unknown bid record version")
        b = Bid(str(rec["task"]), str(rec["agent"]),
                float(rec["value"]), float(rec["ts"]))
        if not (b.value > 0.0) or not math.isfinite(b.value):
            raise ValueError("bid value must be positive")
        return b


@dataclass
class PriorityRegion:
    id: str
    mode: str                        # "geometric" | "graph_downstream"
    multiplier: float
    rect: Optional[tuple[float, float, float, float]] = None  # x0,y0,x1,y1
    seed_node: Optional[str] = None
    target: str = "all"              # agent id or "all"


@dataclass
class MarketState:
    agent_id: str
    bundle: list[Task] = field(default_factory=list)
    # task id -> (value, winning agent, timestamp of the winning bid)
    winners: dict[str, tuple[float, str, float]] = field(default_factory=dict)
    tasks: dict[str, Task] = field(default_factory=dict)
    dropped_messages: int = 0


def _wins(value: float, agent: str, cur: Optional[tuple[float, str, float]]) -> bool:
    """Highest value wins; ties broken by lower agent id."""
    if cur is None:
        return True
    cv, ca, _ = cur
    return value > cv + 1e-12 or (abs(value - cv) <= 1e-12 and agent < ca)


def bundle_score(agent_node: Optional[str], tasks_seq: Iterable[Task],
                 travel: TravelFn, cfg: TaskingConfig,
                 reward_of: Optional[Callable[[Task], float]] = None,
                 extra_travel: Optional[Callable[[Task], float]] = None) -> float:
    """Discounted bundle reward S = sum_i lambda^tau_i * c_i.

    tau_i accumulates travel from the previous location plus each task's own
    duration.  Unreachable tasks make the bundle invalid (-inf).
    """
    s = 0.0
    tau = 0.0
    cur = agent_node
    for task in tasks_seq:
        t = travel(cur, task.location)
        if t is None:
            return float("-inf")
        if extra_travel is not None:
            t += extra_travel(task)
        tau += t + task.duration
        c = reward_of(task) if reward_of is not None else task.reward
        s += (cfg.discount ** tau) * c
        cur = task.location
    return s


def bundle_elapsed(agent_node: Optional[str], tasks_seq: Iterable[Task],
                   travel: TravelFn) -> float:
    """Total travel + duration along the bundle; inf when unreachable."""
    tau = 0.0
    cur = agent_node
    for task in tasks_seq:
        t = travel(cur, task.location)
        if t is None:
            return float("inf")
        tau += t + task.duration
        cur = task.location
    return tau


def build_bundle(state: MarketState, agent_node: Optional[str],
                 candidates: Iterable[Task], travel: TravelFn,
                 cfg: TaskingConfig, now: float,
                 reward_of: Optional[Callable[[Task], float]] = None,
                 extra_travel: Optional[Callable[[Task], float]] = None) -> list[Bid]:
    """Greedy bundle construction; emits a bid for every task added.

    Repeatedly adds the candidate/insertion-position pair with the largest
    positive marginal score, provided that marginal outbids the task's known
    winner.  At the caps, dropping the final bundle element to make room is
    also considered.
    """
    def score(seq: list[Task]) -> float:
        return bundle_score(agent_node, seq, travel, cfg, reward_of,
                            extra_travel)

    def feasible(seq: list[Task]) -> bool:
        if len(seq) > cfg.max_tasks:
            return False
        return bundle_elapsed(agent_node, seq, travel) <= cfg.max_duration

    bids: list[Bid] = []
    pool = {t.id: t for t in candidates}
    for t in pool.values():
        state.tasks.setdefault(t.id, t)
    while True:
        base = score(state.bundle)
        best: Optional[tuple[float, list[Task], Task]] = None
        for task in sorted(pool.values(), key=lambda t: t.id):
            if any(b.id == task.id for b in state.bundle):
                continue
            variants = [state.bundle[:pos] + [task] + state.bundle[pos:]
                        for pos in range(len(state.bundle) + 1)]
            if state.bundle and not any(feasible(v) for v in variants):
                # at the caps: dropping the final element may make room
                variants.append(state.bundle[:-1] + [task])
            for seq in variants:
                if not feasible(seq):
                    continue
                delta = score(seq) - base
                if delta <= 1e-12:
                    continue
                if not _wins(delta, state.agent_id,
                             state.winners.get(task.id)):
                    continue
                if best is None or delta > best[0] + 1e-12:
                    best = (delta, seq, task)
        if best is None:
            return bids
        delta, seq, task = best
        state.bundle = seq
        state.winners[task.id] = (delta, state.agent_id, now)
        # winners of any task no longer in the bundle are reset if they were us
        kept = {t.id for t in seq}
        for tid in list(state.winners):
            v, a, _ = state.winners[tid]
            if a == state.agent_id and tid not in kept:
                del state.winners[tid]
        bids.append(Bid(task.id, state.agent_id, delta, now))


def consensus_step(state: MarketState, messages: Iterable[dict],
                   equivalent: Optional[Callable[[Task, Task], bool]] = None
                   ) -> list[dict]:
    """Apply received bid records; returns records worth rebroadcasting.

    Highest bid value wins each task (ties to the lower agent id).  Losing a
    bundled task removes it and every subsequent bundle element.  A bid on a
    task also contests bundled tasks equivalent to it.
    """
    changed: list[dict] = []
    records = []
    for rec in messages:
        try:
            records.append(Bid.from_record(rec))
        except (ValueError, KeyError, TypeError, AttributeError):
            state.dropped_messages += 1
    records.sort(key=lambda b: (b.timestamp, b.agent_id, b.task_id))
    for bid in records:
        cur = state.winners.get(bid.task_id)
        if cur is not None and cur[1] == bid.agent_id and \
                abs(cur[0] - bid.value) <= 1e-12:
            continue  # duplicate of known state
        if not _wins(bid.value, bid.agent_id, cur):
            continue
        state.winners[bid.task_id] = (bid.value, bid.agent_id, bid.timestamp)
        changed.append(bid.to_record())
        if bid.agent_id == state.agent_id:
            continue
        # drop outbid bundle entries (direct or equivalent) and their tails
        cut = None
        bid_task = state.tasks.get(bid.task_id)
        for i, t in enumerate(state.bundle):
            if t.id == bid.task_id:
                cut = i
                break
            if equivalent is not None and bid_task is not None and \
                    equivalent(bid_task, t) and \
                    _wins(bid.value, bid.agent_id, state.winners.get(t.id)):
                cut = i
                break
        if cut is not None:
            removed = state.bundle[cut:]
            state.bundle = state.bundle[:cut]
            for t in removed:
                w = state.winners.get(t.id)
                if w is not None and w[1] == state.agent_id:
                    del state.winners[t.id]
    return changed


def make_equivalent(graph_distance: Callable[[str, str], Optional[float]],
                    equiv_radius: float) -> Callable[[Task, Task], bool]:
    """Two tasks are interchangeable when kinds match, generators differ and
    their locations are near in graph distance."""
    def eq(a: Task, b: Task) -> bool:
        if a.kind != b.kind or a.generator == b.generator:
            return False
        if a.location == b.location:
            return True
        d = graph_distance(a.location, b.location)
        return d is not None and d <= equiv_radius
    return eq


def apply_priority(task: Task, regions: Iterable[PriorityRegion],
                   agent_id: str,
                   node_xy: Callable[[str], tuple[float, float]],
                   downstream_of: Callable[[str], set[str]]) -> float:
    """Effective reward after stacking applicable region multipliers."""
    c = task.reward
    for r in regions:
        if r.target not in ("all", agent_id):
            continue
        hit = False
        if r.mode == "geometric" and r.rect is not None:
            x, y = node_xy(task.location)
            x0, y0, x1, y1 = r.rect
            hit = min(x0, x1) <= x <= max(x0, x1) and \
                min(y0, y1) <= y <= max(y0, y1)
        elif r.mode == "graph_downstream" and r.seed_node is not None:
            hit = task.location in downstream_of(r.seed_node)
        if hit:
            c *= r.multiplier
    return c


def separation_penalty(task_base_edges: set, peer_base_edges: Iterable[set],
                       edge_length: Callable[[tuple], float],
                       w_sep: float) -> float:
    """Travel-time addend for sharing base-path edges with peers.

    ``task_base_edges``: edges on this agent's base path through the task;
    each peer contributes w_sep x (shared edge length with its own base path).
    """
    addend = 0.0
    for peer in peer_base_edges:
        shared = task_base_edges & peer
        addend += w_sep * sum(edge_length(e) for e in shared)
    return addend


def make_explore_task(owner: str, node: str, key: str,
                      cfg: TaskingConfig) -> Task:
    return Task(id=f"{owner}:explore:{key}", kind=KIND_EXPLORE, location=node,
                reward=cfg.explore_reward, duration=cfg.explore_duration,
                generator=owner)


@dataclass
class SpecialTaskInputs:
    agent_id: str
    base_node: str
    battery_fraction: float
    oldest_pending_data_age: Optional[float]  # None when nothing pending
    now: float


def generate_special_tasks(inp: SpecialTaskInputs,
                           cfg: TaskingConfig) -> tuple[list[Task], bool]:
    """(market tasks, forced_return).

    A sync task appears once un-uploaded data gets old enough; any agent that
    already carries the needy agent's data may bid on it.  Battery return is
    an override outside the market.
    """
    forced = inp.battery_fraction <= cfg.battery_critical
    tasks: list[Task] = []
    if inp.oldest_pending_data_age is not None and \
            inp.oldest_pending_data_age > cfg.sync_age_max:
        tasks.append(Task(id=f"{inp.agent_id}:sync",
                          kind=KIND_SYNC, location=inp.base_node,
                          reward=2.0 * EXPLORE_REWARD,
                          duration=cfg.explore_duration,
                          generator=inp.agent_id))
    return tasks, forced


def make_drop_node_task(agent_id: str, node: str, key: str,
                        cfg: TaskingConfig) -> Task:
    """Node-drop tasks exist only on supervisor command."""
    return Task(id=f"{agent_id}:drop:{key}", kind=KIND_DROP_NODE,
                location=node, reward=3.0 * EXPLORE_REWARD,
                duration=cfg.explore_duration, generator=agent_id)
