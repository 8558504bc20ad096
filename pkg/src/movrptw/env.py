"""Sequential route-construction MDP: state, masking, transitions, reward.

One vehicle is routed at a time; returning to the depot dispatches the next
vehicle at time 0. Masking keeps every reachable action feasible (capacity,
hard windows, direct depot return, fleet budget), so a completed episode
always converts to a feasible plan.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import Instance, InstanceError, ObjectiveValues, RoutePlan, evaluate

FAILURE_REWARD = -1000.0


@dataclass(frozen=True)
class WeightVector:
    """Convex weights (w1, w2) over the cost and satisfaction objectives."""

    w1: float
    w2: float

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or abs(self.w1 + self.w2 - 1.0) > 1e-9:
            raise ValueError(f"weights must be nonnegative and sum to 1, got ({self.w1}, {self.w2})")


@dataclass(frozen=True)
class NormalizationBounds:
    """Objective ranges used to normalize the reward."""

    f1_min: float
    f1_max: float
    f2_min: float = 0.0
    f2_max: float = 1.0

    def __post_init__(self):
        if not self.f1_min < self.f1_max:
            raise ValueError(f"need f1_min < f1_max, got [{self.f1_min}, {self.f1_max}]")
        if (self.f2_min, self.f2_max) != (0.0, 1.0):
            raise ValueError("satisfaction bounds are fixed at (0, 1)")


@dataclass(frozen=True)
class MdpState:
    """One step's world: vehicle, remaining demands, weights. Value-like."""

    load: float
    traveled_time: float
    current_vertex: int
    remaining_demand: np.ndarray  # (h+1,), entry 0 stays 0
    visited: np.ndarray           # bool (h+1,), entry 0 unused
    vehicles_dispatched: int
    weights: WeightVector
    step_index: int


@dataclass(frozen=True)
class EpisodeResult:
    """A finished rollout: actions, decoded plan, objectives, reward."""

    actions: tuple[int, ...]
    plan: RoutePlan
    objectives: ObjectiveValues
    reward: float
    success: bool
    weights: WeightVector


def reset(instance: Instance, weights: WeightVector) -> MdpState:
    """Initial state: first vehicle staged at the depot, full load, time 0."""
    demand = instance.demand.copy()
    visited = np.zeros(instance.n_vertices, dtype=bool)
    demand.flags.writeable = False
    visited.flags.writeable = False
    return MdpState(load=instance.fleet.capacity, traveled_time=0.0, current_vertex=0,
                    remaining_demand=demand, visited=visited, vehicles_dispatched=1,
                    weights=weights, step_index=0)


def feasible_mask(state: MdpState, instance: Instance) -> np.ndarray:
    """Boolean vector over vertices 0..h; True means masked (not selectable).

    Customer i is masked when already visited, when its demand exceeds the
    load, when its service could not start by the hard close, or when serving
    it and returning straight to the depot would overrun the depot horizon.
    The depot is masked only while the vehicle is at the depot; with the
    fleet exhausted there, every customer is masked too (terminal state).
    """
    cur = state.current_vertex
    depart = max(state.traveled_time, instance.E[cur]) + instance.service[cur]
    arrival = depart + instance.travel_time[cur]
    service_start = np.maximum(arrival, instance.E)
    return_time = service_start + instance.service + instance.travel_time[:, 0]
    masked = (
        state.visited
        | (state.remaining_demand > state.load)
        | (arrival > instance.L)
        | (return_time > instance.depot.horizon)
    )
    at_depot = cur == 0
    masked[0] = at_depot
    if at_depot and state.vehicles_dispatched > instance.fleet.fleet_size:
        masked[1:] = True
    return masked


def is_terminal(state: MdpState, instance: Instance) -> bool:
    return bool(feasible_mask(state, instance).all())


def step(state: MdpState, action: int, instance: Instance,
         mask: np.ndarray | None = None) -> MdpState:
    """Apply one action and return the successor state.

    Raises on masked actions. A depot return resets load and clock and counts
    the next vehicle as dispatched.
    """
    if mask is None:
        mask = feasible_mask(state, instance)
    if action < 0 or action >= instance.n_vertices:
        raise InstanceError(f"action {action} outside vertex range 0..{instance.h}")
    if mask[action]:
        raise InstanceError(f"action {action} is masked in the current state")

    if action == 0:
        return replace(state, load=instance.fleet.capacity, traveled_time=0.0,
                       current_vertex=0, vehicles_dispatched=state.vehicles_dispatched + 1,
                       step_index=state.step_index + 1)

    cur = state.current_vertex
    arrival = (max(state.traveled_time, instance.E[cur]) + instance.service[cur]
               + instance.travel_time[cur, action])
    demand = state.remaining_demand.copy()
    visited = state.visited.copy()
    load = state.load - demand[action]
    demand[action] = 0.0
    visited[action] = True
    demand.flags.writeable = False
    visited.flags.writeable = False
    return replace(state, load=load, traveled_time=arrival, current_vertex=action,
                   remaining_demand=demand, visited=visited,
                   step_index=state.step_index + 1)


def actions_to_plan(instance: Instance, actions) -> RoutePlan:
    """Split an action sequence at depot visits into a RoutePlan."""
    routes = []
    current = []
    for a in actions:
        if a == 0:
            if current:
                routes.append(tuple(instance.vertex_id(i) for i in current))
                current = []
        else:
            current.append(a)
    if current:
        routes.append(tuple(instance.vertex_id(i) for i in current))
    return RoutePlan(routes)


def reward(result: EpisodeResult, bounds: NormalizationBounds, weights: WeightVector) -> float:
    """Scalar episode reward: -1000 on unserved customers, else the weighted
    normalized objectives (cost term clamped to [0, 1] before weighting)."""
    return _reward_value(result.success, result.objectives, bounds, weights)


def _reward_value(success: bool, objectives: ObjectiveValues,
                  bounds: NormalizationBounds, weights: WeightVector) -> float:
    if not success:
        return FAILURE_REWARD
    f1_norm = (objectives.f1 - bounds.f1_min) / (bounds.f1_max - bounds.f1_min)
    f1_norm = min(1.0, max(0.0, f1_norm))
    f2_norm = (objectives.f2 - bounds.f2_min) / (bounds.f2_max - bounds.f2_min)
    return -weights.w1 * f1_norm + weights.w2 * f2_norm


class RandomPolicy:
    """Uniform probability over unmasked vertices; handy baseline and test double."""

    def begin_episode(self, instance: Instance, weights: WeightVector):
        return None

    def action_probs(self, context, state: MdpState, mask: np.ndarray) -> np.ndarray:
        free = ~mask
        probs = free.astype(float)
        return probs / probs.sum()


def rollout(policy, instance: Instance, weights: WeightVector, mode: str = "sample",
            rng: np.random.Generator | None = None,
            bounds: NormalizationBounds | None = None) -> EpisodeResult:
    """Run one episode under `policy` and convert it into a plan.

    `policy` provides begin_episode(instance, weights) -> context and
    action_probs(context, state, mask) -> probability vector. Termination:
    every vertex masked (only happens at the depot). Episodes that strand
    unserved customers score the failure reward.
    """
    if mode not in ("sample", "greedy"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    if rng is None:
        rng = np.random.default_rng()
    if bounds is None:
        bounds = estimate_bounds(instance)

    context = policy.begin_episode(instance, weights)
    state = reset(instance, weights)
    actions = [0]
    max_steps = 2 * instance.h + 2
    for _ in range(max_steps):
        mask = feasible_mask(state, instance)
        if mask.all():
            break
        probs = policy.action_probs(context, state, mask)
        if mode == "greedy":
            action = int(np.argmax(probs))
        else:
            action = _sample_index(probs, rng)
        state = step(state, action, instance, mask=mask)
        actions.append(action)

    plan = actions_to_plan(instance, actions)
    success = bool(state.visited[1:].all()) and state.current_vertex == 0
    objectives = evaluate(instance, plan)
    r = _reward_value(success, objectives, bounds, weights)
    return EpisodeResult(actions=tuple(actions), plan=plan, objectives=objectives,
                         reward=r, success=success, weights=weights)


def _sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(probs)
    r = rng.random() * cum[-1]
    return int(np.searchsorted(cum, r, side="right").clip(0, len(probs) - 1))


class ConstructionError(RuntimeError):
    """The nearest-neighbor scale construction found no feasible completion."""


def estimate_bounds(instance: Instance) -> NormalizationBounds:
    """Objective normalization ranges for the reward.

    Lower cost bound: one vehicle must reach the farthest customer and come
    back. Upper cost bound: a nearest-neighbor construction (earliest
    feasible arrival first, new vehicle on dead ends); it serves as a scale,
    so the fleet-size cap is not enforced here.
    """
    fleet = instance.fleet
    f1_min = fleet.fixed_cost + fleet.unit_cost * 2.0 * float(instance.dist[0, 1:].max())

    open_mask = np.ones(instance.n_vertices, dtype=bool)
    open_mask[0] = False
    n_left = instance.h
    routes = []
    current = []
    cur = 0
    clock = 0.0
    load = fleet.capacity
    while n_left:
        depart = max(clock, instance.E[cur]) + instance.service[cur]
        arrival = depart + instance.travel_time[cur]
        start = np.maximum(arrival, instance.E)
        ok = (open_mask
              & (instance.demand <= load)
              & (arrival <= instance.L)
              & (start + instance.service + instance.travel_time[:, 0]
                 <= instance.depot.horizon))
        if not ok.any():
            if cur == 0:
                raise ConstructionError(
                    "no customer is reachable from the depot; instance is over-constrained")
            routes.append(tuple(instance.vertex_id(i) for i in current))
            current = []
            cur = 0
            clock = 0.0
            load = fleet.capacity
            continue
        cand = np.flatnonzero(ok)
        i = int(cand[np.argmin(arrival[cand])])  # earliest arrival, lowest index tie
        open_mask[i] = False
        n_left -= 1
        current.append(i)
        load -= instance.demand[i]
        clock = arrival[i]
        cur = i
    if current:
        routes.append(tuple(instance.vertex_id(i) for i in current))
    f1_max = evaluate(instance, RoutePlan(routes)).f1
    if f1_max <= f1_min + 1e-9:
        f1_max = f1_min + 1.0  # degenerate single-customer scale
    return NormalizationBounds(f1_min=f1_min, f1_max=f1_max)


class VecEnv:
    """Lockstep twin of the single-state MDP over a batch of same-size instances.

    Mutable by design (training inner loop); the single-state functions above
    remain the reference semantics and the two are cross-checked in tests.
    """

    def __init__(self, instances):
        insts = list(instances)
        n = insts[0].n_vertices
        if any(inst.n_vertices != n for inst in insts):
            raise InstanceError("VecEnv requires instances with the same customer count")
        B = len(insts)
        self.instances = insts
        self.B = B
        self.n = n
        if all(inst is insts[0] for inst in insts):
            # shared-instance batch (weight sweeps): broadcast the constants
            self.E = np.broadcast_to(insts[0].E, (B, n))
            self.L = np.broadcast_to(insts[0].L, (B, n))
            self.service = np.broadcast_to(insts[0].service, (B, n))
            self.tt = np.broadcast_to(insts[0].travel_time, (B, n, n))
            demand0 = np.broadcast_to(insts[0].demand, (B, n))
        else:
            self.E = np.stack([i.E for i in insts])
            self.L = np.stack([i.L for i in insts])
            self.service = np.stack([i.service for i in insts])
            self.tt = np.stack([i.travel_time for i in insts])
            demand0 = np.stack([i.demand for i in insts])
        self.L0 = np.array([i.depot.horizon for i in insts])
        self.capacity = np.array([i.fleet.capacity for i in insts])
        self.fleet_size = np.array([i.fleet.fleet_size for i in insts])
        self.demand = demand0.copy()
        self.visited = np.zeros((B, n), dtype=bool)
        self.load = self.capacity.copy()
        self.tau = np.zeros(B)
        self.cur = np.zeros(B, dtype=np.int64)
        self.dispatched = np.ones(B, dtype=np.int64)
        self.actions = [[0] for _ in range(B)]
        self._rows = np.arange(B)

    def masks(self) -> np.ndarray:
        rows = self._rows
        depart = np.maximum(self.tau, self.E[rows, self.cur]) + self.service[rows, self.cur]
        arrival = depart[:, None] + self.tt[rows, self.cur, :]
        start = np.maximum(arrival, self.E)
        ret = start + self.service + self.tt[..., 0]
        masked = (self.visited
                  | (self.demand > self.load[:, None])
                  | (arrival > self.L)
                  | (ret > self.L0[:, None]))
        at_depot = self.cur == 0
        masked[:, 0] = at_depot
        exhausted = at_depot & (self.dispatched > self.fleet_size)
        masked[exhausted] = True
        return masked

    def step(self, actions: np.ndarray, active: np.ndarray) -> None:
        rows = self._rows[active]
        acts = actions[active]
        to_depot = acts == 0
        d_rows = rows[to_depot]
        self.load[d_rows] = self.capacity[d_rows]
        self.tau[d_rows] = 0.0
        self.dispatched[d_rows] += 1
        self.cur[d_rows] = 0

        c_rows = rows[~to_depot]
        c_acts = acts[~to_depot]
        if c_rows.size:
            cur = self.cur[c_rows]
            depart = (np.maximum(self.tau[c_rows], self.E[c_rows, cur])
                      + self.service[c_rows, cur])
            self.tau[c_rows] = depart + self.tt[c_rows, cur, c_acts]
            self.load[c_rows] -= self.demand[c_rows, c_acts]
            self.demand[c_rows, c_acts] = 0.0
            self.visited[c_rows, c_acts] = True
            self.cur[c_rows] = c_acts
        for b in rows:
            self.actions[b].append(int(actions[b]))

    def served_all(self) -> np.ndarray:
        return self.visited[:, 1:].all(axis=1)

    def results(self, bounds_list, weights_list) -> list[EpisodeResult]:
        out = []
        for b in range(self.B):
            inst = self.instances[b]
            plan = actions_to_plan(inst, self.actions[b])
            success = bool(self.visited[b, 1:].all()) and self.cur[b] == 0
            objectives = evaluate(inst, plan)
            r = _reward_value(success, objectives, bounds_list[b], weights_list[b])
            out.append(EpisodeResult(actions=tuple(self.actions[b]), plan=plan,
                                     objectives=objectives, reward=r, success=success,
                                     weights=weights_list[b]))
        return out
