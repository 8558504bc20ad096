"""Domain model for multiobjective vehicle routing with soft and hard time windows.

Holds the immutable problem definition (depot, customers, fleet), route plans,
schedule simulation, the two objectives (travel cost, average customer
satisfaction) and the feasibility checker. Everything here is a pure function
of its inputs; instances and plans are safe to share across workers.
"""

import math
from dataclasses import dataclass, field

import numpy as np


class InstanceError(ValueError):
    """Problem data violates a structural invariant."""


# Violation kinds reported by the feasibility checker / simulator.
V_CAPACITY = "capacity"
V_TIME_WINDOW = "time_window"
V_DEPOT_RETURN = "depot_return"
V_MISSING = "missing_customer"
V_DUPLICATE = "duplicate_customer"
V_UNKNOWN = "unknown_customer"
V_EMPTY_ROUTE = "empty_route"
V_FLEET = "fleet_size"


@dataclass(frozen=True)
class Customer:
    """A customer vertex: location, demand, soft time window, service time."""

    id: int
    coord: tuple[float, float]
    demand: float
    soft_window: tuple[float, float]
    service_time: float

    def __post_init__(self):
        e, l = self.soft_window
        if not (isinstance(self.id, int) and self.id > 0):
            raise InstanceError(f"customer id must be a positive integer, got {self.id!r}")
        if not e < l:
            raise InstanceError(f"customer {self.id}: soft window needs e < l, got ({e}, {l})")
        if not self.demand > 0:
            raise InstanceError(f"customer {self.id}: demand must be positive, got {self.demand}")
        if self.service_time < 0:
            raise InstanceError(f"customer {self.id}: negative service time {self.service_time}")


@dataclass(frozen=True)
class Depot:
    """The depot vertex with its operating horizon [0, L0]."""

    coord: tuple[float, float]
    horizon: float  # latest return time L0; the horizon opens at 0

    def __post_init__(self):
        if not self.horizon > 0:
            raise InstanceError(f"depot horizon must be positive, got {self.horizon}")


@dataclass(frozen=True)
class FleetParams:
    """Homogeneous fleet: size, capacity and cost coefficients."""

    fleet_size: int
    capacity: float
    unit_cost: float   # cost per distance unit traveled
    fixed_cost: float  # cost per vehicle used
    speed: float = 1.0

    def __post_init__(self):
        if self.fleet_size < 1:
            raise InstanceError(f"fleet_size must be >= 1, got {self.fleet_size}")
        if self.capacity <= 0:
            raise InstanceError(f"capacity must be positive, got {self.capacity}")
        if self.unit_cost < 0 or self.fixed_cost < 0:
            raise InstanceError("costs must be nonnegative")
        if self.speed <= 0:
            raise InstanceError(f"speed must be positive, got {self.speed}")


def derive_hard_window(soft: tuple[float, float], violation: tuple[float, float]) -> tuple[float, float]:
    """Widen a soft window (e, l) into the hard window (E, L) by the allowed violation fractions."""
    e, l = soft
    ze, zl = violation
    if not e < l:
        raise InstanceError(f"soft window needs e < l, got ({e}, {l})")
    if ze < 0 or zl < 0:
        raise InstanceError("violation fractions must be nonnegative")
    width = l - e
    return e - ze * width, l + zl * width


def satisfaction(arrival, windows: tuple[float, float, float, float]):
    """Piecewise-linear satisfaction of an arrival time against (E, e, l, L).

    1 inside the soft window [e, l], 0 outside the hard window [E, L],
    linear ramps between. Total function of the arrival time; accepts
    scalars or arrays.
    """
    E, e, l, L = windows
    if np.isscalar(arrival) or np.ndim(arrival) == 0:
        a = float(arrival)
        if a < E or a > L:
            return 0.0
        if a < e:
            return (a - E) / (e - E)
        if a <= l:
            return 1.0
        return (L - a) / (L - l)
    a = np.asarray(arrival, dtype=float)
    den_e = (e - E) if e > E else 1.0
    den_l = (L - l) if L > l else 1.0
    return np.select(
        [a < E, a < e, a <= l, a <= L],
        [0.0, (a - E) / den_e, 1.0, (L - a) / den_l],
        default=0.0,
    )


class Instance:
    """Immutable MOVRPTW instance with derived hard windows and distance matrices.

    Vertex 0 is the depot; customer i (1-based position) maps to customers[i-1].
    All derived arrays are vertex-indexed and read-only.
    """

    def __init__(self, depot: Depot, customers, fleet: FleetParams,
                 violation: tuple[float, float] = (0.25, 0.25), name: str = ""):
        customers = tuple(customers)
        if len(customers) == 0:
            raise InstanceError("instance needs at least one customer")
        ids = [c.id for c in customers]
        if len(set(ids)) != len(ids):
            raise InstanceError("duplicate customer ids")
        if violation[0] < 0 or violation[1] < 0:
            raise InstanceError("violation fractions must be nonnegative")
        max_demand = max(c.demand for c in customers)
        if fleet.capacity < max_demand:
            raise InstanceError(
                f"vehicle capacity {fleet.capacity} cannot cover the largest demand {max_demand}")

        self.name = name
        self.depot = depot
        self.customers = customers
        self.fleet = fleet
        self.violation = (float(violation[0]), float(violation[1]))
        self._index = {c.id: i + 1 for i, c in enumerate(customers)}

        n = len(customers) + 1
        coords = np.zeros((n, 2))
        coords[0] = depot.coord
        demand = np.zeros(n)
        service = np.zeros(n)
        e_arr = np.zeros(n)
        l_arr = np.zeros(n)
        E_arr = np.zeros(n)
        L_arr = np.zeros(n)
        e_arr[0], l_arr[0] = 0.0, depot.horizon
        E_arr[0], L_arr[0] = 0.0, depot.horizon
        for i, c in enumerate(customers, start=1):
            coords[i] = c.coord
            demand[i] = c.demand
            service[i] = c.service_time
            e_arr[i], l_arr[i] = c.soft_window
            E_arr[i], L_arr[i] = derive_hard_window(c.soft_window, self.violation)

        diff = coords[:, None, :] - coords[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=-1))
        for arr in (coords, demand, service, e_arr, l_arr, E_arr, L_arr, dist):
            arr.flags.writeable = False
        self.coords = coords
        self.demand = demand
        self.service = service
        self.e = e_arr
        self.l = l_arr
        self.E = E_arr
        self.L = L_arr
        self.dist = dist
        tt = dist / fleet.speed
        tt.flags.writeable = False
        self.travel_time = tt

    @property
    def h(self) -> int:
        return len(self.customers)

    @property
    def n_vertices(self) -> int:
        return self.h + 1

    def vertex_index(self, customer_id: int) -> int:
        try:
            return self._index[customer_id]
        except KeyError:
            raise InstanceError(f"unknown customer id {customer_id}") from None

    def vertex_id(self, index: int) -> int:
        if index == 0:
            return 0
        return self.customers[index - 1].id

    @property
    def customer_ids(self) -> tuple[int, ...]:
        return tuple(c.id for c in self.customers)

    def windows(self, customer_id: int) -> tuple[float, float, float, float]:
        """(E, e, l, L) for one customer."""
        i = self.vertex_index(customer_id)
        return self.E[i], self.e[i], self.l[i], self.L[i]


@dataclass(frozen=True)
class RoutePlan:
    """Ordered routes, each an ordered tuple of customer ids.

    Deliberately lenient: malformed plans (duplicates, missing customers,
    empty routes) are representable and reported by check_feasible.
    """

    routes: tuple[tuple[int, ...], ...]

    def __init__(self, routes):
        object.__setattr__(self, "routes", tuple(tuple(r) for r in routes))

    def visited_ids(self):
        return [cid for route in self.routes for cid in route]

    def __len__(self):
        return len(self.routes)


@dataclass(frozen=True)
class ObjectiveValues:
    f1: float  # total cost: unit_cost * distance + fixed_cost * routes, minimized
    f2: float  # average customer satisfaction in [0, 1], maximized


@dataclass(frozen=True)
class Violation:
    kind: str
    route: int | None = None
    customer: int | None = None
    detail: str = ""


@dataclass(frozen=True)
class FeasibilityVerdict:
    feasible: bool
    violations: tuple[Violation, ...]

    def __bool__(self):
        return self.feasible


@dataclass(frozen=True)
class Schedule:
    """Simulated timeline of a plan: arrivals, waits, loads and feasibility flags."""

    arrival: dict
    waiting: dict
    service_start: dict
    route_loads: tuple[float, ...]
    route_returns: tuple[float, ...]
    feasible: bool
    violations: tuple[Violation, ...]


def simulate_schedule(instance: Instance, plan: RoutePlan) -> Schedule:
    """Run each route from the depot at time 0 and build the arrival timeline.

    Arrival recursion: a_j = max(a_i, E_i) + v_i + t_ij, i.e. the vehicle waits
    at i until the hard-window start before serving. Raises on unknown or
    duplicated customer ids; anything else becomes a violation entry.
    """
    seen = set()
    for route in plan.routes:
        for cid in route:
            instance.vertex_index(cid)  # raises on unknown id
            if cid in seen:
                raise InstanceError(f"customer id {cid} appears more than once in the plan")
            seen.add(cid)

    arrival, waiting, service_start = {}, {}, {}
    loads, returns = [], []
    violations = []
    for r, route in enumerate(plan.routes):
        if not route:
            violations.append(Violation(V_EMPTY_ROUTE, route=r, detail="route has no customers"))
            loads.append(0.0)
            returns.append(0.0)
            continue
        load = 0.0
        t = 0.0  # departure-ready time at the previous vertex
        prev = 0
        for cid in route:
            i = instance.vertex_index(cid)
            a = t + instance.travel_time[prev, i]
            w = max(0.0, instance.E[i] - a)
            start = a + w
            arrival[cid] = a
            waiting[cid] = w
            service_start[cid] = start
            if start > instance.L[i]:
                violations.append(Violation(
                    V_TIME_WINDOW, route=r, customer=cid,
                    detail=f"service start {start:.4f} after hard close {instance.L[i]:.4f}"))
            load += instance.demand[i]
            t = start + instance.service[i]
            prev = i
        back = t + instance.travel_time[prev, 0]
        if back > instance.depot.horizon:
            violations.append(Violation(
                V_DEPOT_RETURN, route=r,
                detail=f"return at {back:.4f} after depot horizon {instance.depot.horizon:.4f}"))
        if load > instance.fleet.capacity:
            violations.append(Violation(
                V_CAPACITY, route=r,
                detail=f"load {load} exceeds capacity {instance.fleet.capacity}"))
        loads.append(load)
        returns.append(back)

    for cid in instance.customer_ids:
        if cid not in seen:
            violations.append(Violation(V_MISSING, customer=cid, detail="customer not served"))
    if len(plan.routes) > instance.fleet.fleet_size:
        violations.append(Violation(
            V_FLEET, detail=f"{len(plan.routes)} routes exceed fleet size {instance.fleet.fleet_size}"))

    return Schedule(arrival, waiting, service_start, tuple(loads), tuple(returns),
                    feasible=not violations, violations=tuple(violations))


def evaluate(instance: Instance, plan: RoutePlan) -> ObjectiveValues:
    """Total cost f1 and mean satisfaction f2 of a plan.

    f1 counts depot legs and one fixed cost per route. f2 averages over all h
    customers; customers absent from the plan contribute 0 satisfaction.
    """
    if instance.h == 0:  # unreachable through Instance, kept as a guard
        raise InstanceError("cannot evaluate objectives on an instance without customers")
    sched = simulate_schedule(instance, plan)
    total_dist = 0.0
    for route in plan.routes:
        prev = 0
        for cid in route:
            i = instance.vertex_index(cid)
            total_dist += instance.dist[prev, i]
            prev = i
        total_dist += instance.dist[prev, 0]
    f1 = instance.fleet.unit_cost * total_dist + instance.fleet.fixed_cost * len(plan.routes)
    sat = 0.0
    for cid, a in sched.arrival.items():
        sat += satisfaction(a, instance.windows(cid))
    f2 = sat / instance.h
    return ObjectiveValues(f1=f1, f2=f2)


def check_feasible(instance: Instance, plan: RoutePlan) -> FeasibilityVerdict:
    """Constraint-by-constraint feasibility verdict with a violation list.

    Independent of simulate_schedule (same predicate, second code path):
    walks the plan structurally, then replays each route's arrival recursion
    directly. Malformed plans yield violations, never exceptions.
    """
    violations = []

    counts = {}
    for r, route in enumerate(plan.routes):
        if not route:
            violations.append(Violation(V_EMPTY_ROUTE, route=r, detail="route has no customers"))
        for cid in route:
            counts[cid] = counts.get(cid, 0) + 1
            if cid not in instance._index:
                violations.append(Violation(V_UNKNOWN, route=r, customer=cid,
                                            detail=f"id {cid} not in instance"))
    for cid in instance.customer_ids:
        if counts.get(cid, 0) == 0:
            violations.append(Violation(V_MISSING, customer=cid, detail="customer not served"))
        elif counts[cid] > 1:
            violations.append(Violation(V_DUPLICATE, customer=cid,
                                        detail=f"served {counts[cid]} times"))
    if len(plan.routes) > instance.fleet.fleet_size:
        violations.append(Violation(
            V_FLEET, detail=f"{len(plan.routes)} routes exceed fleet size {instance.fleet.fleet_size}"))

    structurally_clean = all(
        cid in instance._index and counts[cid] == 1 for cid in counts)
    if structurally_clean:
        for r, route in enumerate(plan.routes):
            load = 0.0
            clock = 0.0
            prev = 0
            for cid in route:
                i = instance.vertex_index(cid)
                a = clock + instance.travel_time[prev, i]
                start = max(a, instance.E[i])
                if start > instance.L[i]:
                    violations.append(Violation(
                        V_TIME_WINDOW, route=r, customer=cid,
                        detail=f"service start {start:.4f} after hard close {instance.L[i]:.4f}"))
                load += instance.demand[i]
                clock = start + instance.service[i]
                prev = i
            if route and clock + instance.travel_time[prev, 0] > instance.depot.horizon:
                violations.append(Violation(
                    V_DEPOT_RETURN, route=r,
                    detail=f"return at {clock + instance.travel_time[prev, 0]:.4f} "
                           f"after depot horizon {instance.depot.horizon:.4f}"))
            if load > instance.fleet.capacity:
                violations.append(Violation(
                    V_CAPACITY, route=r,
                    detail=f"load {load} exceeds capacity {instance.fleet.capacity}"))

    return FeasibilityVerdict(feasible=not violations, violations=tuple(violations))
