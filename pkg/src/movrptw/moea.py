"""NSGA-II over giant-tour genotypes with neural-policy seeding and Pareto metrics.

Genotype: a permutation of all customer ids, decoded into routes by a greedy
feasibility-aware split. Selection is a binary tournament by (rank, crowding),
variation is order crossover plus swap/inversion mutation, survival is the
elitist merge-sort-truncate of NSGA-II with constrained dominance (feasible
beats infeasible, infeasible compared by violation count). Hypervolume is the
exact 2-D sweep against a fixed reference.
"""

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from .core import Instance, ObjectiveValues, RoutePlan, evaluate


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 51
    generations: int = 500
    crossover_rate: float = 0.9
    mutation_rate: float = 0.2
    tournament_size: int = 2
    seed: int = 0
    init_mode: str = "wadrl"  # or "random"
    random_retries: int = 20

    def __post_init__(self):
        if self.population_size < 4:
            raise ValueError("population_size must be >= 4")


@dataclass
class Individual:
    genotype: tuple[int, ...]
    plan: RoutePlan
    objectives: ObjectiveValues
    feasible: bool
    violation_count: int
    rank: int = 0
    crowding: float = 0.0
    provenance: str = "nsga2"


@dataclass
class Population:
    members: list
    construction_seconds: float = 0.0

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


def decode_genotype(instance: Instance, genotype, provenance: str = "nsga2") -> Individual:
    """Greedy split of a giant tour into routes.

    The current route is extended while capacity, the hard window, and the
    direct depot return stay feasible; otherwise a new route starts. A
    customer infeasible even alone gets its own route and one violation;
    routes beyond the fleet size add one violation each.
    """
    genotype = tuple(genotype)
    if sorted(genotype) != sorted(instance.customer_ids):
        raise ValueError("genotype is not a permutation of the instance's customer ids")

    routes = []
    current = []
    violations = 0
    load = 0.0
    clock = 0.0  # departure-ready time at the previous vertex
    prev = 0

    def alone_feasible(i):
        arrival = instance.travel_time[0, i]
        start = max(arrival, instance.E[i])
        return (arrival <= instance.L[i]
                and start + instance.service[i] + instance.travel_time[i, 0]
                <= instance.depot.horizon)

    for cid in genotype:
        i = instance.vertex_index(cid)
        arrival = clock + instance.travel_time[prev, i]
        start = max(arrival, instance.E[i])
        fits = (current
                and load + instance.demand[i] <= instance.fleet.capacity
                and arrival <= instance.L[i]
                and start + instance.service[i] + instance.travel_time[i, 0]
                <= instance.depot.horizon)
        if not current or not fits:
            if current:
                routes.append(tuple(current))
            if not alone_feasible(i):
                violations += 1
            current = [cid]
            load = instance.demand[i]
            arrival = instance.travel_time[0, i]
            clock = max(arrival, instance.E[i]) + instance.service[i]
        else:
            current.append(cid)
            load += instance.demand[i]
            clock = start + instance.service[i]
        prev = i
    if current:
        routes.append(tuple(current))
    violations += max(0, len(routes) - instance.fleet.fleet_size)

    plan = RoutePlan(routes)
    return Individual(genotype=genotype, plan=plan, objectives=evaluate(instance, plan),
                      feasible=violations == 0, violation_count=violations,
                      provenance=provenance)


def random_individual(instance: Instance, rng: np.random.Generator,
                      retries: int = 20, provenance: str = "nsga2") -> Individual:
    """Random permutations decoded greedily, retried until feasible (bounded)."""
    best = None
    for _ in range(max(1, retries)):
        perm = tuple(int(c) for c in rng.permutation(instance.customer_ids))
        ind = decode_genotype(instance, perm, provenance=provenance)
        if ind.feasible:
            return ind
        if best is None or ind.violation_count < best.violation_count:
            best = ind
    return best


def random_population(instance: Instance, config: EvolutionConfig,
                      rng: np.random.Generator) -> Population:
    """Fully random initial population; wall time recorded for comparisons."""
    t0 = time.perf_counter()
    members = [random_individual(instance, rng, config.random_retries)
               for _ in range(config.population_size)]
    return Population(members=members, construction_seconds=time.perf_counter() - t0)


def seed_population(instance: Instance, sweep_results, config: EvolutionConfig,
                    rng: np.random.Generator) -> Population:
    """Initial population from a weight sweep: flatten each successful plan's
    routes into a genotype; failures are replaced by random construction."""
    t0 = time.perf_counter()
    members = []
    for result in sweep_results:
        if len(members) == config.population_size:
            break
        if result.success:
            genotype = tuple(cid for route in result.plan.routes for cid in route)
            members.append(decode_genotype(instance, genotype, provenance="seed"))
    while len(members) < config.population_size:
        members.append(random_individual(instance, rng, config.random_retries,
                                         provenance="seed"))
    return Population(members=members, construction_seconds=time.perf_counter() - t0)


def _constrained_dominates(fa, va, oa, fb, vb, ob) -> bool:
    """Deb's rule over ((feasible, violations, (f1, f2)) triples; f1 min, f2 max."""
    if fa and not fb:
        return True
    if fb and not fa:
        return False
    if not fa and not fb:
        return va < vb
    better_eq = oa[0] <= ob[0] and oa[1] >= ob[1]
    strictly = oa[0] < ob[0] or oa[1] > ob[1]
    return better_eq and strictly


def fast_nondominated_sort(objectives, feasible=None, violations=None) -> list[list[int]]:
    """Partition point indices into fronts F1, F2, ... (f1 minimized, f2 maximized).

    Standard bookkeeping: S[p] collects the points p dominates, n[p] counts
    the points dominating p; peeling n[p] == 0 layer by layer.
    """
    n_pts = len(objectives)
    objectives = [tuple(o) for o in objectives]
    if feasible is None:
        feasible = [True] * n_pts
    if violations is None:
        violations = [0] * n_pts

    S = [[] for _ in range(n_pts)]
    n = [0] * n_pts
    fronts = [[]]
    for p in range(n_pts):
        for q in range(n_pts):
            if p == q:
                continue
            if _constrained_dominates(feasible[p], violations[p], objectives[p],
                                      feasible[q], violations[q], objectives[q]):
                S[p].append(q)
            elif _constrained_dominates(feasible[q], violations[q], objectives[q],
                                        feasible[p], violations[p], objectives[p]):
                n[p] += 1
        if n[p] == 0:
            fronts[0].append(p)
    i = 0
    while fronts[i]:
        nxt = []
        for p in fronts[i]:
            for q in S[p]:
                n[q] -= 1
                if n[q] == 0:
                    nxt.append(q)
        i += 1
        fronts.append(nxt)
    fronts.pop()
    return fronts


def crowding_distance(front_objectives) -> np.ndarray:
    """Normalized cuboid-side sums; boundary points per objective get infinity.

    Zero-span objectives contribute nothing.
    """
    m = len(front_objectives)
    dist = np.zeros(m)
    if m == 0:
        return dist
    objs = np.asarray(front_objectives, dtype=float)
    for j in range(objs.shape[1]):
        order = np.argsort(objs[:, j], kind="stable")
        span = objs[order[-1], j] - objs[order[0], j]
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
        if span > 0:
            for pos in range(1, m - 1):
                i = order[pos]
                if np.isinf(dist[i]):
                    continue
                dist[i] += (objs[order[pos + 1], j] - objs[order[pos - 1], j]) / span
    return dist


def order_crossover(p1, p2, rng: np.random.Generator) -> tuple[int, ...]:
    """OX1: keep a random segment of p1, fill the rest in p2's order after it."""
    n = len(p1)
    if n != len(p2):
        raise ValueError("parents must have equal length")
    a, b = sorted(int(x) for x in rng.integers(0, n, size=2))
    child = [None] * n
    child[a:b + 1] = p1[a:b + 1]
    taken = set(child[a:b + 1])
    slots = [(b + 1 + k) % n for k in range(n) if child[(b + 1 + k) % n] is None]
    fill = (c for k in range(n) if (c := p2[(b + 1 + k) % n]) not in taken)
    for slot, c in zip(slots, fill):
        child[slot] = c
    return tuple(child)


def mutate(genotype, rate: float, rng: np.random.Generator) -> tuple[int, ...]:
    """With probability `rate`: swap two positions or invert a segment, equiprobably."""
    genotype = tuple(genotype)
    if rng.random() >= rate:
        return genotype
    n = len(genotype)
    g = list(genotype)
    i, j = sorted(int(x) for x in rng.integers(0, n, size=2))
    if rng.random() < 0.5:
        g[i], g[j] = g[j], g[i]
    else:
        g[i:j + 1] = reversed(g[i:j + 1])
    return tuple(g)


def _rank_population(members) -> None:
    fronts = fast_nondominated_sort(
        [(ind.objectives.f1, ind.objectives.f2) for ind in members],
        [ind.feasible for ind in members],
        [ind.violation_count for ind in members])
    for level, front in enumerate(fronts, start=1):
        objs = [(members[i].objectives.f1, members[i].objectives.f2) for i in front]
        crowd = crowding_distance(objs)
        for i, c in zip(front, crowd):
            members[i].rank = level
            members[i].crowding = float(c)


def _tournament(members, rng: np.random.Generator, k: int = 2):
    picks = [members[int(i)] for i in rng.integers(0, len(members), size=k)]
    return min(picks, key=lambda ind: (ind.rank, -ind.crowding))


def pareto_front(members) -> list:
    """Feasible rank-1 members (call after ranking)."""
    return [ind for ind in members if ind.rank == 1 and ind.feasible]


def hypervolume_2d(points, reference: tuple[float, float]) -> float:
    """Exact dominated area of (f1 min, f2 max) points against a reference.

    Maps to min-min space (f1, -f2), sorts by f1 and accumulates rectangles.
    Points outside the reference box are an error.
    """
    ref_x, ref_y = reference[0], -reference[1]
    mapped = sorted((float(p[0]), -float(p[1])) for p in points)
    for x, y in mapped:
        if x > ref_x + 1e-12 or y > ref_y + 1e-12:
            raise ValueError(f"point ({x}, {-y}) lies outside the reference box")
    area = 0.0
    best_y = ref_y
    stair = []
    for x, y in mapped:
        if y < best_y:
            stair.append((x, y))
            best_y = y
    for k, (x, y) in enumerate(stair):
        next_x = stair[k + 1][0] if k + 1 < len(stair) else ref_x
        area += (next_x - x) * (ref_y - y)
    return area


@dataclass
class GenerationMetrics:
    generation: int
    hypervolume: float
    feasible_count: int
    best_f1: float
    best_f2: float
    seconds: float


@dataclass
class EvolveResult:
    population: Population
    metrics: list
    archive: list          # non-dominated feasible objective pairs seen so far
    reference: tuple[float, float]

    def front(self):
        return pareto_front(self.population.members)


def _archive_insert(archive, point) -> None:
    for a in archive:
        if a[0] <= point[0] and a[1] >= point[1]:
            return
    archive[:] = [a for a in archive if not (point[0] <= a[0] and point[1] >= a[1])]
    archive.append(point)


def evolve(instance: Instance, init: Population, config: EvolutionConfig,
           rng: np.random.Generator, reference: tuple[float, float] | None = None,
           record_seconds: bool = True) -> EvolveResult:
    """Elitist NSGA-II loop over the initial population.

    The recorded hypervolume is measured on an elitist archive of feasible
    points against a reference frozen at generation zero (1.05x the largest
    initial f1 unless given), so it is non-decreasing by construction.
    """
    members = [dataclasses.replace(ind) for ind in init.members]
    _rank_population(members)
    if reference is None:
        reference = (1.05 * max(ind.objectives.f1 for ind in members), 0.0)

    archive = []
    for ind in members:
        if ind.feasible and ind.objectives.f1 <= reference[0]:
            _archive_insert(archive, (ind.objectives.f1, ind.objectives.f2))

    metrics = []

    def snapshot(gen, seconds):
        feas = [ind for ind in members if ind.feasible]
        metrics.append(GenerationMetrics(
            generation=gen,
            hypervolume=hypervolume_2d(archive, reference) if archive else 0.0,
            feasible_count=len(feas),
            best_f1=min((i.objectives.f1 for i in feas), default=float("nan")),
            best_f2=max((i.objectives.f2 for i in feas), default=float("nan")),
            seconds=seconds,
        ))

    snapshot(0, 0.0)
    N = config.population_size
    for gen in range(1, config.generations + 1):
        t0 = time.perf_counter()
        offspring = []
        for _ in range(N):
            p1 = _tournament(members, rng, config.tournament_size)
            p2 = _tournament(members, rng, config.tournament_size)
            if rng.random() < config.crossover_rate:
                child = order_crossover(p1.genotype, p2.genotype, rng)
            else:
                child = p1.genotype
            child = mutate(child, config.mutation_rate, rng)
            offspring.append(decode_genotype(instance, child))
        merged = members + offspring
        _rank_population(merged)
        merged.sort(key=lambda ind: (ind.rank, -ind.crowding))
        members = merged[:N]
        _rank_population(members)
        for ind in offspring:
            if ind.feasible and ind.objectives.f1 <= reference[0]:
                _archive_insert(archive, (ind.objectives.f1, ind.objectives.f2))
        snapshot(gen, time.perf_counter() - t0 if record_seconds else 0.0)

    return EvolveResult(population=Population(members=members), metrics=metrics,
                        archive=sorted(archive), reference=reference)
