"""Benchmark parsing, training-instance generation and front serialization.

Covers the Solomon text layout, the random instance distribution used for
training (coordinates on [0,100]^2, integer demands on [1,40], soft windows
wider than 30 inside [0,240]), a JSON dump of full instances, and CSV/JSON
round-tripping of solution fronts.
"""

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .core import (Customer, Depot, FleetParams, Instance, InstanceError,
                   RoutePlan, derive_hard_window)

PROVENANCES = ("wadrl", "nsga2", "seed")
FRONT_COLUMNS = ["w1", "w2", "f1", "f2", "provenance", "routes"]


class ParseError(ValueError):
    """Malformed input file; message carries the offending line number."""


@dataclass(frozen=True)
class GeneratorConfig:
    """Distribution parameters for random training instances."""

    customer_count: int
    coord_range: tuple[float, float] = (0.0, 100.0)
    demand_range: tuple[int, int] = (1, 40)
    window_horizon: tuple[float, float] = (0.0, 240.0)
    min_window_width: float = 30.0
    capacity: float = 200.0
    service_time: float = 10.0
    violation: tuple[float, float] = (0.25, 0.25)
    unit_cost: float = 2.0
    fixed_cost: float = 400.0
    fleet_size: int | None = None  # None: one vehicle per customer (non-binding)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.window_horizon
        if not self.min_window_width < hi - lo:
            raise InstanceError("min_window_width must be smaller than the horizon length")
        if not self.demand_range[1] < self.capacity:
            raise InstanceError("max demand must be below vehicle capacity")
        if self.customer_count < 1:
            raise InstanceError("customer_count must be >= 1")


@dataclass(frozen=True)
class FrontRecord:
    """One solution on a front: objectives, routes and where it came from."""

    f1: float
    f2: float
    routes: tuple[tuple[int, ...], ...]
    provenance: str
    weights: tuple[float, float] | None = None

    def __post_init__(self):
        if not 0.0 <= self.f2 <= 1.0:
            raise ValueError(f"f2 must lie in [0,1], got {self.f2}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "routes", tuple(tuple(r) for r in self.routes))


def parse_solomon(text: str, truncate: int | None = None,
                  violation: tuple[float, float] = (0.25, 0.25),
                  unit_cost: float = 2.0, fixed_cost: float = 400.0) -> Instance:
    """Parse a Solomon-format benchmark file into an Instance.

    Row 0 of the customer table is the depot (its DUE DATE is the depot
    horizon); READY TIME / DUE DATE give each customer's soft window and the
    hard windows are derived from the violation fractions. `truncate` keeps
    only the first n customers. Errors report 1-based line numbers.
    """
    lines = text.splitlines()

    def find_section(keyword):
        for ln, line in enumerate(lines):
            if line.strip().upper().startswith(keyword):
                return ln
        raise ParseError(f"missing {keyword} section")

    veh_ln = find_section("VEHICLE")
    cust_ln = find_section("CUSTOMER")

    fleet_size = capacity = None
    for ln in range(veh_ln + 1, cust_ln):
        parts = lines[ln].split()
        if len(parts) == 2:
            try:
                fleet_size, capacity = int(parts[0]), float(parts[1])
                break
            except ValueError:
                continue
    if fleet_size is None:
        raise ParseError(f"no vehicle NUMBER/CAPACITY row found after line {veh_ln + 1}")

    rows = []
    for ln in range(cust_ln + 1, len(lines)):
        parts = lines[ln].split()
        if not parts:
            continue
        if len(parts) != 7:
            if rows or parts[0].replace(".", "").isdigit():
                raise ParseError(f"line {ln + 1}: expected 7 numeric columns, got {len(parts)}")
            continue  # table header
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"line {ln + 1}: non-numeric cell ({exc})") from None
        rows.append((ln + 1, vals))
    if not rows:
        raise ParseError("no customer rows found")

    depot_row = rows[0][1]
    depot = Depot(coord=(depot_row[1], depot_row[2]), horizon=depot_row[5])
    customers = []
    seen_ids = {}
    body = rows[1:]
    if truncate is not None:
        body = body[:truncate]
    for ln, vals in body:
        cid = int(vals[0])
        if cid in seen_ids:
            raise ParseError(f"line {ln}: duplicate customer id {cid} (first on line {seen_ids[cid]})")
        seen_ids[cid] = ln
        customers.append(Customer(
            id=cid, coord=(vals[1], vals[2]), demand=vals[3],
            soft_window=(vals[4], vals[5]), service_time=vals[6]))

    name = lines[0].strip() if lines and lines[0].strip() else "solomon"
    fleet = FleetParams(fleet_size=fleet_size, capacity=capacity,
                        unit_cost=unit_cost, fixed_cost=fixed_cost, speed=1.0)
    return Instance(depot=depot, customers=customers, fleet=fleet,
                    violation=violation, name=name)


def generate_instance(config: GeneratorConfig) -> Instance:
    """Sample a random instance from the training distribution, deterministic per seed.

    Each customer is redrawn until it is individually serviceable from the
    depot (reachable inside its hard window with a direct return within the
    horizon); without that, an instance admits no complete plan at all and
    every training episode is unwinnable.
    """
    rng = np.random.default_rng(config.seed)
    lo, hi = config.coord_range
    t0, t1 = config.window_horizon
    width_max_start = t1 - config.min_window_width - 1.0

    depot_xy = rng.uniform(lo, hi, size=2)
    customers = []
    for cid in range(1, config.customer_count + 1):
        demand = int(rng.integers(config.demand_range[0], config.demand_range[1] + 1))
        for attempt in range(1000):
            x, y = rng.uniform(lo, hi, size=2)
            e = t0 + rng.uniform(0.0, width_max_start)
            width = config.min_window_width + rng.uniform(0.0, (t1 - e) - config.min_window_width)
            hard_open, hard_close = derive_hard_window((e, e + width), config.violation)
            dist = math.hypot(x - depot_xy[0], y - depot_xy[1])
            start = max(dist, hard_open)
            if dist <= hard_close and start + config.service_time + dist <= t1:
                break
        else:
            raise InstanceError("could not draw a serviceable customer in 1000 attempts")
        customers.append(Customer(
            id=cid, coord=(float(x), float(y)), demand=float(demand),
            soft_window=(float(e), float(e + width)), service_time=config.service_time))

    fleet_size = config.fleet_size if config.fleet_size is not None else config.customer_count
    fleet = FleetParams(fleet_size=fleet_size, capacity=config.capacity,
                        unit_cost=config.unit_cost, fixed_cost=config.fixed_cost, speed=1.0)
    return Instance(depot=Depot(coord=(float(depot_xy[0]), float(depot_xy[1])), horizon=t1),
                    customers=customers, fleet=fleet, violation=config.violation,
                    name=f"gen-h{config.customer_count}-s{config.seed}")


def _routes_to_text(routes) -> str:
    return ";".join(",".join(str(c) for c in route) for route in routes)


def _routes_from_text(text: str):
    if not text:
        return ()
    return tuple(tuple(int(c) for c in part.split(",")) for part in text.split(";") if part)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_front(records, path, fmt: str = "csv") -> None:
    """Serialize front records (sorted by f1) as CSV or JSON."""
    records = list(records)
    if not records:
        raise ValueError("refusing to write an empty front")
    records.sort(key=lambda r: (r.f1, r.f2, r.provenance, r.weights or (-1.0, -1.0)))
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(FRONT_COLUMNS)
        for r in records:
            w1 = _fmt(r.weights[0]) if r.weights else ""
            w2 = _fmt(r.weights[1]) if r.weights else ""
            writer.writerow([w1, w2, _fmt(r.f1), _fmt(r.f2), r.provenance,
                             _routes_to_text(r.routes)])
        data = buf.getvalue()
    elif fmt == "json":
        data = json.dumps({
            "format": "movrptw-front",
            "version": 1,
            "records": [{
                "w1": None if r.weights is None else round(r.weights[0], 6),
                "w2": None if r.weights is None else round(r.weights[1], 6),
                "f1": round(r.f1, 6),
                "f2": round(r.f2, 6),
                "provenance": r.provenance,
                "routes": [list(route) for route in r.routes],
            } for r in records],
        }, indent=2) + "\n"
    else:
        raise ValueError(f"unknown front format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(data)


def read_front(path) -> list[FrontRecord]:
    """Inverse of write_front; validates the schema and value ranges."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        if doc.get("format") != "movrptw-front":
            raise ParseError("not a front file (missing format marker)")
        records = []
        for row in doc["records"]:
            for col in ("f1", "f2", "provenance", "routes"):
                if col not in row:
                    raise ParseError(f"front record missing column {col!r}")
            weights = None
            if row.get("w1") is not None:
                weights = (row["w1"], row["w2"])
            records.append(FrontRecord(
                f1=row["f1"], f2=row["f2"],
                routes=tuple(tuple(r) for r in row["routes"]),
                provenance=row["provenance"], weights=weights))
        return records

    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty front file") from None
    if header != FRONT_COLUMNS:
        missing = [c for c in FRONT_COLUMNS if c not in header]
        raise ParseError(f"front header mismatch, missing columns: {missing or header}")
    records = []
    for row in reader:
        if not row:
            continue
        w1, w2, f1, f2, provenance, routes = row
        weights = (float(w1), float(w2)) if w1 else None
        records.append(FrontRecord(
            f1=float(f1), f2=float(f2), routes=_routes_from_text(routes),
            provenance=provenance, weights=weights))
    return records


def write_instance(instance: Instance, path) -> None:
    """Dump an instance (all defining fields) as JSON for reproducibility."""
    doc = {
        "format": "movrptw-instance",
        "version": 1,
        "name": instance.name,
        "depot": {"x": instance.depot.coord[0], "y": instance.depot.coord[1],
                  "horizon": instance.depot.horizon},
        "fleet": {"size": instance.fleet.fleet_size, "capacity": instance.fleet.capacity,
                  "unit_cost": instance.fleet.unit_cost, "fixed_cost": instance.fleet.fixed_cost,
                  "speed": instance.fleet.speed},
        "violation": list(instance.violation),
        "customers": [{
            "id": c.id, "x": c.coord[0], "y": c.coord[1], "demand": c.demand,
            "ready": c.soft_window[0], "due": c.soft_window[1], "service": c.service_time,
        } for c in instance.customers],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_instance(path) -> Instance:
    """Load an instance written by write_instance."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "movrptw-instance":
        raise ParseError("not an instance file (missing format marker)")
    d = doc["depot"]
    f = doc["fleet"]
    customers = [Customer(id=c["id"], coord=(c["x"], c["y"]), demand=c["demand"],
                          soft_window=(c["ready"], c["due"]), service_time=c["service"])
                 for c in doc["customers"]]
    fleet = FleetParams(fleet_size=f["size"], capacity=f["capacity"],
                        unit_cost=f["unit_cost"], fixed_cost=f["fixed_cost"], speed=f["speed"])
    return Instance(depot=Depot(coord=(d["x"], d["y"]), horizon=d["horizon"]),
                    customers=customers, fleet=fleet,
                    violation=tuple(doc["violation"]), name=doc.get("name", ""))


def load_instance_file(path, truncate: int | None = None, **kwargs) -> Instance:
    """Load either a Solomon .txt file or a movrptw instance .json file."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        instance = read_instance(path)
        if truncate is not None and truncate < instance.h:
            return Instance(depot=instance.depot, customers=instance.customers[:truncate],
                            fleet=instance.fleet, violation=instance.violation,
                            name=instance.name)
        return instance
    return parse_solomon(text, truncate=truncate, **kwargs)
