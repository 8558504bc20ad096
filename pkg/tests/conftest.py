import os

import numpy as np
import pytest

from movrptw.core import Customer, Depot, FleetParams, Instance
from movrptw.dataio import parse_solomon

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
RC101_PATH = os.path.join(DATA_DIR, "RC101.txt")


def make_t2(fleet_size=3, capacity=10.0):
    """Two-customer toy instance used for hand-checked timeline oracles."""
    return Instance(
        depot=Depot(coord=(0.0, 0.0), horizon=1000.0),
        customers=[
            Customer(id=1, coord=(10.0, 0.0), demand=5.0, soft_window=(20.0, 40.0),
                     service_time=10.0),
            Customer(id=2, coord=(0.0, 10.0), demand=5.0, soft_window=(10.0, 30.0),
                     service_time=5.0),
        ],
        fleet=FleetParams(fleet_size=fleet_size, capacity=capacity,
                          unit_cost=2.0, fixed_cost=400.0, speed=1.0),
        violation=(0.25, 0.25),
        name="T2",
    )


@pytest.fixture
def t2():
    return make_t2()


@pytest.fixture(scope="session")
def rc101_text():
    with open(RC101_PATH) as fh:
        return fh.read()


@pytest.fixture(scope="session")
def rc101_20(rc101_text):
    return parse_solomon(rc101_text, truncate=20)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERION_NAMES = {
    "test_c01_satisfaction_oracle": "C1  satisfaction oracle",
    "test_c02_hard_window_oracle": "C2  hard-window oracle",
    "test_c03_feasibility_soundness": "C3  feasibility soundness",
    "test_c04_gradient_correctness": "C4  gradient correctness",
    "test_c05_masking": "C5  masking",
    "test_c06_dominance_oracle": "C6  dominance oracle",
    "test_c07_hypervolume": "C7  hypervolume",
    "test_c08_elitism_monotonicity": "C8  elitism/monotonicity",
    "test_c09_training_sanity": "C9  training sanity",
    "test_c10_weight_awareness": "C10 weight-awareness",
    "test_c11_seeding_quality": "C11 seeding quality",
    "test_c12_hybrid_superiority": "C12 hybrid superiority",
    "test_c13_training_economy": "C13 training economy",
    "test_c14_reproducibility": "C14 reproducibility",
}


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    seen = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            name = getattr(report, "location", ("", "", ""))[2]
            base = name.split("[")[0]
            if base in _CRITERION_NAMES:
                seen[base] = outcome.upper() if outcome != "passed" else "PASS"
    if seen:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for key in sorted(_CRITERION_NAMES):
            if key in seen:
                label = _CRITERION_NAMES[key]
                state = seen[key]
                state = "FAIL" if state in ("FAILED", "ERROR") else state
                terminalreporter.write_line(f"  {label}: {state}")
