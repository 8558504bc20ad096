"""Acceptance suite: one test per criterion, pass/fail lines in the summary.

The training-backed criteria share session-scoped fixtures (one 10-customer
model, five 20-customer models), so the suite trains six networks total plus
the small timing study. Expect roughly an hour end to end on a desktop CPU.
"""

import time

import numpy as np
import pytest
from scipy import stats as scistats

from movrptw import nn
from movrptw.core import RoutePlan, check_feasible, derive_hard_window, satisfaction
from movrptw.dataio import GeneratorConfig, generate_instance, parse_solomon
from movrptw.env import (RandomPolicy, WeightVector, estimate_bounds, feasible_mask,
                         reset, rollout, step)
from movrptw.gradtest import policy_logprob_check
from movrptw.moea import (EvolutionConfig, evolve, fast_nondominated_sort,
                          hypervolume_2d, random_population, seed_population)
from movrptw.policy import PolicyConfig, decode_step, embed_vertices, encode, init_policy
from movrptw.training import (TrainConfig, greedy_rewards, train, weight_sweep,
                              sample_weights)
from conftest import RC101_PATH

PCFG = PolicyConfig()
W55 = WeightVector(0.5, 0.5)


@pytest.fixture(scope="session")
def rc101_20_acc(rc101_text):
    return parse_solomon(rc101_text, truncate=20)


@pytest.fixture(scope="session")
def model10():
    """Criterion 9 model: 10 customers, 20 epochs, batch 64."""
    tcfg = TrainConfig(epochs=20, batch_size=64, batches_per_epoch=25,
                       customer_count=10, seed=101)
    t0 = time.perf_counter()
    result = train(tcfg)
    return result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def models20():
    """Criteria 10-12 models: five seeds at 20 customers."""
    out = []
    for seed in (201, 202, 203, 204, 205):
        tcfg = TrainConfig(epochs=20, batch_size=64, batches_per_epoch=25,
                           customer_count=20, seed=seed)
        out.append(train(tcfg))
    return out


@pytest.fixture(scope="session")
def sweeps20(models20, rc101_20_acc):
    bounds = estimate_bounds(rc101_20_acc)
    return [weight_sweep(r.store, rc101_20_acc, bounds=bounds) for r in models20]


def test_c01_satisfaction_oracle():
    """Criterion 1: piecewise satisfaction exact on a 1000-point grid per window."""
    t0 = time.perf_counter()
    configs = [
        (15.0, 20.0, 40.0, 45.0),
        (0.0, 10.0, 100.0, 130.0),
        (20.0, 20.0, 40.0, 40.0),   # zero violation
        (-5.0, 0.0, 30.0, 37.5),    # negative hard open
        (100.0, 110.0, 111.0, 200.0),
    ]
    for E, e, l, L in configs:
        grid = np.linspace(E - 10.0, L + 10.0, 1000)
        for a in grid:
            a = float(a)
            if a < E or a > L:
                want = 0.0
            elif E <= a < e:
                want = (a - E) / (e - E)
            elif e <= a <= l:
                want = 1.0
            else:
                want = (L - a) / (L - l)
            got = satisfaction(a, (E, e, l, L))
            assert got == want, f"a={a} window={(E, e, l, L)}: {got} != {want}"
    assert time.perf_counter() - t0 < 1.0


def test_c02_hard_window_oracle(rc101_text):
    """Criterion 2: hard windows on every bundled RC101 customer, exact."""
    t0 = time.perf_counter()
    inst = parse_solomon(rc101_text, violation=(0.25, 0.25))
    assert inst.h >= 20
    for c in inst.customers:
        e, l = c.soft_window
        E, L = derive_hard_window((e, l), (0.25, 0.25))
        assert E == e - 0.25 * (l - e)
        assert L == l + 0.25 * (l - e)
        i = inst.vertex_index(c.id)
        assert inst.E[i] == E and inst.L[i] == L
        assert E <= e < l <= L
    assert time.perf_counter() - t0 < 1.0


def test_c03_feasibility_soundness():
    """Criterion 3: 1e4 random rollouts; every successful plan passes the checker."""
    t0 = time.perf_counter()
    policy = RandomPolicy()
    rng = np.random.default_rng(0)
    episodes = 0
    successes = 0
    for iseed in range(500):
        inst = generate_instance(GeneratorConfig(customer_count=10, seed=iseed))
        bounds = estimate_bounds(inst)
        for _ in range(20):
            ep = rollout(policy, inst, W55, mode="sample", rng=rng, bounds=bounds)
            episodes += 1
            if ep.success:
                successes += 1
                verdict = check_feasible(inst, ep.plan)
                assert verdict.feasible, verdict.violations
    assert episodes == 10_000
    assert successes > 0
    assert time.perf_counter() - t0 < 300.0


def test_c04_gradient_correctness():
    """Criterion 4: full-policy log-prob gradcheck, 100 parameters, tol 1e-3."""
    t0 = time.perf_counter()
    report = policy_logprob_check(customers=5, n_params=100, tol=1e-3, seed=0)
    assert report.passed, f"max relative error {report.max_rel_error:.3e}"
    assert time.perf_counter() - t0 < 120.0


def test_c05_masking():
    """Criterion 5: 1e4 decode steps, masked probability mass < 1e-6 each."""
    t0 = time.perf_counter()
    calls = 0
    rng = np.random.default_rng(1)
    for pseed in range(20):
        store = init_policy(PCFG, np.random.default_rng(pseed))
        for iseed in range(5):
            inst = generate_instance(GeneratorConfig(customer_count=8, seed=1000 + iseed))
            enc = encode(embed_vertices(inst, store, PCFG), store, PCFG)
            state = reset(inst, W55)
            for _ in range(100):
                mask = feasible_mask(state, inst)
                if mask.all():
                    state = reset(inst, sample_weights(rng))
                    mask = feasible_mask(state, inst)
                probs = decode_step(enc, state, mask, inst, store, PCFG)
                calls += 1
                assert probs[mask].sum() < 1e-6
                state = step(state, int(rng.choice(np.flatnonzero(~mask))), inst)
    assert calls == 10_000
    assert time.perf_counter() - t0 < 60.0


def _matrix_fronts(objs, feasible, violations):
    """Matrix-based peeling oracle, independent of the S/n bookkeeping."""
    n = len(objs)
    f1 = np.array([o[0] for o in objs])
    f2 = np.array([o[1] for o in objs])
    feas = np.asarray(feasible)
    viol = np.asarray(violations)
    better_eq = (f1[:, None] <= f1[None, :]) & (f2[:, None] >= f2[None, :])
    strict = (f1[:, None] < f1[None, :]) | (f2[:, None] > f2[None, :])
    obj_dom = better_eq & strict
    dom = np.where(feas[:, None] & ~feas[None, :], True,
                   np.where(~feas[:, None] & feas[None, :], False,
                            np.where(~feas[:, None] & ~feas[None, :],
                                     viol[:, None] < viol[None, :], obj_dom)))
    np.fill_diagonal(dom, False)
    alive = np.ones(n, dtype=bool)
    fronts = []
    while alive.any():
        undominated = alive & ~(dom & alive[:, None]).any(axis=0)
        fronts.append(sorted(np.flatnonzero(undominated).tolist()))
        alive &= ~undominated
    return fronts


def test_c06_dominance_oracle():
    """Criterion 6: sorter equals brute force on 100 random 200-point sets."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    for trial in range(100):
        n = 200
        objs = [(float(a), float(b)) for a, b in
                zip(rng.uniform(0, 100, n), rng.uniform(0, 1, n))]
        feasible = list(rng.random(n) < 0.85)
        violations = [0 if f else int(rng.integers(1, 5)) for f in feasible]
        got = [sorted(f) for f in fast_nondominated_sort(objs, feasible, violations)]
        want = _matrix_fronts(objs, feasible, violations)
        assert got == want, f"trial {trial}"
    assert time.perf_counter() - t0 < 30.0


def test_c07_hypervolume():
    """Criterion 7: analytic two-box value exact; Monte-Carlo within 1 percent."""
    t0 = time.perf_counter()
    hv = hypervolume_2d([(2.0, 0.5), (4.0, 0.9)], (5.0, 0.0))
    assert abs(hv - 1.9) <= 1e-9
    rng = np.random.default_rng(7)
    for trial in range(20):
        m = int(rng.integers(2, 9))
        pts = [(float(x), float(y)) for x, y in
               zip(rng.uniform(0, 9, m), rng.uniform(0.05, 1.0, m))]
        ref = (10.0, 0.0)
        exact = hypervolume_2d(pts, ref)
        xs = rng.uniform(0, 10, 250_000)
        ys = rng.uniform(0, 1, 250_000)
        covered = np.zeros(xs.shape, dtype=bool)
        for px, py in pts:
            covered |= (xs >= px) & (ys <= py)
        mc = covered.mean() * 10.0
        assert abs(exact - mc) < 0.01 * 10.0, f"trial {trial}: {exact} vs {mc}"
    assert time.perf_counter() - t0 < 60.0


def test_c08_elitism_monotonicity(rc101_20_acc):
    """Criterion 8: archive hypervolume never drops, best feasible f1 never rises."""
    t0 = time.perf_counter()
    for seed in range(10):
        cfg = EvolutionConfig(population_size=51, generations=200, seed=seed)
        rng = np.random.default_rng(seed)
        pop = random_population(rc101_20_acc, cfg, rng)
        result = evolve(rc101_20_acc, pop, cfg, rng)
        hv = [m.hypervolume for m in result.metrics]
        f1 = [m.best_f1 for m in result.metrics]
        assert len(hv) == 201
        assert all(b >= a - 1e-12 for a, b in zip(hv, hv[1:])), f"seed {seed}: hv dipped"
        assert all(b <= a + 1e-12 for a, b in zip(f1, f1[1:])), f"seed {seed}: f1 rose"
    assert time.perf_counter() - t0 < 600.0


def test_c09_training_sanity(model10):
    """Criterion 9: trained greedy reward beats the untrained policy, p < 0.05."""
    result, train_seconds = model10
    assert train_seconds < 1800.0, f"training took {train_seconds:.0f}s"
    untrained = init_policy(PCFG, np.random.default_rng(101))
    held_out = [generate_instance(GeneratorConfig(customer_count=10, seed=9000 + k))
                for k in range(100)]
    weights = [W55] * 100
    bounds = [estimate_bounds(i) for i in held_out]
    r_trained = greedy_rewards(result.store, PCFG, held_out, weights, bounds)
    r_untrained = greedy_rewards(untrained, PCFG, held_out, weights, bounds)
    test = scistats.ttest_rel(r_trained, r_untrained, alternative="greater")
    assert r_trained.mean() > r_untrained.mean()
    assert test.pvalue < 0.05, (f"p={test.pvalue:.4f} trained={r_trained.mean():.3f} "
                                f"untrained={r_untrained.mean():.3f}")


def test_c10_weight_awareness(sweeps20):
    """Criterion 10: cost-end sweeps are cheaper, satisfaction-end sweeps kinder."""
    hits = 0
    details = []
    for sweep in sweeps20:
        cost_end = sweep[0]        # weights (1, 0)
        sat_end = sweep[-1]        # weights (0, 1)
        ok = (cost_end.success and sat_end.success
              and cost_end.objectives.f1 <= 0.95 * sat_end.objectives.f1
              and sat_end.objectives.f2 >= cost_end.objectives.f2 + 0.05)
        hits += ok
        details.append((cost_end.objectives.f1, sat_end.objectives.f1,
                        cost_end.objectives.f2, sat_end.objectives.f2, ok))
    assert hits >= 4, f"weight-awareness in {hits}/5 seeds: {details}"


def test_c11_seeding_quality(models20, sweeps20, rc101_20_acc):
    """Criterion 11: seeded initial population beats random construction."""
    hits = 0
    details = []
    for k, sweep in enumerate(sweeps20):
        cfg = EvolutionConfig(population_size=51, generations=1, seed=300 + k)
        seeded = seed_population(rc101_20_acc, sweep, cfg, np.random.default_rng(300 + k))
        randpop = random_population(rc101_20_acc, cfg, np.random.default_rng(600 + k))
        sf1 = np.mean([i.objectives.f1 for i in seeded])
        sf2 = np.mean([i.objectives.f2 for i in seeded])
        rf1 = np.mean([i.objectives.f1 for i in randpop])
        rf2 = np.mean([i.objectives.f2 for i in randpop])
        ok = sf2 > rf2 and sf1 < rf1
        hits += ok
        details.append((round(sf1), round(rf1), round(sf2, 3), round(rf2, 3), ok))
    assert hits >= 4, f"seeding better in {hits}/5 seeds: {details}"


def test_c12_hybrid_superiority(models20, sweeps20, rc101_20_acc):
    """Criterion 12: seeded NSGA-II >= random-init NSGA-II at 500 generations."""
    t0 = time.perf_counter()
    hits = 0
    details = []
    for k, sweep in enumerate(sweeps20):
        cfg = EvolutionConfig(population_size=51, generations=500, seed=400 + k)
        seeded = seed_population(rc101_20_acc, sweep, cfg, np.random.default_rng(400 + k))
        randpop = random_population(rc101_20_acc, cfg, np.random.default_rng(700 + k))
        evo_s = evolve(rc101_20_acc, seeded, cfg, np.random.default_rng(401 + k))
        evo_r = evolve(rc101_20_acc, randpop, cfg, np.random.default_rng(701 + k))
        pts_s = [(i.objectives.f1, i.objectives.f2) for i in evo_s.front()]
        pts_r = [(i.objectives.f1, i.objectives.f2) for i in evo_r.front()]
        ref = (1.05 * max(p[0] for p in pts_s + pts_r), 0.0)
        hv_s = hypervolume_2d(pts_s, ref)
        hv_r = hypervolume_2d(pts_r, ref)
        hits += hv_s >= hv_r
        details.append((round(hv_s, 2), round(hv_r, 2), hv_s >= hv_r))
    assert hits >= 4, f"seeded HV >= random HV in {hits}/5 pairs: {details}"
    assert time.perf_counter() - t0 < 3600.0


def test_c13_training_economy():
    """Criterion 13: one weight-aware run costs <= 1/(0.8 k) of k fixed-weight runs."""
    k = 5
    settings = dict(epochs=3, batch_size=16, batches_per_epoch=10, customer_count=8)
    t0 = time.perf_counter()
    train(TrainConfig(weight_mode="random", seed=77, **settings))
    t_wa = time.perf_counter() - t0
    t_fixed = 0.0
    for i in range(k):
        w1 = i / (k - 1)
        t0 = time.perf_counter()
        train(TrainConfig(weight_mode="fixed", fixed_weights=(w1, 1.0 - w1),
                          seed=78 + i, **settings))
        t_fixed += time.perf_counter() - t0
    ratio = t_wa / t_fixed
    assert ratio <= 1.0 / (0.8 * k), f"wall ratio {ratio:.3f} > {1/(0.8*k):.3f}"


def test_c14_reproducibility(tmp_path):
    """Criterion 14: fixed seed + --reproducible gives byte-identical files."""
    from movrptw.cli import main

    def run(*args):
        return main([str(a) for a in args])

    ckpt = tmp_path / "model.ckpt"
    assert run("train", "--customers", 5, "--epochs", 2, "--batch-size", 8,
               "--batches-per-epoch", 4, "--seed", 5, "--reproducible",
               "--out", ckpt) == 0

    outputs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        d.mkdir()
        assert run("gen", "--customers", 5, "--seed", 5, "--reproducible",
                   "--out", d / "inst.json") == 0
        code = run("pipeline", "--instance", d / "inst.json", "--checkpoint", ckpt,
                   "--generations", 20, "--population", 12, "--seed", 5,
                   "--reproducible", "--out-dir", d / "run")
        assert code in (0, 2)
        outputs.append(d)
    a, b = outputs
    assert (a / "inst.json").read_bytes() == (b / "inst.json").read_bytes()
    names = sorted(p.name for p in (a / "run").iterdir())
    assert names == sorted(p.name for p in (b / "run").iterdir())
    for name in names:
        assert (a / "run" / name).read_bytes() == (b / "run" / name).read_bytes(), name
