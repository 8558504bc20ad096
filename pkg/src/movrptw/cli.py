"""Command-line orchestration of the full pipeline.

Subcommands: gen, train, sweep, evolve, pipeline, compare, eval, grad-check.
Exit codes: 0 success, 1 usage or config error, 2 quality-gate failure
(infeasible output or failed self-check), 3 internal error. A JSON config
file can preset any flag; explicit flags win. --reproducible zeroes
wall-clock fields so fixed-seed runs are byte-identical.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import nn
from .core import RoutePlan, check_feasible
from .dataio import (FrontRecord, GeneratorConfig, generate_instance,
                     load_instance_file, read_front, write_front, write_instance)
from .env import WeightVector, estimate_bounds
from .moea import (EvolutionConfig, evolve, hypervolume_2d, pareto_front,
                   random_population, seed_population)
from .policy import PolicyConfig, init_policy
from .training import TrainConfig, train, weight_sweep

DATA_DIR_ENV = "MOVRPTW_DATA_DIR"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_QUALITY = 2
EXIT_INTERNAL = 3


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _resolve(path):
    if path is None or os.path.exists(path) or os.path.isabs(path):
        return path
    base = os.environ.get(DATA_DIR_ENV)
    if base and os.path.exists(os.path.join(base, path)):
        return os.path.join(base, path)
    return path


def _load_config_defaults(argv):
    """Pull --config FILE out of argv and return its JSON dict."""
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            with open(argv[i + 1]) as fh:
                cfg = json.load(fh)
            if not isinstance(cfg, dict):
                raise CliError("--config must hold a JSON object")
            return cfg
        if a.startswith("--config="):
            with open(a.split("=", 1)[1]) as fh:
                return json.load(fh)
    return {}


def _add_common(p):
    p.add_argument("--config", help="JSON file presetting any flag of this command")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1,
                   help="worker cap; this build vectorizes instead of threading")
    p.add_argument("--reproducible", action="store_true",
                   help="deterministic mode: byte-identical outputs per seed")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="movrptw",
        description="Multiobjective VRPTW: weight-conditioned neural routing + NSGA-II")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random training instance")
    _add_common(p)
    p.add_argument("--customers", type=int, default=10)
    p.add_argument("--capacity", type=float, default=200.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the weight-aware policy")
    _add_common(p)
    p.add_argument("--customers", type=int, default=10)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--batches-per-epoch", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lr-decay", type=float, default=1e-6)
    p.add_argument("--weight-mode", choices=["random", "fixed"], default="random")
    p.add_argument("--w1", type=float, default=0.5)
    p.add_argument("--w2", type=float, default=0.5)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSON-lines training log")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("sweep", help="greedy rollouts across the weight grid")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--truncate", type=int)
    p.add_argument("--interval", type=float, default=0.02)
    p.add_argument("--out", required=True, help="front file (.csv or .json)")
    p.add_argument("--allow-size-mismatch", action="store_true")

    p = sub.add_parser("evolve", help="run NSGA-II on an instance")
    _add_common(p)
    p.add_argument("--instance", required=True)
    p.add_argument("--truncate", type=int)
    p.add_argument("--generations", type=int, default=500)
    p.add_argument("--population", type=int, default=51)
    p.add_argument("--seed-front", help="front file to seed from (default: random init)")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="JSON-lines per-generation metrics")

    p = sub.add_parser("pipeline", help="sweep, seed, evolve, write both fronts")
    _add_common(p)
    p.add_argument("--instance", required=True)
    p.add_argument("--truncate", type=int)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--generations", type=int, default=500)
    p.add_argument("--population", type=int, default=51)
    p.add_argument("--interval", type=float, default=0.02)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--allow-size-mismatch", action="store_true")

    p = sub.add_parser("compare", help="seeded vs random-init NSGA-II at several budgets")
    _add_common(p)
    p.add_argument("--instance", required=True)
    p.add_argument("--truncate", type=int)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--budgets", default="200,500", help="comma-separated generation budgets")
    p.add_argument("--population", type=int, default=51)
    p.add_argument("--out", required=True)
    p.add_argument("--allow-size-mismatch", action="store_true")

    p = sub.add_parser("eval", help="feasibility-check a solution front file")
    _add_common(p)
    p.add_argument("--instance", required=True)
    p.add_argument("--truncate", type=int)
    p.add_argument("--front", required=True)

    p = sub.add_parser("grad-check", help="finite-difference self-test of the network")
    _add_common(p)
    p.add_argument("--customers", type=int, default=5)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-3)

    return parser


def _merge_config(args, defaults):
    for key, value in defaults.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise CliError(f"config key {key!r} is not a flag of this command")
        if _flag_is_default(args, attr):
            setattr(args, attr, value)
    return args


_PARSER_DEFAULTS = {}


def _flag_is_default(args, attr):
    return getattr(args, attr) == _PARSER_DEFAULTS.get((args.command, attr))


def _capture_defaults(parser):
    for action in parser._subparsers._group_actions[0].choices.items():
        name, sp = action
        for a in sp._actions:
            if a.dest not in ("help", "command"):
                _PARSER_DEFAULTS[(name, a.dest)] = a.default


def _load_checkpoint_for(args):
    store, meta = nn.load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    return store, meta


def _require_file(path, what):
    path = _resolve(path)
    if not os.path.exists(path):
        raise CliError(f"{what} not found: {path}")
    return path


def _check_size(meta, instance, allow_mismatch):
    trained = meta.get("customer_count")
    if trained is not None and trained != instance.h and not allow_mismatch:
        raise CliError(
            f"checkpoint was trained on {trained}-customer instances but the "
            f"instance has {instance.h}; pass --allow-size-mismatch to override")


def _sweep_records(results):
    return [FrontRecord(f1=r.objectives.f1, f2=min(1.0, max(0.0, r.objectives.f2)),
                        routes=r.plan.routes, provenance="wadrl",
                        weights=(r.weights.w1, r.weights.w2))
            for r in results if r.success]


def _front_records(front_members):
    return [FrontRecord(f1=ind.objectives.f1, f2=min(1.0, max(0.0, ind.objectives.f2)),
                        routes=ind.plan.routes, provenance="nsga2")
            for ind in front_members]


def _front_format(path):
    return "json" if str(path).endswith(".json") else "csv"


def _write_metrics(path, metrics, reproducible):
    with open(path, "w") as fh:
        for m in metrics:
            fh.write(json.dumps({
                "generation": m.generation,
                "hypervolume": round(m.hypervolume, 6),
                "feasible_count": m.feasible_count,
                "best_f1": round(m.best_f1, 6),
                "best_f2": round(m.best_f2, 6),
                "seconds": 0.0 if reproducible else round(m.seconds, 4),
            }) + "\n")


def cmd_gen(args):
    cfg = GeneratorConfig(customer_count=args.customers, capacity=args.capacity,
                          seed=args.seed)
    write_instance(generate_instance(cfg), args.out)
    print(f"wrote {args.customers}-customer instance to {args.out}")
    return EXIT_OK


def cmd_train(args):
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                       batches_per_epoch=args.batches_per_epoch, lr=args.lr,
                       lr_decay=args.lr_decay, customer_count=args.customers,
                       weight_mode=args.weight_mode, fixed_weights=(args.w1, args.w2),
                       seed=args.seed)
    result = train(tcfg, out_path=args.out, log_path=args.log,
                   resume=_require_file(args.resume, "checkpoint") if args.resume else None,
                   reproducible=args.reproducible,
                   progress=lambda r: print(
                       f"epoch {r.epoch}: reward {r.mean_reward:.4f} "
                       f"success {r.success_rate:.2f}"
                       f"{' [baseline refreshed]' if r.baseline_refreshed else ''}"))
    print(f"trained {len(result.epochs)} epochs; checkpoint at {args.out}")
    return EXIT_OK


def cmd_sweep(args):
    store, meta = _load_checkpoint_for(args)
    instance = load_instance_file(_require_file(args.instance, "instance"),
                                  truncate=args.truncate)
    _check_size(meta, instance, args.allow_size_mismatch)
    results = weight_sweep(store, instance, grid_interval=args.interval)
    records = _sweep_records(results)
    if not records:
        print("no weight produced a feasible plan", file=sys.stderr)
        return EXIT_QUALITY
    write_front(records, args.out, fmt=_front_format(args.out))
    print(f"{len(records)}/{len(results)} weights feasible; front at {args.out}")
    return EXIT_OK


def _evolved(instance, init_pop, generations, population, seed, reproducible):
    cfg = EvolutionConfig(population_size=population, generations=generations, seed=seed)
    rng = np.random.default_rng(seed)
    return evolve(instance, init_pop, cfg, rng, record_seconds=not reproducible)


def cmd_evolve(args):
    instance = load_instance_file(_require_file(args.instance, "instance"),
                                  truncate=args.truncate)
    cfg = EvolutionConfig(population_size=args.population, generations=args.generations,
                          seed=args.seed)
    rng = np.random.default_rng(args.seed)
    if args.seed_front:
        records = read_front(_require_file(args.seed_front, "seed front"))
        sweep_like = [_RecordAsResult(instance, rec) for rec in records]
        init_pop = seed_population(instance, sweep_like, cfg, rng)
    else:
        init_pop = random_population(instance, cfg, rng)
    result = _evolved(instance, init_pop, args.generations, args.population,
                      args.seed, args.reproducible)
    front = result.front()
    if not front:
        print("evolution ended with no feasible front member", file=sys.stderr)
        return EXIT_QUALITY
    write_front(_front_records(front), args.out, fmt=_front_format(args.out))
    if args.metrics:
        _write_metrics(args.metrics, result.metrics, args.reproducible)
    print(f"final front size {len(front)}; hypervolume {result.metrics[-1].hypervolume:.4f}")
    return EXIT_OK


class _RecordAsResult:
    """Adapter letting seed_population consume records from a front file."""

    def __init__(self, instance, record):
        self.plan = RoutePlan(record.routes)
        self.success = check_feasible(instance, self.plan).feasible

    @property
    def routes(self):
        return self.plan.routes


def cmd_pipeline(args):
    store, meta = _load_checkpoint_for(args)
    instance = load_instance_file(_require_file(args.instance, "instance"),
                                  truncate=args.truncate)
    _check_size(meta, instance, args.allow_size_mismatch)
    os.makedirs(args.out_dir, exist_ok=True)

    results = weight_sweep(store, instance, grid_interval=args.interval)
    seed_records = _sweep_records(results)
    cfg = EvolutionConfig(population_size=args.population, generations=args.generations,
                          seed=args.seed)
    rng = np.random.default_rng(args.seed)
    init_pop = seed_population(instance, results, cfg, rng)
    if seed_records:
        write_front(seed_records, os.path.join(args.out_dir, "seed_front.csv"))
    evo = evolve(instance, init_pop, cfg, rng, record_seconds=not args.reproducible)
    front = evo.front()
    _write_metrics(os.path.join(args.out_dir, "metrics.jsonl"), evo.metrics,
                   args.reproducible)
    if not front:
        print("final front has no feasible member", file=sys.stderr)
        return EXIT_QUALITY
    bad = [ind for ind in front if not check_feasible(instance, ind.plan).feasible]
    if bad:
        print(f"{len(bad)} final-front members fail the feasibility check", file=sys.stderr)
        return EXIT_QUALITY
    write_front(_front_records(front), os.path.join(args.out_dir, "final_front.csv"))
    print(f"pipeline done: {len(seed_records)} seeds, final front {len(front)}; "
          f"outputs in {args.out_dir}")
    return EXIT_OK


def cmd_compare(args):
    store, meta = _load_checkpoint_for(args)
    instance = load_instance_file(_require_file(args.instance, "instance"),
                                  truncate=args.truncate)
    _check_size(meta, instance, args.allow_size_mismatch)
    budgets = [int(b) for b in args.budgets.split(",") if b]
    sweep_results = weight_sweep(store, instance)

    rows = []
    fronts = {}
    for mode in ("wadrl", "random"):
        for budget in budgets:
            cfg = EvolutionConfig(population_size=args.population, generations=budget,
                                  seed=args.seed,
                                  init_mode="wadrl" if mode == "wadrl" else "random")
            rng = np.random.default_rng(args.seed)
            t0 = time.perf_counter()
            if mode == "wadrl":
                init_pop = seed_population(instance, sweep_results, cfg, rng)
            else:
                init_pop = random_population(instance, cfg, rng)
            evo = evolve(instance, init_pop, cfg, rng, record_seconds=not args.reproducible)
            seconds = 0.0 if args.reproducible else time.perf_counter() - t0
            front = evo.front()
            fronts[(mode, budget)] = front
            rows.append({"mode": mode, "budget": budget, "front": front,
                         "seconds": seconds})

    all_f1 = [ind.objectives.f1 for row in rows for ind in row["front"]]
    if not all_f1:
        print("no feasible solutions in any compared run", file=sys.stderr)
        return EXIT_QUALITY
    reference = (1.05 * max(all_f1), 0.0)
    with open(args.out, "w") as fh:
        fh.write("mode,budget,f1_mean,f2_mean,seconds,hypervolume\n")
        for row in rows:
            front = row["front"]
            f1s = [i.objectives.f1 for i in front]
            f2s = [i.objectives.f2 for i in front]
            hv = hypervolume_2d([(a, b) for a, b in zip(f1s, f2s)], reference) if front else 0.0
            fh.write(f"{row['mode']},{row['budget']},{np.mean(f1s):.6f},"
                     f"{np.mean(f2s):.6f},{row['seconds']:.4f},{hv:.6f}\n")
    print(f"comparison table at {args.out}")
    return EXIT_OK


def cmd_eval(args):
    instance = load_instance_file(_require_file(args.instance, "instance"),
                                  truncate=args.truncate)
    records = read_front(_require_file(args.front, "front"))
    infeasible = 0
    for k, rec in enumerate(records):
        verdict = check_feasible(instance, RoutePlan(rec.routes))
        if not verdict.feasible:
            infeasible += 1
            kinds = sorted({v.kind for v in verdict.violations})
            print(f"record {k}: infeasible ({', '.join(kinds)})")
    print(f"{len(records) - infeasible}/{len(records)} records feasible")
    return EXIT_OK if infeasible == 0 else EXIT_QUALITY


def cmd_grad_check(args):
    from .gradtest import policy_logprob_check
    report = policy_logprob_check(customers=args.customers, n_params=args.samples,
                                  tol=args.tol, seed=args.seed)
    print(f"max relative gradient error {report.max_rel_error:.2e} over "
          f"{len(report.coords)} sampled parameters (tol {report.tol:g})")
    return EXIT_OK if report.passed else EXIT_QUALITY


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "evolve": cmd_evolve,
    "pipeline": cmd_pipeline,
    "compare": cmd_compare,
    "eval": cmd_eval,
    "grad-check": cmd_grad_check,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    _capture_defaults(parser)
    try:
        defaults = _load_config_defaults(argv)
        args = parser.parse_args(argv)
        _merge_config(args, defaults)
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FileNotFoundError, ValueError, nn.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - internal failure path
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
