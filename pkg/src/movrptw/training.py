"""Policy-gradient training with random weight sampling and a greedy-rollout baseline.

Each batch rolls out the sampling policy and a frozen greedy baseline on the
same fresh instances and weights; the advantage (policy reward minus baseline
reward) weights the log-probability gradient. After every epoch a one-sided
paired t-test decides whether the baseline is refreshed. A fixed-weight mode
trains the traditional single-scalarization baseline.
"""

import json
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from . import nn
from .core import Instance
from .dataio import GeneratorConfig, generate_instance
from .env import (EpisodeResult, NormalizationBounds, VecEnv, WeightVector,
                  estimate_bounds)
from .policy import (PolicyConfig, decode_step_batch, decoder_keys,
                     embed_vertices_batch, embed_weights_batch, encode_batch,
                     init_policy, instance_features)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 64
    batches_per_epoch: int = 100
    lr: float = 1e-4
    lr_decay: float = 1e-6
    customer_count: int = 10
    capacity: float = 200.0
    service_time: float = 10.0
    weight_mode: str = "random"  # "random" (uniform simplex) or "fixed"
    fixed_weights: tuple[float, float] = (0.5, 0.5)
    dirichlet_alpha: tuple[float, float] = (1.0, 1.0)
    seed: int = 0
    significance: float = 0.05

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (the t-test needs variance)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.weight_mode not in ("random", "fixed"):
            raise ValueError(f"unknown weight_mode {self.weight_mode!r}")


def sample_weights(rng: np.random.Generator, mode: str = "random",
                   fixed: tuple[float, float] = (0.5, 0.5),
                   alpha: tuple[float, float] = (1.0, 1.0)) -> WeightVector:
    """Random-simplex (Dirichlet) weights, or the configured fixed pair."""
    if mode == "fixed":
        return WeightVector(*fixed)
    w = rng.dirichlet(alpha)
    return WeightVector(float(w[0]), float(w[1]))


def batch_episodes(store: nn.ParamStore, pcfg: PolicyConfig, instances,
                   weight_vecs, mode: str, bn_mode: str,
                   rng: np.random.Generator | None = None,
                   collect_logp: bool = False, update_stats: bool = False):
    """Run a lockstep batch of episodes; returns (VecEnv, episode log-prob Tensor or None).

    Must run inside an nn.Tape when collect_logp is set. Finished episodes
    idle at the depot with probability pinned to one and contribute nothing
    further to the log-probability.
    """
    dt = store.dtype
    B = len(instances)
    depot = np.stack([instance_features(inst, pcfg)[0] for inst in instances])[:, None, :]
    cust = np.stack([instance_features(inst, pcfg)[1] for inst in instances])
    h0 = embed_vertices_batch(nn.as_tensor(depot, dt), nn.as_tensor(cust, dt), store)
    nodes, graph = encode_batch(h0, store, pcfg, bn_mode=bn_mode, update_stats=update_stats)
    keys, values = decoder_keys(nodes, store)

    env = VecEnv(instances)
    W = np.array([[w.w1, w.w2] for w in weight_vecs])
    active = np.ones(B, dtype=bool)
    logp_total = None
    max_steps = 2 * env.n + 2
    for _ in range(max_steps):
        mask = env.masks()
        active &= ~mask.all(axis=1)
        if not active.any():
            break
        m = mask.copy()
        m[~active] = True
        m[~active, 0] = False  # idle rows sit at the depot with probability 1
        feats = np.stack([env.load / env.capacity, env.tau / env.L0, W[:, 0], W[:, 1]], axis=1)
        wemb = embed_weights_batch(nn.as_tensor(feats.astype(dt)), store)
        cur_emb = nn.gather_nodes(nodes, env.cur.copy())
        probs = decode_step_batch(graph, cur_emb, wemb, keys, values, m, store, pcfg)
        pd = probs.data
        if mode == "greedy":
            acts = pd.argmax(axis=1)
        else:
            cum = np.cumsum(pd.astype(np.float64), axis=1)
            r = rng.random(B) * cum[:, -1]
            acts = (cum > r[:, None]).argmax(axis=1)
        acts = np.where(active, acts, 0)
        if collect_logp:
            term = nn.mul(nn.log(nn.gather_cols(probs, acts)), active.astype(dt))
            logp_total = term if logp_total is None else nn.add(logp_total, term)
        env.step(acts, active)
    if active.any():
        raise TrainingError("episode exceeded the step bound; masking is broken")
    return env, logp_total


@dataclass
class BatchStats:
    policy_rewards: np.ndarray
    baseline_rewards: np.ndarray
    success_rate: float
    loss: float


def train_batch(store: nn.ParamStore, baseline: nn.ParamStore, instances,
                weight_vecs, bounds_list, tcfg: TrainConfig, pcfg: PolicyConfig,
                rng: np.random.Generator) -> BatchStats:
    """One gradient step: sampled rollouts vs greedy baseline on shared instances."""
    env_b, _ = batch_episodes(baseline, pcfg, instances, weight_vecs,
                              mode="greedy", bn_mode="infer")
    base_results = env_b.results(bounds_list, weight_vecs)
    base_rewards = np.array([r.reward for r in base_results])

    with nn.Tape() as tape:
        env_p, logp = batch_episodes(store, pcfg, instances, weight_vecs,
                                     mode="sample", bn_mode="train", rng=rng,
                                     collect_logp=True, update_stats=True)
        results = env_p.results(bounds_list, weight_vecs)
        rewards = np.array([r.reward for r in results])
        advantage = (rewards - base_rewards).astype(store.dtype)
        loss = nn.scale(nn.sum_(nn.mul(logp, advantage)), -1.0 / len(instances))
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            raise TrainingError(
                f"non-finite loss {loss_val} (rewards {rewards[:4]}..., "
                f"baseline {base_rewards[:4]}...)")
        tape.backward(loss)
    store.adam_step(tcfg.lr, tcfg.lr_decay)
    success = float(np.mean([r.success for r in results]))
    return BatchStats(policy_rewards=rewards, baseline_rewards=base_rewards,
                      success_rate=success, loss=loss_val)


def baseline_update(store: nn.ParamStore, baseline: nn.ParamStore,
                    policy_rewards: np.ndarray, baseline_rewards: np.ndarray,
                    significance: float = 0.05) -> bool:
    """Refresh the baseline when the policy beats it (one-sided paired t-test)."""
    if len(policy_rewards) < 2:
        return False
    diffs = np.asarray(policy_rewards, dtype=float) - np.asarray(baseline_rewards, dtype=float)
    if np.all(diffs == 0.0):
        return False
    if np.std(diffs) == 0.0:
        refresh = float(np.mean(diffs)) > 0.0
    else:
        result = stats.ttest_rel(policy_rewards, baseline_rewards, alternative="greater")
        refresh = bool(result.pvalue < significance)
    if refresh:
        baseline.load_values(store)
    return refresh


@dataclass
class EpochRecord:
    epoch: int
    mean_reward: float
    baseline_reward: float
    success_rate: float
    baseline_refreshed: bool
    seconds: float


@dataclass
class TrainResult:
    store: nn.ParamStore
    baseline: nn.ParamStore
    epochs: list[EpochRecord]
    config: TrainConfig


def _instance_batch(tcfg: TrainConfig, rng: np.random.Generator):
    instances = []
    for _ in range(tcfg.batch_size):
        gcfg = GeneratorConfig(customer_count=tcfg.customer_count,
                               capacity=tcfg.capacity, service_time=tcfg.service_time,
                               seed=int(rng.integers(0, 2 ** 62)))
        instances.append(generate_instance(gcfg))
    return instances


def train(tcfg: TrainConfig, pcfg: PolicyConfig | None = None, out_path=None,
          log_path=None, resume=None, reproducible: bool = False,
          progress=None) -> TrainResult:
    """Run the full training loop; optionally checkpoint every epoch and resume.

    Checkpoints: <out_path> holds the policy (with optimizer state),
    <out_path>.baseline the baseline network. The sidecar carries the config,
    finished epoch count and the generator state so a resumed run continues
    the exact stream.
    """
    pcfg = pcfg or PolicyConfig()
    rng = np.random.default_rng(tcfg.seed)
    start_epoch = 0
    if resume is not None:
        store, meta = nn.load_checkpoint(resume)
        try:
            baseline, _ = nn.load_checkpoint(str(resume) + ".baseline")
        except (FileNotFoundError, nn.CheckpointError):
            baseline = store.copy()
        start_epoch = int(meta.get("epoch", 0))
        if "rng_state" in meta:
            rng.bit_generator.state = _decode_rng_state(meta["rng_state"])
    else:
        store = init_policy(pcfg, rng)
        baseline = store.copy()

    records = []
    log_fh = open(log_path, "a") if log_path else None
    try:
        for epoch in range(start_epoch, tcfg.epochs):
            t0 = time.perf_counter()
            epoch_policy, epoch_base = [], []
            success_rates = []
            for _ in range(tcfg.batches_per_epoch):
                instances = _instance_batch(tcfg, rng)
                weight_vecs = [sample_weights(rng, tcfg.weight_mode, tcfg.fixed_weights,
                                              tcfg.dirichlet_alpha)
                               for _ in range(tcfg.batch_size)]
                bounds_list = [estimate_bounds(inst) for inst in instances]
                bstats = train_batch(store, baseline, instances, weight_vecs,
                                     bounds_list, tcfg, pcfg, rng)
                epoch_policy.append(bstats.policy_rewards)
                epoch_base.append(bstats.baseline_rewards)
                success_rates.append(bstats.success_rate)
            store.assert_finite()
            refreshed = baseline_update(store, baseline,
                                        np.concatenate(epoch_policy),
                                        np.concatenate(epoch_base),
                                        tcfg.significance)
            seconds = 0.0 if reproducible else time.perf_counter() - t0
            rec = EpochRecord(epoch=epoch,
                              mean_reward=float(np.concatenate(epoch_policy).mean()),
                              baseline_reward=float(np.concatenate(epoch_base).mean()),
                              success_rate=float(np.mean(success_rates)),
                              baseline_refreshed=refreshed, seconds=seconds)
            records.append(rec)
            if progress:
                progress(rec)
            if log_fh:
                log_fh.write(json.dumps({
                    "epoch": rec.epoch, "mean_reward": rec.mean_reward,
                    "baseline_reward": rec.baseline_reward,
                    "success_rate": rec.success_rate,
                    "baseline_refreshed": rec.baseline_refreshed,
                    "seconds": round(rec.seconds, 3),
                }) + "\n")
                log_fh.flush()
            if out_path:
                meta = {"config": asdict(tcfg), "epoch": epoch + 1,
                        "seed": tcfg.seed, "customer_count": tcfg.customer_count,
                        "rng_state": _encode_rng_state(rng.bit_generator.state)}
                nn.save_checkpoint(out_path, store, meta)
                nn.save_checkpoint(str(out_path) + ".baseline", baseline,
                                   {"epoch": epoch + 1}, include_optimizer=False)
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(store=store, baseline=baseline, epochs=records, config=tcfg)


def _encode_rng_state(state):
    return json.loads(json.dumps(state, default=int))


def _decode_rng_state(state):
    return state


def weight_grid(interval: float = 0.02) -> list[WeightVector]:
    """[(1.00, 0.00), (0.98, 0.02), ..., (0.00, 1.00)] for the given spacing."""
    steps = round(1.0 / interval)
    return [WeightVector((steps - k) / steps, k / steps) for k in range(steps + 1)]


def weight_sweep(store: nn.ParamStore, instance: Instance, grid_interval: float = 0.02,
                 pcfg: PolicyConfig | None = None,
                 bounds: NormalizationBounds | None = None) -> "list[EpisodeResult]":
    """Greedy rollout at every grid weight; one EpisodeResult per subproblem."""
    pcfg = pcfg or PolicyConfig()
    grid = weight_grid(grid_interval)
    if bounds is None:
        bounds = estimate_bounds(instance)
    env, _ = batch_episodes(store, pcfg, [instance] * len(grid), grid,
                            mode="greedy", bn_mode="infer")
    return env.results([bounds] * len(grid), grid)


def greedy_rewards(store: nn.ParamStore, pcfg: PolicyConfig, instances,
                   weight_vecs, bounds_list) -> np.ndarray:
    """Greedy evaluation rewards on held-out instances (batched)."""
    env, _ = batch_episodes(store, pcfg, list(instances), list(weight_vecs),
                            mode="greedy", bn_mode="infer")
    results = env.results(list(bounds_list), list(weight_vecs))
    return np.array([r.reward for r in results])
