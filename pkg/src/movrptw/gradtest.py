"""Full-policy gradient self-test: episode log-probability vs finite differences."""

import numpy as np

from . import nn
from .core import Instance
from .dataio import GeneratorConfig, generate_instance
from .env import WeightVector, feasible_mask, reset, rollout, step
from .policy import (NeuralPolicy, PolicyConfig, decode_step_batch, decoder_keys,
                     embed_vertices_batch, embed_weights_batch, encode_batch,
                     init_policy, instance_features, vehicle_features)


def episode_logprob_fn(instance: Instance, pcfg: PolicyConfig, actions,
                       weights: WeightVector):
    """Build fn(store) -> scalar log-probability of a frozen action sequence.

    The masks, current vertices and vehicle features are replayed once from
    the environment; fn then re-runs the full differentiable forward pass
    (batch norm in train mode, statistics frozen) for any parameter values.
    """
    depot, cust = instance_features(instance, pcfg)
    state = reset(instance, weights)
    masks, feats, currents = [], [], []
    for action in actions[1:]:
        m = feasible_mask(state, instance)
        masks.append(m)
        feats.append(vehicle_features(state, instance))
        currents.append(state.current_vertex)
        state = step(state, action, instance, mask=m)
    mask_arr = np.stack(masks)
    feat_arr = np.stack(feats)
    current_arr = np.array(currents)
    act_arr = np.array(actions[1:])

    def fn(store: nn.ParamStore):
        dt = store.dtype
        h0 = embed_vertices_batch(nn.as_tensor(depot[None, None, :], dt),
                                  nn.as_tensor(cust[None], dt), store)
        nodes, graph = encode_batch(h0, store, pcfg, bn_mode="train", update_stats=False)
        keys, values = decoder_keys(nodes, store)
        total = None
        for t in range(len(act_arr)):
            wemb = embed_weights_batch(nn.as_tensor(feat_arr[t][None].astype(dt)), store)
            cur_emb = nn.gather_nodes(nodes, current_arr[t:t + 1])
            probs = decode_step_batch(graph, cur_emb, wemb, keys, values,
                                      mask_arr[t][None], store, pcfg)
            lp = nn.log(nn.gather_cols(probs, act_arr[t:t + 1]))
            total = lp if total is None else nn.add(total, lp)
        return nn.sum_(total)

    return fn


def policy_logprob_check(customers: int = 5, n_params: int = 100, tol: float = 1e-3,
                         seed: int = 0) -> nn.GradCheckReport:
    """grad_check over the log-probability of a sampled episode on a small instance."""
    instance = generate_instance(GeneratorConfig(customer_count=customers, seed=seed))
    pcfg = PolicyConfig()
    store = init_policy(pcfg, np.random.default_rng(seed))
    policy = NeuralPolicy(store, pcfg)
    weights = WeightVector(0.5, 0.5)
    episode = None
    for attempt in range(50):
        episode = rollout(policy, instance, weights, mode="sample",
                          rng=np.random.default_rng(seed + attempt))
        if len(episode.actions) >= 4:
            break
    fn = episode_logprob_fn(instance, pcfg, episode.actions, weights)
    return nn.grad_check(fn, store, n_params=n_params, tol=tol,
                         rng=np.random.default_rng(seed))
