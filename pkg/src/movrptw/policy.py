"""Weight-conditioned transformer policy: vertex encoder, weight embedding, tour decoder.

The encoder embeds depot and customer features through separate projections
and L identical attention layers (multi-head attention, skip + batch norm,
feed-forward, skip + batch norm). A per-step context (graph embedding,
current-vertex embedding, weight-module output) is decoded into vertex
probabilities via a multi-head glimpse followed by a clipped single-head
compatibility and a masked softmax.

All kernels operate on a leading batch axis; the single-state helpers wrap
them with B = 1.
"""

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import nn
from .core import Instance

if TYPE_CHECKING:
    from .env import MdpState, WeightVector

DEPOT_FEATURES = 3    # x, y, horizon
CUSTOMER_FEATURES = 8  # x, y, E, e, l, L, demand, service


@dataclass(frozen=True)
class PolicyConfig:
    embed_dim: int = 128
    n_layers: int = 3
    n_heads: int = 8
    ff_hidden: int = 512
    clip: float = 10.0
    mask_value: float = -999999.0
    coord_scale: float = 100.0

    def __post_init__(self):
        if self.embed_dim % self.n_heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.n_heads}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads


@dataclass(frozen=True)
class EncodedGraph:
    """Final node embeddings plus their mean as the graph embedding."""

    node_embeddings: np.ndarray  # (n_vertices, d)
    graph_embedding: np.ndarray  # (d,)


def init_policy(config: PolicyConfig, rng: np.random.Generator,
                dtype=np.float32) -> nn.ParamStore:
    """Fresh parameter store for the policy network."""
    d = config.embed_dim
    ff = config.ff_hidden
    store = nn.ParamStore(dtype=dtype)

    def lin(name, out_dim, in_dim, bias=True):
        store.add_param(f"{name}.w", nn.uniform_init(rng, (out_dim, in_dim), in_dim, dtype))
        if bias:
            store.add_param(f"{name}.b", nn.uniform_init(rng, (out_dim,), in_dim, dtype))

    lin("embed.depot", d, DEPOT_FEATURES)
    lin("embed.cust", d, CUSTOMER_FEATURES)
    for layer in range(config.n_layers):
        p = f"enc{layer}"
        lin(f"{p}.att.q", d, d, bias=False)
        lin(f"{p}.att.k", d, d, bias=False)
        lin(f"{p}.att.v", d, d, bias=False)
        lin(f"{p}.att.o", d, d, bias=False)
        for bn in ("bn1", "bn2"):
            store.add_param(f"{p}.{bn}.gamma", np.ones(d, dtype=dtype))
            store.add_param(f"{p}.{bn}.beta", np.zeros(d, dtype=dtype))
            store.add_buffer(f"{p}.{bn}.mean", np.zeros(d, dtype=dtype))
            store.add_buffer(f"{p}.{bn}.var", np.ones(d, dtype=dtype))
        lin(f"{p}.ff1", ff, d)
        lin(f"{p}.ff2", d, ff)
    lin("wemb.in", d, 4)
    lin("wemb.ff1", ff, d)
    lin("wemb.ff2", d, ff)
    lin("dec.q", d, 3 * d, bias=False)
    lin("dec.k", d, d, bias=False)
    lin("dec.v", d, d, bias=False)
    return store


def instance_features(instance: Instance, config: PolicyConfig):
    """Feature-scaled raw inputs: depot (3,), customers (h, 8)."""
    L0 = instance.depot.horizon
    cs = config.coord_scale
    depot = np.array([instance.depot.coord[0] / cs, instance.depot.coord[1] / cs, 1.0])
    cust = np.stack([
        instance.coords[1:, 0] / cs,
        instance.coords[1:, 1] / cs,
        instance.E[1:] / L0,
        instance.e[1:] / L0,
        instance.l[1:] / L0,
        instance.L[1:] / L0,
        instance.demand[1:] / instance.fleet.capacity,
        instance.service[1:] / L0,
    ], axis=1)
    return depot, cust


def embed_vertices_batch(depot_feats: nn.Tensor, cust_feats: nn.Tensor,
                         store: nn.ParamStore) -> nn.Tensor:
    """(B,1,3) and (B,h,8) -> initial embeddings (B,h+1,d)."""
    h_depot = nn.linear(depot_feats, store["embed.depot.w"], store["embed.depot.b"])
    h_cust = nn.linear(cust_feats, store["embed.cust.w"], store["embed.cust.b"])
    return nn.concat([h_depot, h_cust], axis=1)


def _split_heads(x: nn.Tensor, n_heads: int) -> nn.Tensor:
    B, N, D = x.shape
    return nn.permute(nn.reshape(x, (B, N, n_heads, D // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: nn.Tensor) -> nn.Tensor:
    B, H, N, dk = x.shape
    return nn.reshape(nn.permute(x, (0, 2, 1, 3)), (B, N, H * dk))


def _mha(x: nn.Tensor, store: nn.ParamStore, prefix: str, config: PolicyConfig) -> nn.Tensor:
    q = _split_heads(nn.linear(x, store[f"{prefix}.q.w"]), config.n_heads)
    k = _split_heads(nn.linear(x, store[f"{prefix}.k.w"]), config.n_heads)
    v = _split_heads(nn.linear(x, store[f"{prefix}.v.w"]), config.n_heads)
    att = nn.scale(nn.matmul(q, nn.permute(k, (0, 1, 3, 2))), 1.0 / np.sqrt(config.head_dim))
    out = nn.matmul(nn.softmax(att, axis=-1), v)
    return nn.linear(_merge_heads(out), store[f"{prefix}.o.w"])


def _ff(x: nn.Tensor, store: nn.ParamStore, p1: str, p2: str) -> nn.Tensor:
    hidden = nn.relu(nn.linear(x, store[f"{p1}.w"], store[f"{p1}.b"]))
    return nn.linear(hidden, store[f"{p2}.w"], store[f"{p2}.b"])


def encode_batch(h0: nn.Tensor, store: nn.ParamStore, config: PolicyConfig,
                 bn_mode: str = "infer", update_stats: bool = False):
    """Run the L encoder layers; returns (node embeddings (B,N,d), graph (B,d))."""
    h = h0
    for layer in range(config.n_layers):
        p = f"enc{layer}"
        a = _mha(h, store, f"{p}.att", config)
        h_hat = nn.batch_norm(nn.add(h, a), store[f"{p}.bn1.gamma"], store[f"{p}.bn1.beta"],
                              store.buffers[f"{p}.bn1.mean"], store.buffers[f"{p}.bn1.var"],
                              mode=bn_mode, update_stats=update_stats)
        f = _ff(h_hat, store, f"{p}.ff1", f"{p}.ff2")
        h = nn.batch_norm(nn.add(h_hat, f), store[f"{p}.bn2.gamma"], store[f"{p}.bn2.beta"],
                          store.buffers[f"{p}.bn2.mean"], store.buffers[f"{p}.bn2.var"],
                          mode=bn_mode, update_stats=update_stats)
    graph = nn.mean(h, axis=1)
    return h, graph


def embed_weights_batch(vehicle_feats: nn.Tensor, store: nn.ParamStore) -> nn.Tensor:
    """(B,4) scaled [load, time, w1, w2] -> weight-module output (B,d)."""
    x = nn.linear(vehicle_feats, store["wemb.in.w"], store["wemb.in.b"])
    return _ff(x, store, "wemb.ff1", "wemb.ff2")


def decoder_keys(nodes: nn.Tensor, store: nn.ParamStore):
    """Per-episode constants of the decoder: keys and values over all vertices."""
    return (nn.linear(nodes, store["dec.k.w"]), nn.linear(nodes, store["dec.v.w"]))


def decode_step_batch(graph: nn.Tensor, current_emb: nn.Tensor, weight_emb: nn.Tensor,
                      keys: nn.Tensor, values: nn.Tensor, mask: np.ndarray,
                      store: nn.ParamStore, config: PolicyConfig) -> nn.Tensor:
    """One decoding step: context -> glimpse -> clipped compatibility -> probabilities."""
    H, dk = config.n_heads, config.head_dim
    context = nn.concat([graph, current_emb, weight_emb], axis=-1)  # (B, 3d)
    q = nn.linear(context, store["dec.q.w"])                         # (B, d)
    B = q.shape[0]
    qh = nn.permute(nn.reshape(q, (B, 1, H, dk)), (0, 2, 1, 3))      # (B,H,1,dk)
    kh = _split_heads(keys, H)
    vh = _split_heads(values, H)
    att = nn.scale(nn.matmul(qh, nn.permute(kh, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
    glimpse = _merge_heads(nn.matmul(nn.softmax(att, axis=-1), vh))  # (B,1,d)
    compat = nn.matmul(keys, nn.permute(glimpse, (0, 2, 1)))         # (B,N,1)
    compat = nn.reshape(compat, (B, keys.shape[1]))
    logits = nn.scale(nn.tanh(nn.scale(compat, 1.0 / np.sqrt(dk))), config.clip)
    return nn.masked_softmax(logits, mask, config.mask_value)


# single-state wrappers -------------------------------------------------------

def embed_vertices(instance: Instance, store: nn.ParamStore,
                   config: PolicyConfig) -> np.ndarray:
    """Initial embeddings h0 for one instance, shape (h+1, d)."""
    depot, cust = instance_features(instance, config)
    dt = store.dtype
    out = embed_vertices_batch(nn.as_tensor(depot[None, None, :], dt),
                               nn.as_tensor(cust[None], dt), store)
    return out.data[0]


def encode(h0: np.ndarray, store: nn.ParamStore, config: PolicyConfig,
           bn_mode: str = "infer") -> EncodedGraph:
    """Encode one instance's initial embeddings."""
    nodes, graph = encode_batch(nn.as_tensor(h0[None]), store, config,
                                bn_mode=bn_mode, update_stats=False)
    return EncodedGraph(node_embeddings=nodes.data[0], graph_embedding=graph.data[0])


def vehicle_features(state: "MdpState", instance: Instance) -> np.ndarray:
    return np.array([state.load / instance.fleet.capacity,
                     state.traveled_time / instance.depot.horizon,
                     state.weights.w1, state.weights.w2])


def embed_weights(state: "MdpState", instance: Instance, store: nn.ParamStore) -> np.ndarray:
    """Weight-module output o_t for one state."""
    feats = vehicle_features(state, instance)[None]
    return embed_weights_batch(nn.as_tensor(feats, store.dtype), store).data[0]


def decode_step(encoded: EncodedGraph, state: "MdpState", mask: np.ndarray,
                instance: Instance, store: nn.ParamStore,
                config: PolicyConfig) -> np.ndarray:
    """Probability vector over vertices for one state."""
    dt = store.dtype
    nodes = nn.as_tensor(encoded.node_embeddings[None], dt)
    graph = nn.as_tensor(encoded.graph_embedding[None], dt)
    keys, values = decoder_keys(nodes, store)
    current = nn.as_tensor(encoded.node_embeddings[state.current_vertex][None], dt)
    wemb = embed_weights_batch(nn.as_tensor(vehicle_features(state, instance)[None], dt), store)
    probs = decode_step_batch(graph, current, wemb, keys, values, mask[None], store, config)
    return probs.data[0]


def select_action(probs: np.ndarray, mode: str, rng: np.random.Generator | None = None) -> int:
    """Draw from the categorical distribution, or argmax with lowest-index ties."""
    if mode == "greedy":
        return int(np.argmax(probs))
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        cum = np.cumsum(probs.astype(np.float64))
        r = rng.random() * cum[-1]
        return int(np.searchsorted(cum, r, side="right").clip(0, len(probs) - 1))
    raise ValueError(f"unknown selection mode {mode!r}")


class NeuralPolicy:
    """Policy-protocol adapter for env.rollout (inference mode, running BN stats)."""

    def __init__(self, store: nn.ParamStore, config: PolicyConfig | None = None):
        self.store = store
        self.config = config or PolicyConfig()

    def begin_episode(self, instance: Instance, weights: "WeightVector"):
        h0 = embed_vertices(instance, self.store, self.config)
        encoded = encode(h0, self.store, self.config, bn_mode="infer")
        return (instance, encoded)

    def action_probs(self, context, state: "MdpState", mask: np.ndarray) -> np.ndarray:
        instance, encoded = context
        return decode_step(encoded, state, mask, instance, self.store, self.config)
