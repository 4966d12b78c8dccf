"""Relation-aware neighborhood aggregation.

Three one-hop attention branches run in parallel for every center entity:

* entity attention over the neighbors plus the center itself,
* relation-gated attention whose per-neighbor logits come from trainable
  relation embeddings pushed through a two-layer gate,
* semantic attention over the averaged relation-name embeddings of each
  connecting edge (neighbors only; an entity has no relation to itself).

A fully connected fusion layer maps the concatenated branch outputs to the
final entity vector. Two parameter sets of identical architecture exist at
training time: the online set (gradient-updated) and the momentum set
(moving average, never differentiated).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ShapeError

Neighborhood = list[tuple[int, tuple[int, ...]]]


@dataclass(frozen=True)
class AggregatorConfig:
    input_dim: int
    rel_name_dim: int
    num_relations: int
    head_dim: int
    fusion_dim: int
    heads: int = 1
    rel_embed_dim: int = 32
    gate_hidden_dim: int = 16
    slope: float = 0.01
    include_relation_branches: bool = True
    # contrastive temperature and the mining threshold assume unit-scale
    # embeddings; normalization is the encoder's final step
    normalize_output: bool = True

    @property
    def branch_dim(self) -> int:
        return self.heads * self.head_dim

    @property
    def fusion_input_dim(self) -> int:
        return (3 if self.include_relation_branches else 1) * self.branch_dim


class AggregatorParams:
    """All trainable weights of the three branches plus the fusion layer."""

    def __init__(self, config: AggregatorConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    @classmethod
    def init(cls, config: AggregatorConfig, rng: np.random.Generator,
             dtype=np.float32) -> "AggregatorParams":
        t: dict[str, Tensor] = {}
        for k in range(config.heads):
            t[f"en.W.{k}"] = ad.init_uniform(rng, (config.input_dim, config.head_dim), dtype)
            t[f"en.q_src.{k}"] = ad.init_uniform(rng, (config.head_dim,), dtype)
            t[f"en.q_dst.{k}"] = ad.init_uniform(rng, (config.head_dim,), dtype)
        if config.include_relation_branches:
            for k in range(config.heads):
                t[f"st.W.{k}"] = ad.init_uniform(rng, (config.input_dim, config.head_dim), dtype)
                t[f"se.W_ent.{k}"] = ad.init_uniform(rng, (config.input_dim, config.head_dim), dtype)
                t[f"se.W_rel.{k}"] = ad.init_uniform(rng, (config.rel_name_dim, config.head_dim), dtype)
                t[f"se.q_src.{k}"] = ad.init_uniform(rng, (config.head_dim,), dtype)
                t[f"se.q_dst.{k}"] = ad.init_uniform(rng, (config.head_dim,), dtype)
            t["st.rel_embed"] = ad.init_uniform(rng, (config.num_relations, config.rel_embed_dim), dtype)
            t["st.gate.W1"] = ad.init_uniform(rng, (config.rel_embed_dim, config.gate_hidden_dim), dtype)
            t["st.gate.b1"] = ad.init_uniform(rng, (config.gate_hidden_dim,), dtype)
            t["st.gate.W2"] = ad.init_uniform(rng, (config.gate_hidden_dim, 1), dtype)
            t["st.gate.b2"] = ad.init_uniform(rng, (1,), dtype)
        t["fusion.W"] = ad.init_uniform(rng, (config.fusion_input_dim, config.fusion_dim), dtype)
        t["fusion.b"] = ad.init_uniform(rng, (config.fusion_dim,), dtype)
        return cls(config, t)

    def copy(self, requires_grad: bool = False) -> "AggregatorParams":
        tensors = {
            name: Tensor(t.data.copy(), requires_grad=requires_grad)
            for name, t in self.tensors.items()
        }
        return AggregatorParams(self.config, tensors)

    def named_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + name: t.data for name, t in self.tensors.items()}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], prefix: str = "",
                    slope: float = 0.01) -> "AggregatorParams":
        """Rebuild parameters (and their config) from checkpoint tensors."""
        own = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
        if "en.W.0" not in own or "fusion.W" not in own:
            raise CheckpointError(f"checkpoint lacks aggregator tensors under {prefix!r}")
        heads = sum(1 for k in own if k.startswith("en.W."))
        with_rel = "st.rel_embed" in own
        config = AggregatorConfig(
            input_dim=own["en.W.0"].shape[0],
            rel_name_dim=own["se.W_rel.0"].shape[0] if with_rel else 0,
            num_relations=own["st.rel_embed"].shape[0] if with_rel else 0,
            head_dim=own["en.W.0"].shape[1],
            fusion_dim=own["fusion.W"].shape[1],
            heads=heads,
            rel_embed_dim=own["st.rel_embed"].shape[1] if with_rel else 0,
            gate_hidden_dim=own["st.gate.W1"].shape[1] if with_rel else 0,
            slope=slope,
            include_relation_branches=with_rel,
        )
        tensors = {name: Tensor(arr.copy(), requires_grad=False) for name, arr in own.items()}
        return cls(config, tensors)


@dataclass
class EncoderPair:
    """Online and momentum parameter sets of identical architecture."""

    online: AggregatorParams
    momentum: AggregatorParams

    @classmethod
    def create(cls, config: AggregatorConfig, rng: np.random.Generator,
               dtype=np.float32) -> "EncoderPair":
        online = AggregatorParams.init(config, rng, dtype)
        return cls(online=online, momentum=online.copy(requires_grad=False))

    def for_role(self, role: str) -> AggregatorParams:
        if role == "online":
            return self.online
        if role == "momentum":
            return self.momentum
        raise ValueError(f"unknown encoder role {role!r}")


def _attention_head(proj_center: Tensor, proj_set: Tensor, q_src: Tensor,
                    q_dst: Tensor, slope: float) -> Tensor:
    """Attention weights over the projected set: softmax of
    leakyrelu(q_src . proj_center + q_dst . proj_j)."""
    m = proj_set.shape[0]
    dst_scores = ad.reshape(ad.matmul(proj_set, ad.reshape(q_dst, (-1, 1))), (m,))
    src_score = ad.dot(ad.reshape(proj_center, (-1,)), q_src)
    return ad.softmax(ad.leaky_relu(ad.add(dst_scores, src_score), slope))


def entity_gat(features: np.ndarray, center: int, neighbors: Neighborhood,
               params: AggregatorParams) -> Tensor:
    """Entity attention branch; the attention set is the neighbors plus the
    center, so an isolated entity degenerates to self-attention weight 1."""
    cfg = params.config
    ids = [center] + [n for n, _ in neighbors]
    H = Tensor(features[ids])
    Hc = Tensor(features[center][None, :])
    head_outputs = []
    for k in range(cfg.heads):
        W = params.tensors[f"en.W.{k}"]
        proj = ad.matmul(H, W)
        proj_c = ad.matmul(Hc, W)
        alpha = _attention_head(proj_c, proj, params.tensors[f"en.q_src.{k}"],
                                params.tensors[f"en.q_dst.{k}"], cfg.slope)
        mixed = ad.matmul(ad.reshape(alpha, (1, len(ids))), proj)
        head_outputs.append(ad.leaky_relu(mixed, cfg.slope))
    return ad.reshape(ad.concat(head_outputs, axis=1), (cfg.branch_dim,))


def _edge_relation_average(rel_embed: Tensor, neighbors: Neighborhood,
                           relation_offset: int) -> Tensor:
    """Per-neighbor mean of trainable relation embeddings, differentiably:
    gather the used rows once, then mix with a constant averaging matrix."""
    used = sorted({relation_offset + r for _, rels in neighbors for r in rels})
    col = {rid: i for i, rid in enumerate(used)}
    mix = np.zeros((len(neighbors), len(used)), dtype=rel_embed.dtype)
    for j, (_, rels) in enumerate(neighbors):
        weight = 1.0 / len(rels)
        for r in rels:
            mix[j, col[relation_offset + r]] += weight
    return ad.matmul(Tensor(mix), ad.take_rows(rel_embed, used))


def relation_gated_gat(features: np.ndarray, center: int, neighbors: Neighborhood,
                       params: AggregatorParams, relation_offset: int = 0,
                       stats: dict | None = None) -> Tensor:
    """Relation-gated branch: per-neighbor logits come from the edge's
    relation embedding through a two-layer gate; the center is excluded
    from the attention set. Isolated entities yield a zero vector."""
    cfg = params.config
    if not neighbors:
        if stats is not None:
            stats["isolated"] = stats.get("isolated", 0) + 1
        return Tensor(np.zeros(cfg.branch_dim, dtype=features.dtype))
    m = len(neighbors)
    rel_avg = _edge_relation_average(params.tensors["st.rel_embed"], neighbors, relation_offset)
    hidden = ad.leaky_relu(
        ad.add(ad.matmul(rel_avg, params.tensors["st.gate.W1"]), params.tensors["st.gate.b1"]),
        cfg.slope,
    )
    gamma = ad.leaky_relu(
        ad.add(ad.matmul(hidden, params.tensors["st.gate.W2"]), params.tensors["st.gate.b2"]),
        cfg.slope,
    )
    beta = ad.softmax(ad.reshape(gamma, (m,)))
    H = Tensor(features[[n for n, _ in neighbors]])
    head_outputs = []
    for k in range(cfg.heads):
        proj = ad.matmul(H, params.tensors[f"st.W.{k}"])
        mixed = ad.matmul(ad.reshape(beta, (1, m)), proj)
        head_outputs.append(ad.leaky_relu(mixed, cfg.slope))
    return ad.reshape(ad.concat(head_outputs, axis=1), (cfg.branch_dim,))


def edge_name_average(rel_name_table: np.ndarray,
                      neighbors: Neighborhood) -> np.ndarray:
    """Constant per-neighbor average of relation-name embeddings."""
    out = np.zeros((len(neighbors), rel_name_table.shape[1]), dtype=rel_name_table.dtype)
    for j, (_, rels) in enumerate(neighbors):
        out[j] = rel_name_table[list(rels)].mean(axis=0)
    return out


def semantic_gat(features: np.ndarray, rel_name_table: np.ndarray, center: int,
                 neighbors: Neighborhood, params: AggregatorParams,
                 stats: dict | None = None) -> Tensor:
    """Semantic branch: neighbors are represented by the mean name embedding
    of their connecting relations; attention runs over neighbors only."""
    cfg = params.config
    if not neighbors:
        if stats is not None:
            stats["isolated"] = stats.get("isolated", 0) + 1
        return Tensor(np.zeros(cfg.branch_dim, dtype=features.dtype))
    m = len(neighbors)
    H_hat = Tensor(edge_name_average(rel_name_table, neighbors))
    Hc = Tensor(features[center][None, :])
    head_outputs = []
    for k in range(cfg.heads):
        proj_c = ad.matmul(Hc, params.tensors[f"se.W_ent.{k}"])
        proj_n = ad.matmul(H_hat, params.tensors[f"se.W_rel.{k}"])
        alpha = _attention_head(proj_c, proj_n, params.tensors[f"se.q_src.{k}"],
                                params.tensors[f"se.q_dst.{k}"], cfg.slope)
        mixed = ad.matmul(ad.reshape(alpha, (1, m)), proj_n)
        head_outputs.append(ad.leaky_relu(mixed, cfg.slope))
    return ad.reshape(ad.concat(head_outputs, axis=1), (cfg.branch_dim,))


def fuse_and_project(h_en: Tensor, h_st: Tensor | None, h_se: Tensor | None,
                     params: AggregatorParams) -> Tensor:
    cfg = params.config
    parts = [h_en]
    if cfg.include_relation_branches:
        parts.extend([h_st, h_se])
    x = ad.reshape(ad.concat(parts, axis=0), (1, cfg.fusion_input_dim))
    out = ad.add(ad.matmul(x, params.tensors["fusion.W"]), params.tensors["fusion.b"])
    return ad.reshape(ad.leaky_relu(out, cfg.slope), (cfg.fusion_dim,))


def encode_entity(params: AggregatorParams, features: np.ndarray,
                  rel_name_table: np.ndarray, center: int,
                  neighbors: Neighborhood, relation_offset: int = 0,
                  stats: dict | None = None) -> Tensor:
    h_en = entity_gat(features, center, neighbors, params)
    if not params.config.include_relation_branches:
        return fuse_and_project(h_en, None, None, params)
    h_st = relation_gated_gat(features, center, neighbors, params,
                              relation_offset=relation_offset, stats=stats)
    h_se = semantic_gat(features, rel_name_table, center, neighbors, params, stats=stats)
    return fuse_and_project(h_en, h_st, h_se, params)


def encode_batch(pair: EncoderPair, kg, features: np.ndarray,
                 rel_name_table: np.ndarray, ids, role: str,
                 neighbor_cap: int = 15, relation_offset: int = 0,
                 record_grad: bool | None = None,
                 neighbor_order: str = "id",
                 stats: dict | None = None) -> Tensor:
    """Encode a batch of entities as a (batch, fusion_dim) tensor.

    Gradients are only ever recorded for the online role; inference paths
    (mining, validation) pass ``record_grad=False`` to skip the tape.
    """
    from .kg import neighborhood

    params = pair.for_role(role)
    if features.shape[1] != params.config.input_dim:
        raise ShapeError(
            f"feature dim {features.shape[1]} != configured input dim {params.config.input_dim}"
        )
    record = (role == "online") if record_grad is None else (record_grad and role == "online")
    rows = []
    with _maybe_no_grad(not record):
        for e in ids:
            nbrs = neighborhood(kg, int(e), neighbor_cap, order=neighbor_order)
            rows.append(encode_entity(params, features, rel_name_table, int(e),
                                      nbrs, relation_offset, stats))
        return ad.stack_rows(rows)


def encode_entities(params: AggregatorParams, kg, features: np.ndarray,
                    rel_name_table: np.ndarray, ids, neighbor_cap: int = 15,
                    relation_offset: int = 0, neighbor_order: str = "id",
                    stats: dict | None = None) -> np.ndarray:
    """Inference-only encode of arbitrary entity ids; never records a tape."""
    from .kg import neighborhood

    out = np.zeros((len(ids), params.config.fusion_dim), dtype=features.dtype)
    with ad.no_grad():
        for i, e in enumerate(ids):
            nbrs = neighborhood(kg, int(e), neighbor_cap, order=neighbor_order)
            out[i] = encode_entity(params, features, rel_name_table, int(e),
                                   nbrs, relation_offset, stats).data
    return out


class _maybe_no_grad:
    def __init__(self, disable: bool):
        self.disable = disable
        self._cm = None

    def __enter__(self):
        if self.disable:
            self._cm = ad.no_grad()
            self._cm.__enter__()
        return self

    def __exit__(self, *exc):
        if self._cm is not None:
            return self._cm.__exit__(*exc)
        return False
