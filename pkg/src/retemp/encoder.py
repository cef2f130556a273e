"""Sequential multi-relational graph encoder with relation-aware skip information flow.

Per history timestamp: ``layers`` CompGCN-style layers over that snapshot, then
an additive attention over the layer output and the inputs of the earlier
timestamps in the window. Attention scores are d-vectors (W_a is d x d) and the
softmax runs per coordinate across positions; ``attention="scalar"`` switches
to one score per entity (W_a is d x 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from retemp import autodiff as ad
from retemp.autodiff import Tensor
from retemp.config import TrainConfig
from retemp.data import Snapshot
from retemp.embedding import entity_inputs, xavier_uniform
from retemp.errors import TrainingError


@dataclass
class QueryBatch:
    """Queries (subject, relation, gold object) at one timestamp for one phase.

    ``phase=None`` mixes both phases; only the single-phase leakage baseline
    uses that.
    """

    timestamp: int
    phase: int | None
    queries: np.ndarray

    @classmethod
    def from_facts(cls, facts: np.ndarray, timestamp: int, phase: int | None) -> "QueryBatch":
        mask = facts[:, 3] == timestamp
        if phase is not None:
            mask &= facts[:, 4] == phase
        return cls(timestamp, phase, facts[mask][:, :3].copy())

    def __len__(self) -> int:
        return len(self.queries)

    @property
    def pool_pairs(self) -> np.ndarray:
        """Unique (subject, relation) pairs, i.e. the relation set R_t^e of each subject."""
        if len(self.queries) == 0:
            return np.zeros((0, 2), dtype=np.int64)
        return np.unique(self.queries[:, :2], axis=0)

    def relation_pool(self, entity: int) -> set[int]:
        pairs = self.pool_pairs
        return set(pairs[pairs[:, 0] == entity, 1].tolist())


@dataclass
class EncoderTrace:
    """Instrumentation filled by :func:`encode_sequence` when passed in."""

    pools: list[tuple[int, int | None, np.ndarray]] = field(default_factory=list)
    betas: list[np.ndarray] = field(default_factory=list)


def init_encoder_params(rng: np.random.Generator, dim: int, layers: int, dtype=np.float64,
                        skip: bool = True, attention: str = "vector") -> dict[str, np.ndarray]:
    params = {}
    for l in range(layers):
        params[f"encoder.agg.{l}"] = xavier_uniform(rng, (dim, dim), dtype)
        params[f"encoder.self.{l}"] = xavier_uniform(rng, (dim, dim), dtype)
    if skip:
        params["encoder.attn"] = xavier_uniform(rng, (dim, dim if attention == "vector" else 1), dtype)
    return params


def compose(h_entity: Tensor, h_relation: Tensor, kind: str) -> Tensor:
    if kind == "sum":
        return ad.add(h_entity, h_relation)
    if kind == "mult":
        return ad.mul(h_entity, h_relation)
    raise ValueError(f"unknown composition {kind!r}")


def compgcn_layer(snapshot: Snapshot, h_in: Tensor, relations: Tensor, w_agg: Tensor,
                  w_self: Tensor, composition: str = "sum", lower: float = 1 / 8,
                  upper: float = 1 / 3, dropout: float = 0.0, training: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """rrelu(mean over N_t^e of f(h_n, h_r) @ W_agg + h_e @ W_self), then dropout.

    Entities without incoming edges get only the self-loop term.
    """
    pre = ad.matmul(h_in, w_self)
    if len(snapshot):
        msgs = compose(ad.gather_rows(h_in, snapshot.src),
                       ad.gather_rows(relations, snapshot.rel), composition)
        agg = ad.segment_mean(msgs, snapshot.dst, h_in.shape[0])
        pre = ad.add(ad.matmul(agg, w_agg), pre)
    out = ad.rrelu(pre, lower, upper, training=training, rng=rng)
    return ad.dropout(out, dropout, training=training, rng=rng)


def pool_query_relations(batch: QueryBatch, relations: Tensor, num_entities: int) -> Tensor:
    """Mean relation embedding per query subject (|E| x d); zero rows for non-subjects."""
    pairs = batch.pool_pairs
    return ad.segment_mean(ad.gather_rows(relations, pairs[:, 1]), pairs[:, 0], num_entities)


def pool_query_relation(entity: int, batch: QueryBatch, relations: Tensor) -> Tensor:
    pairs = batch.pool_pairs
    rels = pairs[pairs[:, 0] == entity, 1]
    if len(rels) == 0:
        return Tensor(np.zeros(relations.shape[1], dtype=relations.dtype))
    return ad.mean_rows(ad.gather_rows(relations, rels))


def skip_attention(current: Tensor, previous: list[Tensor], pooled: Tensor | None,
                   w_attn: Tensor, force_beta0: bool = False,
                   trace: EncoderTrace | None = None) -> Tensor:
    """Weighted sum of the layer output and previous inputs (most recent first).

    Position 0 (the layer output) has a fixed zero score; position j >= 1 scores
    ``(previous[j-1] + pooled) @ w_attn``. ``pooled=None`` drops the relation
    term. ``force_beta0`` replaces the weights with (1, 0, ..., 0).
    """
    if not previous:
        return current
    width = w_attn.shape[1]
    zero = Tensor(np.zeros((current.shape[0], width), dtype=current.dtype))
    scores = [zero]
    for h in previous:
        key = h if pooled is None else ad.add(h, pooled)
        scores.append(ad.matmul(key, w_attn))
    beta = ad.softmax_over_positions(ad.stack(scores))
    if force_beta0:
        onehot = np.zeros_like(beta.data)
        onehot[0] = 1
        beta = Tensor(onehot)
    if trace is not None:
        trace.betas.append(beta.data.copy())
    values = ad.stack([current, *previous])
    return ad.sum(ad.mul(beta, values), axis=0)


def encode_sequence(snapshots: list[Snapshot], batch: QueryBatch, params: dict[str, Tensor],
                    config: TrainConfig, training: bool = False,
                    rng: np.random.Generator | None = None, trace: EncoderTrace | None = None,
                    zero_pools: bool = False, force_beta0: bool = False) -> Tensor:
    """Entity states at the query timestamp (|E| x d) from the preceding history window.

    The window covers snapshots ``max(0, t_q-k) .. t_q-1``; at its first
    timestamp the explicit temporal inputs enter, after that each step's output
    is the next step's input.
    """
    t_q = batch.timestamp
    if t_q < 1:
        raise TrainingError(f"no history available before timestamp {t_q}")
    if t_q > len(snapshots):
        raise TrainingError(f"timestamp {t_q} beyond the {len(snapshots)} known snapshots")
    start = max(0, t_q - config.history_length)
    relations = params["relation"]
    h = entity_inputs(params, start, static_only=config.has("dynamic"))
    num_entities = h.shape[0]

    skip = not config.has("skip")
    pooled = None
    if skip and not config.has("relation-aware"):
        if zero_pools:
            pooled = Tensor(np.zeros((num_entities, h.shape[1]), dtype=h.dtype))
        else:
            pooled = pool_query_relations(batch, relations, num_entities)
    if trace is not None:
        trace.pools.append((t_q, batch.phase, batch.pool_pairs.copy()))

    previous: list[Tensor] = []
    for t in range(start, t_q):
        out = h
        for l in range(config.layers):
            out = compgcn_layer(snapshots[t], out, relations, params[f"encoder.agg.{l}"],
                                params[f"encoder.self.{l}"], config.composition,
                                config.rrelu_lower, config.rrelu_upper, config.dropout,
                                training=training, rng=rng)
        if skip:
            out = skip_attention(out, previous[::-1], pooled, params["encoder.attn"],
                                 force_beta0=force_beta0, trace=trace)
        previous.append(h)
        h = out
    return h


def encoder_parameter_count(dim: int, layers: int, skip: bool = True,
                            attention: str = "vector") -> dict[str, int]:
    return {"compgcn": 2 * dim * dim * layers,
            "skip_flow": (dim * dim if attention == "vector" else dim) if skip else 0}

