from __future__ import annotations

import numpy as np

from retemp import autodiff as ad
from retemp.autodiff import Tensor
from retemp.config import TrainConfig
from retemp.data import Snapshot
from retemp.decoder import (classification_loss, config_decoder_params, decoder_parameter_count,
                            score_all)
from retemp.embedding import init_entity_params, init_relation_table, input_parameter_count
from retemp.encoder import (EncoderTrace, QueryBatch, encode_sequence, encoder_parameter_count,
                            init_encoder_params)
from retemp.errors import CheckpointError
from retemp.optim import Adam


class ReTemp:
    """Parameters plus the forward pass: temporal inputs -> encoder -> decoder.

    ``rng`` drives dropout masks and rrelu slopes in training mode; it is seeded
    from ``config.seed`` so that runs are reproducible.
    """

    def __init__(self, num_entities: int, num_relations: int, num_snapshots: int,
                 config: TrainConfig):
        self.num_entities = num_entities
        self.num_relations = num_relations
        self.num_snapshots = num_snapshots
        self.config = config
        init_rng = np.random.default_rng([config.seed, 0])
        dt = config.dtype
        arrays = {}
        arrays.update(init_entity_params(init_rng, num_entities, config.dim, num_snapshots, dt,
                                         dynamic=not config.has("dynamic")))
        arrays.update(init_relation_table(init_rng, num_relations, config.dim, dt))
        arrays.update(init_encoder_params(init_rng, config.dim, config.layers, dt,
                                          skip=not config.has("skip"), attention=config.attention))
        arrays.update(config_decoder_params(init_rng, config))
        self.params: dict[str, Tensor] = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
        self.rng = np.random.default_rng([config.seed, 1])
        self.optimizer = Adam(self.params, lr=config.lr)

    # ------------------------------------------------------------ forward

    def encode(self, snapshots: list[Snapshot], batch: QueryBatch, training: bool = False,
               trace: EncoderTrace | None = None, params: dict[str, Tensor] | None = None,
               **hooks) -> Tensor:
        return encode_sequence(snapshots, batch, params or self.params, self.config,
                               training=training, rng=self.rng, trace=trace, **hooks)

    def scores(self, snapshots: list[Snapshot], batch: QueryBatch, training: bool = False,
               trace: EncoderTrace | None = None, params: dict[str, Tensor] | None = None,
               **hooks) -> Tensor:
        """Raw candidate scores for every query of the batch (Q x |E|)."""
        p = params or self.params
        states = self.encode(snapshots, batch, training, trace, p, **hooks)
        h_e = ad.gather_rows(states, batch.queries[:, 0])
        h_r = ad.gather_rows(p["relation"], batch.queries[:, 1])
        return score_all(h_e, h_r, states, p, kind=self.config.decoder,
                         dropout=self.config.dropout, training=training, rng=self.rng)

    def batch_loss(self, snapshots: list[Snapshot], batch: QueryBatch, training: bool = True,
                   trace: EncoderTrace | None = None,
                   params: dict[str, Tensor] | None = None) -> Tensor:
        scores = self.scores(snapshots, batch, training, trace, params)
        return classification_loss(scores, batch.queries[:, 2])

    # ------------------------------------------------------------ bookkeeping

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise CheckpointError(f"parameter names differ: expected {sorted(self.params)}, "
                                  f"got {sorted(state)}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise CheckpointError(f"parameter {k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=self.config.dtype)
            self.params[k].zero_grad()

    def parameter_counts(self) -> dict:
        """Structural counts from the allocated arrays, beside the closed-form formulas."""
        size = lambda prefix: sum(p.data.size for k, p in self.params.items()  # noqa: E731
                                  if k.startswith(prefix))
        cfg = self.config
        d, E, R = cfg.dim, self.num_entities, self.num_relations
        counts = {
            "input": size("entity.") + size("relation"),
            "entity": size("entity."),
            "relation": size("relation"),
            "encoder": size("encoder."),
            "compgcn": size("encoder.agg.") + size("encoder.self."),
            "skip_flow": size("encoder.attn"),
            "decoder": size("decoder."),
            "total": sum(p.data.size for p in self.params.values()),
        }
        dyn = not cfg.has("dynamic")
        counts["formula"] = {
            **{f"input.{k}": v for k, v in input_parameter_count(d, E, R, dyn).items()},
            **{f"encoder.{k}": v for k, v in encoder_parameter_count(
                d, cfg.layers, not cfg.has("skip"), cfg.attention).items()},
            "decoder.closed_form": decoder_parameter_count(
                d, cfg.channels, cfg.kernel_size, cfg.decoder_bias, cfg.decoder)["closed_form"],
        }
        counts["notes"] = [
            "decoder count is dominated by the (ch*d) x d fully connected map; the closed form "
            "ch(2ke+d+2) does not include it",
            f"compgcn weights are per layer ({cfg.layers} layers x 2d^2)",
        ]
        return counts
