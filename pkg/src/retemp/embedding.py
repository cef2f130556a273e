"""Explicit temporal entity inputs and the static relation table.

An entity's input at absolute snapshot index t is

    proj( static_e  ++  trend_e * t + sin(2*pi * season_e * t) )

with ``proj`` a bias-free 2d -> d linear map. Relations get one time-independent
row each, inverse relations included (2|R| rows).
"""

from __future__ import annotations

import math

import numpy as np

from retemp import autodiff as ad
from retemp.autodiff import Tensor


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, int], dtype=np.float64) -> np.ndarray:
    bound = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_entity_params(rng: np.random.Generator, num_entities: int, dim: int, num_snapshots: int,
                       dtype=np.float64, dynamic: bool = True) -> dict[str, np.ndarray]:
    params = {"entity.static": xavier_uniform(rng, (num_entities, dim), dtype)}
    if dynamic:
        # trend scaled so that trend * t stays O(1) over the whole timeline
        scale = 1.0 / max(1, num_snapshots)
        params["entity.trend"] = rng.uniform(-scale, scale, (num_entities, dim)).astype(dtype)
        params["entity.season"] = xavier_uniform(rng, (num_entities, dim), dtype)
    params["entity.proj"] = xavier_uniform(rng, (2 * dim, dim), dtype)
    return params


def init_relation_table(rng: np.random.Generator, num_relations: int, dim: int,
                        dtype=np.float64) -> dict[str, np.ndarray]:
    return {"relation": xavier_uniform(rng, (2 * num_relations, dim), dtype)}


def dynamic_part(trend: Tensor, season: Tensor, t: float) -> Tensor:
    return ad.add(ad.scale(trend, float(t)), ad.sine(ad.scale(season, 2 * math.pi * float(t))))


def entity_inputs(params: dict[str, Tensor], t: int, static_only: bool = False) -> Tensor:
    """Inputs for all entities at snapshot index ``t`` (|E| x d).

    ``static_only`` (or a parameter set without trend/season weights) replaces
    the dynamic half with zeros.
    """
    static = params["entity.static"]
    if static_only or "entity.trend" not in params:
        dyn = Tensor(np.zeros_like(static.data))
    else:
        dyn = dynamic_part(params["entity.trend"], params["entity.season"], t)
    return ad.matmul(ad.concat_last_axis(static, dyn), params["entity.proj"])


def entity_input(params: dict[str, Tensor], entity: int, t: int, static_only: bool = False) -> Tensor:
    """Input vector (length d) of a single entity at snapshot index ``t``."""
    n = params["entity.static"].shape[0]
    if not 0 <= entity < n:
        raise IndexError(f"entity id {entity} out of range for {n} entities")
    rows = {k: ad.gather_rows(params[k], [entity])
            for k in ("entity.static", "entity.trend", "entity.season") if k in params}
    rows["entity.proj"] = params["entity.proj"]
    return ad.reshape(entity_inputs(rows, t, static_only), (-1,))


def entity_input_static_only(params: dict[str, Tensor], entity: int) -> Tensor:
    return entity_input(params, entity, 0, static_only=True)


def relation_embedding(params: dict[str, Tensor], relation: int) -> Tensor:
    n = params["relation"].shape[0]
    if not 0 <= relation < n:
        raise IndexError(f"relation id {relation} out of range for {n} relations (incl. inverses)")
    return ad.reshape(ad.gather_rows(params["relation"], [relation]), (-1,))


def input_parameter_count(dim: int, num_entities: int, num_relations: int,
                          dynamic: bool = True) -> dict[str, int]:
    entity = (3 if dynamic else 1) * dim * num_entities + 2 * dim * dim
    return {"entity": entity, "relation": 2 * dim * num_relations}
