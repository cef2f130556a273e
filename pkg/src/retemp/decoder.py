"""Candidate scoring (ConvTransE or DistMult) and the classification loss."""

from __future__ import annotations

import math

import numpy as np

from retemp import autodiff as ad
from retemp.autodiff import Tensor
from retemp.config import TrainConfig
from retemp.embedding import xavier_uniform
from retemp.errors import ShapeError


def init_decoder_params(rng: np.random.Generator, dim: int, channels: int, kernel_size: int,
                        dtype=np.float64, bias: bool = True,
                        kind: str = "convtranse") -> dict[str, np.ndarray]:
    if kind == "distmult":
        return {}
    bound = math.sqrt(6.0 / (2 * kernel_size + channels * kernel_size))
    params = {
        "decoder.kernel": rng.uniform(-bound, bound, (channels, 2, kernel_size)).astype(dtype),
        "decoder.fc": xavier_uniform(rng, (channels * dim, dim), dtype),
    }
    if bias:
        params["decoder.kernel_bias"] = np.zeros((channels, 1), dtype=dtype)
        params["decoder.fc_bias"] = np.zeros((1, dim), dtype=dtype)
    return params


def query_representation(h_e: Tensor, h_r: Tensor, params: dict[str, Tensor], dropout: float = 0.0,
                         training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """FC(flatten(conv1d([h_e; h_r]))) for a batch of queries (Q x d)."""
    kernel = params["decoder.kernel"]
    x = ad.stack([h_e, h_r], axis=1)
    fmap = ad.conv1d(x, kernel, padding=(kernel.shape[2] - 1) // 2)
    if "decoder.kernel_bias" in params:
        fmap = ad.add(fmap, params["decoder.kernel_bias"])
    hidden = ad.matmul(ad.flatten(fmap, 1), params["decoder.fc"])
    if "decoder.fc_bias" in params:
        hidden = ad.add(hidden, params["decoder.fc_bias"])
    return ad.dropout(hidden, dropout, training=training, rng=rng)


def score_all(h_e: Tensor, h_r: Tensor, candidates: Tensor, params: dict[str, Tensor],
              kind: str = "convtranse", dropout: float = 0.0, training: bool = False,
              rng: np.random.Generator | None = None) -> Tensor:
    """Raw scores of every candidate entity.

    ``h_e`` and ``h_r`` are d-vectors (one query) or Q x d (a batch); the result
    is |E| or Q x |E| accordingly.
    """
    single = h_e.data.ndim == 1
    if single:
        h_e, h_r = ad.reshape(h_e, (1, -1)), ad.reshape(h_r, (1, -1))
    if h_e.shape != h_r.shape or h_e.shape[1] != candidates.shape[1]:
        raise ShapeError("score_all", h_e.shape, h_r.shape, candidates.shape)
    if kind == "distmult":
        query = ad.mul(h_e, h_r)
    elif kind == "convtranse":
        query = query_representation(h_e, h_r, params, dropout, training, rng)
    else:
        raise ValueError(f"unknown decoder {kind!r}")
    scores = ad.matmul(query, ad.transpose(candidates))
    return ad.reshape(scores, (-1,)) if single else scores


def classification_loss(scores: Tensor, gold) -> Tensor:
    """Negative log-likelihood of the gold entity under softmax(scores); batch mean."""
    return ad.cross_entropy(scores, gold)


def decoder_parameter_count(dim: int, channels: int, kernel_size: int, bias: bool = True,
                            kind: str = "convtranse") -> dict[str, int]:
    """Count as implemented, next to the closed-form ch(2ke+d+2) quoted for ConvTransE."""
    if kind == "distmult":
        implemented = 0
    else:
        implemented = channels * 2 * kernel_size + channels * dim * dim
        if bias:
            implemented += channels + dim
    return {"implemented": implemented,
            "closed_form": channels * (2 * kernel_size + dim + 2)}


def config_decoder_params(rng, config: TrainConfig) -> dict[str, np.ndarray]:
    return init_decoder_params(rng, config.dim, config.channels, config.kernel_size, config.dtype,
                               config.decoder_bias, config.decoder)
