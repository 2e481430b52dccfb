#!/usr/bin/env python
# std-lib imports
import math
from typing import Tuple

# 3 party imports
import numpy as np

# project imports
from simic.core import functional as F
from simic.core.tensor import ShapeError, Tensor
from simic.model.layers import Linear, Module, he_uniform


def _check_inputs(query: Tensor, keys: Tensor, values: Tensor) -> None:
    if query.ndim != 2 or keys.ndim != 3 or values.ndim != 3:
        raise ShapeError(f"attention expects (N, d) query and (N, P, d) keys/values, got "
                         f"{query.shape}, {keys.shape}, {values.shape}")
    if keys.shape[:2] != values.shape[:2] or keys.shape[0] != query.shape[0]:
        raise ShapeError(f"attention: batch/position sizes differ: {query.shape}, {keys.shape}, {values.shape}")
    if keys.shape[1] == 0:
        raise ShapeError("attention over zero positions")


def additive_scores(query: Tensor, keys: Tensor, w_query: Tensor, w_key: Tensor, context: Tensor) -> Tensor:
    """
    u^T tanh(W_q q + W_k k_j) for every position j.

    Args:
        query (Tensor): (N, d).
        keys (Tensor): (N, P, d).
        w_query (Tensor): (d_att, d).
        w_key (Tensor): (d_att, d).
        context (Tensor): the learnable context vector u, (d_att,).

    Returns:
        Tensor: (N, P) unnormalized scores.
    """
    projected_query = F.linear(query, w_query)
    projected_query = F.reshape(projected_query, (query.shape[0], 1, projected_query.shape[1]))
    projected_keys = F.linear(keys, w_key)
    return F.matmul(F.tanh(F.add(projected_query, projected_keys)), context)


def scaled_dot_product_attention(query: Tensor, keys: Tensor, values: Tensor) -> Tuple[Tensor, Tensor]:
    """
    softmax(q K^T / sqrt(d_k)) V over the last two axes.

    Args:
        query (Tensor): (..., Q, d_k).
        keys (Tensor): (..., P, d_k).
        values (Tensor): (..., P, d_v).

    Returns:
        Tuple[Tensor, Tensor]: attended values (..., Q, d_v) and weights (..., Q, P).
    """
    if query.shape[-1] != keys.shape[-1] or keys.shape[-2] != values.shape[-2]:
        raise ShapeError(f"scaled dot-product attention: incompatible shapes {query.shape}, "
                         f"{keys.shape}, {values.shape}")
    axes = tuple(range(keys.ndim - 2)) + (keys.ndim - 1, keys.ndim - 2)
    scores = F.matmul(query, F.transpose(keys, axes))
    scores = F.mul(scores, Tensor(1.0 / math.sqrt(query.shape[-1])))
    weights = F.softmax(scores)
    return F.matmul(weights, values), weights


class AdditiveAttention(Module):
    """Single-query additive attention; weights come back as (N, 1, P)."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.w_query = he_uniform(rng, (dim, dim), dim)
        self.w_key = he_uniform(rng, (dim, dim), dim)
        self.context = he_uniform(rng, (dim,), dim)

    def forward(self, query: Tensor, keys: Tensor, values: Tensor) -> Tuple[Tensor, Tensor]:
        _check_inputs(query, keys, values)
        n, positions, _ = keys.shape
        weights = F.softmax(additive_scores(query, keys, self.w_query, self.w_key, self.context))
        weights = F.reshape(weights, (n, 1, positions))
        attended = F.matmul(weights, values)
        return F.reshape(attended, (n, values.shape[2])), weights


class MultiHeadAttention(Module):
    """
    Scaled dot-product attention of one query per sample over P positions.

    The query, keys and values are projected, split into `heads` slices of
    size d / heads, attended per head with a 1/sqrt(d_head) scale, concatenated
    and passed through an output projection. Weights come back as (N, h, P).
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"embed_dim {dim} is not divisible by heads {heads}")
        self.dim, self.heads = dim, heads
        self.query_proj = Linear(dim, dim, rng)
        self.key_proj = Linear(dim, dim, rng)
        self.value_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)

    def _split_heads(self, x: Tensor) -> Tensor:
        n, length, _ = x.shape
        x = F.reshape(x, (n, length, self.heads, self.dim // self.heads))
        return F.transpose(x, (0, 2, 1, 3))

    def forward(self, query: Tensor, keys: Tensor, values: Tensor) -> Tuple[Tensor, Tensor]:
        _check_inputs(query, keys, values)
        if query.shape[1] != self.dim or keys.shape[2] != self.dim or values.shape[2] != self.dim:
            raise ShapeError(f"multi-head attention expects feature size {self.dim}, got "
                             f"{query.shape}, {keys.shape}, {values.shape}")
        n = query.shape[0]
        q = self._split_heads(F.reshape(self.query_proj(query), (n, 1, self.dim)))
        k = self._split_heads(self.key_proj(keys))
        v = self._split_heads(self.value_proj(values))
        attended, weights = scaled_dot_product_attention(q, k, v)
        attended = F.reshape(F.transpose(attended, (0, 2, 1, 3)), (n, self.dim))
        return self.out_proj(attended), F.reshape(weights, (n, self.heads, keys.shape[1]))
