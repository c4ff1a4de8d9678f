"""Modality encoders, cross-modal attention, and the adaptive gating fuser.

Each modality sequence (L, d_m) passes through conv(3) -> conv(5) -> dense +
ReLU + dropout -> multi-head self-attention with a residual add -> layer norm,
then mean pooling over time, yielding one d'-dimensional embedding. The M
modality embeddings are refined by a second self-attention over the modality
axis and mixed by a softmax gating network into the fused representation h.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class ModalityConfig:
    name: str
    input_dim: int
    seq_len: int

    def __post_init__(self):
        if self.input_dim < 1 or self.seq_len < 1:
            raise ValueError(f"bad modality config: {self}")


def _glorot(rng, fan_in, fan_out, shape):
    return rng.standard_normal(shape) * np.sqrt(2.0 / (fan_in + fan_out))


class AttentionParams:
    """Shared-projection multi-head self-attention weights.

    The output projection starts at zero so the residual path is the identity
    at initialization.
    """

    def __init__(self, rng, dim, heads):
        if dim % heads != 0:
            raise ValueError(f"head count {heads} must divide embedding dim {dim}")
        self.heads = heads
        self.dim = dim
        self.wq = Tensor(_glorot(rng, dim, dim, (dim, dim)), requires_grad=True)
        self.wk = Tensor(_glorot(rng, dim, dim, (dim, dim)), requires_grad=True)
        self.wv = Tensor(_glorot(rng, dim, dim, (dim, dim)), requires_grad=True)
        self.wo = Tensor(np.zeros((dim, dim)), requires_grad=True)
        self.bo = Tensor(np.zeros(dim), requires_grad=True)

    def named_parameters(self, prefix):
        return [
            (f"{prefix}.wq", self.wq),
            (f"{prefix}.wk", self.wk),
            (f"{prefix}.wv", self.wv),
            (f"{prefix}.wo", self.wo),
            (f"{prefix}.bo", self.bo),
        ]


def multi_head_self_attention(x, p):
    """Self-attention over the middle axis of a (batch, tokens, dim) tensor."""
    batch, n_tok, dim = x.data.shape
    h, dh = p.heads, p.dim // p.heads

    def split(t):
        return T.transpose(T.reshape(t, (batch, n_tok, h, dh)), (0, 2, 1, 3))

    # scale q up front: cheaper than scaling the (tokens x tokens) scores
    q = T.mul(split(T.matmul(x, p.wq)), 1.0 / np.sqrt(dh))
    k = split(T.matmul(x, p.wk))
    v = split(T.matmul(x, p.wv))
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2)))
    attn = T.softmax(scores, axis=-1)
    mixed = T.transpose(T.matmul(attn, v), (0, 2, 1, 3))
    mixed = T.reshape(mixed, (batch, n_tok, dim))
    return T.add(T.matmul(mixed, p.wo), p.bo)


class EncoderParams:
    """All trainable weights of one modality encoder."""

    def __init__(self, rng, config, embed_dim, heads, dropout_rate):
        d_m, dp = config.input_dim, embed_dim
        self.config = config
        self.dropout_rate = dropout_rate
        self.conv1_w = Tensor(_glorot(rng, 3 * d_m, dp, (3, d_m, dp)), requires_grad=True)
        self.conv1_b = Tensor(np.zeros(dp), requires_grad=True)
        self.conv2_w = Tensor(_glorot(rng, 5 * dp, dp, (5, dp, dp)), requires_grad=True)
        self.conv2_b = Tensor(np.zeros(dp), requires_grad=True)
        self.dense_w = Tensor(_glorot(rng, dp, dp, (dp, dp)), requires_grad=True)
        self.dense_b = Tensor(np.zeros(dp), requires_grad=True)
        self.attn = AttentionParams(rng, dp, heads)
        self.ln_gain = Tensor(np.ones(dp), requires_grad=True)
        self.ln_bias = Tensor(np.zeros(dp), requires_grad=True)

    def named_parameters(self, prefix):
        out = [
            (f"{prefix}.conv1_w", self.conv1_w),
            (f"{prefix}.conv1_b", self.conv1_b),
            (f"{prefix}.conv2_w", self.conv2_w),
            (f"{prefix}.conv2_b", self.conv2_b),
            (f"{prefix}.dense_w", self.dense_w),
            (f"{prefix}.dense_b", self.dense_b),
        ]
        out += self.attn.named_parameters(f"{prefix}.attn")
        out += [(f"{prefix}.ln_gain", self.ln_gain), (f"{prefix}.ln_bias", self.ln_bias)]
        return out


def encode_modality(x, params, train=False, rng=None, pool="mean"):
    """Encode (batch, L, d_m) sequences into (batch, d') embeddings.

    A single (L, d_m) sample is accepted and returns (d',). Dropout is active
    only when train is True (rng required then).
    """
    x = T.as_tensor(x)
    single = x.data.ndim == 2
    if single:
        x = T.reshape(x, (1,) + x.data.shape)
    cfg = params.config
    if x.data.shape[1:] != (cfg.seq_len, cfg.input_dim):
        raise T.ShapeError(
            f"modality '{cfg.name}' expects (L={cfg.seq_len}, d={cfg.input_dim}), got {x.data.shape[1:]}"
        )
    c1 = T.relu(T.conv1d(x, params.conv1_w, params.conv1_b))
    c2 = T.relu(T.conv1d(c1, params.conv2_w, params.conv2_b))
    feats = T.relu(T.add(T.matmul(c2, params.dense_w), params.dense_b))
    if train and params.dropout_rate > 0:
        feats = T.dropout(feats, params.dropout_rate, rng)
    attn_out = multi_head_self_attention(feats, params.attn)
    z = T.layer_norm(T.add(feats, attn_out), params.ln_gain, params.ln_bias)
    if pool == "mean":
        emb = T.tmean(z, axis=-2)
    elif pool == "last":
        emb = T.getitem(z, (slice(None), -1))
    else:
        raise ValueError(f"unknown pool mode {pool!r}")
    return T.reshape(emb, (-1,)) if single else emb


class CrossModalParams:
    """Self-attention over the M modality tokens, with its own layer norm."""

    def __init__(self, rng, dim, heads):
        self.attn = AttentionParams(rng, dim, heads)
        self.ln_gain = Tensor(np.ones(dim), requires_grad=True)
        self.ln_bias = Tensor(np.zeros(dim), requires_grad=True)

    def named_parameters(self, prefix="cross"):
        out = self.attn.named_parameters(f"{prefix}.attn")
        out += [(f"{prefix}.ln_gain", self.ln_gain), (f"{prefix}.ln_bias", self.ln_bias)]
        return out


def cross_modal_attention(stack, params):
    """Refine a (batch, M, d') modality stack; output has the same shape."""
    attn_out = multi_head_self_attention(stack, params.attn)
    return T.layer_norm(T.add(stack, attn_out), params.ln_gain, params.ln_bias)


class GatingParams:
    """Score matrix mapping a d' embedding to one scalar modality score."""

    def __init__(self, rng, dim):
        self.w = Tensor(_glorot(rng, dim, 1, (dim, 1)), requires_grad=True)

    def named_parameters(self, prefix="gating"):
        return [(f"{prefix}.w", self.w)]


@dataclass
class FusedEmbedding:
    h: Tensor  # (batch, d')
    modality_weights: Tensor  # (batch, M), rows sum to 1


def gate_fuse(refined, gating):
    """Softmax-gate the refined (batch, M, d') stack into h = sum_m w_m h_m."""
    batch, m, dim = refined.data.shape
    scores = T.reshape(T.matmul(refined, gating.w), (batch, m))
    w = T.softmax(scores, axis=-1)
    h = T.tsum(T.mul(T.reshape(w, (batch, m, 1)), refined), axis=1)
    return FusedEmbedding(h=h, modality_weights=w)
