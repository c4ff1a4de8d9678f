"""Full model parameter bundle and the sample -> ball-point embedding path."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from . import encoder as enc
from . import geometry as geo


class ModelParams:
    """Every trainable quantity, in a fixed declared order.

    Declared order (used by the optimizer, gradcheck, and the model blob):
    per-modality encoder params in modality order, cross-modal attention,
    gating, residual block, then the curvature reparameterization rho.
    """

    def __init__(self, modality_configs, embed_dim=32, heads=2, dropout_rate=0.1,
                 pool="mean", space="hyperbolic", alpha_init=1.0,
                 alpha_trainable=True, seed=0):
        if space not in ("hyperbolic", "euclidean"):
            raise ValueError(f"unknown embedding space {space!r}")
        rng = np.random.default_rng(seed)
        self.modality_configs = list(modality_configs)
        self.embed_dim = embed_dim
        self.heads = heads
        self.pool = pool
        self.space = space
        self.encoders = {
            cfg.name: enc.EncoderParams(rng, cfg, embed_dim, heads, dropout_rate)
            for cfg in self.modality_configs
        }
        self.cross = enc.CrossModalParams(rng, embed_dim, heads)
        self.gating = enc.GatingParams(rng, embed_dim)
        self.residual = geo.ResidualBlockParams(embed_dim)
        self.curvature = geo.CurvatureParam(alpha_init, trainable=alpha_trainable)

    def state_parameters(self):
        """All parameters in declared order, trainable or not."""
        out = []
        for cfg in self.modality_configs:
            out += self.encoders[cfg.name].named_parameters(f"enc.{cfg.name}")
        out += self.cross.named_parameters("cross")
        out += self.gating.named_parameters("gating")
        out += self.residual.named_parameters("residual")
        out.append(("curvature.rho", self.curvature.rho))
        return out

    def trainable_parameters(self):
        return [(n, p) for n, p in self.state_parameters() if p.requires_grad]

    def all_finite(self):
        return all(np.all(np.isfinite(p.data)) for _, p in self.state_parameters())


def fuse(batch, model, train=False, rng=None):
    """Run the encoder + cross-attention + gating stages.

    batch: dict modality name -> (S, L, d_m) array. Returns a FusedEmbedding
    with h of shape (S, d').
    """
    embs = []
    for cfg in model.modality_configs:
        if cfg.name not in batch:
            raise KeyError(f"batch is missing modality '{cfg.name}'")
        embs.append(
            enc.encode_modality(batch[cfg.name], model.encoders[cfg.name],
                                train=train, rng=rng, pool=model.pool)
        )
    stack = T.stack(embs, axis=1)  # (S, M, d')
    refined = enc.cross_modal_attention(stack, model.cross)
    return enc.gate_fuse(refined, model.gating)


def embed_batch(batch, model, train=False, rng=None):
    """Embed a batch of samples; (S, d') ball points in hyperbolic mode.

    In euclidean baseline mode the fused representation is returned as-is
    (no projection, no residual hyperbolic block).
    """
    fused = fuse(batch, model, train=train, rng=rng)
    if model.space == "euclidean":
        return fused.h
    alpha = model.curvature.alpha()
    y = geo.project(fused.h, alpha)
    out = geo.residual_hyperbolic_block(y, model.residual, alpha)
    # ball closure is asserted on every embedding produced, training included
    norms = np.sqrt((out.data * out.data).sum(axis=-1))
    if np.any(norms > geo.MAX_NORM + 1e-12):
        raise geo.BallViolation(f"embedding escaped the ball margin: max norm {norms.max()}")
    return out
