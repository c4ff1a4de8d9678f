"""Poincaré ball operations: projection, distance, weighted prototypes.

Points live in the open unit ball; every constructor in this module rescales
results to norm <= 1 - BALL_MARGIN so the distance denominator (1 - |y|^2)
stays bounded away from zero. Rescaling preserves direction.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

BALL_MARGIN = 1e-5
MAX_NORM = 1.0 - BALL_MARGIN


class BallViolation(ValueError):
    """A point supposed to lie in the unit ball has norm >= 1."""


class CurvatureParam:
    """Positive trainable curvature, stored as alpha = exp(rho).

    The exp reparameterization keeps alpha > 0 under unconstrained updates.
    rho starts at log(alpha_init); with alpha_init = 1.0 that is rho = 0.
    When trainable is False, rho is excluded from the optimizer and alpha
    stays pinned (used by the fixed-curvature ablation).
    """

    def __init__(self, alpha_init=1.0, trainable=True):
        if alpha_init <= 0:
            raise ValueError(f"alpha must be positive, got {alpha_init}")
        self.rho = Tensor(np.log(alpha_init), requires_grad=trainable)
        self.trainable = trainable

    def alpha(self):
        return T.exp(self.rho)

    def value(self):
        return float(np.exp(self.rho.data))


def project(h, alpha):
    """Map a Euclidean vector into the ball: y = tanh(alpha*|h|) * h/|h|.

    h: Tensor (..., d); alpha: scalar Tensor. The zero vector maps to the
    origin (the analytic limit). Output norm is clipped to 1 - 1e-5.
    """
    n = T.l2norm(h, keepdims=True)
    # tanh(alpha*n)/n -> alpha as n -> 0; the clamp only bites at n == 0,
    # where the output is exactly the origin.
    scale = T.div(T.tanh(T.mul(alpha, n)), T.clamp_min(n, 1e-30))
    return T.clip_max_norm(T.mul(h, scale), MAX_NORM)


def check_in_ball(y):
    """Raise BallViolation if any row of y has norm >= 1."""
    n = np.sqrt((y.data * y.data).sum(axis=-1))
    if np.any(n >= 1.0):
        raise BallViolation(f"point outside the Poincaré ball: max norm {n.max()}")


def poincare_distance(y1, y2):
    """Geodesic distance acosh(1 + 2|y1-y2|^2 / ((1-|y1|^2)(1-|y2|^2))).

    Broadcasts over leading axes; reduces the last axis. Raises rather than
    clamping if either argument is outside the open ball.
    """
    y1, y2 = T.as_tensor(y1), T.as_tensor(y2)
    check_in_ball(y1)
    check_in_ball(y2)
    diff = T.sub(y1, y2)
    sq = T.tsum(T.square(diff), axis=-1)
    d1 = T.sub(1.0, T.tsum(T.square(y1), axis=-1))
    d2 = T.sub(1.0, T.tsum(T.square(y2), axis=-1))
    arg = T.add(1.0, T.div(T.mul(2.0, sq), T.mul(d1, d2)))
    return T.acosh(arg)


def unweighted_mean(points):
    """Plain Euclidean mean of ball points (stays in the ball by convexity)."""
    return T.tmean(points, axis=-2)


def weighted_prototype(points):
    """Distance-softmax-weighted combination of support points.

    points: Tensor (N, d) of ball points. Weights are softmax(-d(y_i, mean))
    so points near the unweighted centroid dominate; the weighted sum is a
    convex combination and therefore inside the ball, but it is re-clipped to
    the margin defensively. Returns (prototype (d,), weights (N,)).
    """
    if points.data.ndim != 2 or points.data.shape[0] < 1:
        raise ValueError(f"weighted_prototype needs a non-empty (N, d) stack, got {points.data.shape}")
    pbar = T.tmean(points, axis=0, keepdims=True)  # (1, d)
    d = poincare_distance(points, pbar)  # (N,)
    w = T.softmax(T.neg(d), axis=-1)  # (N,)
    proto = T.tsum(T.mul(T.reshape(w, (-1, 1)), points), axis=0)
    return T.clip_max_norm(proto, MAX_NORM), w


class ResidualBlockParams:
    """One dense d'->d' layer with tanh; output weights start at zero so the
    block begins as the identity followed by re-projection."""

    def __init__(self, dim):
        self.w = Tensor(np.zeros((dim, dim)), requires_grad=True)
        self.b = Tensor(np.zeros(dim), requires_grad=True)

    def named_parameters(self, prefix="residual"):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


def residual_hyperbolic_block(y, params, alpha):
    """y' = f(y) + y, re-projected into the ball with the same curvature."""
    f = T.tanh(T.add(T.matmul(y, params.w), params.b))
    return project(T.add(f, y), alpha)
