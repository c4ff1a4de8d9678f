"""Built-in gradient check suite: primitives plus the full episode graph."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from . import geometry as geo
from .tensor import Tensor, grad_check
from .encoder import ModalityConfig
from .fewshot import LossConfig, Sample, EpisodeSpec, sample_episode, run_episode
from .model import ModelParams


def _primitive_cases(rng):
    """Deterministic scalar-loss wrappers around every differentiable primitive."""
    x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    w = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    xs = Tensor(rng.standard_normal((2, 9, 5)), requires_grad=True)
    cw = Tensor(rng.standard_normal((3, 5, 4)) * 0.4, requires_grad=True)
    cb = Tensor(rng.standard_normal(4) * 0.1, requires_grad=True)
    gain = Tensor(np.ones(3), requires_grad=True)
    bias = Tensor(np.zeros(3), requires_grad=True)
    y = Tensor(rng.standard_normal((4, 3)) * 0.25, requires_grad=True)
    y2 = Tensor(rng.standard_normal((4, 3)) * 0.25, requires_grad=True)
    rho = Tensor(0.1, requires_grad=True)

    def s(t):
        return T.tsum(T.square(t))

    cases = [
        ("add", lambda: s(T.add(x, T.matmul(x, T.matmul(w, T.transpose(w, (1, 0)))))), [("x", x), ("w", w)]),
        ("mul_div", lambda: s(T.div(T.mul(x, x), T.add(T.square(x), 1.0))), [("x", x)]),
        ("matmul", lambda: s(T.matmul(x, w)), [("x", x), ("w", w)]),
        ("conv1d", lambda: s(T.conv1d(xs, cw, cb)), [("x", xs), ("w", cw), ("b", cb)]),
        ("tanh_exp_log_sqrt", lambda: T.tsum(T.log(T.add(T.sqrt(T.exp(T.tanh(x))), 1.0))), [("x", x)]),
        ("relu", lambda: s(T.relu(T.sub(x, 0.05))), [("x", x)]),
        ("softmax", lambda: s(T.softmax(T.matmul(x, w), axis=-1)), [("x", x), ("w", w)]),
        ("layer_norm", lambda: s(T.layer_norm(T.matmul(x, w), gain, bias)), [("x", x), ("g", gain), ("b", bias)]),
        ("acosh", lambda: T.tsum(T.acosh(T.add(T.square(x), 1.5))), [("x", x)]),
        ("sum_mean", lambda: T.add(T.tsum(T.square(x), axis=0).data.sum() * 0.0 + T.tsum(T.tmean(T.square(x), axis=1)), 0.0), [("x", x)]),
        ("l2norm", lambda: T.tsum(T.l2norm(y)), [("y", y)]),
        ("clip_max_norm", lambda: s(T.clip_max_norm(T.mul(y, 6.0), 0.9)), [("y", y)]),
        ("project", lambda: s(geo.project(y, T.exp(rho))), [("y", y), ("rho", rho)]),
        ("poincare_distance", lambda: T.tsum(geo.poincare_distance(y, y2)), [("y", y), ("y2", y2)]),
        ("weighted_prototype", lambda: s(geo.weighted_prototype(y)[0]), [("y", y)]),
    ]
    return cases


def toy_episode(seed=7):
    """K=1, B=1 episode with 2 modalities (dims 3 and 2), L=8, d'=16."""
    rng = np.random.default_rng(seed)
    configs = [ModalityConfig("a", 3, 8), ModalityConfig("b", 2, 8)]
    model = ModelParams(configs, embed_dim=16, heads=2, dropout_rate=0.0, seed=seed)
    pool = [
        Sample(f"s{i}", i % 2, {c.name: rng.standard_normal((8, c.input_dim)) for c in configs})
        for i in range(8)
    ]
    episode = sample_episode(pool, EpisodeSpec(k=1, b=1), rng)
    return model, episode


def run_suite(step=1e-5, tol=1e-4, include_episode=True):
    """Returns a list of (name, max_rel_error, passed) rows."""
    rng = np.random.default_rng(11)
    rows = []
    for name, f, params in _primitive_cases(rng):
        report = grad_check(f, params, step=step, tol=tol)
        rows.append((name, report.max_rel_error, report.passed))
    if include_episode:
        model, episode = toy_episode()
        loss_cfg = LossConfig()

        def f():
            return run_episode(episode, model, loss_cfg, train=False).loss

        report = grad_check(f, model.trainable_parameters(), step=step, tol=tol)
        rows.append(("full_episode_loss", report.max_rel_error, report.passed))
    return rows
