"""Adam, the episodic training loop, evaluation, and repeated runs."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .data import standardize_fit
from .fewshot import EpisodeSpec, LossConfig, sample_episode, run_episode
from .model import ModelParams

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    episodes_per_epoch: int = 60
    k: int = 1
    b: int = 4
    seed: int = 0
    repeats: int = 5
    test_fraction: float = 0.2
    n_eval_episodes: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 10.0
    embed_dim: int = 32
    heads: int = 2
    dropout_rate: float = 0.1
    pool: str = "mean"
    space: str = "hyperbolic"
    alpha_init: float = 1.0
    alpha_trainable: bool = True
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in (0, 1)")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("learning_rate", "episodes_per_epoch", "k", "b", "n_eval_episodes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def episode_spec(self):
        return EpisodeSpec(k=self.k, b=self.b)


class NonFiniteError(ArithmeticError):
    pass


class AdamState:
    """Per-parameter first/second moment buffers plus the shared step count."""

    def __init__(self, params):
        self.m = {name: np.zeros_like(p.data) for name, p in params}
        self.v = {name: np.zeros_like(p.data) for name, p in params}
        self.t = 0


def clip_global_norm(params, max_norm):
    """Rescale all gradients if their joint norm exceeds max_norm."""
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        logger.debug("gradient clipped: global norm %.3f > %.1f", norm, max_norm)
        scale = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                if p._grad_borrowed:
                    p.grad = p.grad * scale
                    p._grad_borrowed = False
                else:
                    p.grad *= scale
    return norm


def adam_step(params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; missing gradients are treated as zero."""
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params:
        g = p.grad
        if g is None:
            g = 0.0
        elif not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def split_stratified(pool, test_fraction, seed):
    """Per-class round-half-to-even test allocation; deterministic per seed."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in (0, 1):
        members = [s for s in pool if s.label == c]
        if len(members) < 2:
            raise ValueError(f"class {c} has {len(members)} sample(s); need at least 2 to split")
        n_test = int(round(len(members) * test_fraction))
        n_test = min(max(n_test, 1), len(members) - 1)
        idx = rng.permutation(len(members))
        test += [members[i] for i in idx[:n_test]]
        train += [members[i] for i in idx[n_test:]]
    return train, test


@dataclass
class TrainedModel:
    params: ModelParams
    scaler: object
    config: TrainConfig
    loss_curve: list


def train_model(train_pool, config, modality_configs, seed=None):
    """Episodic training on the (unscaled) train pool.

    Fits the z-score scaler on the train pool only, then runs
    epochs x episodes_per_epoch episodes with one Adam step each.
    Returns the trained model and the per-epoch mean loss curve.
    """
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    scaler = standardize_fit(train_pool)
    pool = scaler.transform(train_pool)
    model = ModelParams(
        modality_configs,
        embed_dim=config.embed_dim,
        heads=config.heads,
        dropout_rate=config.dropout_rate,
        pool=config.pool,
        space=config.space,
        alpha_init=config.alpha_init,
        alpha_trainable=config.alpha_trainable,
        seed=seed,
    )
    spec = config.episode_spec()
    params = model.trainable_parameters()
    state = AdamState(params)
    curve = []
    for _ in range(config.epochs):
        total = 0.0
        for _ in range(config.episodes_per_epoch):
            episode = sample_episode(pool, spec, rng)
            for _, p in params:
                p.zero_grad()
            with T.Tape():
                result = run_episode(episode, model, config.loss, train=True, rng=rng)
                loss = result.loss.item()
                if not np.isfinite(loss):
                    raise NonFiniteError(f"non-finite episode loss {loss} at step {state.t}")
                T.backward(result.loss)
            clip_global_norm(params, config.grad_clip)
            adam_step(params, state, config.learning_rate, config.beta1, config.beta2, config.eps)
            total += loss
        curve.append(total / config.episodes_per_epoch)
    return TrainedModel(params=model, scaler=scaler, config=config, loss_curve=curve)


def evaluate(trained, test_pool, n_episodes=None, seed=0):
    """Mean query accuracy over sampled test episodes (dropout off)."""
    config = trained.config
    n_episodes = config.n_eval_episodes if n_episodes is None else n_episodes
    pool = trained.scaler.transform(test_pool)
    spec = config.episode_spec()
    rng = np.random.default_rng(seed)
    correct = 0
    total = 0
    for _ in range(n_episodes):
        episode = sample_episode(pool, spec, rng)
        result = run_episode(episode, trained.params, config.loss, train=False)
        correct += result.n_correct
        total += result.labels.size
    return correct / total


@dataclass
class RunReport:
    accuracies: list
    mean: float
    std: float
    loss_curves: list
    wall_seconds: float
    config: dict
    failed: bool = False
    failure_reason: str = ""
    single_run: bool = False
    models: list = field(default_factory=list)  # populated when keep_models

    @staticmethod
    def aggregate(accuracies, loss_curves, wall_seconds, config, failed=False, reason=""):
        accs = list(accuracies)
        mean = float(np.mean(accs)) if accs else float("nan")
        # sample std (n-1); a single repeat reports 0.0 by convention
        std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        return RunReport(
            accuracies=accs,
            mean=mean,
            std=std,
            loss_curves=loss_curves,
            wall_seconds=wall_seconds,
            config=config,
            failed=failed,
            failure_reason=reason,
            single_run=len(accs) == 1,
        )


def run_single(dataset, config, modality_configs, seed):
    """One split/train/evaluate cycle; returns (accuracy, loss_curve, model)."""
    train_pool, test_pool = split_stratified(dataset, config.test_fraction, seed)
    train_ids = {s.id for s in train_pool}
    test_ids = {s.id for s in test_pool}
    assert not (train_ids & test_ids), "train/test leakage"
    trained = train_model(train_pool, config, modality_configs, seed=seed)
    acc = evaluate(trained, test_pool, seed=seed)
    return acc, trained.loss_curve, trained


def run_repeats(dataset, config, modality_configs, threads=1, keep_models=False):
    """config.repeats independent cycles with seeds seed+0 .. seed+r-1.

    Repeats own their model, tape, and RNG stream, so they may run on worker
    threads; results are joined in repeat order either way.
    """
    t0 = time.perf_counter()
    seeds = [config.seed + r for r in range(config.repeats)]
    accs, curves, models = [], [], []
    try:
        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(
                    lambda s: run_single(dataset, config, modality_configs, s), seeds
                ))
        else:
            results = [run_single(dataset, config, modality_configs, s) for s in seeds]
        for acc, curve, trained in results:
            accs.append(acc)
            curves.append(curve)
            if keep_models:
                models.append(trained)
    except NonFiniteError as exc:
        report = RunReport.aggregate(
            accs, curves, time.perf_counter() - t0, _config_dict(config),
            failed=True, reason=str(exc),
        )
        report.models = models
        return report
    report = RunReport.aggregate(accs, curves, time.perf_counter() - t0, _config_dict(config))
    report.models = models
    return report


def _config_dict(config):
    d = asdict(config)
    d["loss"] = asdict(config.loss)
    return d
