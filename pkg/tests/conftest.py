import numpy as np
import pytest

from hcfsln.encoder import ModalityConfig
from hcfsln.fewshot import LossConfig, Sample
from hcfsln.train import TrainConfig


@pytest.fixture
def tiny_configs():
    return [ModalityConfig("a", 3, 8), ModalityConfig("b", 2, 8)]


def make_pool(configs, n_per_class=10, seed=0, shift=2.0):
    """Tiny labeled pool: class 1 samples are shifted by a constant."""
    rng = np.random.default_rng(seed)
    pool = []
    for c in (0, 1):
        for i in range(n_per_class):
            mods = {
                cfg.name: rng.standard_normal((cfg.seq_len, cfg.input_dim)) + c * shift
                for cfg in configs
            }
            pool.append(Sample(id=f"c{c}_{i}", label=c, modalities=mods))
    return pool


@pytest.fixture
def tiny_pool(tiny_configs):
    return make_pool(tiny_configs)


def tiny_train_config(**kw):
    base = dict(
        epochs=2, episodes_per_epoch=5, repeats=2, k=1, b=2, seed=0,
        n_eval_episodes=10, embed_dim=16, heads=2, dropout_rate=0.0,
        loss=LossConfig(),
    )
    base.update(kw)
    return TrainConfig(**base)
