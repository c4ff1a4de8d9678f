import numpy as np
import pytest

import hcfsln.tensor as T
from hcfsln.fewshot import (EpisodeError, EpisodeSpec, LossConfig, Sample,
                            angular_loss, classify, compute_prototypes,
                            proto_loss, run_episode, sample_episode, total_loss)
from hcfsln.model import ModelParams
from hcfsln.tensor import Tensor

from conftest import make_pool


# ---------------------------------------------------------------------------
# episode protocol


def test_sample_shapes():
    with pytest.raises(ValueError):
        Sample("x", 2, {})
    with pytest.raises(ValueError):
        EpisodeSpec(k=0, b=1)


def test_episode_sizes(tiny_configs, tiny_pool):
    rng = np.random.default_rng(0)
    ep = sample_episode(tiny_pool, EpisodeSpec(k=1, b=2), rng)
    assert len(ep.support) == 2 and len(ep.query) == 4
    ep.validate(EpisodeSpec(k=1, b=2))


def test_episode_boundary_consumes_pool(tiny_configs):
    pool = make_pool(tiny_configs, n_per_class=3)
    ep = sample_episode(pool, EpisodeSpec(k=1, b=2), np.random.default_rng(1))
    assert {s.id for s in ep.support} | {s.id for s in ep.query} == {s.id for s in pool}


def test_episode_insufficient_class_reported(tiny_configs):
    pool = make_pool(tiny_configs, n_per_class=3)
    pool = [s for s in pool if not (s.label == 1 and s.id.endswith("_2"))]
    with pytest.raises(EpisodeError, match="class 1"):
        sample_episode(pool, EpisodeSpec(k=1, b=2), np.random.default_rng(2))


def test_episode_determinism(tiny_pool):
    spec = EpisodeSpec(k=2, b=3)
    a = sample_episode(tiny_pool, spec, np.random.default_rng(7))
    b = sample_episode(tiny_pool, spec, np.random.default_rng(7))
    assert [s.id for s in a.support] == [s.id for s in b.support]
    assert [s.id for s in a.query] == [s.id for s in b.query]


# ---------------------------------------------------------------------------
# classification and losses (direct oracles on hand-built embeddings)


def test_classify_equidistant():
    protos = Tensor(np.array([[0.3, 0.0], [-0.3, 0.0]]))
    probs = classify(Tensor(np.array([[0.0, 0.1]])), protos).data
    np.testing.assert_allclose(probs, [[0.5, 0.5]], atol=1e-12)


def test_classify_distance_softmax_oracle():
    # distances d0=1, d1=2 -> p0 = 1/(1+e^{-1})
    r1 = np.tanh(0.5)  # d(0, (r1,0)) = 1
    r2 = np.tanh(1.0)  # d(0, (r2,0)) = 2
    protos = Tensor(np.array([[r1, 0.0], [-r2, 0.0]]))
    probs = classify(Tensor(np.array([[0.0, 0.0]])), protos).data
    assert probs[0, 0] == pytest.approx(1.0 / (1.0 + np.exp(-1.0)), abs=1e-9)


def test_classify_own_prototype_wins():
    protos = Tensor(np.array([[0.2, 0.1], [-0.4, 0.3]]))
    probs = classify(Tensor(np.array([[0.2, 0.1]])), protos).data
    assert probs[0, 0] > 0.5


def test_proto_loss_oracle():
    probs = Tensor(np.array([[0.5, 0.5]]))
    assert proto_loss(probs, [0]).item() == pytest.approx(np.log(2.0), abs=1e-12)
    sure = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert proto_loss(sure, [0, 1]).item() == pytest.approx(0.0, abs=1e-12)
    # batch mean: losses a and b average to (a+b)/2
    two = Tensor(np.array([[0.5, 0.5], [0.25, 0.75]]))
    expected = (np.log(2.0) + (-np.log(0.25))) / 2.0
    assert proto_loss(two, [0, 0]).item() == pytest.approx(expected, abs=1e-12)


def test_angular_loss_oracles():
    # prototypes on +x and at angle theta; query along +x gives
    # cos_true = 1 (class 0), cos_wrong = cos(theta)
    def run(theta, gamma, form="corrected", label=0):
        protos = Tensor(np.array([[0.5, 0.0],
                                  [0.5 * np.cos(theta), 0.5 * np.sin(theta)]]))
        q = Tensor(np.array([[0.3, 0.0]]))
        return angular_loss(q, protos, [label], gamma, form).item()

    # margin satisfied: cos_true=1, cos_wrong=cos(pi/2)=0, gamma=0.2 -> 0
    assert run(np.pi / 2, 0.2) == pytest.approx(0.0, abs=1e-12)
    # tie case: theta=0 -> cos_true == cos_wrong -> loss = gamma
    assert run(0.0, 0.2) == pytest.approx(0.2, abs=1e-12)
    # wrong label: cos_true=cos(pi/3)=0.5 ... corrected = gamma - 0.5 + 1.0
    assert run(np.pi / 3, 0.2, label=1) == pytest.approx(0.7, abs=1e-12)
    # literal form: cos_true + gamma - cos_wrong = 1 + 0.2 - 0 = 1.2
    assert run(np.pi / 2, 0.2, form="literal") == pytest.approx(1.2, abs=1e-12)


def test_angular_loss_direct_numbers():
    # corrected with cos_correct=0.5, cos_wrong=0.6, gamma=0.2 -> 0.3
    theta = np.arccos(0.6)
    q = np.array([[0.5, 0.0, 0.0]])
    protos = Tensor(np.array([[0.25, 0.25 * np.sqrt(3), 0.0],  # cos to q = 0.5
                              [0.5 * 0.6, 0.5 * np.sin(theta), 0.0]]))  # cos = 0.6
    out = angular_loss(Tensor(q), protos, [0], 0.2).item()
    assert out == pytest.approx(0.2 - 0.5 + 0.6, abs=1e-9)


def test_total_loss_arithmetic():
    p, a = Tensor(0.5), Tensor(0.3)
    assert total_loss(p, a, 1.0).item() == pytest.approx(0.8)
    assert total_loss(p, a, 0.0).item() == pytest.approx(0.5)
    assert total_loss(Tensor(0.1), Tensor(0.4), 0.25).item() == pytest.approx(0.2)
    assert total_loss(p, a, 0.7, mode="proto-only").item() == pytest.approx(0.5)
    assert total_loss(p, a, 0.5, mode="angular-only").item() == pytest.approx(0.15)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(gamma=-0.1)
    with pytest.raises(ValueError):
        LossConfig(mode="both")
    with pytest.raises(ValueError):
        LossConfig(angular_form="typo")


# ---------------------------------------------------------------------------
# prototypes from embeddings


def test_compute_prototypes_one_shot_identity():
    embs = Tensor(np.array([[0.2, 0.1], [-0.3, 0.4]]))
    protos = compute_prototypes(embs, [0, 1])
    np.testing.assert_allclose(protos.data, embs.data, atol=1e-12)


def test_compute_prototypes_euclidean_mean():
    embs = Tensor(np.array([[0.2, 0.0], [0.4, 0.0], [-0.3, 0.1], [-0.1, 0.3]]))
    protos = compute_prototypes(embs, [0, 0, 1, 1], space="euclidean")
    np.testing.assert_allclose(protos.data, [[0.3, 0.0], [-0.2, 0.2]], atol=1e-12)


def test_compute_prototypes_missing_class():
    with pytest.raises(EpisodeError):
        compute_prototypes(Tensor(np.array([[0.1, 0.0]])), [0])


# ---------------------------------------------------------------------------
# full episodes


def _model(configs, **kw):
    return ModelParams(configs, embed_dim=16, heads=2, dropout_rate=0.0, seed=3, **kw)


def test_run_episode_result(tiny_configs, tiny_pool):
    model = _model(tiny_configs)
    ep = sample_episode(tiny_pool, EpisodeSpec(k=2, b=3), np.random.default_rng(4))
    res = run_episode(ep, model, LossConfig())
    assert res.probs.data.shape == (6, 2)
    np.testing.assert_allclose(res.probs.data.sum(axis=-1), 1.0, atol=1e-9)
    assert res.loss.item() >= 0.0
    assert 0.0 <= res.accuracy <= 1.0


def test_relabel_symmetry(tiny_configs, tiny_pool):
    """Swapping class ids 0<->1 leaves episode accuracy unchanged."""
    model = _model(tiny_configs)
    ep = sample_episode(tiny_pool, EpisodeSpec(k=2, b=3), np.random.default_rng(5))
    res = run_episode(ep, model, LossConfig())

    def flip(s):
        return Sample(id=s.id, label=1 - s.label, modalities=s.modalities)

    from hcfsln.fewshot import Episode
    flipped = Episode(support=[flip(s) for s in ep.support],
                      query=[flip(s) for s in ep.query])
    res_f = run_episode(flipped, model, LossConfig())
    assert res.accuracy == res_f.accuracy


def test_support_sample_as_query_classified_home(tiny_configs, tiny_pool):
    model = _model(tiny_configs)
    ep = sample_episode(tiny_pool, EpisodeSpec(k=1, b=1), np.random.default_rng(6))
    from hcfsln.fewshot import Episode
    echo = Episode(support=ep.support, query=list(ep.support))
    res = run_episode(echo, model, LossConfig())
    rows = np.arange(2)
    labels = np.array([s.label for s in ep.support])
    assert np.all(res.probs.data[rows, labels] > 0.5)


def test_full_loss_gradient_fd(tiny_configs, tiny_pool):
    """Combined-loss gradient through every parameter, K=1 B=1 episode."""
    model = _model(tiny_configs)
    ep = sample_episode(tiny_pool, EpisodeSpec(k=1, b=1), np.random.default_rng(8))
    report = T.grad_check(
        lambda: run_episode(ep, model, LossConfig()).loss,
        model.trainable_parameters(),
    )
    assert report.passed, report.per_param


def test_euclidean_space_episode(tiny_configs, tiny_pool):
    model = _model(tiny_configs, space="euclidean")
    ep = sample_episode(tiny_pool, EpisodeSpec(k=1, b=2), np.random.default_rng(9))
    res = run_episode(ep, model, LossConfig())
    assert res.probs.data.shape == (4, 2)
    np.testing.assert_allclose(res.probs.data.sum(axis=-1), 1.0, atol=1e-9)
