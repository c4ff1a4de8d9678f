import numpy as np
import pytest

import hcfsln.tensor as T
from hcfsln.encoder import (CrossModalParams, EncoderParams, GatingParams,
                            ModalityConfig, cross_modal_attention,
                            encode_modality, gate_fuse)
from hcfsln.tensor import Tensor

D = 16


@pytest.fixture
def enc_params():
    rng = np.random.default_rng(0)
    return EncoderParams(rng, ModalityConfig("toy", 3, 8), D, 2, dropout_rate=0.0)


def test_shape_contract(enc_params):
    x = np.random.default_rng(1).standard_normal((8, 3))
    out = encode_modality(x, enc_params)
    assert out.data.shape == (D,)
    batch = np.random.default_rng(2).standard_normal((5, 8, 3))
    assert encode_modality(batch, enc_params).data.shape == (5, D)


def test_shape_mismatch_rejected(enc_params):
    with pytest.raises(T.ShapeError):
        encode_modality(np.zeros((8, 4)), enc_params)


def test_determinism(enc_params):
    x = np.random.default_rng(3).standard_normal((8, 3))
    a = encode_modality(x, enc_params).data
    b = encode_modality(x, enc_params).data
    np.testing.assert_array_equal(a, b)


def test_zero_input_zero_embedding(enc_params):
    # zero input + zero biases + zero attention output projection: the
    # layer-norm input is constant zero, so the output is just the ln bias (0)
    out = encode_modality(np.zeros((8, 3)), enc_params).data
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_encoder_gradient_fd(enc_params):
    """FD check on every encoder parameter for an 8-timestep 3-feature input."""
    x = np.random.default_rng(4).standard_normal((8, 3))
    report = T.grad_check(
        lambda: T.tsum(T.square(encode_modality(x, enc_params))),
        enc_params.named_parameters("enc"),
    )
    assert report.passed, report.per_param


def test_cross_modal_permutation_equivariance():
    rng = np.random.default_rng(5)
    params = CrossModalParams(rng, D, 2)
    stack = rng.standard_normal((1, 3, D))
    out = cross_modal_attention(Tensor(stack), params).data
    perm = [2, 0, 1]
    out_p = cross_modal_attention(Tensor(stack[:, perm]), params).data
    np.testing.assert_allclose(out_p, out[:, perm], atol=1e-12)


def test_cross_modal_identical_tokens():
    rng = np.random.default_rng(6)
    params = CrossModalParams(rng, D, 2)
    token = rng.standard_normal(D)
    stack = Tensor(np.tile(token, (1, 2, 1)))
    out = cross_modal_attention(stack, params).data
    np.testing.assert_allclose(out[0, 0], out[0, 1], atol=1e-12)


def test_cross_modal_single_token():
    rng = np.random.default_rng(7)
    params = CrossModalParams(rng, D, 2)
    stack = Tensor(rng.standard_normal((1, 1, D)))
    a = cross_modal_attention(stack, params).data
    b = cross_modal_attention(stack, params).data
    assert a.shape == (1, 1, D)
    np.testing.assert_array_equal(a, b)


def test_gating_probability_and_convex_hull():
    rng = np.random.default_rng(8)
    gating = GatingParams(rng, D)
    refined = Tensor(rng.standard_normal((4, 3, D)))
    fused = gate_fuse(refined, gating)
    w = fused.modality_weights.data
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)
    # h is the exact weighted sum of the refined embeddings
    recon = (w[:, :, None] * refined.data).sum(axis=1)
    np.testing.assert_allclose(fused.h.data, recon, atol=1e-9)


def test_gating_softmax_oracle():
    """Scores [ln 2, 0] must give weights [2/3, 1/3]."""
    gating = GatingParams(np.random.default_rng(9), 1)
    gating.w.data = np.array([[1.0]])
    refined = Tensor(np.array([[[np.log(2.0)], [0.0]]]))  # (1, 2, 1)
    fused = gate_fuse(refined, gating)
    np.testing.assert_allclose(fused.modality_weights.data[0], [2 / 3, 1 / 3], atol=1e-12)


def test_gating_identical_embeddings_uniform():
    rng = np.random.default_rng(10)
    gating = GatingParams(rng, D)
    token = rng.standard_normal(D)
    refined = Tensor(np.tile(token, (1, 3, 1)))
    fused = gate_fuse(refined, gating)
    np.testing.assert_allclose(fused.modality_weights.data[0], 1 / 3, atol=1e-12)
    np.testing.assert_allclose(fused.h.data[0], token, atol=1e-12)


def test_pool_modes(enc_params):
    x = np.random.default_rng(11).standard_normal((8, 3))
    mean_emb = encode_modality(x, enc_params, pool="mean").data
    last_emb = encode_modality(x, enc_params, pool="last").data
    assert mean_emb.shape == last_emb.shape == (D,)
    assert not np.allclose(mean_emb, last_emb)
    with pytest.raises(ValueError):
        encode_modality(x, enc_params, pool="max")
