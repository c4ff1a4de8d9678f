import numpy as np
import pytest

import hcfsln.geometry as geo
import hcfsln.tensor as T
from hcfsln.geometry import (BallViolation, CurvatureParam, MAX_NORM,
                             ResidualBlockParams, poincare_distance, project,
                             residual_hyperbolic_block, weighted_prototype)
from hcfsln.tensor import Tensor


def _rand_ball_points(rng, n, d, max_norm=0.9):
    x = rng.standard_normal((n, d))
    norms = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    radii = rng.uniform(0.0, max_norm, (n, 1))
    return x / norms * radii


ALPHA_ONE = Tensor(1.0)


# ---------------------------------------------------------------------------
# project


def test_project_zero_is_origin():
    out = project(Tensor(np.zeros(4)), ALPHA_ONE)
    np.testing.assert_array_equal(out.data, np.zeros(4))


def test_project_saturating_clips_to_margin():
    out = project(Tensor([10.0, 0.0]), ALPHA_ONE).data
    # tanh(10) ~ 0.9999999959 exceeds the margin, so the norm is clipped
    assert np.linalg.norm(out) == pytest.approx(MAX_NORM, abs=1e-12)
    assert out[1] == 0.0 and out[0] > 0


def test_project_direction_and_monotonicity():
    h = np.array([0.3, -0.4, 0.2])
    y1 = project(Tensor(h), ALPHA_ONE).data
    y2 = project(Tensor(2 * h), ALPHA_ONE).data
    unit = h / np.linalg.norm(h)
    np.testing.assert_allclose(y1 / np.linalg.norm(y1), unit, atol=1e-12)
    np.testing.assert_allclose(y2 / np.linalg.norm(y2), unit, atol=1e-12)
    assert np.linalg.norm(y2) > np.linalg.norm(y1)
    assert np.linalg.norm(y1) == pytest.approx(np.tanh(np.linalg.norm(h)), abs=1e-12)


def test_project_ball_closure_random():
    rng = np.random.default_rng(0)
    h = Tensor(rng.standard_normal((500, 6)) * 10)
    out = project(h, Tensor(2.0)).data
    norms = np.sqrt((out * out).sum(axis=-1))
    assert np.all(norms <= MAX_NORM + 1e-12)


def test_curvature_param_reparameterization():
    cp = CurvatureParam(1.0)
    assert cp.rho.data == pytest.approx(0.0)
    assert cp.value() == pytest.approx(1.0)
    assert CurvatureParam(2.0, trainable=False).rho.requires_grad is False
    with pytest.raises(ValueError):
        CurvatureParam(0.0)


# ---------------------------------------------------------------------------
# distance


def test_distance_identity_and_oracle():
    assert poincare_distance(Tensor(np.zeros(2)), Tensor(np.zeros(2))).item() == 0.0
    d = poincare_distance(Tensor([0.5, 0.0]), Tensor([0.0, 0.0])).item()
    assert d == pytest.approx(np.log(3.0), abs=1e-12)  # 2*artanh(0.5) = ln 3


def test_distance_origin_oracle_1000_points():
    rng = np.random.default_rng(1)
    pts = _rand_ball_points(rng, 1000, 5)
    d = poincare_distance(Tensor(pts), Tensor(np.zeros(5))).data
    oracle = 2.0 * np.arctanh(np.sqrt((pts * pts).sum(axis=-1)))
    np.testing.assert_allclose(d, oracle, atol=1e-9)


def test_distance_symmetry_and_triangle():
    rng = np.random.default_rng(2)
    a = Tensor(_rand_ball_points(rng, 1000, 4))
    b = Tensor(_rand_ball_points(rng, 1000, 4))
    c = Tensor(_rand_ball_points(rng, 1000, 4))
    dab = poincare_distance(a, b).data
    dba = poincare_distance(b, a).data
    dac = poincare_distance(a, c).data
    dbc = poincare_distance(b, c).data
    np.testing.assert_allclose(dab, dba, atol=1e-12)
    assert np.all(dac <= dab + dbc + 1e-9)


def test_distance_boundary_growth():
    radii = [0.9, 0.99, 0.999, 0.99991]
    ds = [poincare_distance(Tensor([r, 0.0]), Tensor([0.0, 0.0])).item() for r in radii]
    assert all(d2 > d1 for d1, d2 in zip(ds, ds[1:]))
    assert ds[-1] > 5.0  # r > 0.9999


def test_distance_rejects_out_of_ball():
    with pytest.raises(BallViolation):
        poincare_distance(Tensor([1.0, 0.0]), Tensor([0.0, 0.0]))


def test_distance_gradient_fd():
    rng = np.random.default_rng(3)
    a = Tensor(_rand_ball_points(rng, 6, 3), requires_grad=True)
    b = Tensor(_rand_ball_points(rng, 6, 3), requires_grad=True)
    report = T.grad_check(lambda: T.tsum(poincare_distance(a, b)), [("a", a), ("b", b)])
    assert report.passed


# ---------------------------------------------------------------------------
# weighted prototype


def test_prototype_single_point_identity():
    y = np.array([[0.2, -0.1, 0.3]])
    proto, w = weighted_prototype(Tensor(y))
    np.testing.assert_allclose(proto.data, y[0], atol=1e-12)
    np.testing.assert_allclose(w.data, [1.0], atol=1e-12)


def test_prototype_symmetric_pair():
    pts = np.array([[0.4, 0.0], [-0.4, 0.0]])
    proto, w = weighted_prototype(Tensor(pts))
    np.testing.assert_allclose(w.data, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(proto.data, [0.0, 0.0], atol=1e-12)


def test_prototype_identical_copies():
    pts = np.tile([0.1, 0.25, -0.3], (5, 1))
    proto, w = weighted_prototype(Tensor(pts))
    np.testing.assert_allclose(proto.data, pts[0], atol=1e-9)
    np.testing.assert_allclose(w.data.sum(), 1.0, atol=1e-9)


def test_prototype_brute_force_oracle():
    """Independent numpy evaluation of Eq. 5 then Eq. 6 on collinear points."""
    pts = np.array([[0.1, 0.0], [0.2, 0.0], [0.6, 0.0]])
    pbar = pts.mean(axis=0)

    def pdist(u, v):
        num = 2 * ((u - v) ** 2).sum()
        den = (1 - (u * u).sum()) * (1 - (v * v).sum())
        return np.arccosh(1 + num / den)

    d = np.array([pdist(p, pbar) for p in pts])
    e = np.exp(-d - np.max(-d))
    w_oracle = e / e.sum()
    proto_oracle = (w_oracle[:, None] * pts).sum(axis=0)

    proto, w = weighted_prototype(Tensor(pts))
    np.testing.assert_allclose(w.data, w_oracle, atol=1e-12)
    np.testing.assert_allclose(proto.data, proto_oracle, atol=1e-12)
    # strictly between min and max coordinate, biased toward the near-mean pair
    assert 0.1 < proto.data[0] < 0.6
    assert w.data[1] > w.data[2]


def test_prototype_weights_probability_vector():
    rng = np.random.default_rng(4)
    for _ in range(20):
        pts = Tensor(_rand_ball_points(rng, 6, 4))
        _, w = weighted_prototype(pts)
        assert np.all(w.data >= 0)
        assert w.data.sum() == pytest.approx(1.0, abs=1e-9)


def test_prototype_empty_rejected():
    with pytest.raises(ValueError):
        weighted_prototype(Tensor(np.zeros((0, 3))))


# ---------------------------------------------------------------------------
# residual hyperbolic block


def test_residual_block_zero_weights_is_projection():
    params = ResidualBlockParams(2)  # zero-initialized
    origin = residual_hyperbolic_block(Tensor(np.zeros(2)), params, ALPHA_ONE)
    np.testing.assert_array_equal(origin.data, np.zeros(2))
    y = Tensor([0.3, 0.0])
    out = residual_hyperbolic_block(y, params, ALPHA_ONE).data
    np.testing.assert_allclose(out, [np.tanh(0.3), 0.0], atol=1e-12)


def test_residual_block_ball_closure():
    rng = np.random.default_rng(5)
    params = ResidualBlockParams(4)
    params.w.data = rng.standard_normal((4, 4))
    params.b.data = rng.standard_normal(4)
    y = Tensor(_rand_ball_points(rng, 100, 4, max_norm=0.999))
    out = residual_hyperbolic_block(y, params, Tensor(3.0)).data
    norms = np.sqrt((out * out).sum(axis=-1))
    assert np.all(norms <= MAX_NORM + 1e-12)
