import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from causal_lens.errors import ClassificationError, ConfigError, DomainError, ZeroVectorError
from causal_lens.models import (
    ConformalBlock,
    Cylinder,
    MinkowskiBlock,
    PointVector,
    boundary_eval,
    causal_classify,
    inner,
    make_model,
    metric_at,
    normalize_timelike,
    orthonormal_frame,
    project_to_cone,
    screen_frame,
)
from causal_lens.selftest import christoffel_fd, riemann_fd

coord = st.floats(0.2, 0.8)
point3 = st.tuples(coord, coord, coord).map(np.array)
spatial = st.tuples(st.floats(-1, 1), st.floats(-1, 1)).filter(lambda w: 0.05 < math.hypot(*w) < 0.95)


def test_minkowski_metric_is_eta():
    g = metric_at(MinkowskiBlock(n=3), [0.5, 0.5, 0.5])
    assert np.array_equal(g, np.diag([-1.0, 1.0, 1.0]))


@pytest.mark.parametrize(
    "v, expected",
    [
        ([1.0, 0.0, 0.0], ("timelike", "future")),
        ([-1.0, 0.2, 0.0], ("timelike", "past")),
        ([1.0, 1.0, 0.0], ("lightlike", "future")),
        ([-1.0, 0.0, 1.0], ("lightlike", "past")),
        ([0.0, 1.0, 0.0], ("spacelike", "past")),
    ],
)
def test_classify_flat(v, expected):
    assert causal_classify(MinkowskiBlock(n=3), PointVector([0.5, 0.5, 0.5], v)) == expected


def test_zero_vector_rejected():
    with pytest.raises(ZeroVectorError):
        causal_classify(MinkowskiBlock(n=3), PointVector([0.5, 0.5, 0.5], [0.0, 0.0, 0.0]))


def test_normalize_timelike():
    M = ConformalBlock(n=3, amp=0.3)
    pv = normalize_timelike(M, PointVector([0.5, 0.7, 0.5], [2.0, 0.3, -0.4]))
    assert inner(metric_at(M, pv.x), pv.v, pv.v) == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(ClassificationError):
        normalize_timelike(M, PointVector([0.5, 0.5, 0.5], [0.0, 1.0, 0.0]))


def test_screen_frame_orthonormal():
    M = MinkowskiBlock(n=4)
    pv = PointVector([0.5] * 4, [1.0, 0.6, 0.8, 0.0])
    E = np.array(screen_frame(M, pv))
    g = metric_at(M, pv.x)
    assert E.shape == (2, 4)
    assert np.allclose(E @ g @ E.T, np.eye(2), atol=1e-12)
    assert np.allclose(E @ g @ pv.v, 0.0, atol=1e-12)
    with pytest.raises(ClassificationError):
        screen_frame(M, PointVector([0.5] * 4, [1.0, 0.0, 0.0, 0.0]))


def test_boundary_sign_and_domain():
    M = MinkowskiBlock(n=3)
    F, dF = boundary_eval(M, [0.5, 0.5, 0.5])
    assert F == pytest.approx(M.cap)
    assert np.allclose(dF, 0.0)
    assert boundary_eval(M, [0.5, 0.5, 0.0])[0] == pytest.approx(0.0, abs=1e-12)
    assert boundary_eval(M, [0.5, 0.5, -0.1])[0] < 0
    with pytest.raises(DomainError):
        boundary_eval(M, [0.5, 0.5, 2.0])


def test_make_model_errors():
    with pytest.raises(ConfigError):
        make_model("torus")
    with pytest.raises(ConfigError):
        make_model("minkowski-block", n=2)
    with pytest.raises(ConfigError):
        make_model("cylinder", n=4)
    with pytest.raises(ConfigError):
        make_model("cylinder", T=-1.0)
    with pytest.raises(ConfigError):
        make_model("minkowski-block", colour=1)


def test_describe_roundtrip():
    from causal_lens.models import model_from_description

    for M in (MinkowskiBlock(n=4), ConformalBlock(n=3, amp=0.2, axis=2), Cylinder(n=3, T=2.5)):
        M2 = model_from_description(M.describe())
        x = np.array([0.5, 0.6, 0.7] + [0.5] * (M.n - 3))
        assert type(M2) is type(M)
        assert np.allclose(M2.metric(x), M.metric(x))


@given(point3, spatial)
def test_orthonormal_frame_and_cone_projection(x, w):
    M = ConformalBlock(n=3, amp=0.25)
    g = M.metric(x)
    e = orthonormal_frame(M, x)
    assert np.allclose(e @ g @ e.T, np.diag([-1.0, 1.0, 1.0]), atol=1e-10)
    v = project_to_cone(g, np.array([0.5, *w]))
    assert inner(g, v, v) == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(v[1:], w)


@given(point3, st.floats(0.1, 10.0))
def test_classification_is_scale_invariant(x, lam):
    M = ConformalBlock(n=3, amp=0.25)
    for v in ([1.0, 0.3, 0.1], [1.0, 0.0, 0.0], [0.1, 1.0, 0.0]):
        c, d = causal_classify(M, PointVector(x, v))
        assert causal_classify(M, PointVector(x, lam * np.array(v))) == (c, d)
        c2, d2 = causal_classify(M, PointVector(x, -lam * np.array(v)))
        assert c2 == c
        if c != "spacelike":
            assert d2 != d


@pytest.mark.parametrize(
    "model",
    [ConformalBlock(n=3, amp=0.3), ConformalBlock(n=4, amp=0.2, axis=3), Cylinder(n=3, T=3.0)],
    ids=lambda m: f"{m.name}-n{m.n}",
)
def test_christoffel_and_riemann_match_finite_differences(model):
    rng = np.random.default_rng(3)
    X = rng.uniform(0.3, 0.7, size=(20, model.n))
    X[:, 0] = rng.uniform(0.3, 0.7, 20)
    if isinstance(model, Cylinder):
        X[:, 1] = rng.uniform(0.8, 2.3, 20)
        X[:, 2] = rng.uniform(0.0, 6.0, 20)
    assert np.allclose(model.christoffel(X), christoffel_fd(model, X), atol=1e-7)
    assert np.allclose(model.riemann(X), riemann_fd(model, X), atol=1e-6)


def test_riemann_symmetries():
    M = ConformalBlock(n=4, amp=0.4)
    X = np.random.default_rng(0).uniform(0.2, 0.8, size=(10, 4))
    R = np.einsum("...ae,...ebcd->...abcd", M.metric(X), M.riemann(X))
    assert np.allclose(R, -np.swapaxes(R, -1, -2), atol=1e-12)
    assert np.allclose(R, -np.swapaxes(R, -3, -4), atol=1e-12)
    assert np.allclose(R, np.einsum("...abcd->...cdab", R), atol=1e-12)


def test_cylinder_sectional_curvature():
    C = Cylinder(n=3, T=3.0)
    x = np.array([1.0, 1.1, 0.4])
    R = np.einsum("ae,ebcd->abcd", C.metric(x), C.riemann(x))
    # round unit sphere: R_{theta phi theta phi} = sin^2 theta
    assert R[1, 2, 1, 2] == pytest.approx(math.sin(1.1) ** 2, rel=1e-12)
    assert np.allclose(R[0], 0.0)
