import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causal_lens import geodesics as geo
from causal_lens.errors import ClassificationError, DomainError
from causal_lens.models import ConformalBlock, Cylinder, MinkowskiBlock, PointVector, inner, screen_frames


def test_flat_flow_is_straight():
    M = MinkowskiBlock(n=3)
    s = geo.flow(M, geo.GeodesicState([0.5, 0.5, 0.5], [1.0, 0.2, -0.3]), 0.3)
    assert np.allclose(s.x, [0.8, 0.56, 0.41], atol=1e-12)
    assert np.allclose(s.v, [1.0, 0.2, -0.3], atol=1e-12)
    assert s.s == pytest.approx(0.3)


def test_flat_exit_time():
    M = MinkowskiBlock(n=3)
    T, bv = geo.time_to_boundary(M, PointVector([0.5, 0.5, 0.5], [1.0, 0.6, 0.0]))
    assert T == pytest.approx(0.5, abs=1e-9)
    assert np.allclose(bv.x, [1.0, 0.8, 0.5], atol=1e-9)
    assert bv.causal == "timelike" and bv.direction == "future" and bv.transversal
    Tb, bvb = geo.time_to_boundary(M, PointVector([0.5, 0.5, 0.5], [1.0, 0.6, 0.0]), "backward")
    assert Tb == pytest.approx(0.5, abs=1e-9)
    assert np.allclose(bvb.x, [0.0, 0.2, 0.5], atol=1e-9)


def test_exit_requires_interior_point():
    M = MinkowskiBlock(n=3)
    with pytest.raises(DomainError):
        geo.time_to_boundary(M, PointVector([0.0, 0.5, 0.5], [1.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        geo.time_to_boundary(M, PointVector([0.5, 0.5, 0.5], [1.0, 0.0, 0.0]), "sideways")


def test_alpha_traces_to_the_past():
    M = MinkowskiBlock(n=3)
    bv = geo.alpha(M, PointVector([0.5, 0.5, 0.5], [1.0, 0.6, 0.8]))
    assert np.allclose(bv.x, [0.0, 0.2, 0.1], atol=1e-9)
    assert bv.causal == "lightlike" and bv.direction == "future"
    with pytest.raises(ClassificationError):
        geo.alpha(M, PointVector([0.5, 0.5, 0.5], [1.0, 0.0, 0.0]))


def test_cylinder_great_circle():
    C = Cylinder(n=3, T=3.0)
    s = geo.flow(C, geo.GeodesicState([0.5, math.pi / 2, 0.0], [1.0, 0.0, 1.0]), 1.0)
    assert np.allclose(s.x, [1.5, math.pi / 2, 1.0], atol=1e-9)


@settings(max_examples=15)
@given(st.floats(0.3, 0.7), st.floats(0.3, 0.7), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0.05, 0.3))
def test_flow_preserves_norm_and_reverses(y, z, a, b, ds):
    M = ConformalBlock(n=3, amp=0.3)
    x0 = np.array([0.5, y, z])
    v0 = np.array([1.0, a, b])
    s1 = geo.flow(M, geo.GeodesicState(x0, v0), ds)
    q0 = inner(M.metric(x0), v0, v0)
    assert inner(M.metric(s1.x), s1.v, s1.v) == pytest.approx(q0, abs=1e-9)
    s2 = geo.flow(M, geo.GeodesicState(s1.x, s1.v), -ds)
    assert np.allclose(s2.x, x0, atol=1e-9)
    assert np.allclose(s2.v, v0, atol=1e-9)


@settings(max_examples=15)
@given(st.floats(0.3, 0.7), st.floats(0.3, 0.7), st.floats(-0.6, 0.6), st.floats(0.5, 4.0))
def test_exit_time_scales_inversely(y, z, a, lam):
    M = ConformalBlock(n=3, amp=0.2)
    pv = PointVector([0.5, y, z], [1.0, a, 0.1])
    T, bv = geo.time_to_boundary(M, pv)
    T2, bv2 = geo.time_to_boundary(M, pv.scaled(lam))
    assert T2 == pytest.approx(T / lam, rel=1e-8)
    assert np.allclose(bv2.x, bv.x, atol=1e-8)
    assert np.allclose(bv2.v, lam * bv.v, atol=1e-7)


def test_jacobi_flat_and_wronskian():
    M = MinkowskiBlock(n=4)
    x, v = np.array([0.5] * 4), np.array([1.0, 0.6, 0.8, 0.0])
    E = screen_frames(M.metric(x), v, M.tau(x))
    st0 = geo.GeodesicState(x, v, 0.0, list(E))
    J0 = geo.JacobiState(np.eye(2), np.array([[0.0, 1.0], [1.0, 0.0]]))
    _, J = geo.jacobi_flow(M, st0, J0, 0.3)
    assert np.allclose(J.A, J0.A + 0.3 * J0.Ap, atol=1e-12)
    assert np.allclose(J.Ap, J0.Ap, atol=1e-12)


def test_jacobi_wronskian_conserved_on_cylinder():
    C = Cylinder(n=3, T=3.0)
    x, v = np.array([0.5, 1.2, 0.3]), np.array([1.0, 0.6, 0.8 / math.sin(1.2)])
    E = screen_frames(C.metric(x), v, C.tau(x))
    st0 = geo.GeodesicState(x, v, 0.0, list(E))
    J0 = geo.JacobiState(np.array([[1.0]]), np.array([[0.5]]))
    _, J = geo.jacobi_flow(C, st0, J0, 1.0)
    assert np.allclose(J.wronskian(), J0.wronskian(), atol=1e-10)
    # unit sphere: A'' = -A along a unit-speed lightlike geodesic
    assert J.A[0, 0] == pytest.approx(math.cos(1.0) + 0.5 * math.sin(1.0), abs=1e-8)
