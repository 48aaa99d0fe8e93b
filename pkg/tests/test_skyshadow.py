import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causal_lens.data import gen_sky_shadow
from causal_lens.errors import ConjugatePointError, DataError, FiberDisagreementError, NoApexError
from causal_lens.models import ConformalBlock, Cylinder, MinkowskiBlock, PointVector
from causal_lens.skyshadow import (
    adjugate,
    apex_tangent,
    build_conformal_map,
    cone_weingarten_batch,
    from_compact,
    psi,
    psi_inverse,
    riccati_blowup_time,
    riccati_consistency,
    to_compact,
    weingarten_of_cone,
)

P4 = np.array([0.5, 0.5, 0.5, 0.5])
Z4 = np.array([1.0, 0.6, 0.8, 0.0])


def test_flat_cone_weingarten():
    M = MinkowskiBlock(n=4)
    w = psi(M, PointVector(P4, Z4))
    assert np.allclose(w.eta.x, [0.0, 0.2, 0.1, 0.5], atol=1e-9)
    assert np.allclose(w.b, -2.0 * np.eye(2), atol=1e-9)
    assert w.asymmetry() < 1e-12


def test_psi_is_odd():
    M = ConformalBlock(n=3, amp=0.2)
    p, z = np.array([0.5, 0.4, 0.6]), np.array([1.0, 0.6, 0.8]) / 1.04
    w = psi(M, PointVector(p, z))
    wn = psi(M, PointVector(p, -z))
    assert np.allclose(wn.eta.v, -w.eta.v)
    assert np.allclose(wn.b, -w.b)
    assert wn.eta.direction == "past"


def test_flat_blowup_time_and_inverse():
    M = MinkowskiBlock(n=4)
    eta = PointVector([0.0, 0.2, 0.1, 0.5], Z4)
    assert riccati_blowup_time(M, eta, -2.0 * np.eye(2)) == pytest.approx(0.5, abs=1e-9)
    back = psi_inverse(M, eta, -2.0 * np.eye(2))
    assert np.allclose(back.x, P4, atol=1e-9)
    assert np.allclose(back.v, Z4, atol=1e-9)


def test_no_apex_inside():
    M = MinkowskiBlock(n=4)
    eta = PointVector([0.0, 0.2, 0.1, 0.5], Z4)
    with pytest.raises(NoApexError):
        riccati_blowup_time(M, eta, -0.5 * np.eye(2))
    with pytest.raises(NoApexError):
        psi_inverse(M, eta, np.eye(2))


@settings(max_examples=20)
@given(st.floats(0.3, 0.7), st.floats(0.3, 0.7), st.floats(0, 2 * math.pi))
def test_psi_inverse_roundtrip(y, z, ang):
    M = ConformalBlock(n=3, amp=0.3)
    p = np.array([0.55, y, z])
    zeta = np.array([1.0, math.cos(ang), math.sin(ang)]) / M.omega(p)
    w = psi(M, PointVector(p, zeta))
    back = psi_inverse(M, w.eta, w.b)
    assert np.allclose(back.x, p, atol=1e-7)
    assert np.allclose(back.v, zeta, atol=1e-6)


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_compact_roundtrip_and_adjugate(c):
    b = np.array(c).reshape(2, 2)
    b = 0.5 * (b + b.T)
    a, sig = to_compact(b)
    assert np.allclose(from_compact(a, sig), b, atol=1e-9)
    assert np.trace(sig) == pytest.approx(0.0, abs=1e-12)
    A = np.array(c).reshape(1, 2, 2) + np.eye(2)
    assert np.allclose(adjugate(A)[0] @ A[0], np.linalg.det(A[0]) * np.eye(2), atol=1e-9)


def test_riccati_forms_agree():
    M = ConformalBlock(n=4, amp=0.3)
    x, v = P4[None], np.array([[1.0, 0.6, 0.0, 0.8]])
    bd, bc = riccati_consistency(M, x, v, np.array([[[0.4, 0.1], [0.1, -0.2]]]), 0.3)
    assert np.allclose(bd, bc, atol=1e-8)


def test_weingarten_of_cone_matches_generator():
    M = ConformalBlock(n=3, amp=0.2)
    p = np.array([0.5, 0.45, 0.55])
    sh = gen_sky_shadow(M, p, 6, seed=1)
    for bv, b in zip(sh.vectors, sh.b):
        w = weingarten_of_cone(M, p, bv)
        assert np.allclose(w.b, b, atol=1e-7)


def test_apex_tangent_rejects_foreign_vector():
    M = MinkowskiBlock(n=3)
    sh = gen_sky_shadow(M, [0.5, 0.5, 0.5], 4, seed=0)
    with pytest.raises(DataError):
        apex_tangent(M, np.array([0.5, 0.2, 0.8]), sh.vectors[0])


def test_cylinder_conjugate_point_refused():
    C = Cylinder(n=3, T=5.0)
    p = np.array([4.5, math.pi / 2, 0.0])
    with pytest.raises(ConjugatePointError) as exc:
        cone_weingarten_batch(C, p, np.array([1.0, 0.0, 1.0]))
    # reported at the band offset just before the antipodal focus
    assert abs(exc.value.parameter) == pytest.approx(math.pi - 0.05, abs=0.05)


def _shadows(model, points, m=6):
    out = []
    for i, p in enumerate(points):
        sh = gen_sky_shadow(model, p, m, seed=0, index=i)
        x, v = sh.arrays()
        out.append({"x": x, "v": v, "b": np.array(sh.b)})
    return out


def test_conformal_map_identity_factor():
    M1 = MinkowskiBlock(n=3)
    M2 = ConformalBlock(n=3, amp=0.2)
    P = np.array([[0.5, 0.5, 0.5], [0.6, 0.4, 0.5]])
    pairs = build_conformal_map(M1, M2, _shadows(M1, P), _shadows(M2, P))
    for pair, p in zip(pairs, P):
        assert np.allclose(pair.p1, p, atol=1e-6)
        assert np.allclose(pair.p2, p, atol=1e-6)
        assert pair.factor == pytest.approx(M2.omega(p) ** 2, rel=1e-6)


def test_conformal_map_unmatched():
    M = MinkowskiBlock(n=3)
    s1 = _shadows(M, [[0.5, 0.5, 0.5]])
    s2 = _shadows(M, [[0.6, 0.5, 0.5]])
    with pytest.raises(FiberDisagreementError):
        build_conformal_map(M, M, s1, s2)
    with pytest.raises(FiberDisagreementError):
        build_conformal_map(M, MinkowskiBlock(n=4), s1, s1)
