import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causal_lens.data import gen_lens, gen_time_probe
from causal_lens.errors import ConfigError, InconsistentFanError, UnderdeterminedError
from causal_lens.models import ConformalBlock, MinkowskiBlock
from causal_lens.timeprobe import (
    asymp_equiv,
    build_index,
    fit_metric,
    group_points,
    lens_to_time_probe,
    sigma_partition,
)

ETA = np.diag([-1.0, 1.0, 1.0])


def minkowski_fan(radii=(0.2, 0.5), angles=8):
    out = []
    for r in radii:
        for k in range(angles):
            a = 2 * math.pi * k / angles
            w = r * np.array([math.cos(a), math.sin(a)])
            out.append(np.array([math.sqrt(1 + w @ w), *w]))
    return np.array(out)


def test_fit_exact_minkowski_fan():
    Q, resid = fit_metric(minkowski_fan())
    assert np.allclose(Q, ETA, atol=1e-8)
    assert resid < 1e-10


def test_fit_underdetermined():
    with pytest.raises(UnderdeterminedError):
        fit_metric(minkowski_fan()[:3])
    with pytest.raises(UnderdeterminedError):
        fit_metric(None)


def test_fit_uniform_scaling_rescales_metric():
    Q, _ = fit_metric(2.0 * minkowski_fan())
    assert np.allclose(Q, ETA / 4.0, atol=1e-8)


def test_fit_mixed_scaling_is_inconsistent():
    U = minkowski_fan()
    U[::2] *= 2.0
    with pytest.raises(InconsistentFanError):
        fit_metric(U)


@settings(max_examples=20)
@given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8))
def test_fit_is_lorentz_equivariant(b1, b2):
    beta = np.array([b1, b2])
    if beta @ beta >= 0.8:
        return
    gam = 1 / math.sqrt(1 - beta @ beta)
    L = np.eye(3)
    L[0, 0] = gam
    L[0, 1:] = L[1:, 0] = gam * beta
    L[1:, 1:] += (gam - 1) * np.outer(beta, beta) / (beta @ beta + 1e-300)
    Q, _ = fit_metric(minkowski_fan() @ L.T)
    assert np.allclose(Q, ETA, atol=1e-7)


def _index(model, points, fan=12, seed=0):
    return build_index(model, gen_time_probe(model, np.atleast_2d(points), fan, seed))


def test_asymp_equiv_reflexive_and_empty_grid():
    idx = _index(MinkowskiBlock(n=3), [0.5, 0.5, 0.5], fan=6)
    assert asymp_equiv(idx, 0, 0)
    with pytest.raises(ConfigError):
        asymp_equiv(idx, 0, 0, tau_grid=[])
    with pytest.raises(ConfigError):
        group_points(idx, tau_grid=[])


def test_sigma_partition_empty():
    idx = build_index(MinkowskiBlock(n=3), [])
    assert sigma_partition(idx) == []
    assert group_points(idx).points == []


def test_single_point_one_group():
    M = MinkowskiBlock(n=3)
    p = np.array([0.5, 0.5, 0.5])
    res = group_points(_index(M, p, fan=40), M)
    assert len(res.points) == 1
    pt = res.points[0]
    assert len(pt.members) == 40
    assert np.allclose(pt.x, p, atol=1e-9)
    assert np.allclose(pt.fitted_g, ETA, atol=1e-6)


def test_timelike_related_points_separate():
    M = ConformalBlock(n=3, amp=0.2)
    P = np.array([[0.35, 0.5, 0.5], [0.65, 0.5, 0.5]])
    res = group_points(_index(M, P, fan=12), M)
    assert len(res.points) == 2
    got = sorted(tuple(np.round(pt.x, 6)) for pt in res.points)
    assert np.allclose(got, P, atol=1e-8)
    for pt in res.points:
        assert np.allclose(pt.fitted_g, M.metric(pt.x), atol=1e-6)
        assert len(pt.provenance) == 1


def test_data_only_grouping_has_no_fit():
    M = MinkowskiBlock(n=3)
    res = group_points(_index(M, [0.5, 0.5, 0.5], fan=8), M, chart_aware=False)
    assert res.points[0].fitted_g is None and res.points[0].tangent_fan is None


def test_lens_without_ladder_contributes_nothing():
    M = MinkowskiBlock(n=3)
    recs = gen_lens(M, np.array([[0.5, 0.5, 0.5]]), fan=4, ladder=0, seed=0, plain=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        assert lens_to_time_probe(M, recs) == []


def test_lens_limit_recovers_time_probe_points():
    M = MinkowskiBlock(n=3)
    p = np.array([0.5, 0.5, 0.5])
    recs = gen_lens(M, p[None], fan=8, ladder=8, seed=0, plain=2)
    for r in recs:
        r.approach = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        tp = lens_to_time_probe(M, recs)
    assert tp
    res = group_points(build_index(M, tp), M)
    assert len(res.points) == 1
    assert np.allclose(res.points[0].x, p, atol=1e-5)
