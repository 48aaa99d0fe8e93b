import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from causal_lens.data import (
    GenConfig,
    count_discards,
    dumps,
    export,
    gen_lens,
    gen_scattering,
    gen_sky_shadow,
    gen_time_probe,
    generate,
    ladder_eps,
    load,
    loads,
    sample_interior,
    unit_directions,
)
from causal_lens.errors import ConfigError, DomainError, DomainTooThinError, IOFailure, ParseError
from causal_lens.models import ConformalBlock, Cylinder, MinkowskiBlock, inner


def test_sample_interior_is_seeded_and_interior():
    M = ConformalBlock(n=3, amp=0.2)
    a = sample_interior(M, 20, seed=4)
    b = sample_interior(M, 20, seed=4)
    assert np.array_equal(a, b)
    assert np.all(M.boundary(a)[0] > 0.05)
    with pytest.raises(ConfigError):
        sample_interior(M, 0, seed=0)
    with pytest.raises(DomainTooThinError):
        sample_interior(M, 5, seed=0, margin=0.5)


@given(st.integers(1, 40), st.integers(2, 5), st.integers(0, 1000))
def test_unit_directions_are_unit(count, dim, seed):
    w = unit_directions(count, dim, np.random.default_rng(seed))
    assert w.shape == (count, dim)
    assert np.allclose(np.linalg.norm(w, axis=1), 1.0)


def test_time_probe_triples_are_consistent():
    M = MinkowskiBlock(n=3)
    p = np.array([[0.5, 0.5, 0.5]])
    recs = gen_time_probe(M, p, fan=6, seed=1)
    assert len(recs) == 36
    for r in recs[:12]:
        assert (r.xi.causal, r.xi.direction) == ("timelike", "future")
        assert (r.eta.causal, r.eta.direction) == ("lightlike", "future")
        u = r.xi.v
        assert np.allclose(r.xi.x + r.t * u, p[0], atol=1e-9)
        # eta's geodesic passes through p
        s = (p[0, 0] - r.eta.x[0]) / r.eta.v[0]
        assert np.allclose(r.eta.x + s * r.eta.v, p[0], atol=1e-9)


def test_generators_reject_boundary_points():
    M = MinkowskiBlock(n=3)
    with pytest.raises(DomainError):
        gen_time_probe(M, np.array([[0.0, 0.5, 0.5]]), fan=4, seed=0)


def test_lens_ladder():
    assert ladder_eps(3) == [0.5, 0.25, 0.125]
    M = MinkowskiBlock(n=3)
    recs = gen_lens(M, np.array([[0.5, 0.5, 0.5]]), fan=3, ladder=4, seed=0, plain=2)
    rungs = {r.approach for r in recs}
    assert rungs == {None, 1, 2, 3, 4}
    for r in recs:
        assert r.eta.causal == "timelike"


def test_scattering_structure():
    M = MinkowskiBlock(n=3)
    recs = gen_scattering(M, np.array([[0.5, 0.5, 0.5]]), fan=5, seed=0)
    unbroken = [r for r in recs if r.sub == "unbroken"]
    broken = [r for r in recs if r.sub == "broken"]
    assert len(unbroken) == 5 and len(broken) == 25
    for r in unbroken:
        # unbroken pairs lie on one straight lightlike line
        d = r.eta.x - r.xi.x
        assert inner(M.metric(r.xi.x), d, d) == pytest.approx(0.0, abs=1e-9)


def test_shadow_weingarten_flat():
    M = MinkowskiBlock(n=4)
    p = np.array([0.5, 0.5, 0.5, 0.5])
    sh = gen_sky_shadow(M, p, 10, seed=2)
    assert len(sh.vectors) == 10
    for bv, b in zip(sh.vectors, sh.b):
        T = (p[0] - bv.x[0]) / bv.v[0]
        assert np.allclose(b, -np.eye(2) / T, atol=1e-8)


def test_discard_counter():
    C = Cylinder(n=3, T=3.0)
    with count_discards() as box:
        gen_time_probe(C, sample_interior(C, 3, 0), fan=8, seed=0)
    assert box["discarded"] >= 0
    assert isinstance(box["discarded"], int)


@pytest.mark.parametrize("kinds", [("time_probe",), ("lens",), ("scatter",), ("shadow",)])
def test_roundtrip(kinds, tmp_path):
    M = ConformalBlock(n=3, amp=0.2)
    ds, _ = generate(M, GenConfig(points=2, fan=4, ladder=3, plain=1, kinds=kinds, seed=5))
    text = dumps(ds)
    ds2 = loads(text)
    assert dumps(ds2) == text
    path = tmp_path / "d.jsonl"
    export(ds, path)
    assert dumps(load(path)) == text


def test_generation_is_deterministic():
    M = Cylinder(n=3, T=3.0)
    cfg = GenConfig(points=2, fan=4, kinds=("time_probe", "scatter"), seed=9)
    assert dumps(generate(M, cfg)[0]) == dumps(generate(M, cfg)[0])


def test_blind_export_strips_provenance():
    M = MinkowskiBlock(n=3)
    ds, _ = generate(M, GenConfig(points=1, fan=3, ladder=2, plain=1, kinds=("lens", "shadow")))
    for line in dumps(ds, blind=True).splitlines()[1:]:
        d = json.loads(line)
        assert d.get("point_id") is None
        assert d.get("approach") is None


def _header(n=3):
    return json.dumps({"kind": "header", "model": {"name": "minkowski-block", "params": {"n": n}},
                       "n": n, "seed": 0, "version": 1})


def _tp(xi_v=(1.0, 0.0, 0.0), eta_v=(1.0, 1.0, 0.0), t=0.3, **extra):
    d = {"kind": "time_probe", "xi": {"x": [0.0, 0.5, 0.5], "v": list(xi_v)}, "t": t,
         "eta": {"x": [1.0, 0.5, 0.5], "v": list(eta_v)}}
    d.update(extra)
    return json.dumps(d)


@pytest.mark.parametrize(
    "lines, line_no, fragment",
    [
        ([], 1, "empty"),
        (["{not json"], 1, "invalid JSON"),
        ([json.dumps({"kind": "report"})], 1, "header"),
        (["HDR", _tp(t=-1.0)], 2, "negative"),
        (["HDR", _tp(xi_v=(0.0, 1.0, 0.0))], 2, "tag mismatch"),
        (["HDR", _tp(eta_v=(-1.0, -1.0, 0.0))], 2, "tag mismatch"),
        (["HDR", _tp(), _tp(t="x")], 3, "non-numeric"),
        (["HDR", '{"kind": "time_probe", "t": NaN}'], 2, "NaN"),
        (["HDR", json.dumps({"kind": "bogus"})], 2, "unknown record kind"),
        (["HDR", json.dumps({"kind": "scatter", "sub": "half"})], 2, "sub"),
    ],
)
def test_parse_errors_carry_line_numbers(lines, line_no, fragment):
    text = "\n".join(_header() if l == "HDR" else l for l in lines)
    with pytest.raises(ParseError) as exc:
        loads(text)
    assert exc.value.line == line_no
    assert fragment in str(exc.value)


def test_parse_accepts_valid_record():
    ds = loads(_header() + "\n" + _tp() + "\n")
    assert len(ds.records) == 1
    assert ds.records[0].t == pytest.approx(0.3)


def test_load_missing_file(tmp_path):
    with pytest.raises(IOFailure):
        load(tmp_path / "missing.jsonl")
