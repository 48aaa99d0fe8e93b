"""Boundary data generation and JSON-lines serialization.

Data is produced constructively: fans of geodesics are shot from hidden
interior points and traced to the boundary. Every fan is a deterministic
function of ``(seed, point index, fan kind)`` so different data kinds
generated from one configuration share their directions.
"""
from __future__ import annotations

import json
import math
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from . import geodesics as geo
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    DomainTooThinError,
    IOFailure,
    ParseError,
)
from .models import (
    BOUNDARY_TOL,
    CLASSIFICATION_TOL,
    BoundaryVector,
    PointVector,
    classify,
    is_transversal,
    model_from_description,
    orthonormal_frame,
    project_to_cone,
)

SAMPLE_MARGIN = 0.05
POLE_MARGIN = 1e-2
RAPIDITIES = (0.2, 0.45, 0.7)
FORMAT_VERSION = 1
KINDS = ("time_probe", "lens", "scatter", "shadow")

_SALT = {"timelike": 11, "lightlike": 23, "plain": 37}


# -- records -------------------------------------------------------------


@dataclass(eq=False)
class TimeProbeTriple:
    xi: BoundaryVector
    t: float
    eta: BoundaryVector
    point_id: int | None = None
    kind = "time_probe"


@dataclass(eq=False)
class LensTriple:
    xi: BoundaryVector
    t: float
    eta: BoundaryVector
    approach: int | None = None
    point_id: int | None = None
    kind = "lens"


@dataclass(eq=False)
class ScatterPair:
    xi: BoundaryVector
    eta: BoundaryVector
    sub: str
    point_id: int | None = None
    kind = "scatter"


@dataclass(eq=False)
class SkyShadowSample:
    point_id: int | None
    vectors: list
    b: list | None = None
    kind = "shadow"

    def arrays(self):
        x = np.array([bv.x for bv in self.vectors])
        v = np.array([bv.v for bv in self.vectors])
        return x, v


@dataclass
class Dataset:
    header: dict
    records: list = field(default_factory=list)

    @property
    def model(self):
        return model_from_description(self.header["model"])

    def of_kind(self, kind, sub=None):
        out = [r for r in self.records if r.kind == kind]
        if sub is not None:
            out = [r for r in out if r.sub == sub]
        return out

    def kinds(self):
        return sorted({r.kind for r in self.records})


@dataclass
class GenConfig:
    points: int = 10
    fan: int = 16
    fan_light: int | None = None
    ladder: int = 8
    plain: int = 4
    kinds: tuple = ("time_probe",)
    seed: int = 0
    margin: float = SAMPLE_MARGIN
    weingarten: bool = True

    @property
    def light(self):
        return self.fan if self.fan_light is None else self.fan_light

    def as_dict(self):
        return {
            "points": self.points,
            "fan": self.fan,
            "fan_light": self.light,
            "ladder": self.ladder,
            "plain": self.plain,
            "kinds": list(self.kinds),
            "margin": self.margin,
            "weingarten": self.weingarten,
        }


# -- sampling and fans ------------------------------------------------------


def sample_interior(model, count, seed, margin=SAMPLE_MARGIN, budget_factor=1000):
    """Seeded-uniform interior points with F > margin, pole-avoidant."""
    if count < 1:
        raise ConfigError("count must be at least 1")
    rng = np.random.default_rng(seed)
    out = []
    tried = 0
    budget = budget_factor * count
    while len(out) < count:
        if tried >= budget:
            raise DomainTooThinError(f"only {len(out)} of {count} points found with F > {margin}")
        batch = max(16, 2 * (count - len(out)))
        cand = model.sample_candidates(rng, batch)
        tried += batch
        F, _ = model.boundary(cand)
        keep = (F > margin) & model.is_sample_safe(cand)
        out.extend(cand[keep])
    return np.array(out[:count])


def _fan_rng(seed, index, kind):
    return np.random.default_rng([int(seed), int(index), _SALT[kind]])


def unit_directions(count, dim, rng):
    """Even directions on S^(dim-1) with a seeded rotation."""
    if count < 1:
        return np.zeros((0, dim))
    if dim == 2:
        ang = 2 * math.pi * (np.arange(count) + 0.5) / count + rng.uniform(0, 2 * math.pi)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if dim == 3:
        i = np.arange(count)
        z = 1 - (2 * i + 1) / count
        phi = i * math.pi * (3 - math.sqrt(5))
        r = np.sqrt(1 - z * z)
        pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        return Rotation.random(random_state=rng).apply(pts)
    w = rng.normal(size=(count, dim))
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def fan_directions(model, seed, index, count, kind):
    return unit_directions(count, model.n - 1, _fan_rng(seed, index, kind))


def timelike_fan(model, x, seed, index, count):
    """Unit future timelike vectors at x in chart components."""
    e = orthonormal_frame(model, x)
    om = fan_directions(model, seed, index, count, "timelike")
    r = np.array([RAPIDITIES[j % len(RAPIDITIES)] for j in range(count)])
    return np.cosh(r)[:, None] * e[0] + np.sinh(r)[:, None] * (om @ e[1:])


def lightlike_fan(model, x, seed, index, count):
    """Future lightlike vectors e0 + w with w a unit spatial direction."""
    e = orthonormal_frame(model, x)
    om = fan_directions(model, seed, index, count, "lightlike")
    return e[0] + om @ e[1:], om


# -- tracing ---------------------------------------------------------------

_DISCARD_STACK = []


@contextmanager
def count_discards():
    """Collect the number of rays dropped for nontransverse or unsafe exits."""
    box = {"discarded": 0}
    _DISCARD_STACK.append(box)
    try:
        yield box
    finally:
        _DISCARD_STACK.pop()


def _note_discards(keep):
    for box in _DISCARD_STACK:
        box["discarded"] += int(np.size(keep) - np.count_nonzero(keep))


def _exits(model, x, v, sign, lightlike=False):
    """Trace rows to the boundary; returns (affine length, exit x, exit v, keep).

    For lightlike rays the exit velocity is put back on the light cone,
    removing integrator drift in g(v, v).
    """
    x = np.atleast_2d(x)
    v = np.atleast_2d(v)
    if x.shape[0] == 0:
        return np.zeros(0), np.zeros((0, model.n)), np.zeros((0, model.n)), np.zeros(0, bool)
    T, X, V, status = geo.time_to_boundary_batch(model, x, v, sign)
    if lightlike:
        V = project_to_cone(model.metric(X), V)
    keep = is_transversal(model, X, V, geo.TRANSVERSAL_MARGIN)
    keep &= model.is_sample_safe(X, pole_margin=POLE_MARGIN)
    _note_discards(keep)
    return T, X, V, keep


def _bv(model, x, v):
    g = model.metric(x)
    causal, direction = classify(g, v, model.tau(x))
    return BoundaryVector(PointVector(x, v), str(causal), str(direction), True)


def _check_interior(model, points):
    F, _ = model.boundary(points)
    if np.any(F <= BOUNDARY_TOL):
        raise DomainError("data is defined for interior points only")


def _timelike_legs(model, points, seed, count):
    """Past timelike fans: per point a list of (xi, t)."""
    xs, vs, owner = [], [], []
    for i, p in enumerate(points):
        u = timelike_fan(model, p, seed, i, count)
        xs.append(np.repeat(p[None], len(u), 0))
        vs.append(u)
        owner.append(np.full(len(u), i))
    T, X, V, keep = _exits(model, np.concatenate(xs), np.concatenate(vs), -1.0)
    owner = np.concatenate(owner)
    out = [[] for _ in points]
    for j in np.flatnonzero(keep):
        out[owner[j]].append((_bv(model, X[j], V[j]), float(T[j])))
    return out


def _lightlike_exits(model, points, seed, count, sign, extra=None):
    xs, vs, owner = [], [], []
    for i, p in enumerate(points):
        z, _ = lightlike_fan(model, p, seed, i, count)
        if extra and i in extra:
            z = np.concatenate([z, np.atleast_2d(extra[i])])
        xs.append(np.repeat(p[None], len(z), 0))
        vs.append(z)
        owner.append(np.full(len(z), i))
    owner = np.concatenate(owner)
    T, X, V, keep = _exits(model, np.concatenate(xs), np.concatenate(vs), sign, lightlike=True)
    return owner, T, X, V, keep


def gen_time_probe(model, points, fan, seed, fan_light=None):
    points = np.atleast_2d(points)
    _check_interior(model, points)
    legs = _timelike_legs(model, points, seed, fan)
    owner, _, X, V, keep = _lightlike_exits(model, points, seed, fan_light or fan, 1.0)
    out = []
    for i in range(len(points)):
        etas = [_bv(model, X[j], V[j]) for j in np.flatnonzero((owner == i) & keep)]
        if not legs[i] or not etas:
            warnings.warn(f"point {i}: all rays nontransverse, skipped", RuntimeWarning)
            continue
        for xi, t in legs[i]:
            for eta in etas:
                out.append(TimeProbeTriple(xi, t, eta, i))
    return out


def ladder_eps(depth):
    return [2.0**-k for k in range(1, depth + 1)]


def gen_lens(model, points, fan, ladder, seed, fan_light=None, plain=4):
    """Broken timelike lens triples with rapidity ladders toward each
    lightlike fan direction; ``approach`` is the ladder rung k >= 1, or
    None for plain timelike second legs."""
    points = np.atleast_2d(points)
    _check_interior(model, points)
    legs = _timelike_legs(model, points, seed, fan)
    eps = ladder_eps(ladder)
    xs, vs, owner, rung, scale = [], [], [], [], []
    for i, p in enumerate(points):
        e = orthonormal_frame(model, p)
        om = fan_directions(model, seed, i, fan_light or fan, "lightlike")
        for k, ek in enumerate(eps, start=1):
            z = e[0] + math.sqrt(1 - ek * ek) * (om @ e[1:])
            xs.append(np.repeat(p[None], len(z), 0))
            vs.append(z)
            owner.append(np.full(len(z), i))
            rung.append(np.full(len(z), k))
            scale.append(np.full(len(z), ek))
        if plain:
            u = timelike_fan(model, p, seed + 7919, i, plain)
            xs.append(np.repeat(p[None], len(u), 0))
            vs.append(u)
            owner.append(np.full(len(u), i))
            rung.append(np.full(len(u), 0))
            scale.append(np.ones(len(u)))
    owner, rung, scale = map(np.concatenate, (owner, rung, scale))
    T, X, V, keep = _exits(model, np.concatenate(xs), np.concatenate(vs), 1.0)
    keep &= T * scale > 0
    out = []
    for i in range(len(points)):
        sel = np.flatnonzero((owner == i) & keep)
        seconds = [(_bv(model, X[j], V[j]), float(scale[j] * T[j]), int(rung[j]) or None) for j in sel]
        for xi, t1 in legs[i]:
            for eta, t2, k in seconds:
                out.append(LensTriple(xi, t1 + t2, eta, k, i))
    return out


def gen_scattering(model, points, fan, seed, extra=None):
    """Unbroken pairs through each point and broken pairs with breakpoint
    at the point. ``extra`` maps point index to additional lightlike
    directions (rows) added to that point's fan."""
    points = np.atleast_2d(points)
    _check_interior(model, points)
    o1, _, Xb, Vb, kb = _lightlike_exits(model, points, seed, fan, -1.0, extra)
    o2, _, Xf, Vf, kf = _lightlike_exits(model, points, seed, fan, 1.0, extra)
    out = []
    for i in range(len(points)):
        sel = np.flatnonzero((o1 == i) & kb & kf)
        xis = [_bv(model, Xb[j], Vb[j]) for j in sel]
        etas = [_bv(model, Xf[j], Vf[j]) for j in sel]
        for xi, eta in zip(xis, etas):
            out.append(ScatterPair(xi, eta, "unbroken", i))
        for xi in xis:
            for eta in etas:
                out.append(ScatterPair(xi, eta, "broken", i))
    return out


def gen_sky_shadow(model, p, m, seed=0, index=0, weingarten=True):
    """Past sky shadow of p: footprints of past lightlike rays, stored
    future-directed, optionally with the cone's null Weingarten maps."""
    return gen_sky_shadows(model, np.atleast_2d(p), m, seed, weingarten, start=index)[0]


def gen_sky_shadows(model, points, m, seed, weingarten=True, start=0):
    from .skyshadow import cone_weingarten_batch

    points = np.atleast_2d(np.asarray(points, dtype=float))
    _check_interior(model, points)
    xs, vs, owner = [], [], []
    for i, p in enumerate(points):
        z, _ = lightlike_fan(model, p, seed, start + i, m)
        xs.append(np.repeat(p[None], len(z), 0))
        vs.append(z)
        owner.append(np.full(len(z), i))
    owner = np.concatenate(owner)
    X0, Z = np.concatenate(xs), np.concatenate(vs)
    if weingarten:
        res = cone_weingarten_batch(model, X0, Z, raise_conjugate=False)
        X, V, B = res.eta_x, res.eta_v, res.b
        conj = res.status == geo.EVENT
        if conj.any():
            warnings.warn(
                f"{int(conj.sum())} shadow rays meet a conjugate point; their Weingarten maps are omitted",
                RuntimeWarning,
            )
            # footprints of those rays still exist; trace them plainly
            _, X[conj], V[conj], _ = _exits(model, X0[conj], Z[conj], -1.0, lightlike=True)
    else:
        _, X, V, _ = _exits(model, X0, Z, -1.0, lightlike=True)
        B, conj = None, np.zeros(len(X), bool)
    keep = is_transversal(model, X, V, geo.TRANSVERSAL_MARGIN) & model.is_sample_safe(X, pole_margin=POLE_MARGIN)
    if weingarten:
        _note_discards(keep[~conj])
    out = []
    for i in range(len(points)):
        sel = np.flatnonzero((owner == i) & keep)
        if len(sel) < model.n:
            warnings.warn(f"point {start + i}: degenerate shadow with {len(sel)} vectors", RuntimeWarning)
        vecs = [_bv(model, X[j], V[j]) for j in sel]
        bs = None
        if weingarten:
            bs = [None if conj[j] else B[j] for j in sel]
        out.append(SkyShadowSample(start + i, vecs, bs))
    return out


def generate(model, cfg: GenConfig):
    """Run the generators named in ``cfg.kinds``; returns a Dataset."""
    for k in cfg.kinds:
        if k not in KINDS:
            raise ConfigError(f"unknown data kind {k!r}; choose from {', '.join(KINDS)}")
    points = sample_interior(model, cfg.points, cfg.seed, cfg.margin)
    header = make_header(model, cfg.seed, cfg.as_dict())
    ds = Dataset(header)
    for kind in KINDS:
        if kind not in cfg.kinds:
            continue
        if kind == "time_probe":
            ds.records += gen_time_probe(model, points, cfg.fan, cfg.seed, cfg.light)
        elif kind == "lens":
            ds.records += gen_lens(model, points, cfg.fan, cfg.ladder, cfg.seed, cfg.light, cfg.plain)
        elif kind == "scatter":
            ds.records += gen_scattering(model, points, cfg.light, cfg.seed)
        elif kind == "shadow":
            ds.records += gen_sky_shadows(model, points, cfg.light, cfg.seed, cfg.weingarten)
    return ds, points


def make_header(model, seed, gen=None):
    h = {"kind": "header", "model": model.describe(), "n": model.n, "seed": int(seed), "version": FORMAT_VERSION}
    if gen is not None:
        h["gen"] = gen
    return h


# -- serialization ---------------------------------------------------------


def _vec(bv):
    return {"x": [float(c) for c in bv.x], "v": [float(c) for c in bv.v]}


def record_to_json(rec, blind=False):
    if rec.kind == "time_probe":
        d = {"kind": "time_probe", "xi": _vec(rec.xi), "t": float(rec.t), "eta": _vec(rec.eta)}
    elif rec.kind == "lens":
        d = {
            "kind": "lens",
            "xi": _vec(rec.xi),
            "t": float(rec.t),
            "eta": _vec(rec.eta),
            "approach": None if blind else rec.approach,
        }
    elif rec.kind == "scatter":
        d = {"kind": "scatter", "sub": rec.sub, "xi": _vec(rec.xi), "eta": _vec(rec.eta)}
    elif rec.kind == "shadow":
        vecs = []
        for j, bv in enumerate(rec.vectors):
            e = _vec(bv)
            if rec.b is not None and rec.b[j] is not None:
                e["b"] = np.asarray(rec.b[j], float).tolist()
            vecs.append(e)
        return {"kind": "shadow", "point_id": None if blind else rec.point_id, "vectors": vecs}
    else:
        raise DataError(f"unknown record kind {rec.kind!r}")
    if not blind and rec.point_id is not None:
        d["point_id"] = rec.point_id
    return d


def dumps(ds, blind=False):
    lines = [json.dumps(ds.header, allow_nan=False)]
    for rec in ds.records:
        lines.append(json.dumps(record_to_json(rec, blind), allow_nan=False))
    return "\n".join(lines) + "\n"


def export(ds, path, blind=False):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps(ds, blind))
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


_EXPECT = {
    "time_probe": (("xi", "timelike"), ("eta", "lightlike")),
    "lens": (("xi", "timelike"), ("eta", "timelike")),
    "scatter": (("xi", "lightlike"), ("eta", "lightlike")),
}


def _finite(obj):
    if isinstance(obj, float):
        return math.isfinite(obj)
    if isinstance(obj, (list, tuple)):
        return all(_finite(o) for o in obj)
    if isinstance(obj, dict):
        return all(_finite(o) for o in obj.values())
    return True


def _vector_arrays(d, n, line):
    try:
        x = [float(c) for c in d["x"]]
        v = [float(c) for c in d["v"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed vector: {exc}", line) from exc
    if len(x) != n or len(v) != n:
        raise ParseError(f"vector components must have length {n}", line)
    return x, v


def _check_vectors(model, X, V, expect, lines):
    """Batch chart and causal-tag validation; reports the first bad line."""
    if len(X) == 0:
        return np.zeros(0, "U9"), np.zeros(0, "U6")
    bad_chart = ~model.in_chart(X)
    with np.errstate(all="ignore"):
        got, direction = classify(model.metric(X), V, model.tau(X), CLASSIFICATION_TOL)
    mismatch = (got != expect) | (direction != "future")
    for i in np.flatnonzero(bad_chart | mismatch):
        if bad_chart[i]:
            raise ParseError("base point outside the chart box", int(lines[i]))
        raise ParseError(
            f"tag mismatch: expected future {expect[i]}, found {direction[i]} {got[i]}", int(lines[i])
        )
    return got, direction


def _parse_records(header, dicts, first_line):
    try:
        model = model_from_description(header["model"])
    except DataError:
        raise
    except Exception as exc:
        raise ParseError(f"bad model description: {exc}", 1) from exc
    n = int(header["n"])
    if model.n != n:
        raise ParseError("header dimension does not match the model", 1)
    X, V, expect, where = [], [], [], []
    plan = []
    for k, d in enumerate(dicts):
        line = first_line + k
        kind = d.get("kind")
        try:
            if kind in ("time_probe", "lens"):
                t = d.get("t")
                if not isinstance(t, (int, float)) or isinstance(t, bool):
                    raise ParseError("missing or non-numeric length t", line)
                if t < 0:
                    raise ParseError("negative length", line)
                slots = []
                for key, causal in _EXPECT[kind]:
                    x, v = _vector_arrays(d[key], n, line)
                    slots.append(len(X))
                    X.append(x), V.append(v), expect.append(causal), where.append(line)
                plan.append((kind, d, slots))
            elif kind == "scatter":
                if d.get("sub") not in ("broken", "unbroken"):
                    raise ParseError("scatter record needs sub = broken | unbroken", line)
                slots = []
                for key in ("xi", "eta"):
                    x, v = _vector_arrays(d[key], n, line)
                    slots.append(len(X))
                    X.append(x), V.append(v), expect.append("lightlike"), where.append(line)
                plan.append((kind, d, slots))
            elif kind == "shadow":
                slots = []
                for e in d.get("vectors", []):
                    x, v = _vector_arrays(e, n, line)
                    slots.append(len(X))
                    X.append(x), V.append(v), expect.append("lightlike"), where.append(line)
                plan.append((kind, d, slots))
            else:
                raise ParseError(f"unknown record kind {kind!r}", line)
        except KeyError as exc:
            raise ParseError(f"missing field {exc}", line) from exc
    X = np.array(X, dtype=float).reshape(-1, n)
    V = np.array(V, dtype=float).reshape(-1, n)
    got, direction = _check_vectors(model, X, V, np.array(expect, dtype="U9"), where)
    bvs = [
        BoundaryVector(PointVector(X[i], V[i]), str(got[i]), str(direction[i]), True) for i in range(len(X))
    ]
    recs = []
    for kind, d, slots in plan:
        pid = d.get("point_id")
        if kind == "time_probe":
            recs.append(TimeProbeTriple(bvs[slots[0]], float(d["t"]), bvs[slots[1]], pid))
        elif kind == "lens":
            recs.append(LensTriple(bvs[slots[0]], float(d["t"]), bvs[slots[1]], d.get("approach"), pid))
        elif kind == "scatter":
            recs.append(ScatterPair(bvs[slots[0]], bvs[slots[1]], d["sub"], pid))
        else:
            bs = [np.array(e["b"], dtype=float) if "b" in e else None for e in d["vectors"]]
            vecs = [bvs[j] for j in slots]
            recs.append(SkyShadowSample(pid, vecs, bs if any(b is not None for b in bs) else None))
    return recs


def loads(text):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", 1)
    header = _load_line(lines[0], 1)
    if header.get("kind") != "header":
        raise ParseError("first line must be the header", 1)
    for key in ("model", "n", "seed", "version"):
        if key not in header:
            raise ParseError(f"header lacks {key!r}", 1)
    if header["version"] != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {header['version']}", 1)
    dicts = [_load_line(raw, i) for i, raw in enumerate(lines[1:], start=2)]
    return Dataset(header, _parse_records(header, dicts, 2))


def _load_line(raw, i):
    try:
        d = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", i) from exc
    if not isinstance(d, dict):
        raise ParseError("record must be a JSON object", i)
    if not _finite(d):
        raise ParseError("NaN or infinite field", i)
    return d


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    return loads(text)
