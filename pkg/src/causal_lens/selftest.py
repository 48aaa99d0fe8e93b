"""Invariant suites run by ``causal-lens selftest``.

Each check returns ``(ok, detail)``; exceptions count as failures. The
sample sizes are chosen so the whole suite stays well under five minutes.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import geodesics as geo
from .data import (
    GenConfig,
    dumps,
    gen_lens,
    gen_scattering,
    gen_sky_shadow,
    gen_sky_shadows,
    gen_time_probe,
    generate,
    sample_interior,
)
from .errors import ConjugatePointError
from .matching import canonical_key
from .models import (
    BoundaryVector,
    ConformalBlock,
    Cylinder,
    MinkowskiBlock,
    PointVector,
    causal_classify,
    inner,
    normalize_timelike,
    riemann_from_christoffel,
    screen_frames,
)
from .skyshadow import (
    apex_tangent,
    cone_weingarten_at,
    cone_weingarten_batch,
    immersivity_probe,
    monotone_ok,
    psi,
    riccati_blowup_batch,
    riccati_consistency,
)
from .timeprobe import build_index, fit_metric, group_points, lens_to_time_probe


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


CHECKS = {}


def check(name):
    def deco(fn):
        CHECKS[name] = fn
        return fn

    return deco


def builtin_models():
    return [
        MinkowskiBlock(n=3),
        MinkowskiBlock(n=4),
        Cylinder(n=3, T=3.0),
        ConformalBlock(n=3),
        ConformalBlock(n=4),
    ]


def _label(model):
    return f"{model.name}/n={model.n}"


def _points(model, count, seed, margin=0.0):
    return sample_interior(model, count, seed, margin=margin)


def _random_unit_timelike(model, X, rng, rapidity=0.8):
    from .models import orthonormal_frame

    out = []
    for x in X:
        e = orthonormal_frame(model, x)
        w = rng.normal(size=model.n - 1)
        w /= np.linalg.norm(w)
        r = rng.uniform(0, rapidity)
        out.append(math.cosh(r) * e[0] + math.sinh(r) * (w @ e[1:]))
    return np.array(out)


def _random_lightlike(model, X, rng):
    from .models import orthonormal_frame

    out = []
    for x in X:
        e = orthonormal_frame(model, x)
        w = rng.normal(size=model.n - 1)
        w /= np.linalg.norm(w)
        out.append(e[0] + w @ e[1:])
    return np.array(out)


# -- metric models ---------------------------------------------------------


def _central(f, X, c, h):
    """Fourth-order central difference of f along coordinate c."""
    e = np.zeros(X.shape[1])
    e[c] = h
    return (8 * (f(X + e) - f(X - e)) - (f(X + 2 * e) - f(X - 2 * e))) / (12 * h)


def christoffel_fd(model, X, h=1e-4):
    """Levi-Civita symbols from central differences of the metric."""
    n = model.n
    dg = np.empty(X.shape[:1] + (n, n, n))  # dg[:, l, i, j] = d_l g_ij
    for l in range(n):
        dg[:, l] = _central(model.metric, X, l, h)
    gi = np.linalg.inv(model.metric(X))
    term = np.einsum("zilj->zlij", dg) + np.einsum("zjli->zlij", dg) - dg
    return 0.5 * np.einsum("zkl,zlij->zkij", gi, term)


def riemann_fd(model, X, h=1e-4):
    n = model.n
    dG = np.empty(X.shape[:1] + (n,) * 4)
    for c in range(n):
        dG[:, c] = _central(model.christoffel, X, c, h)
    return riemann_from_christoffel(model.christoffel(X), dG)


def _rel(a, b):
    num = np.linalg.norm((a - b).reshape(len(a), -1), axis=1)
    den = np.maximum(np.linalg.norm(b.reshape(len(b), -1), axis=1), 1.0)
    return float(np.max(num / den))


@check("metric: signature, time orientation, finite-difference Christoffel and Riemann")
def _metric_structure(samples=1000):
    worst_g, worst_r = 0.0, 0.0
    for model in builtin_models():
        X = _points(model, samples, seed=11)
        g = model.metric(X)
        ev = np.linalg.eigvalsh(g)
        if not (np.all(ev[:, 0] < 0) and np.all(ev[:, 1] > 0)):
            return False, f"{_label(model)}: signature is not Lorentzian"
        tau = model.tau(X)
        if np.any(inner(g, tau, tau) >= 0):
            return False, f"{_label(model)}: tau not timelike"
        worst_g = max(worst_g, _rel(christoffel_fd(model, X), model.christoffel(X)))
        worst_r = max(worst_r, _rel(riemann_fd(model, X), model.riemann(X)))
    ok = worst_g <= 1e-6 and worst_r <= 1e-5
    return ok, f"Christoffel rel {worst_g:.2e} (<=1e-6), Riemann rel {worst_r:.2e} (<=1e-5)"


@check("metric: normalization idempotent, tags under scaling, screen frames orthonormal")
def _vector_ops(samples=200):
    rng = np.random.default_rng(5)
    worst_norm, worst_frame = 0.0, 0.0
    for model in builtin_models():
        X = _points(model, samples, seed=12)
        U = _random_unit_timelike(model, X, rng) * rng.uniform(0.5, 3.0, size=(samples, 1))
        for x, u in zip(X[:50], U[:50]):
            a = normalize_timelike(model, PointVector(x, u))
            b = normalize_timelike(model, a)
            worst_norm = max(worst_norm, float(np.max(np.abs(a.v - b.v))))
            tag = causal_classify(model, PointVector(x, u))
            for lam in (0.3, 7.0):
                if causal_classify(model, PointVector(x, lam * u)) != tag:
                    return False, f"{_label(model)}: tag changed under positive scaling"
            neg = causal_classify(model, PointVector(x, -2.0 * u))
            if neg[0] != tag[0] or neg[1] == tag[1]:
                return False, f"{_label(model)}: negative scaling did not flip direction only"
        L = _random_lightlike(model, X, rng)
        g = model.metric(X)
        F = screen_frames(g, L, model.tau(X))
        gram = np.einsum("zia,zab,zjb->zij", F, g, F)
        ortho = np.einsum("zia,zab,zb->zi", F, g, L)
        m = model.n - 2
        worst_frame = max(worst_frame, float(np.max(np.abs(gram - np.eye(m)))), float(np.max(np.abs(ortho))))
    ok = worst_norm <= 1e-12 and worst_frame <= 1e-10
    return ok, f"normalize drift {worst_norm:.1e} (<=1e-12), screen frame error {worst_frame:.1e} (<=1e-10)"


# -- geodesic engine -------------------------------------------------------


def _mixed_vectors(model, X, rng):
    """Timelike, lightlike and spacelike rows."""
    from .models import orthonormal_frame

    V = np.empty_like(X)
    for i, x in enumerate(X):
        e = orthonormal_frame(model, x)
        w = rng.normal(size=model.n - 1)
        w /= np.linalg.norm(w)
        speed = (0.6, 1.0, 1.5)[i % 3]
        V[i] = e[0] + speed * (w @ e[1:])
    return V


@check("geodesics: causal-type conservation, flow composition, homogeneity")
def _flow_props(samples=60):
    rng = np.random.default_rng(7)
    worst_c, worst_f, worst_h = 0.0, 0.0, 0.0
    for model in builtin_models():
        X = _points(model, samples, seed=13, margin=0.05)
        V = _mixed_vectors(model, X, rng)
        T, _, _, _ = geo.time_to_boundary_batch(model, X, V, 1.0)
        s = 0.9 * T
        x1, v1, _ = geo.flow_batch(model, X, V, s)
        dq = np.abs(inner(model.metric(x1), v1, v1) - inner(model.metric(X), V, V))
        worst_c = max(worst_c, float(np.max(dq / (1 + s))))
        a, b = 0.4 * T, 0.5 * T
        xa, va, _ = geo.flow_batch(model, X, V, a)
        xab, _, _ = geo.flow_batch(model, xa, va, b)
        xd, _, _ = geo.flow_batch(model, X, V, a + b)
        worst_f = max(worst_f, float(np.max(np.abs(model.chart_delta(xab, xd)))))
        xl, _, _ = geo.flow_batch(model, X, 2.0 * V, 0.4 * T)
        xs, _, _ = geo.flow_batch(model, X, V, 0.8 * T)
        worst_h = max(worst_h, float(np.max(np.abs(model.chart_delta(xl, xs)))))
    ok = worst_c <= 1e-8 and worst_f <= 1e-8 and worst_h <= 1e-8
    return ok, f"g(v,v) drift {worst_c:.1e}, composition {worst_f:.1e}, homogeneity {worst_h:.1e} (all <=1e-8)"


@check("geodesics: boundary time scaling T(lam X) = T(X) / lam")
def _exit_scaling(samples=60):
    rng = np.random.default_rng(8)
    worst = 0.0
    for model in builtin_models():
        X = _points(model, samples, seed=14, margin=0.05)
        V = _mixed_vectors(model, X, rng)
        T1, _, _, _ = geo.time_to_boundary_batch(model, X, V, 1.0)
        for lam in (0.5, 2.0, 3.0):
            T2, _, _, _ = geo.time_to_boundary_batch(model, X, lam * V, 1.0)
            worst = max(worst, float(np.max(np.abs(lam * T2 - T1) / T1)))
    return worst <= 1e-8, f"relative error {worst:.1e} (<=1e-8)"


@check("geodesics: Jacobi Wronskian conservation")
def _wronskian(samples=40):
    rng = np.random.default_rng(9)
    worst = 0.0
    for model in builtin_models():
        m = model.n - 2
        X = _points(model, samples, seed=15, margin=0.05)
        L = _random_lightlike(model, X, rng)
        E = screen_frames(model.metric(X), L, model.tau(X))
        A0 = rng.normal(size=(samples, m, m))
        A1 = rng.normal(size=(samples, m, m))
        payload = np.concatenate([A0.reshape(samples, -1), A1.reshape(samples, -1)], axis=1)
        sys, res = geo.exit_batch(
            model, X, L, 1.0, frames=E, payload_dim=2 * m * m, payload_rhs=geo.jacobi_rhs, payload=payload
        )
        P = sys.split(res.y)[3]
        A, Ap = P[:, : m * m].reshape(-1, m, m), P[:, m * m :].reshape(-1, m, m)
        W0 = np.swapaxes(A0, 1, 2) @ A1 - np.swapaxes(A1, 1, 2) @ A0
        W1 = np.swapaxes(A, 1, 2) @ Ap - np.swapaxes(Ap, 1, 2) @ A
        worst = max(worst, float(np.max(np.abs(W1 - W0))))
    return worst <= 1e-8, f"Wronskian drift {worst:.1e} (<=1e-8)"


# -- boundary data ---------------------------------------------------------


@check("data: time-probe replay meets the eta geodesic")
def _replay(points=4, fan=6):
    worst = 0.0
    count = 0
    for model in (MinkowskiBlock(n=3), Cylinder(n=3, T=3.0), ConformalBlock(n=3)):
        P = sample_interior(model, points, seed=21)
        recs = gen_time_probe(model, P, fan, seed=21)
        step = max(1, len(recs) // 40)
        for r in recs[::step]:
            v = r.xi.v / math.sqrt(-inner(model.metric(r.xi.x), r.xi.v, r.xi.v))
            x, _, _ = geo.flow_batch(model, r.xi.x[None], v[None], r.t)
            apex_tangent(model, x[0], r.eta, tol=1e-6, sign=-1.0)
            gap = np.linalg.norm(model.chart_delta(x[0], P[r.point_id]))
            worst = max(worst, float(gap))
            count += 1
    return worst <= 1e-6, f"{count} triples replayed, max miss {worst:.1e} (<=1e-6)"


def _same_vector_sets(m1, bv1, m2, bv2, tol):
    K1 = canonical_key(m1, np.array([b.x for b in bv1]), np.array([b.v for b in bv1]))
    K2 = canonical_key(m2, np.array([b.x for b in bv2]), np.array([b.v for b in bv2]))
    if K1.shape != K2.shape:
        return math.inf
    return float(np.max(np.abs(np.sort(K1, axis=0) - np.sort(K2, axis=0))))


@check("data: lightlike data invariant under conformal change")
def _conformal_invariance(points=6, fan=12):
    flat, conf = MinkowskiBlock(n=3), ConformalBlock(n=3)
    P = sample_interior(flat, points, seed=22)
    worst = 0.0
    s1 = gen_sky_shadows(flat, P, fan, 22, weingarten=False)
    s2 = gen_sky_shadows(conf, P, fan, 22, weingarten=False)
    for a, b in zip(s1, s2):
        worst = max(worst, _same_vector_sets(flat, a.vectors, conf, b.vectors, 1e-5))
    c1 = gen_scattering(flat, P, fan, 22)
    c2 = gen_scattering(conf, P, fan, 22)
    for key in ("xi", "eta"):
        worst = max(
            worst,
            _same_vector_sets(flat, [getattr(r, key) for r in c1], conf, [getattr(r, key) for r in c2], 1e-5),
        )
    return worst <= 1e-5, f"max key difference {worst:.1e} (<=1e-5)"


@check("data: generation is byte-deterministic")
def _determinism():
    model = Cylinder(n=3, T=3.0)
    cfg = GenConfig(points=3, fan=6, ladder=3, kinds=("time_probe", "lens", "scatter", "shadow"), seed=4)
    a = dumps(generate(model, cfg)[0])
    b = dumps(generate(model, cfg)[0])
    return a == b, f"{len(a)} bytes, identical={a == b}"


# -- time-probe reconstruction -----------------------------------------------


def _time_probe_set(model, points=6, fan=16, seed=31):
    P = sample_interior(model, points, seed)
    return P, gen_time_probe(model, P, fan, seed)


@check("grouping: equivalence properties, provenance fibers, scaling invariance")
def _grouping(points=6, fan=16):
    details = []
    for model in (MinkowskiBlock(n=3), Cylinder(n=3, T=3.0), ConformalBlock(n=3)):
        P, recs = _time_probe_set(model, points, fan)
        index = build_index(model, recs)
        grid = index.default_tau_grid()
        res = group_points(index, model, fit=False)
        truth = sorted(frozenset(g.provenance) for g in res.points)
        if len(res.points) != points or any(len(p) != 1 for p in truth):
            return False, f"{_label(model)}: {len(res.points)} groups for {points} points"
        sig = index.signature(np.arange(len(index)), grid)
        for o in range(0, len(index), 7):
            if sig[o] != index.signature([o], grid)[0]:
                return False, f"{_label(model)}: equivalence not reflexive"
        for pt in res.points:
            ids = index.lookup(np.concatenate(
                [canonical_key(model, np.array([xi.x for xi, _ in pt.members]), np.array([xi.v for xi, _ in pt.members])),
                 np.array([[t] for _, t in pt.members])], axis=1))
            sigs = {sig[i] for i in ids}
            if len(sigs) != 1:
                return False, f"{_label(model)}: equivalence not transitive within group {pt.label}"
        scaled = [type(r)(r.xi.scaled(2.5), r.t, r.eta, r.point_id) for r in recs]
        res2 = group_points(build_index(model, scaled), model, fit=False)
        if [sorted(p.provenance) for p in res2.points] != [sorted(p.provenance) for p in res.points]:
            return False, f"{_label(model)}: grouping changed under xi scaling"
        details.append(f"{_label(model)} {len(res.points)} groups")
    return True, "; ".join(details)


@check("grouping: metric fit equivariance under frame change")
def _fit_equivariance():
    rng = np.random.default_rng(3)
    model = MinkowskiBlock(n=3)
    P, recs = _time_probe_set(model, 2, 16)
    res = group_points(build_index(model, recs), model)
    worst = 0.0
    for pt in res.points:
        Q, _ = fit_metric(pt.tangent_fan)
        for _ in range(3):
            A = np.eye(3) + 0.3 * rng.normal(size=(3, 3))
            Q2, _ = fit_metric(pt.tangent_fan @ A.T)
            Ai = np.linalg.inv(A)
            worst = max(worst, float(np.max(np.abs(Q2 - Ai.T @ Q @ Ai))))
    return worst <= 1e-8, f"max deviation {worst:.1e} (<=1e-8)"


@check("lens: limit extraction reproduces time-probe data")
def _lens_limit(points=3, fan=8, ladder=8):
    worst_dir, worst_t, missing = 0.0, 0.0, 0
    for model in (MinkowskiBlock(n=3), Cylinder(n=3, T=3.0)):
        P = sample_interior(model, points, seed=41)
        lens = gen_lens(model, P, fan, ladder, seed=41)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out = lens_to_time_probe(model, [type(r)(r.xi, r.t, r.eta, None, None) for r in lens])
        truth = gen_time_probe(model, P, fan, seed=41)
        K = lambda rs: np.concatenate(  # noqa: E731
            [canonical_key(model, np.array([r.xi.x for r in rs]), np.array([r.xi.v for r in rs])),
             canonical_key(model, np.array([r.eta.x for r in rs]), np.array([r.eta.v for r in rs]))[:, model.n:]],
            axis=1,
        )
        from scipy.spatial import cKDTree

        kt, ko = K(truth), K(out)
        d, i = cKDTree(ko).query(kt)
        missing += int(np.sum(d > 1e-3))
        good = d <= 1e-3
        worst_dir = max(worst_dir, float(np.max(d[good], initial=0.0)))
        t_out = np.array([r.t for r in out])
        worst_t = max(worst_t, float(np.max(np.abs(t_out[i[good]] - np.array([r.t for r in truth])[good]), initial=0.0)))
    ok = missing == 0 and worst_dir <= 1e-3 and worst_t <= 1e-3
    return ok, f"unmatched {missing}, direction error {worst_dir:.1e}, length error {worst_t:.1e} (<=1e-3)"


# -- sky shadows -----------------------------------------------------------


@check("shadows: Weingarten self-adjointness and rescaling law")
def _weingarten(samples=30):
    rng = np.random.default_rng(12)
    worst_sym, worst_scale = 0.0, 0.0
    for model in (MinkowskiBlock(n=4), ConformalBlock(n=4), Cylinder(n=3, T=3.0)):
        X = _points(model, samples, seed=51, margin=0.05)
        L = _random_lightlike(model, X, rng)
        r1 = cone_weingarten_batch(model, X, L)
        r2 = cone_weingarten_batch(model, X, 2.0 * L)
        worst_sym = max(worst_sym, float(np.max(np.abs(r1.b - np.swapaxes(r1.b, 1, 2)))))
        # the footprint of 2 zeta is lam * eta with lam from the velocities
        lam = np.linalg.norm(r2.eta_v, axis=1) / np.linalg.norm(r1.eta_v, axis=1)
        worst_scale = max(worst_scale, float(np.max(np.abs(r2.b - lam[:, None, None] * r1.b))))
    ok = worst_sym <= 1e-6 and worst_scale <= 1e-6
    return ok, f"asymmetry {worst_sym:.1e}, rescaling error {worst_scale:.1e} (<=1e-6)"


@check("shadows: direct and compact Riccati forms agree")
def _riccati_consistency(samples=30):
    rng = np.random.default_rng(13)
    worst = 0.0
    for model in (MinkowskiBlock(n=4), ConformalBlock(n=4), Cylinder(n=3, T=3.0)):
        m = model.n - 2
        X = _points(model, samples, seed=52, margin=0.05)
        L = _random_lightlike(model, X, rng)
        S = rng.normal(size=(samples, m, m))
        b0 = 0.5 * (S + np.swapaxes(S, 1, 2))
        bd, bc = riccati_consistency(model, X, L, b0, 0.1)
        theta = np.trace(bd, axis1=1, axis2=2)
        keep = np.abs(theta) <= 1e3
        worst = max(worst, float(np.max(np.abs(bd - bc)[keep])))
    return worst <= 1e-7, f"max difference {worst:.1e} (<=1e-7)"


@check("shadows: flat trace law theta = (n-2)/(t-T)")
def _trace_law():
    worst = 0.0
    for n in (3, 4, 5):
        model = MinkowskiBlock(n=n)
        x = np.full(n, 0.5)
        z = np.zeros(n)
        z[0], z[1] = 1.0, 1.0
        for d in (0.05, 0.1, 0.2, 0.4):
            b, _, _, _ = cone_weingarten_at(model, x, z, d)
            theta = float(np.trace(b[0]))
            expect = (n - 2) / (0.0 - d)
            worst = max(worst, abs(theta - expect) / abs(expect))
    return worst <= 1e-6, f"relative error {worst:.1e} (<=1e-6)"


@check("shadows: monotone blow-up band on accepted apexes")
def _monotone(points=6, fan=8):
    bad, total = 0, 0
    for model in (MinkowskiBlock(n=4), ConformalBlock(n=3), Cylinder(n=3, T=3.0)):
        P = sample_interior(model, points, seed=53)
        for sh in gen_sky_shadows(model, P, fan, 53):
            x, v = sh.arrays()
            res = riccati_blowup_batch(model, x, v, np.array(sh.b))
            acc = res.ok
            total += int(acc.sum())
            bad += int(np.sum(acc & ~monotone_ok(res)))
    return bad == 0 and total > 0, f"{total} apexes, {bad} band violations"


@check("shadows: immersivity probe |d theta/ds| >= 1/(2 (s-eps)^2)")
def _immersivity():
    model = MinkowskiBlock(n=3)
    eta = BoundaryVector(PointVector(np.array([0.0, 0.2, 0.5]), np.array([1.0, 1.0, 0.0])), "lightlike", "future", True)
    worst = math.inf
    for s in (0.3, 0.5, 0.7):
        for eps in (0.01, 0.05):
            d = immersivity_probe(model, eta, s, eps)
            worst = min(worst, abs(d) * (s - eps) ** 2)
    return worst >= 0.5, f"min |d theta/ds| (s-eps)^2 = {worst:.4f} (>=0.5)"


@check("shadows: cylinder shadows repeat after 2 pi; refocused cones are refused")
def _cylinder_counterexample(samples=20):
    model = Cylinder(n=3, T=7.0)
    rng = np.random.default_rng(61)
    worst = 0.0
    for k in range(samples):
        t0 = rng.uniform(0.2, 7.0 - 2 * math.pi - 0.1)
        q = np.array([rng.uniform(0.5, math.pi - 0.5), rng.uniform(-math.pi, math.pi)])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            a = gen_sky_shadow(model, np.r_[t0, q], 10, seed=61, index=k, weingarten=False)
            b = gen_sky_shadow(model, np.r_[t0 + 2 * math.pi, q], 10, seed=61, index=k, weingarten=False)
        cap_a = [bv for bv in a.vectors if bv.x[0] < 1e-6]
        cap_b = [bv for bv in b.vectors if bv.x[0] < 1e-6]
        worst = max(worst, _same_vector_sets(model, cap_a, model, cap_b, 1e-6))
    refused = False
    try:
        p = np.array([4.0, 1.2, 0.3])
        psi(model, PointVector(p, np.array([1.0, 0.0, 1.0 / math.sin(1.2)])))
    except ConjugatePointError:
        refused = True
    ok = worst <= 1e-6 and refused
    return ok, f"max difference {worst:.1e} (<=1e-6), conjugate refusal {'raised' if refused else 'missing'}"


def run(names=None, stream=None):
    """Run checks (all by default); returns a list of CheckResult."""
    out = []
    for name, fn in CHECKS.items():
        if names and not any(k in name for k in names):
            continue
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, reported with its type
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        res = CheckResult(name, bool(ok), detail, time.perf_counter() - t0)
        out.append(res)
        if stream is not None:
            stream(f"[{'PASS' if res.ok else 'FAIL'}] {name}: {detail} ({res.seconds:.1f}s)")
    return out
