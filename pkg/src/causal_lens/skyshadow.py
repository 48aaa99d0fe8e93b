"""Null Weingarten maps of past light cones, Riccati blow-up and the map Psi.

Conventions: ``m = n - 2`` is the screen dimension; matrices ``b`` are
expressed in the canonical screen frame of the lightlike vector they belong
to (``models.screen_frames``). Along a lightlike geodesic with parallel
screen frame, ``b = A' A^-1`` for the Jacobi matrix ``A'' = -R A`` and
``b' = -b^2 - R``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geodesics as geo
from .errors import (
    ConjugatePointError,
    DataError,
    FiberDisagreementError,
    NoApexError,
)
from .matching import canonical_key
from .models import BoundaryVector, PointVector, inner, make_boundary_vector, screen_frames

BLOWUP_BAND = 0.05
MATCH_TOL = 1e-5
MAP_TOL = 1e-4
CONJUGATE_BAND = 0.05


@dataclass(frozen=True, eq=False)
class WeingartenState:
    eta: BoundaryVector
    frame: np.ndarray
    b: np.ndarray

    def asymmetry(self):
        return float(np.max(np.abs(self.b - self.b.T), initial=0.0))


@dataclass
class BlowupResult:
    """Per-row outcome of a Riccati blow-up search."""

    T: np.ndarray
    x: np.ndarray
    v: np.ndarray
    ok: np.ndarray
    band_entry: np.ndarray
    adot_max: np.ndarray
    adot_bound: np.ndarray
    remaining_bound: np.ndarray


def adjugate(A):
    """Batched adjugate of small square matrices (..., m, m)."""
    m = A.shape[-1]
    if m == 1:
        return np.ones_like(A)
    if m == 2:
        out = np.empty_like(A)
        out[..., 0, 0] = A[..., 1, 1]
        out[..., 1, 1] = A[..., 0, 0]
        out[..., 0, 1] = -A[..., 0, 1]
        out[..., 1, 0] = -A[..., 1, 0]
        return out
    out = np.empty_like(A)
    idx = np.arange(m)
    for i in range(m):
        for j in range(m):
            minor = A[..., idx != i, :][..., :, idx != j]
            out[..., j, i] = (-1) ** (i + j) * np.linalg.det(minor)
    return out


def _split_pair(P, m):
    return P[:, : m * m].reshape(-1, m, m), P[:, m * m : 2 * m * m].reshape(-1, m, m)


def _compact_rhs(model, x, v, E, P):
    m = E.shape[1]
    a = P[:, 0]
    sig = P[:, 1:].reshape(-1, m, m)
    R = geo.curvature_matrix(model, x, v, E)
    r = np.trace(R, axis1=1, axis2=2)
    eye = np.eye(m)
    R0 = R - (r / m)[:, None, None] * eye
    th = np.tan(a)
    trs2 = np.einsum("bij,bji->b", sig, sig)
    adot = -np.sin(a) ** 2 / m - np.cos(a) ** 2 * (trs2 + r)
    sdot = -2.0 * (th / m)[:, None, None] * sig - sig @ sig + (trs2 / m)[:, None, None] * eye - R0
    return np.concatenate([adot[:, None], sdot.reshape(-1, m * m)], axis=1)


def _direct_rhs(model, x, v, E, P):
    m = E.shape[1]
    b = P.reshape(-1, m, m)
    R = geo.curvature_matrix(model, x, v, E)
    return (-(b @ b) - R).reshape(-1, m * m)


def compact_adot(model, x, v, E, b):
    """Slope of a = arctan(tr b) for batched states."""
    m = E.shape[1]
    R = geo.curvature_matrix(model, x, v, E)
    r = np.trace(R, axis1=1, axis2=2)
    th = np.trace(b, axis1=1, axis2=2)
    sig = b - (th / m)[:, None, None] * np.eye(m)
    trs2 = np.einsum("bij,bji->b", sig, sig)
    a = np.arctan(th)
    return -np.sin(a) ** 2 / m - np.cos(a) ** 2 * (trs2 + r), r


def to_compact(b):
    m = b.shape[-1]
    th = np.trace(b, axis1=-2, axis2=-1)
    return np.arctan(th), b - (th / m)[..., None, None] * np.eye(m)


def from_compact(a, sig):
    m = sig.shape[-1]
    return (np.tan(a) / m)[..., None, None] * np.eye(m) + sig


def _apex_event(m):
    """u = det A / tr(adj(A) A') rises through 0 at the apex for any m."""

    def fn(y, m=m, n=None):
        P = y[:, fn.offset :]
        A, Ap = _split_pair(P, m)
        det = np.linalg.det(A)
        den = np.trace(adjugate(A) @ Ap, axis1=1, axis2=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den != 0, det / den, np.nan)

    return fn


def riccati_blowup_batch(model, x, v, b0, frames=None, band=BLOWUP_BAND, check_monotone=True):
    """Forward blow-up time of b' = -b^2 - R from boundary data (x, v, b0).

    Outside the band a = arctan(tr b) > -pi/2 + band the compact system is
    integrated; inside the band the equivalent linear Jacobi system with
    A = I, A' = b is integrated to the zero of det A, which is the apex.
    Rows that leave through the boundary first have ``ok = False``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    B, n = x.shape
    m = n - 2
    b0 = np.asarray(b0, dtype=float).reshape(B, m, m)
    if frames is None:
        frames = screen_frames(model.metric(x), v, model.tau(x))
    frames = np.asarray(frames, dtype=float)
    a0, sig0 = to_compact(b0)
    lower = -math.pi / 2 + band

    T1 = np.zeros(B)
    ok = np.ones(B, dtype=bool)
    xs, vs, Es, bs = x.copy(), v.copy(), frames.copy(), b0.copy()
    band_entry = np.zeros(B)
    adot_max = np.full(B, -np.inf)
    r_min = np.full(B, np.inf)

    outside = np.flatnonzero(a0 > lower)
    if outside.size:
        off = 2 * n + m * n

        def a_event(y):
            return y[:, off] - lower

        payload = np.concatenate([a0[outside, None], sig0[outside].reshape(-1, m * m)], axis=1)
        sys, res = geo.exit_batch(
            model, x[outside], v[outside], 1.0, frames=frames[outside],
            payload_dim=1 + m * m, payload_rhs=_compact_rhs, payload=payload,
            events=[geo.Event(a_event, -1)], raise_errors=False,
        )
        _raise_integration(res.status)
        hit = res.status == geo.EVENT
        ok[outside[~hit]] = False
        X, V, E, P = sys.split(res.y)
        T1[outside] = res.s
        xs[outside], vs[outside], Es[outside] = X, V, E
        bs[outside] = from_compact(P[:, 0], P[:, 1:].reshape(-1, m, m))

    rows = np.flatnonzero(ok)
    T = np.full(B, np.nan)
    xo, vo = np.full((B, n), np.nan), np.full((B, n), np.nan)
    if rows.size:
        ad, r = compact_adot(model, xs[rows], vs[rows], Es[rows], bs[rows])
        adot_max[rows] = ad
        r_min[rows] = r
        band_entry[rows] = T1[rows]
        eye = np.broadcast_to(np.eye(m), (rows.size, m, m))
        payload = np.concatenate([eye.reshape(-1, m * m), bs[rows].reshape(-1, m * m)], axis=1)
        ev = _apex_event(m)
        ev.offset = 2 * n + m * n
        sys, res = geo.exit_batch(
            model, xs[rows], vs[rows], 1.0, frames=Es[rows],
            payload_dim=2 * m * m, payload_rhs=geo.jacobi_rhs, payload=payload,
            events=[geo.Event(ev, +1)], raise_errors=False, record=check_monotone,
        )
        _raise_integration(res.status)
        hit = res.status == geo.EVENT
        ok[rows[~hit]] = False
        X, V, _, _ = sys.split(res.y)
        T[rows] = T1[rows] + res.s
        xo[rows], vo[rows] = X, V
        if check_monotone:
            for j, i in enumerate(rows):
                traj = res.trajectory[j][1:-1]
                if not traj:
                    continue
                Y = np.stack([yy for _, yy in traj])
                Xj, Vj, Ej, Pj = sys.split(Y)
                A, Ap = _split_pair(Pj, m)
                keep = np.abs(np.linalg.det(A)) > 1e-8
                if not keep.any():
                    continue
                bj = Ap[keep] @ np.linalg.inv(A[keep])
                ad, r = compact_adot(model, Xj[keep], Vj[keep], Ej[keep], bj)
                adot_max[i] = max(adot_max[i], ad.max())
                r_min[i] = min(r_min[i], r.min())
    C = np.maximum(0.0, -np.where(np.isfinite(r_min), r_min, 0.0))
    eps = 1.0 - math.cos(band) ** 2 + m * C * math.sin(band) ** 2
    bound = -(1.0 - eps) / m
    a_entry = np.where(a0 > lower, lower, a0)
    remaining = m * (a_entry + math.pi / 2) / np.maximum(1.0 - eps, 1e-12)
    T = np.where(ok, T, np.nan)
    return BlowupResult(T, xo, vo, ok, band_entry, adot_max, bound, remaining)


def _raise_integration(status):
    bad = (status == geo.ESCAPE) | (status == geo.STIFF) | (status == geo.BUDGET)
    if bad.any():
        geo._raise_for(status[bad], "riccati integration")


def riccati_blowup_time(model, eta, b0, band=BLOWUP_BAND):
    """Existence time of the maximal solution of b' = -b^2 - R, b(0) = b0."""
    pv = eta.pv if isinstance(eta, BoundaryVector) else eta
    res = riccati_blowup_batch(model, pv.x, pv.v, np.atleast_2d(b0), band=band)
    if not res.ok[0]:
        raise NoApexError("geodesic leaves the manifold before the Riccati solution blows up")
    return float(res.T[0])


def psi_inverse(model, eta, b0):
    pv = eta.pv if isinstance(eta, BoundaryVector) else eta
    res = riccati_blowup_batch(model, pv.x, pv.v, np.atleast_2d(b0))
    if not res.ok[0]:
        raise NoApexError("geodesic leaves the manifold before the Riccati solution blows up")
    return PointVector(res.x[0], res.v[0])


def psi_inverse_batch(model, x, v, b):
    return riccati_blowup_batch(model, x, v, b)


def _conjugate_event(m, offset, band=CONJUGATE_BAND):
    """Sign change of N cos c - D sin c with D = det A, N = tr(adj(A) A').

    Running backward from an apex, arctan(tr b) = arctan(N / D) rises to
    pi/2 just before a conjugate point; this smooth form has no poles.
    """
    c = math.pi / 2 - band

    def fn(y):
        A, Ap = _split_pair(y[:, offset:], m)
        D = np.linalg.det(A)
        N = np.trace(adjugate(A) @ Ap, axis1=1, axis2=2)
        return N * math.cos(c) - D * math.sin(c)

    return fn


@dataclass
class ConeResult:
    eta_x: np.ndarray
    eta_v: np.ndarray
    b: np.ndarray
    frames: np.ndarray
    T: np.ndarray
    status: np.ndarray


def cone_weingarten_batch(model, x, zeta, raise_conjugate=True):
    """Footprints and null Weingarten maps of past light cones.

    Each row (x, zeta) is an apex and a future lightlike tangent there. The
    Jacobi matrix with A = 0, A' = -I at the apex is carried backward to
    the boundary; b = A' A^-1 is returned in the canonical screen frame of
    the footprint. Rows hitting a conjugate point get status EVENT.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    zeta = np.atleast_2d(np.asarray(zeta, dtype=float))
    B, n = x.shape
    m = n - 2
    E0 = screen_frames(model.metric(x), zeta, model.tau(x))
    payload = np.concatenate(
        [np.zeros((B, m * m)), -np.broadcast_to(np.eye(m), (B, m, m)).reshape(B, -1)], axis=1
    )
    ev = _conjugate_event(m, 2 * n + m * n)
    sys, res = geo.exit_batch(
        model, x, zeta, -1.0, frames=E0, payload_dim=2 * m * m, payload_rhs=geo.jacobi_rhs,
        payload=payload, events=[geo.Event(ev, +1)], raise_errors=False,
    )
    _raise_integration(res.status)
    conj = res.status == geo.EVENT
    if raise_conjugate and conj.any():
        i = int(np.flatnonzero(conj)[0])
        raise ConjugatePointError(
            "Jacobi matrix becomes singular before the boundary (conjugate point)",
            parameter=float(res.s[i]),
        )
    X, V, E, P = sys.split(res.y)
    A, Ap = _split_pair(P, m)
    bE = np.full((B, m, m), np.nan)
    good = ~conj
    if good.any():
        bE[good] = np.linalg.solve(np.swapaxes(A[good], 1, 2), np.swapaxes(Ap[good], 1, 2)).swapaxes(1, 2)
    g = model.metric(X)
    F = screen_frames(g, V, model.tau(X))
    Q = np.einsum("zka,zab,zjb->zkj", F, g, E)
    b = Q @ bE @ np.swapaxes(Q, 1, 2)
    return ConeResult(X, V, b, F, np.abs(res.s), res.status)


def psi(model, zeta):
    """Boundary footprint of a lightlike vector with the cone's Weingarten map."""
    x = np.asarray(zeta.x, dtype=float)
    v = np.asarray(zeta.v, dtype=float)
    if inner(model.metric(x), v, model.tau(x)) > 0:
        # past-directed input: Psi is odd
        w = psi(model, PointVector(x, -v))
        return WeingartenState(w.eta.scaled(-1.0), w.frame, -w.b)
    res = cone_weingarten_batch(model, x, v)
    bv = make_boundary_vector(model, res.eta_x[0], res.eta_v[0])
    return WeingartenState(bv, res.frames[0], res.b[0])


def weingarten_of_cone(model, p, eta):
    """Null Weingarten map at the shadow vector ``eta`` of the cone of ``p``.

    ``eta`` must generate a future lightlike geodesic through ``p``; the
    apex tangent is found at the closest approach of that geodesic to p.
    """
    zeta = apex_tangent(model, p, eta)
    res = cone_weingarten_batch(model, np.asarray(p, float), zeta)
    # the recomputed footprint lies on the same geodesic; rescale to eta
    lam = np.linalg.norm(eta.v) / np.linalg.norm(res.eta_v[0])
    return WeingartenState(eta, res.frames[0], lam * res.b[0])


def apex_tangent(model, p, eta, tol=MATCH_TOL, sign=1.0):
    """Tangent of eta's geodesic at its closest approach to ``p``.

    ``sign`` = -1 traces backward, for vectors leaving through the boundary.
    """
    p = np.asarray(p, dtype=float)
    n = model.n

    ep = model.embed(p)

    def closest(y):
        # derivative of half the squared ambient distance to p
        d = model.embed(y[:, :n]) - ep
        return np.sum(d * model.embed_vectors(y[:, :n], y[:, n : 2 * n]), axis=1)

    sys, res = geo.exit_batch(
        model, eta.x, eta.v, sign, events=[geo.Event(closest, 1 if sign > 0 else -1)], raise_errors=False
    )
    X, V, _, _ = sys.split(res.y)
    gap = np.linalg.norm(model.embed(X[0]) - model.embed(p))
    if res.status[0] != geo.EVENT or gap > tol:
        raise DataError(f"vector is not a shadow vector of the point (miss distance {gap:.3g})")
    return V[0]


def cone_weingarten_at(model, x, zeta, ds):
    """b at affine distance ``ds`` behind the apex (no boundary stop)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    zeta = np.atleast_2d(np.asarray(zeta, dtype=float))
    B, n = x.shape
    m = n - 2
    E0 = screen_frames(model.metric(x), zeta, model.tau(x))
    payload = np.concatenate(
        [np.zeros((B, m * m)), -np.broadcast_to(np.eye(m), (B, m, m)).reshape(B, -1)], axis=1
    )
    sys = geo._System(model, m, 2 * m * m, geo.jacobi_rhs)
    res = geo.integrate(sys, geo.pack(x, zeta, E0, payload), -np.abs(np.asarray(ds, float)))
    geo._raise_for(res.status)
    X, V, E, P = sys.split(res.y)
    A, Ap = _split_pair(P, m)
    return Ap @ np.linalg.inv(A), X, V, E


def riccati_consistency(model, x, v, b0, s_end, frames=None):
    """Integrate direct and compact Riccati forms to ``s_end``; return both b."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    B, n = x.shape
    m = n - 2
    b0 = np.asarray(b0, dtype=float).reshape(B, m, m)
    if frames is None:
        frames = screen_frames(model.metric(x), v, model.tau(x))
    s_end = np.broadcast_to(np.asarray(s_end, float), (B,))
    sys_d = geo._System(model, m, m * m, _direct_rhs)
    rd = geo.integrate(sys_d, geo.pack(x, v, frames, b0.reshape(B, -1)), s_end, enforce_chart=False)
    a0, sig0 = to_compact(b0)
    sys_c = geo._System(model, m, 1 + m * m, _compact_rhs)
    pc = np.concatenate([a0[:, None], sig0.reshape(B, -1)], axis=1)
    rc = geo.integrate(sys_c, geo.pack(x, v, frames, pc), s_end, enforce_chart=False)
    bd = sys_d.split(rd.y)[3].reshape(B, m, m)
    P = sys_c.split(rc.y)[3]
    bc = from_compact(P[:, 0], P[:, 1:].reshape(B, m, m))
    return bd, bc


def immersivity_probe(model, eta, s, eps, h=1e-4):
    """Finite-difference d(theta)/ds where theta(eps, s) is the trace of b at
    parameter eps for the cone with apex at parameter s along eta's geodesic."""

    def theta(apex_s):
        x, v, _ = geo.flow_batch(model, eta.x[None], eta.v[None], apex_s)
        b, _, _, _ = cone_weingarten_at(model, x, v, apex_s - eps)
        return float(np.trace(b[0]))

    return (theta(s + h) - theta(s - h)) / (2 * h)


# -- conformal map -----------------------------------------------------


@dataclass
class MatchedPair:
    p1: np.ndarray
    p2: np.ndarray
    factor: float
    spread: float
    factor_spread: float


def _boundary_factor(model1, model2, x):
    """g2/g1 ratio of the time-time component at boundary base points."""
    g1 = model1.metric(x)[..., 0, 0]
    g2 = model2.metric(x)[..., 0, 0]
    return g2 / g1


def _resolve_shadow(model, vectors, bs):
    res = riccati_blowup_batch(model, vectors[:, 0], vectors[:, 1], bs, check_monotone=False)
    return res


def build_conformal_map(model1, model2, shadows1, shadows2, map_tol=MAP_TOL, match_tol=MATCH_TOL):
    """Match shadows of two models and push each through both Psi inverses.

    ``shadows*`` are lists of dicts with keys ``x`` (k, n), ``v`` (k, n),
    ``b`` (k, m, m). Shadows are paired by tolerance matching of their
    vector sets (base point and normalized direction). Returns a list of
    MatchedPair; raises FiberDisagreementError when a shadow has no partner
    or its vectors do not resolve to one point in either model.
    """
    if model1.n != model2.n:
        raise FiberDisagreementError("models have different dimensions", {"n1": model1.n, "n2": model2.n})
    index2 = _ShadowIndex(model1, shadows2, match_tol)
    pairs = []
    for j, sh1 in enumerate(shadows1):
        k, perm = index2.find(sh1)
        if k is None:
            raise FiberDisagreementError(
                f"shadow {j} of the first model has no counterpart in the second model",
                {"shadow": j, "reason": "unmatched"},
            )
        sh2 = shadows2[k]
        x1, v1, b1 = sh1["x"], sh1["v"], sh1["b"]
        x2, v2, b2 = sh2["x"][perm], sh2["v"][perm], sh2["b"][perm]
        r1 = _resolve_shadow(model1, np.stack([x1, v1], 1), b1)
        r2 = _resolve_shadow(model2, np.stack([x2, v2], 1), b2)
        if not (r1.ok.all() and r2.ok.all()):
            raise FiberDisagreementError(
                f"shadow {j}: some vectors have no apex", {"shadow": j, "reason": "no apex"}
            )
        p1 = model1.embed(r1.x)
        p2 = model2.embed(r2.x)
        s1 = float(np.max(np.linalg.norm(p1 - p1.mean(0), axis=1)))
        s2 = float(np.max(np.linalg.norm(p2 - p2.mean(0), axis=1)))
        if max(s1, s2) > map_tol:
            raise FiberDisagreementError(
                f"shadow {j}: vectors resolve to different points (spread {max(s1, s2):.3g})",
                {"shadow": j, "spread1": s1, "spread2": s2},
            )
        lam = np.linalg.norm(v2, axis=1) / np.linalg.norm(v1, axis=1)
        z1 = np.linalg.norm(r1.v, axis=1)
        z2 = np.linalg.norm(r2.v, axis=1) / lam
        fac = _boundary_factor(model1, model2, x1) * z1 / z2
        pairs.append(
            MatchedPair(
                p1=_representative(model1, r1.x),
                p2=_representative(model2, r2.x),
                factor=float(np.mean(fac)),
                spread=max(s1, s2),
                factor_spread=float(np.ptp(fac)),
            )
        )
    return pairs


def _representative(model, X):
    E = model.embed(X)
    i = int(np.argmin(np.linalg.norm(E - E.mean(0), axis=1)))
    return X[i]


class _ShadowIndex:
    """Find a shadow whose vector set matches a query set within tolerance."""

    def __init__(self, model, shadows, tol):
        from scipy.spatial import cKDTree

        model = self.model = model
        self.tol = tol
        self.shadows = shadows
        keys = []
        owner = []
        for k, sh in enumerate(shadows):
            keys.append(canonical_key(model, sh["x"], sh["v"]))
            owner.append(np.full(len(sh["x"]), k))
        self.keys = np.concatenate(keys) if keys else np.zeros((0, 1))
        self.owner = np.concatenate(owner) if owner else np.zeros(0, int)
        self.offsets = np.cumsum([0] + [len(sh["x"]) for sh in shadows])
        self.tree = cKDTree(self.keys) if len(self.keys) else None

    def find(self, sh):
        if self.tree is None:
            return None, None
        q = canonical_key(self.model, sh["x"], sh["v"])
        d, i = self.tree.query(q)
        if np.any(d > self.tol):
            return None, None
        owners = self.owner[i]
        if np.any(owners != owners[0]):
            return None, None
        k = int(owners[0])
        if len(self.shadows[k]["x"]) != len(sh["x"]):
            return None, None
        return k, i - self.offsets[k]


def monotone_ok(res, slack=1e-9):
    return res.adot_max <= res.adot_bound + slack


__all__ = [
    "WeingartenState",
    "BlowupResult",
    "riccati_blowup_time",
    "riccati_blowup_batch",
    "psi",
    "psi_inverse",
    "psi_inverse_batch",
    "weingarten_of_cone",
    "cone_weingarten_batch",
    "cone_weingarten_at",
    "riccati_consistency",
    "immersivity_probe",
    "build_conformal_map",
    "MatchedPair",
]
