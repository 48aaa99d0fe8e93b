"""Point recovery from time-probe data and the lens-limit reduction.

Omega elements are distinct pairs (xi, t); each carries the set Sigma of
lightlike vectors eta with (xi, t, eta) in the data. Elements are grouped
first by Sigma, then by connected components of a graph joining
asymptotically equivalent elements and k-nearest neighbours in the fan
direction parameter.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import DisjointSet
from scipy.spatial import cKDTree

from . import geodesics as geo
from .data import TimeProbeTriple
from .errors import ConfigError, InconsistentFanError, UnderdeterminedError
from .matching import MATCH_TOL, canonical_key, cluster_keys
from .models import BoundaryVector, PointVector, classify, inner, project_to_cone

FIT_TOL = 1e-6
TAU_STEPS = 16
KNN = 4
CONFLICT_JACCARD = 0.5
LADDER_TOL = 0.05
LINK_TOL = 0.05
MIN_RUNGS = 3
EXTRAPOLATION_RUNGS = 5


@dataclass
class SigmaClass:
    key: frozenset
    members: list
    sigma: list
    omega_ids: list = field(default_factory=list)


@dataclass
class ReconstructedPoint:
    label: int
    members: list
    tangent_fan: np.ndarray | None = None
    fitted_g: np.ndarray | None = None
    residual: float | None = None
    x: np.ndarray | None = None
    provenance: set = field(default_factory=set)


@dataclass
class Conflict:
    groups: tuple
    jaccard: float
    reason: str


@dataclass
class GroupingResult:
    points: list
    conflicts: list


class TimeProbeIndex:
    """Identifies (xi, t) and eta records up to the matching tolerance."""

    def __init__(self, model, records, tol=MATCH_TOL):
        self.model = model
        self.tol = tol
        self.records = records
        n = model.n
        if not records:
            self.omega = np.zeros(0, int)
            self.sigma = []
            self.omega_key = np.zeros((0, 2 * n + 1))
            self.xi = []
            self.t = np.zeros(0)
            self.eta_vectors = []
            self.tree = None
            return
        Xi = np.array([r.xi.x for r in records])
        Vi = np.array([r.xi.v for r in records])
        Xe = np.array([r.eta.x for r in records])
        Ve = np.array([r.eta.v for r in records])
        t = np.array([r.t for r in records])
        okey = np.concatenate([canonical_key(model, Xi, Vi), t[:, None]], axis=1)
        self.omega = cluster_keys(okey, tol)
        self.eta_id = cluster_keys(canonical_key(model, Xe, Ve), tol)
        M = int(self.omega.max()) + 1
        first = np.full(M, -1)
        for i in range(len(records) - 1, -1, -1):
            first[self.omega[i]] = i
        self.first = first
        self.omega_key = okey[first]
        self.xi = [records[i].xi for i in first]
        self.t = t[first]
        sets = [set() for _ in range(M)]
        for o, e in zip(self.omega, self.eta_id):
            sets[o].add(int(e))
        self.sigma = [frozenset(s) for s in sets]
        E = int(self.eta_id.max()) + 1
        efirst = np.full(E, -1)
        for i in range(len(records) - 1, -1, -1):
            efirst[self.eta_id[i]] = i
        self.eta_vectors = [records[i].eta for i in efirst]
        self.tree = cKDTree(self.omega_key)
        self.provenance = [set() for _ in range(M)]
        for o, r in zip(self.omega, records):
            if r.point_id is not None:
                self.provenance[o].add(r.point_id)

    def __len__(self):
        return len(self.sigma)

    def lookup(self, key_rows):
        """Omega ids matching rows of (xi key, t), or -1."""
        if self.tree is None:
            return np.full(len(key_rows), -1)
        d, i = self.tree.query(key_rows, p=np.inf)
        return np.where(d <= self.tol, i, -1)

    def sigma_of(self, omega_id):
        return frozenset() if omega_id < 0 else self.sigma[omega_id]

    def default_tau_grid(self):
        if len(self.t) == 0:
            return np.zeros(1)
        lo = -0.95 * float(self.t.min())
        hi = float(self.t.max())
        grid = np.linspace(lo, hi, TAU_STEPS)
        grid[np.argmin(np.abs(grid))] = 0.0
        return grid

    def signature(self, omegas, tau_grid):
        """Tuple of Sigma sets at t + tau for each tau, per omega id."""
        omegas = np.atleast_1d(omegas)
        base = self.omega_key[omegas]
        cols = []
        for tau in tau_grid:
            q = base.copy()
            q[:, -1] += tau
            cols.append(self.lookup(q))
        ids = np.stack(cols, axis=1)
        return [tuple(self.sigma_of(int(o)) for o in row) for row in ids]


def build_index(model, records, tol=MATCH_TOL):
    return TimeProbeIndex(model, [r for r in records if r.kind == "time_probe"], tol)


def asymp_equiv(index, a, b, tau_grid=None):
    """Discretized asymptotic equivalence of two Omega ids."""
    if tau_grid is None:
        tau_grid = index.default_tau_grid()
    tau_grid = np.asarray(tau_grid, dtype=float)
    if tau_grid.size == 0:
        raise ConfigError("empty tau grid")
    sa, sb = index.signature([a, b], tau_grid)
    return sa == sb


def sigma_partition(index):
    classes = {}
    for o, s in enumerate(index.sigma):
        classes.setdefault(s, []).append(o)
    out = []
    for key, members in classes.items():
        sigma = [index.eta_vectors[e] for e in sorted(key)]
        out.append(SigmaClass(key, [(index.xi[o], float(index.t[o])) for o in members], sigma, members))
    return out


def group_points(index, model=None, chart_aware=True, knn=KNN, tau_grid=None, fit=True):
    """Group Omega elements into reconstructed points.

    With ``chart_aware`` the members' tangents at the recovered point are
    computed in the model chart and a metric is fitted to them; otherwise
    groups carry no tangent fan.
    """
    if tau_grid is None:
        tau_grid = index.default_tau_grid()
    tau_grid = np.asarray(tau_grid, dtype=float)
    if tau_grid.size == 0:
        raise ConfigError("empty tau grid")
    M = len(index)
    if M == 0:
        return GroupingResult([], [])
    sig = index.signature(np.arange(M), tau_grid)
    uf = DisjointSet(range(M))
    classes = sigma_partition(index)
    for cl in classes:
        ids = cl.omega_ids
        # strip adjacency: nearest neighbours in the direction parameter
        if len(ids) > 1:
            feats = index.omega_key[ids, :-1]
            k = min(knn, len(ids) - 1)
            _, nb = cKDTree(feats).query(feats, k + 1)
            for a, row in zip(ids, nb):
                for j in np.atleast_1d(row)[1:]:
                    uf.merge(a, ids[int(j)])
    # asymptotic equivalence, within and across classes
    by_sig = {}
    for o in range(M):
        by_sig.setdefault(sig[o], []).append(o)
    for grp in by_sig.values():
        for o in grp[1:]:
            uf.merge(grp[0], o)
    conflicts = _conflicts(classes)

    roots = {}
    for o in range(M):
        roots.setdefault(uf[o], []).append(o)
    groups = sorted(roots.values(), key=lambda g: min(index.first[o] for o in g))
    points = []
    for label, g in enumerate(groups):
        prov = set().union(*(index.provenance[o] for o in g))
        members = [(index.xi[o], float(index.t[o])) for o in g]
        points.append(ReconstructedPoint(label, members, provenance=prov))
    if chart_aware and model is not None:
        attach_tangents(model, points)
        if fit:
            for pt in points:
                try:
                    pt.fitted_g, pt.residual = fit_metric(pt.tangent_fan)
                except (UnderdeterminedError, InconsistentFanError) as exc:
                    warnings.warn(f"group {pt.label}: {exc}", RuntimeWarning)
    return GroupingResult(points, conflicts)


def _conflicts(classes, threshold=CONFLICT_JACCARD):
    """Distinct Sigma classes whose eta sets overlap heavily."""
    owner = {}
    for c, cl in enumerate(classes):
        for e in cl.key:
            owner.setdefault(e, []).append(c)
    overlap = {}
    for cs in owner.values():
        for i in range(len(cs)):
            for j in range(i + 1, len(cs)):
                overlap[(cs[i], cs[j])] = overlap.get((cs[i], cs[j]), 0) + 1
    out = []
    for (i, j), inter in sorted(overlap.items()):
        union = len(classes[i].key | classes[j].key)
        jac = inter / union
        if jac >= threshold:
            out.append(Conflict((i, j), jac, "sigma sets overlap but differ; not merged"))
    return out


def attach_tangents(model, points):
    """Flow each normalized xi for its length t; record tangents and base."""
    xs, vs, ts, owner = [], [], [], []
    for k, pt in enumerate(points):
        for xi, t in pt.members:
            xs.append(xi.x)
            vs.append(xi.v)
            ts.append(t)
            owner.append(k)
    if not xs:
        return
    X = np.array(xs)
    V = np.array(vs)
    V = V / np.sqrt(-inner(model.metric(X), V, V))[:, None]
    Xp, Up, _ = geo.flow_batch(model, X, V, np.array(ts))
    owner = np.array(owner)
    for k, pt in enumerate(points):
        sel = owner == k
        pt.tangent_fan = Up[sel]
        pt.x = _mean_point(model, Xp[sel])


def _mean_point(model, X):
    ref = X[0]
    return model.canonicalize(ref + np.mean(model.chart_delta(X, ref), axis=0))


def fit_metric(fan, fit_tol=FIT_TOL):
    """Least-squares symmetric Q with Q(u, u) = -1 over the fan vectors.

    Returns (Q, residual RMS).
    """
    if fan is None:
        raise UnderdeterminedError("no tangent fan")
    U = np.atleast_2d(np.asarray(fan, dtype=float))
    K, n = U.shape
    need = n * (n + 1) // 2
    if K < need + 2:
        raise UnderdeterminedError(f"fan has {K} vectors; at least {need + 2} needed")
    iu = np.triu_indices(n)
    D = U[:, iu[0]] * U[:, iu[1]] * np.where(iu[0] == iu[1], 1.0, 2.0)
    sv = np.linalg.svd(D, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise UnderdeterminedError("fan too flat: quadratic design matrix is rank deficient")
    q, *_ = np.linalg.lstsq(D, -np.ones(K), rcond=None)
    Q = np.zeros((n, n))
    Q[iu] = q
    Q = Q + np.triu(Q, 1).T
    resid = float(np.sqrt(np.mean((D @ q + 1.0) ** 2)))
    if resid > fit_tol:
        raise InconsistentFanError(f"fan vectors are not unit for one form (residual {resid:.3g})")
    ev = np.linalg.eigvalsh(Q)
    if not (ev[0] < 0 < ev[1]):
        raise InconsistentFanError("fitted form is not Lorentzian")
    return Q, resid


# -- lens limit ----------------------------------------------------------------


def _riemannian(g, tau):
    """h = g + 2 (tau_hat)^flat (x) (tau_hat)^flat, positive definite."""
    tn = tau / np.sqrt(-inner(g, tau, tau))[..., None]
    tf = np.einsum("...ij,...j->...i", g, tn)
    return g + 2.0 * tf[..., :, None] * tf[..., None, :]


def lens_to_time_probe(model, lens_records, ladder_tol=LADDER_TOL, link_tol=LINK_TOL,
                       min_rungs=MIN_RUNGS, rungs=EXTRAPOLATION_RUNGS, tol=MATCH_TOL):
    """Extract lightlike limits of timelike second legs.

    Records are grouped by xi; within a group, second legs are clustered by
    exit point and light-cone-projected direction. A cluster whose records approach
    the light cone (mu = -g(eta, eta) / h(eta, eta) below ``ladder_tol``) in
    at least ``min_rungs`` monotone rungs is extrapolated to mu = 0 with a
    polynomial in sqrt(mu); the limit eta is projected onto the light cone.
    Approach indices are ignored.
    """
    recs = [r for r in lens_records if r.kind == "lens"]
    if not recs:
        return []
    Xi = np.array([r.xi.x for r in recs])
    Vi = np.array([r.xi.v for r in recs])
    Xe = np.array([r.eta.x for r in recs])
    Ve = np.array([r.eta.v for r in recs])
    t = np.array([r.t for r in recs])
    xi_id = cluster_keys(canonical_key(model, Xi, Vi), tol)
    g = model.metric(Xe)
    h = _riemannian(g, model.tau(Xe))
    mu = -inner(g, Ve, Ve) / inner(h, Ve, Ve)
    P = project_to_cone(g, Ve)
    P = P / np.linalg.norm(P, axis=1, keepdims=True)
    D = canonical_key(model, Xe, P)
    near = (mu > 0) & (mu < ladder_tol)
    out = []
    skipped = 0
    for x_id in range(int(xi_id.max()) + 1):
        sel = np.flatnonzero((xi_id == x_id) & near)
        if sel.size < min_rungs:
            continue
        cl = cluster_keys(D[sel], link_tol)
        xi = recs[sel[0]].xi
        for c in range(int(cl.max()) + 1):
            rows = sel[cl == c]
            res = _extrapolate(model, Xe[rows], P[rows], t[rows], mu[rows], min_rungs, rungs)
            if res is None:
                skipped += 1
                continue
            x_star, v_star, t_star = res
            bv = BoundaryVector(PointVector(x_star, v_star), "lightlike", "future", True)
            out.append(TimeProbeTriple(xi, t_star, bv, recs[rows[0]].point_id))
    if skipped:
        warnings.warn(f"{skipped} candidate ladders skipped (too short or non-monotone)", RuntimeWarning)
    return out


def _extrapolate(model, X, P, t, mu, min_rungs, rungs):
    order = np.argsort(-mu)
    X, P, t, mu = X[order], P[order], t[order], mu[order]
    if len(mu) < min_rungs:
        return None
    if np.any(np.diff(mu) >= 0) or np.any(np.diff(t) >= 0):
        return None
    X, P, t, mu = X[-rungs:], P[-rungs:], t[-rungs:], mu[-rungs:]
    s = np.sqrt(mu)
    deg = min(len(s) - 1, 3)
    ref = X[-1]
    dX = model.chart_delta(X, ref)
    vals = np.concatenate([dX, P, t[:, None]], axis=1)
    coef = np.polyfit(s, vals, deg)
    lim = coef[-1]
    n = model.n
    x_star = model.canonicalize(ref + lim[:n])
    v = lim[n : 2 * n]
    g = model.metric(x_star)
    v = project_to_cone(g, v)
    if np.linalg.norm(v) < 1e-8:
        return None
    v = v / np.linalg.norm(v)
    causal, direction = classify(g, v, model.tau(x_star))
    if direction != "future":
        return None
    return x_star, v, float(lim[-1])
