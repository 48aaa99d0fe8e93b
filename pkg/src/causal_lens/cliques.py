"""Sky shadows from lightlike scattering data via maximal cliques.

Two incoming vectors xi1, xi2 are related when each is broken-scattered to
the unbroken partner of the other. On models without refocusing the
maximal cliques of this relation are exactly the past sky shadows.
"""
from __future__ import annotations

import numpy as np

from .errors import CliqueBudgetError, DataInconsistencyError, HypothesisViolation
from .matching import MATCH_TOL, canonical_key, cluster_keys

NODE_BUDGET = 10**6


def degeneracy_order(adj):
    """Vertices in degeneracy (smallest-last) order."""
    deg = [len(a) for a in adj]
    buckets = {}
    for v, d in enumerate(deg):
        buckets.setdefault(d, set()).add(v)
    removed = np.zeros(len(adj), bool)
    order = []
    d = 0
    for _ in range(len(adj)):
        d = max(d - 1, 0)
        while not buckets.get(d):
            d += 1
        v = min(buckets[d])
        buckets[d].discard(v)
        removed[v] = True
        order.append(v)
        for w in adj[v]:
            if not removed[w]:
                buckets[deg[w]].discard(w)
                deg[w] -= 1
                buckets.setdefault(deg[w], set()).add(w)
    return order


def maximal_cliques(adj, budget=NODE_BUDGET):
    """All maximal cliques of an undirected graph given as a list of sets.

    Bron-Kerbosch with pivoting, started from a degeneracy ordering. Raises
    CliqueBudgetError once more than ``budget`` recursion nodes are visited.
    Cliques are returned as sorted tuples in sorted order.
    """
    out = []
    visited = 0

    def expand(R, P, X):
        nonlocal visited
        visited += 1
        if visited > budget:
            raise CliqueBudgetError(f"clique enumeration exceeded {budget} recursion nodes")
        if not P and not X:
            out.append(tuple(sorted(R)))
            return
        pivot = max(P | X, key=lambda u: len(P & adj[u]))
        for v in sorted(P - adj[pivot]):
            expand(R | {v}, P & adj[v], X & adj[v])
            P = P - {v}
            X = X | {v}

    pos = {}
    for i, v in enumerate(degeneracy_order(adj)):
        pos[v] = i
    for v in sorted(pos, key=pos.get):
        later = {w for w in adj[v] if pos[w] > pos[v]}
        earlier = adj[v] - later
        expand({v}, later, earlier)
    return sorted(out)


def _ids(model, bvs, tol):
    X = np.array([bv.x for bv in bvs], dtype=float).reshape(-1, model.n)
    V = np.array([bv.v for bv in bvs], dtype=float).reshape(-1, model.n)
    return cluster_keys(canonical_key(model, X, V), tol)


def relation_graph(model, unbroken, broken, tol=MATCH_TOL):
    """Adjacency of the relation I over the incoming vectors.

    Returns (adjacency list of sets, representative BoundaryVector per node).
    """
    unbroken = list(unbroken)
    broken = list(broken)
    ns, nb = len(unbroken), len(broken)
    xi_all = [r.xi for r in unbroken] + [r.xi for r in broken]
    eta_all = [r.eta for r in unbroken] + [r.eta for r in broken]
    if not xi_all:
        return [], []
    xi_id = _ids(model, xi_all, tol)
    eta_id = _ids(model, eta_all, tol)
    known = set(xi_id[:ns].tolist())
    missing = sorted(set(xi_id[ns:].tolist()) - known)
    if missing:
        j = ns + int(np.flatnonzero(xi_id[ns:] == missing[0])[0])
        raise DataInconsistencyError(
            f"{len(missing)} incoming vectors have no unbroken partner (first at {np.round(xi_all[j].x, 6).tolist()})"
        )
    # the vertex universe is every incoming vector; renumber densely
    nodes = np.unique(xi_id)
    index = {int(k): i for i, k in enumerate(nodes)}
    rep = [None] * len(nodes)
    for j in range(len(xi_all)):
        i = index[int(xi_id[j])]
        if rep[i] is None:
            rep[i] = xi_all[j]
    partner = {}
    for j in range(ns):
        partner.setdefault(int(eta_id[j]), set()).add(index[int(xi_id[j])])
    arcs = set()
    for j in range(ns, ns + nb):
        a = index[int(xi_id[j])]
        for c in partner.get(int(eta_id[j]), ()):
            if c != a:
                arcs.add((a, c))
    adj = [set() for _ in nodes]
    for a, c in arcs:
        if (c, a) in arcs:
            adj[a].add(c)
            adj[c].add(a)
    return adj, rep


def scattering_to_sky_shadows(model, unbroken, broken, tol=MATCH_TOL, budget=NODE_BUDGET):
    """Shadow vector sets: maximal cliques of size >= 2 of the relation I."""
    adj, rep = relation_graph(model, unbroken, broken, tol)
    cliques = [c for c in maximal_cliques(adj, budget) if len(c) >= 2]
    return [[rep[i] for i in c] for c in cliques]


def check_hypotheses(model, points=8, fan=8, seed=0):
    """Refuse models whose lightlike geodesics refocus.

    Light cones of sampled interior points are traced toward the past and
    the future with their Jacobi matrices; a conjugate point anywhere means
    distinct lightlike geodesics meet twice and the clique reconstruction
    is invalid.
    """
    from .data import lightlike_fan, sample_interior
    from .geodesics import EVENT
    from .skyshadow import cone_weingarten_batch

    P = sample_interior(model, points, seed)
    xs, zs = [], []
    for i, p in enumerate(P):
        z, _ = lightlike_fan(model, p, seed, i, fan)
        xs.append(np.repeat(p[None], len(z), 0))
        zs.append(z)
    X, Z = np.concatenate(xs), np.concatenate(zs)
    for sign, label in ((1.0, "past"), (-1.0, "future")):
        res = cone_weingarten_batch(model, X, sign * Z, raise_conjugate=False)
        hit = res.status == EVENT
        if hit.any():
            i = int(np.flatnonzero(hit)[0])
            raise HypothesisViolation(
                f"{model.name}: {label} light cone of {np.round(X[i], 4).tolist()} refocuses "
                f"(Jacobi matrix singular near affine parameter {res.T[i]:.4g}); shadows are not determined by scattering data"
            )
