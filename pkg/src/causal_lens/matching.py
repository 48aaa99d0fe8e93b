"""Tolerance-based identification of boundary vectors."""
from __future__ import annotations

import numpy as np
from scipy.cluster.hierarchy import DisjointSet
from scipy.spatial import cKDTree

MATCH_TOL = 1e-5


def vector_key(x, v):
    """Base point followed by the Euclidean-normalized direction."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    return np.concatenate([x, v / np.linalg.norm(v, axis=1, keepdims=True)], axis=1)


def cluster_keys(keys, tol=MATCH_TOL):
    """Union-find clusters of rows closer than ``tol`` in max-norm.

    Returns integer ids numbered by first occurrence, so the labelling is
    independent of tree internals.
    """
    keys = np.asarray(keys, dtype=float)
    if len(keys) == 0:
        return np.zeros(0, dtype=int)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = np.ravel(inverse)
    ds = DisjointSet(range(len(uniq)))
    if len(uniq) > 1:
        for i, j in cKDTree(uniq).query_pairs(tol, p=np.inf, output_type="ndarray"):
            ds.merge(int(i), int(j))
    root = np.array([ds[i] for i in range(len(uniq))])[inverse]
    _, first, inv = np.unique(root, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=int)
    rank[np.argsort(first)] = np.arange(len(first))
    return rank[np.ravel(inv)]


def pair_ids(model, bvs, tol=MATCH_TOL):
    X = np.array([bv.x for bv in bvs]).reshape(-1, model.n)
    V = np.array([bv.v for bv in bvs]).reshape(-1, model.n)
    return cluster_keys(canonical_key(model, X, V), tol)


def canonical_key(model, X, V):
    """Matching key in chart-independent coordinates."""
    return vector_key(model.embed(X), model.embed_vectors(X, V))
