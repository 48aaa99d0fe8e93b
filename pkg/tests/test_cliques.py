import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causal_lens.cliques import (
    check_hypotheses,
    degeneracy_order,
    maximal_cliques,
    relation_graph,
    scattering_to_sky_shadows,
)
from causal_lens.data import gen_scattering
from causal_lens.errors import CliqueBudgetError, DataInconsistencyError, HypothesisViolation
from causal_lens.models import ConformalBlock, Cylinder, MinkowskiBlock

nx = pytest.importorskip("networkx")


def _adj(n, edges):
    adj = [set() for _ in range(n)]
    for a, b in edges:
        if a != b:
            adj[a].add(b)
            adj[b].add(a)
    return adj


@st.composite
def graphs(draw):
    n = draw(st.integers(0, 14))
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    return n, edges


@settings(max_examples=60)
@given(graphs())
def test_maximal_cliques_match_networkx(g):
    n, edges = g
    G = nx.Graph()
    G.add_nodes_from(range(n))
    G.add_edges_from(edges)
    expected = sorted(tuple(sorted(c)) for c in nx.find_cliques(G)) if n else []
    assert maximal_cliques(_adj(n, edges)) == expected


@given(graphs())
def test_degeneracy_order_is_permutation(g):
    n, edges = g
    assert sorted(degeneracy_order(_adj(n, edges))) == list(range(n))


def test_clique_budget():
    n = 30
    adj = _adj(n, [(a, b) for a in range(n) for b in range(a + 1, n) if (a + b) % 3])
    with pytest.raises(CliqueBudgetError):
        maximal_cliques(adj, budget=10)


def _split(recs):
    return [r for r in recs if r.sub == "unbroken"], [r for r in recs if r.sub == "broken"]


def test_one_point_one_clique():
    M = MinkowskiBlock(n=3)
    S, B = _split(gen_scattering(M, np.array([[0.5, 0.5, 0.5]]), fan=8, seed=0))
    shadows = scattering_to_sky_shadows(M, S, B)
    assert len(shadows) == 1
    assert len(shadows[0]) == 8


def test_separate_points_share_no_vertex():
    M = ConformalBlock(n=3, amp=0.2)
    P = np.array([[0.4, 0.4, 0.5], [0.6, 0.6, 0.5], [0.5, 0.3, 0.7]])
    S, B = _split(gen_scattering(M, P, fan=8, seed=1))
    adj, rep = relation_graph(M, S, B)
    cliques = [c for c in maximal_cliques(adj) if len(c) >= 2]
    assert len(cliques) == 3
    seen = set()
    for c in cliques:
        assert not seen & set(c)
        seen |= set(c)


def test_broken_without_unbroken_partner():
    M = MinkowskiBlock(n=3)
    S, B = _split(gen_scattering(M, np.array([[0.5, 0.5, 0.5]]), fan=6, seed=0))
    with pytest.raises(DataInconsistencyError):
        relation_graph(M, S[1:], B)


def test_empty_scattering():
    assert scattering_to_sky_shadows(MinkowskiBlock(n=3), [], []) == []


def test_hypothesis_check():
    check_hypotheses(MinkowskiBlock(n=3), points=3, fan=4)
    check_hypotheses(Cylinder(n=3, T=3.0), points=3, fan=4)
    with pytest.raises(HypothesisViolation, match="refocuses"):
        check_hypotheses(Cylinder(n=3, T=7.0), points=4, fan=6)
