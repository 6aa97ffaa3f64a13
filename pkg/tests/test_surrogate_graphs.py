"""Orderings on synthetic stand-ins for the real datasets.

These are not the acceptance criteria: the graphs only match the size and
density of the real ones, so the tests check directions (HDT beats its base
sampler, larger alpha helps, HDT wins per unit of cost), never the
reference numbers.
"""

import math

import networkx as nx
import numpy as np
import pytest

from hdtwalk.engine import ExperimentConfig, run_chain, run_replicated
from hdtwalk.graph import from_edges, largest_connected_component

R = 100
T = 15000


def _to_graph(G):
    return largest_connected_component(from_edges(list(G.edges()), node_count=G.number_of_nodes()))


@pytest.fixture(scope="module")
def dense_graph():
    # clustered power-law graph at Facebook scale (about 88k edges on 4039 nodes)
    return _to_graph(nx.powerlaw_cluster_graph(4039, 22, 0.6, seed=7))


@pytest.fixture(scope="module")
def sparse_graph():
    return _to_graph(nx.gnm_random_graph(889, 2914, seed=7))


def _final(graph, **kw):
    cfg = ExperimentConfig(**{"total_steps": T, "replications": R, **kw})
    return run_replicated(cfg, graph).final("tvd")


def _gap(worse, better):
    return (worse[0] - better[0]) / math.hypot(worse[1], better[1])


@pytest.mark.slow
@pytest.mark.parametrize("sampler", ["mhrw", "mtm", "mhda", "two_cycle"])
@pytest.mark.parametrize("which", ["dense_graph", "sparse_graph"])
def test_hdt_beats_base(sampler, which, request):
    g = request.getfixturevalue(which)
    base = _final(g, sampler=sampler, alpha=0.0)
    hdt = _final(g, sampler=sampler, alpha=5.0)
    assert _gap(base, hdt) >= 3, (base, hdt)


@pytest.mark.slow
def test_alpha_ordering(dense_graph):
    finals = [_final(dense_graph, alpha=a) for a in (0.0, 1.0, 2.0, 5.0, 10.0)]
    means = [m for m, _ in finals]
    assert means == sorted(means, reverse=True), means


@pytest.mark.slow
def test_budget_favors_hdt(dense_graph):
    cfg = dict(alpha=5.0, budget=60_000.0, replications=R)
    hdt = run_replicated(ExperimentConfig(sampler="mhrw", **cfg), dense_graph).final("tvd")
    srrw = run_replicated(ExperimentConfig(sampler="srrw", **cfg), dense_graph).final("tvd")
    assert _gap(srrw, hdt) >= 3, (hdt, srrw)


@pytest.mark.slow
def test_srrw_cost_ratio(dense_graph):
    r = run_chain(ExperimentConfig(sampler="srrw", alpha=5.0, total_steps=100_000), dense_graph, 0)
    ratio = r.total_cost / r.steps_taken / 2
    assert abs(ratio - (dense_graph.average_degree + 1)) / (dense_graph.average_degree + 1) < 0.02


@pytest.mark.slow
def test_lru_improves_on_base(dense_graph):
    base = _final(dense_graph, alpha=0.0)
    lru = _final(dense_graph, alpha=5.0, lru_ratio=0.1, replications=50)
    assert lru[0] < base[0], (lru, base)
