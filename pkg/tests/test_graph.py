import gzip

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdtwalk.graph import (
    GraphFormatError,
    from_edges,
    largest_connected_component,
    load_graph_text,
    read_edge_list,
)


def test_triangle():
    g = load_graph_text("0 1\n1 2\n2 0")
    assert (g.node_count, g.edge_count) == (3, 3)
    assert g.degrees.tolist() == [2, 2, 2]
    assert g.average_degree == 2.0


def test_dedup_and_self_loop():
    g = load_graph_text("0 1\n1 0\n0 0")
    assert (g.node_count, g.edge_count) == (2, 1)
    assert g.neighbors(0).tolist() == [1]


def test_first_appearance_relabel_and_comments():
    g = load_graph_text("# header\n% other\n\n10 7\n7 3\n")
    assert g.original_labels.tolist() == [10, 7, 3]
    assert g.neighbors(1).tolist() == [0, 2]


@pytest.mark.parametrize(
    "text, line",
    [("0 1\n1 x\n", 2), ("0 1 2\n", 1), ("0\n", 1), ("0 -1\n", 1)],
)
def test_parse_errors_carry_line(text, line):
    with pytest.raises(GraphFormatError) as exc:
        load_graph_text(text)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_empty_graph():
    with pytest.raises(GraphFormatError):
        load_graph_text("# nothing\n")


def test_without_symmetrize_keeps_mutual_arcs():
    g = load_graph_text("0 1\n1 0\n1 2\n", symmetrize=False)
    assert g.node_count == 3
    assert g.edge_count == 1
    assert g.degree(2) == 0


def test_lcc_identity_and_tie():
    tri = load_graph_text("0 1\n1 2\n2 0")
    assert largest_connected_component(tri) is tri
    g = load_graph_text("2 3\n0 1\n")
    lcc = largest_connected_component(g)
    assert (lcc.node_count, lcc.edge_count) == (2, 1)
    assert sorted(lcc.original_labels.tolist()) == [0, 1]


def test_lcc_matches_networkx(rng):
    edges = [tuple(e) for e in rng.integers(0, 60, size=(50, 2))]
    g = from_edges(edges, node_count=60)
    ours = largest_connected_component(g)
    G = nx.Graph()
    G.add_nodes_from(range(60))
    G.add_edges_from((u, v) for u, v in edges if u != v)
    comp = max(nx.connected_components(G), key=len)
    assert ours.node_count == len(comp)
    assert ours.edge_count == G.subgraph(comp).number_of_edges()
    assert ours.is_connected()


def test_queries(rng):
    g = from_edges([(0, 1), (0, 2), (2, 3)])
    assert g.closed_neighborhood(0).tolist() == [0, 1, 2]
    assert g.closed_neighborhood(3).tolist() == [2, 3]
    assert g.degree(2) == 2
    with pytest.raises(IndexError):
        g.degree(4)
    with pytest.raises(IndexError):
        g.neighbors(-1)
    assert g.edges().tolist() == [[0, 1], [0, 2], [2, 3]]


def test_read_gzip(tmp_path):
    p = tmp_path / "g.txt.gz"
    with gzip.open(p, "wt") as fh:
        fh.write("# c\n5 6\n6 7\n")
    g = read_edge_list(p)
    assert g.edge_count == 2
    assert g.original_labels.tolist() == [5, 6, 7]


def test_immutable():
    g = load_graph_text("0 1\n")
    with pytest.raises(ValueError):
        g.indices[0] = 5


edge_lists = st.lists(st.tuples(st.integers(0, 25), st.integers(0, 25)), min_size=1, max_size=80)


@given(edge_lists)
@settings(max_examples=150, deadline=None)
def test_graph_invariants(edges):
    text = "\n".join(f"{u} {v}" for u, v in edges)
    if all(u == v for u, v in edges):
        g = load_graph_text(text)
        assert g.edge_count == 0
        return
    g = load_graph_text(text)
    assert g.degrees.sum() == 2 * g.edge_count
    for i in range(g.node_count):
        nb = g.neighbors(i)
        assert i not in nb
        assert np.all(np.diff(nb) > 0)
        for j in nb:
            assert i in g.neighbors(j)
    lcc = largest_connected_component(g)
    assert lcc.is_connected()
    assert lcc.degrees.sum() == 2 * lcc.edge_count
    assert set(lcc.original_labels.tolist()) <= set(g.original_labels.tolist())
