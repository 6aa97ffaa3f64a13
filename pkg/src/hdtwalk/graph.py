"""Undirected graphs in compressed adjacency form.

Edge lists follow the SNAP convention: one ``<u> <v>`` pair per line, with
``#`` comment lines. Nodes are relabeled densely in order of first
appearance and the original identifiers are kept in ``original_labels``.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, TextIO

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "Graph",
    "GraphFormatError",
    "from_edges",
    "load_edge_list",
    "read_edge_list",
    "largest_connected_component",
]


class GraphFormatError(ValueError):
    """Raised for malformed or empty edge lists."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected simple graph.

    ``indices[indptr[i]:indptr[i + 1]]`` holds the neighbors of ``i`` in
    ascending order.
    """

    indptr: np.ndarray
    indices: np.ndarray
    original_labels: np.ndarray
    degrees: np.ndarray = field(init=False)
    log_degrees: np.ndarray = field(init=False)

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        labels = np.ascontiguousarray(self.original_labels, dtype=np.int64)
        degrees = np.diff(indptr)
        with np.errstate(divide="ignore"):
            log_degrees = np.log(degrees.astype(np.float64))
        for name, arr in (
            ("indptr", indptr),
            ("indices", indices),
            ("original_labels", labels),
            ("degrees", degrees),
            ("log_degrees", log_degrees),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def node_count(self) -> int:
        return len(self.indptr) - 1

    @property
    def edge_count(self) -> int:
        return len(self.indices) // 2

    @property
    def average_degree(self) -> float:
        return 2.0 * self.edge_count / self.node_count

    @cached_property
    def adjacency(self) -> list[list[int]]:
        """Neighbor lists as plain Python lists (fast scalar access)."""
        ptr = self.indptr.tolist()
        idx = self.indices.tolist()
        return [idx[ptr[i] : ptr[i + 1]] for i in range(self.node_count)]

    @cached_property
    def log_degree_list(self) -> list[float]:
        return self.log_degrees.tolist()

    def _check(self, i: int) -> int:
        i = int(i)
        if not 0 <= i < self.node_count:
            raise IndexError(f"node {i} out of range for {self.node_count} nodes")
        return i

    def neighbors(self, i: int) -> np.ndarray:
        i = self._check(i)
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def degree(self, i: int) -> int:
        i = self._check(i)
        return int(self.degrees[i])

    def closed_neighborhood(self, i: int) -> np.ndarray:
        """Neighbors of ``i`` plus ``i`` itself, ascending."""
        nbrs = self.neighbors(i)
        pos = int(np.searchsorted(nbrs, i))
        return np.concatenate([nbrs[:pos], [i], nbrs[pos:]])

    def is_connected(self) -> bool:
        if self.node_count == 1:
            return True
        n_comp, _ = connected_components(self.to_scipy(), directed=False)
        return n_comp == 1

    def to_scipy(self) -> csr_matrix:
        n = self.node_count
        data = np.ones(len(self.indices), dtype=np.int8)
        return csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    def edges(self) -> np.ndarray:
        """Undirected edges as an (m, 2) array with u < v."""
        src = np.repeat(np.arange(self.node_count), self.degrees)
        mask = src < self.indices
        return np.column_stack([src[mask], self.indices[mask]])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.indptr.tobytes())
        h.update(self.indices.tobytes())
        return h.hexdigest()[:16]

    def __repr__(self) -> str:
        return f"Graph(nodes={self.node_count}, edges={self.edge_count})"


def from_edges(
    edges: Iterable[tuple[int, int]],
    node_count: int | None = None,
    original_labels: Iterable[int] | None = None,
) -> Graph:
    """Build a graph from dense-index edges; duplicates and loops are dropped."""
    arr = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if node_count is None:
        node_count = int(arr.max()) + 1 if len(arr) else 0
    if node_count == 0:
        raise GraphFormatError("empty graph")
    if len(arr) and (arr.min() < 0 or arr.max() >= node_count):
        raise ValueError("edge endpoint out of range")
    arr = arr[arr[:, 0] != arr[:, 1]]
    both = np.concatenate([arr, arr[:, ::-1]])
    both = np.unique(both, axis=0)
    counts = np.bincount(both[:, 0], minlength=node_count)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    labels = (
        np.arange(node_count)
        if original_labels is None
        else np.asarray(list(original_labels), dtype=np.int64)
    )
    if len(labels) != node_count:
        raise ValueError("original_labels length does not match node_count")
    return Graph(indptr, both[:, 1], labels)


def _parse_lines(source: TextIO, comment_chars: str) -> tuple[list[tuple[int, int]], dict[int, int]]:
    index: dict[int, int] = {}
    arcs: list[tuple[int, int]] = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line[0] in comment_chars:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"expected 2 fields, got {len(parts)}", lineno)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(f"non-integer node id in {line!r}", lineno) from None
        if u < 0 or v < 0:
            raise GraphFormatError(f"negative node id in {line!r}", lineno)
        a = index.setdefault(u, len(index))
        b = index.setdefault(v, len(index))
        arcs.append((a, b))
    return arcs, index


def load_edge_list(source: TextIO, symmetrize: bool = True, comment_chars: str = "#%") -> Graph:
    """Parse an edge list into a (possibly disconnected) undirected graph.

    With ``symmetrize`` every line contributes an undirected edge. Without it
    the lines are read as directed arcs and only reciprocated pairs are kept.
    """
    arcs, index = _parse_lines(source, comment_chars)
    if not index:
        raise GraphFormatError("empty graph")
    labels = np.empty(len(index), dtype=np.int64)
    for orig, dense in index.items():
        labels[dense] = orig
    arr = np.asarray(arcs, dtype=np.int64).reshape(-1, 2)
    if not symmetrize and len(arr):
        arr = arr[arr[:, 0] != arr[:, 1]]
        fwd = set(map(tuple, arr.tolist()))
        arr = np.asarray([a for a in fwd if (a[1], a[0]) in fwd], dtype=np.int64).reshape(-1, 2)
    return from_edges(arr, node_count=len(index), original_labels=labels)


def read_edge_list(path: str | os.PathLike, symmetrize: bool = True) -> Graph:
    """Load an edge-list file (plain or gzip) without component filtering."""
    path = os.fspath(path)
    if path.endswith(".gz"):
        with gzip.open(path, "rt", encoding="utf-8") as fh:
            return load_edge_list(fh, symmetrize=symmetrize)
    with open(path, encoding="utf-8") as fh:
        return load_edge_list(fh, symmetrize=symmetrize)


def load_graph_text(text: str, symmetrize: bool = True) -> Graph:
    return load_edge_list(io.StringIO(text), symmetrize=symmetrize)


def largest_connected_component(graph: Graph) -> Graph:
    """Induced subgraph on the largest component, relabeled densely.

    Ties go to the component holding the smallest original label. Relative
    node order is preserved.
    """
    if graph.node_count == 0:
        raise GraphFormatError("empty graph")
    _, comp = connected_components(graph.to_scipy(), directed=False)
    sizes = np.bincount(comp)
    best = sizes.max()
    candidates = np.flatnonzero(sizes == best)
    if len(candidates) > 1:
        min_label = [graph.original_labels[comp == c].min() for c in candidates]
        chosen = candidates[int(np.argmin(min_label))]
    else:
        chosen = candidates[0]
    keep = np.flatnonzero(comp == chosen)
    if len(keep) == graph.node_count:
        return graph
    remap = np.full(graph.node_count, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    e = graph.edges()
    e = e[remap[e[:, 0]] >= 0]
    return from_edges(remap[e], node_count=len(keep), original_labels=graph.original_labels[keep])
