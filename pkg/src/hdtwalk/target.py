"""Target weights, visit-count stores and the history-driven target.

The history-driven target reweights a base target by how often each node
has been visited relative to its weight::

    pi_tilde_i = mu_tilde_i * (x_tilde_i / mu_tilde_i) ** (-alpha)

Everything is evaluated in log space; samplers only ever need the log
ratio between two nodes.
"""

from __future__ import annotations

import math
import os
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .graph import Graph

__all__ = [
    "TargetWeights",
    "VisitStore",
    "LruVisitStore",
    "PlainTarget",
    "HistoryTarget",
    "fake_counts",
    "load_weights",
    "lru_count_estimate",
    "normalized_pi",
]

WEIGHT_KINDS = ("uniform", "degree", "explicit", "energy")


@dataclass(frozen=True, eq=False)
class TargetWeights:
    """Unnormalized target weights mu_tilde."""

    kind: str = "uniform"
    payload: np.ndarray | Callable[[int], float] | None = None

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}; expected one of {WEIGHT_KINDS}")
        if self.kind == "explicit":
            w = np.asarray(self.payload, dtype=np.float64)
            if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ValueError("explicit weights must be a finite, strictly positive vector")
            w.setflags(write=False)
            object.__setattr__(self, "payload", w)
        elif self.kind == "energy" and not callable(self.payload):
            raise ValueError("energy weights need a callable H(i)")

    @classmethod
    def uniform(cls) -> TargetWeights:
        return cls("uniform")

    @classmethod
    def degree(cls) -> TargetWeights:
        return cls("degree")

    @classmethod
    def explicit(cls, weights) -> TargetWeights:
        return cls("explicit", weights)

    @classmethod
    def energy(cls, energy: Callable[[int], float]) -> TargetWeights:
        return cls("energy", energy)

    def log_values(self, graph: Graph) -> np.ndarray:
        """log mu_tilde for every node."""
        n = graph.node_count
        if self.kind == "uniform":
            return np.zeros(n)
        if self.kind == "degree":
            if np.any(graph.degrees == 0):
                raise ValueError("degree weights need every node to have a neighbor")
            return graph.log_degrees.copy()
        if self.kind == "explicit":
            if len(self.payload) != n:
                raise ValueError(f"explicit weights have length {len(self.payload)}, graph has {n} nodes")
            return np.log(self.payload)
        return np.array([-float(self.payload(i)) for i in range(n)])

    def values(self, graph: Graph) -> np.ndarray:
        return np.exp(self.log_values(graph))

    def mu_tilde(self, graph: Graph, i: int) -> float:
        i = graph._check(i)
        if self.kind == "uniform":
            return 1.0
        if self.kind == "degree":
            return float(graph.degrees[i])
        if self.kind == "explicit":
            return float(self.payload[i])
        return math.exp(-float(self.payload(i)))

    def mu(self, graph: Graph) -> np.ndarray:
        """Normalized target distribution."""
        lv = self.log_values(graph)
        w = np.exp(lv - lv.max())
        return w / w.sum()


def load_weights(path: str | os.PathLike, graph: Graph) -> TargetWeights:
    """Read ``<node> <weight>`` lines keyed by original node labels."""
    lookup = {int(lab): k for k, lab in enumerate(graph.original_labels)}
    w = np.full(graph.node_count, np.nan)
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected '<node> <weight>'")
            try:
                node, weight = int(parts[0]), float(parts[1])
            except ValueError:
                raise ValueError(f"line {lineno}: cannot parse {line!r}") from None
            if node in lookup:
                w[lookup[node]] = weight
    missing = np.flatnonzero(np.isnan(w))
    if len(missing):
        raise ValueError(f"no weight for {len(missing)} node(s), e.g. {graph.original_labels[missing[0]]}")
    return TargetWeights.explicit(w)


def fake_counts(mode: str, graph: Graph, rng: np.random.Generator | None = None) -> np.ndarray:
    """Initial visit counts for the three fake-count scenarios.

    ``unif`` gives every node 1, ``deg`` gives its degree and ``non_unif``
    draws Dirichlet(0.5) and rescales so the mean count is 1.
    """
    n = graph.node_count
    if mode == "unif":
        return np.ones(n)
    if mode == "deg":
        return graph.degrees.astype(np.float64)
    if mode == "non_unif":
        if rng is None:
            raise ValueError("non_unif fake counts need an rng")
        c = rng.dirichlet(np.full(n, 0.5)) * n
        # gamma draws with shape < 1 can underflow to exactly zero
        return np.maximum(c, np.finfo(np.float64).tiny)
    raise ValueError(f"unknown fake count mode {mode!r}")


class VisitStore:
    """Exact visit counts with a lazy per-node default."""

    def __init__(self, default: float | np.ndarray = 1.0):
        self._default = default
        if np.any(np.asarray(default) <= 0):
            raise ValueError("default counts must be strictly positive")
        self.counts: dict[int, float] = {}
        self.total_increments = 0

    def default_count(self, i: int) -> float:
        d = self._default
        return float(d) if np.ndim(d) == 0 else float(d[i])

    def __contains__(self, i: int) -> bool:
        return i in self.counts

    def __len__(self) -> int:
        return len(self.counts)

    def count(self, i: int) -> float:
        c = self.counts.get(i)
        return self.default_count(i) if c is None else c

    def record_visit(self, i: int, base: float | None = None) -> None:
        c = self.counts.get(i)
        if c is None:
            c = self.default_count(i) if base is None else base
        self.counts[i] = c + 1.0
        self.total_increments += 1

    def to_dense(self, n: int) -> np.ndarray:
        d = self._default
        out = np.full(n, float(d)) if np.ndim(d) == 0 else np.array(d, dtype=np.float64)
        for i, c in self.counts.items():
            out[i] = c
        return out


class LruVisitStore(VisitStore):
    """Visit counts for at most ``capacity`` recently used nodes."""

    def __init__(self, capacity: int, default: float | np.ndarray = 1.0):
        super().__init__(default)
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = int(capacity)
        self.counts: OrderedDict[int, float] = OrderedDict()
        self.evictions = 0

    @classmethod
    def with_ratio(cls, ratio: float, node_count: int, default: float | np.ndarray = 1.0) -> LruVisitStore:
        if not 0 < ratio < 1:
            raise ValueError("lru ratio must lie in (0, 1)")
        return cls(math.ceil(ratio * node_count), default)

    def get(self, i: int) -> float | None:
        """Cached count of ``i`` (refreshing its recency), or None."""
        c = self.counts.get(i)
        if c is not None:
            self.counts.move_to_end(i)
        return c

    def peek(self, i: int) -> float | None:
        return self.counts.get(i)

    def count(self, i: int) -> float:
        c = self.get(i)
        return self.default_count(i) if c is None else c

    def record_visit(self, i: int, base: float | None = None) -> None:
        c = self.counts.get(i)
        if c is None:
            c = self.default_count(i) if base is None else base
        else:
            self.counts.move_to_end(i)
        self.counts[i] = c + 1.0
        self.total_increments += 1
        if len(self.counts) > self.capacity:
            self.counts.popitem(last=False)
            self.evictions += 1

    def estimate(self, neighbors, mu_tilde, i: int, j: int) -> float:
        """Count for uncached ``j`` from cached members of i's closed neighborhood.

        Averages x_k / mu_k over the cached nodes and scales by mu_j. With no
        cached neighbor the ratio is taken to be 1, i.e. ``mu_j``. Lookups
        here do not refresh recency.
        """
        total = 0.0
        hits = 0
        counts = self.counts
        c = counts.get(i)
        if c is not None:
            total += c / mu_tilde[i]
            hits += 1
        for k in neighbors:
            c = counts.get(k)
            if c is not None:
                total += c / mu_tilde[k]
                hits += 1
        if hits == 0:
            return mu_tilde[j]
        return mu_tilde[j] * (total / hits)


def lru_count_estimate(store: LruVisitStore, graph: Graph, weights: TargetWeights, i: int, j: int) -> float:
    """Estimated count of ``j`` (not cached) seen from the walker at ``i``."""
    return store.estimate(graph.adjacency[i], weights.values(graph).tolist(), i, j)


class PlainTarget:
    """History-free oracle backed by mu_tilde alone."""

    alpha = 0.0

    def __init__(self, graph: Graph, weights: TargetWeights):
        self.graph = graph
        self.weights = weights
        self.log_mu = weights.log_values(graph)
        self._lmu = self.log_mu.tolist()

    def log_ratio(self, i: int, j: int) -> float:
        return self._lmu[j] - self._lmu[i]


class HistoryTarget:
    """History-driven target over a visit store."""

    def __init__(self, graph: Graph, weights: TargetWeights, alpha: float, store: VisitStore | None = None):
        alpha = float(alpha)
        if not alpha >= 0:
            raise ValueError("alpha must be non-negative")
        self.graph = graph
        self.weights = weights
        self.alpha = alpha
        self.store = VisitStore() if store is None else store
        self.log_mu = weights.log_values(graph)
        self._lmu = self.log_mu.tolist()
        self._lru = isinstance(self.store, LruVisitStore)
        if self._lru:
            self._mu = np.exp(self.log_mu).tolist()
            self._adj = graph.adjacency

    def count(self, k: int, center: int | None = None) -> float:
        """Visit count of ``k``; LRU misses are estimated around ``center``."""
        if self._lru:
            c = self.store.get(k)
            if c is None:
                i = k if center is None else center
                return self.store.estimate(self._adj[i], self._mu, i, k)
            return c
        return self.store.count(k)

    def log_excess(self, k: int, center: int | None = None) -> float:
        """log(x_k / mu_k)."""
        c = self.count(k, center)
        if not c > 0:
            raise AssertionError(f"non-positive visit count {c} at node {k}")
        return math.log(c) - self._lmu[k]

    def log_pi_tilde(self, i: int) -> float:
        return self._lmu[i] - self.alpha * self.log_excess(i)

    def pi_tilde(self, i: int) -> float:
        return math.exp(self.log_pi_tilde(i))

    def log_ratio(self, i: int, j: int) -> float:
        """log pi_j - log pi_i, estimating LRU misses around ``i``."""
        ri = self.log_excess(i, i)
        rj = self.log_excess(j, i)
        lmu = self._lmu
        return (lmu[j] - lmu[i]) - self.alpha * (rj - ri)

    def log_target_ratio_to_mu(self, i: int) -> float:
        return -self.alpha * self.log_excess(i)

    def record_visit(self, node: int, previous: int | None = None) -> None:
        """Count a visit; an LRU miss enters the cache at its estimated count."""
        if self._lru and node not in self.store:
            center = node if previous is None else previous
            base = self.store.estimate(self._adj[center], self._mu, center, node)
            self.store.record_visit(node, base)
        else:
            self.store.record_visit(node)


def normalized_pi(mu: np.ndarray, x: np.ndarray, alpha: float) -> np.ndarray:
    """pi[x] on the simplex for positive x (not necessarily normalized)."""
    mu = np.asarray(mu, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    lmu = np.log(mu)
    lp = lmu - alpha * (np.log(x) - lmu)
    lp -= lp.max()
    p = np.exp(lp)
    return p / p.sum()
