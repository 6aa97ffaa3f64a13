"""Convergence and estimation metrics."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .graph import Graph

__all__ = [
    "LabelAssignment",
    "assign_labels",
    "empirical_measure",
    "estimator",
    "is_estimator",
    "nrmse",
    "read_labels",
    "tvd",
    "write_labels",
]

NodeFunction = Callable[[int], float] | Sequence[float] | np.ndarray


def tvd(x, mu) -> float:
    """Total variation distance, half the L1 distance."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if x.shape != mu.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {mu.shape}")
    return 0.5 * float(np.abs(x - mu).sum())


def empirical_measure(samples, n: int) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.int64)
    if samples.size == 0:
        raise ValueError("empty sample sequence")
    return np.bincount(samples, minlength=n) / samples.size


def _values(f: NodeFunction, samples: np.ndarray) -> np.ndarray:
    if callable(f):
        return np.array([float(f(int(s))) for s in samples])
    return np.asarray(f, dtype=np.float64)[samples]


def estimator(samples, f: NodeFunction) -> float:
    """Sample mean of f along the chain."""
    samples = np.asarray(samples, dtype=np.int64)
    if samples.size == 0:
        raise ValueError("empty sample sequence")
    return math.fsum(_values(f, samples)) / samples.size


def is_estimator(samples, f: NodeFunction, mu_tilde: NodeFunction) -> float:
    """Self-normalized importance-weighted mean of f with weights 1/mu_tilde.

    Estimates the uniform average of f from a chain that targets mu.
    """
    samples = np.asarray(samples, dtype=np.int64)
    if samples.size == 0:
        raise ValueError("empty sample sequence")
    w = 1.0 / _values(mu_tilde, samples)
    return math.fsum(_values(f, samples) * w) / math.fsum(w)


def nrmse(estimates, truth: float) -> float:
    """Root mean squared error over runs, relative to the truth."""
    est = np.asarray(estimates, dtype=np.float64).ravel()
    if truth == 0:
        raise ValueError("nrmse is undefined for a zero truth")
    if est.size == 0:
        raise ValueError("no estimates")
    return math.sqrt(math.fsum((est - truth) ** 2) / est.size) / abs(truth)


@dataclass(frozen=True, eq=False)
class LabelAssignment:
    labels: np.ndarray
    assignment_probability: float
    truth: float
    uniform_truth: float

    def truth_for(self, kind: str) -> float:
        if kind == "mu":
            return self.truth
        if kind == "uniform":
            return self.uniform_truth
        raise ValueError(f"unknown truth kind {kind!r}; expected 'mu' or 'uniform'")


def assign_labels(graph: Graph, p: float, rng: np.random.Generator, mu=None) -> LabelAssignment:
    """Independent Bernoulli(p) labels; truth is taken under mu (uniform by default)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("label probability must lie in [0, 1]")
    n = graph.node_count
    labels = (rng.random(n) < p).astype(np.float64)
    uniform_truth = math.fsum(labels) / n
    if mu is None:
        truth = uniform_truth
    else:
        mu = np.asarray(mu, dtype=np.float64)
        truth = math.fsum(mu * labels) / math.fsum(mu)
    labels.setflags(write=False)
    return LabelAssignment(labels, float(p), truth, uniform_truth)


def write_labels(path: str | os.PathLike, graph: Graph, labels) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lab, f in zip(graph.original_labels, np.asarray(labels)):
            fh.write(f"{int(lab)} {int(f)}\n")


def read_labels(path: str | os.PathLike, graph: Graph) -> np.ndarray:
    lookup = {int(lab): k for k, lab in enumerate(graph.original_labels)}
    out = np.full(graph.node_count, -1.0)
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2 or parts[1] not in ("0", "1"):
                raise ValueError(f"line {lineno}: expected '<node> <0|1>'")
            node = int(parts[0])
            if node in lookup:
                out[lookup[node]] = float(parts[1])
    if np.any(out < 0):
        raise ValueError("label file does not cover every node")
    return out
