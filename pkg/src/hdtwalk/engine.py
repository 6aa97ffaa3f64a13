"""Experiment driver: run chains, track empirical measures, replicate.

A chain updates its HDT visit counts from the first step on, while the
empirical measure used for metrics only starts after the burn-in. Runs with
an exact visit store go through the compiled loop in
:mod:`hdtwalk._kernels`; LRU-capped runs (or ``backend="python"``) use the
reference steppers.
"""

from __future__ import annotations

import math
import os
import multiprocessing
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from functools import partial
from typing import TextIO

import numpy as np

from . import _kernels
from .graph import Graph
from .metrics import LabelAssignment, assign_labels
from .samplers import (
    SAMPLERS,
    ChainState,
    MtmConfig,
    chain_streams,
    mh_step,
    mhda_step,
    mtm_step,
    srrw_step,
)
from .target import HistoryTarget, LruVisitStore, TargetWeights, VisitStore, fake_counts

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunResult",
    "Aggregate",
    "CSV_HEADER",
    "choose_initial_node",
    "label_rng",
    "run_chain",
    "run_budget",
    "run_replicated",
    "write_csv",
]

FAKE_COUNT_MODES = ("unif", "deg", "non_unif")
INITIAL_STATE_MODES = ("fixed", "low_degree", "high_degree", "uniform_random")
CSV_HEADER = "step,cost,metric,mean,stderr"
LABEL_DOMAIN = 1000


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    sampler: str = "mhrw"
    alpha: float = 0.0
    total_steps: int | None = None
    budget: float | None = None
    burn_in_fraction: float | None = None
    fake_count_mode: str = "unif"
    lru_ratio: float | None = None
    initial_state: str = "uniform_random"
    initial_node: int | None = None
    replications: int = 1
    base_seed: int = 0
    snapshot_stride: int | None = None
    budget_snapshots: int = 100
    mtm_k: int = 3
    mtm_h: str = "sqrt"
    label_p: float = 0.3
    truth: str | None = None
    weights: TargetWeights = field(default_factory=TargetWeights.uniform, compare=False)

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"unknown sampler {self.sampler!r}; expected one of {SAMPLERS}")
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ConfigError("alpha must be a finite non-negative number")
        if self.total_steps is None and self.budget is None:
            raise ConfigError("either total_steps or budget is required")
        if self.total_steps is not None and self.total_steps < 1:
            raise ConfigError("total_steps must be at least 1")
        if self.budget is not None and not self.budget > 0:
            raise ConfigError("budget must be positive")
        if self.burn_in_fraction is not None and not 0 <= self.burn_in_fraction < 1:
            raise ConfigError("burn_in_fraction must lie in [0, 1)")
        if self.fake_count_mode not in FAKE_COUNT_MODES:
            raise ConfigError(f"unknown fake_count_mode {self.fake_count_mode!r}; expected one of {FAKE_COUNT_MODES}")
        if self.lru_ratio is not None:
            if self.sampler == "srrw":
                raise ConfigError("lru_ratio cannot be combined with sampler=srrw")
            if not 0 < self.lru_ratio < 1:
                raise ConfigError("lru_ratio must lie in (0, 1)")
        if self.initial_state not in INITIAL_STATE_MODES:
            raise ConfigError(f"unknown initial_state {self.initial_state!r}; expected one of {INITIAL_STATE_MODES}")
        if self.initial_state == "fixed" and self.initial_node is None:
            raise ConfigError("initial_state=fixed needs initial_node")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.snapshot_stride is not None and self.snapshot_stride < 1:
            raise ConfigError("snapshot_stride must be at least 1")
        if self.budget_snapshots < 1:
            raise ConfigError("budget_snapshots must be at least 1")
        if not 0 <= self.label_p <= 1:
            raise ConfigError("label_p must lie in [0, 1]")
        if self.truth not in (None, "mu", "uniform"):
            raise ConfigError("truth must be 'mu' or 'uniform'")
        try:
            MtmConfig(self.mtm_k, self.mtm_h)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def cost_indexed(self) -> bool:
        return self.budget is not None

    @property
    def effective_burn_in(self) -> float:
        if self.burn_in_fraction is not None:
            return self.burn_in_fraction
        return 0.0 if self.cost_indexed else 1.0 / 3.0

    @property
    def burn_in_steps(self) -> int:
        if self.cost_indexed:
            return 0
        return math.floor(self.effective_burn_in * self.total_steps)

    def replace(self, **changes) -> ExperimentConfig:
        return replace(self, **changes)

    def items(self) -> list[tuple[str, object]]:
        """Serializable key/value pairs (weights are described by the caller)."""
        return [(f.name, getattr(self, f.name)) for f in fields(self) if f.name != "weights"]


@dataclass(eq=False)
class RunResult:
    steps: np.ndarray
    costs: np.ndarray
    tvd: np.ndarray
    estimate: np.ndarray
    is_estimate: np.ndarray
    final_empirical_measure: np.ndarray
    accept_rate: float
    delayed_fire_count: int
    clamp_count: int
    steps_taken: int
    total_cost: float
    initial_node: int
    visit_counts: np.ndarray | None = None
    trajectory: np.ndarray | None = None

    @property
    def snapshots(self) -> list[tuple[int, float, float, float]]:
        return list(zip(self.steps.tolist(), self.costs.tolist(), self.tvd.tolist(), self.estimate.tolist()))


def label_rng(base_seed: int) -> np.random.Generator:
    """Label stream, disjoint from every chain's streams."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(base_seed, spawn_key=(LABEL_DOMAIN,))))


def choose_initial_node(config: ExperimentConfig, graph: Graph, rng: np.random.Generator) -> int:
    n = graph.node_count
    mode = config.initial_state
    if mode == "fixed":
        node = int(config.initial_node)
        if not 0 <= node < n:
            raise ConfigError(f"initial_node {node} out of range")
        return node
    if mode == "uniform_random":
        return int(n * rng.random())
    avg = graph.average_degree
    group = np.flatnonzero(graph.degrees < avg) if mode == "low_degree" else np.flatnonzero(graph.degrees >= avg)
    if len(group) == 0:
        raise ConfigError(f"no node qualifies for initial_state={mode}")
    return int(group[int(len(group) * rng.random())])


def _snapshot_plan(config: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    if config.cost_indexed:
        k = config.budget_snapshots
        costs = np.array([config.budget * (s + 1) / k for s in range(k)])
        return np.zeros(0, dtype=np.int64), costs
    t = config.total_steps
    stride = config.snapshot_stride or max(1, t // 100)
    steps = list(range(stride, t + 1, stride))
    if not steps or steps[-1] != t:
        steps.append(t)
    steps = [s for s in steps if s > config.burn_in_steps]
    return np.asarray(steps, dtype=np.int64), np.zeros(0)


def _tvd_seq(emp, m: int, mu) -> float:
    acc = 0.0
    for v in range(len(mu)):
        acc += abs(emp[v] / m - mu[v])
    return 0.5 * acc


class _Tracker:
    """Post-burn-in bookkeeping for the reference path."""

    def __init__(self, n, mu, f, inv_mu_tilde, nsnap):
        self.emp = [0] * n
        self.mu = mu.tolist()
        self.f = f.tolist()
        self.inv = inv_mu_tilde.tolist()
        self.m = 0
        self.f_sum = 0.0
        self.is_num = 0.0
        self.is_den = 0.0
        self.out = {k: np.empty(nsnap) for k in ("tvd", "est", "is", "cost")}
        self.out_step = np.empty(nsnap, dtype=np.int64)

    def add(self, v):
        self.emp[v] += 1
        self.m += 1
        self.f_sum += self.f[v]
        self.is_num += self.f[v] * self.inv[v]
        self.is_den += self.inv[v]

    def record(self, slot, step, cost):
        self.out_step[slot] = step
        self.out["cost"][slot] = cost
        if self.m == 0:
            for k in ("tvd", "est", "is"):
                self.out[k][slot] = np.nan
            return
        self.out["tvd"][slot] = _tvd_seq(self.emp, self.m, self.mu)
        self.out["est"][slot] = self.f_sum / self.m
        self.out["is"][slot] = self.is_num / self.is_den


def _run_python(config, graph, weights, counts, x0, rng, f, mu, inv_mu_tilde, snap_steps, snap_costs, record):
    n = graph.node_count
    if config.lru_ratio is not None:
        default = counts if config.fake_count_mode != "unif" else 1.0
        store = LruVisitStore.with_ratio(config.lru_ratio, n, default)
    else:
        store = VisitStore(counts)
    history = HistoryTarget(graph, weights, config.alpha, store)
    mtm = MtmConfig(config.mtm_k, config.mtm_h)
    cost_indexed = config.cost_indexed
    budget = config.budget if cost_indexed else math.inf
    max_steps = config.total_steps if config.total_steps is not None else 2**62
    burn_steps = config.burn_in_steps
    burn_cost = config.effective_burn_in * config.budget if cost_indexed else -1.0
    snaps = snap_costs if cost_indexed else snap_steps
    nsnap = len(snaps)
    tr = _Tracker(n, mu, f, inv_mu_tilde, nsnap)
    traj = [x0] if record else None
    state = ChainState(x0)
    kind = config.sampler
    accepted = events = ptr = 0
    while state.step < max_steps:
        if kind == "mhrw" or (kind == "two_cycle" and state.phase == 0):
            move = mh_step(graph, history, state, rng)
        elif kind in ("mtm", "two_cycle"):
            move = mtm_step(graph, history, mtm, state, rng)
        elif kind == "mhda":
            move = mhda_step(graph, history, state, rng)
        else:
            move = srrw_step(graph, history, state, rng)
        new_cost = state.cumulative_cost + move.cost
        if new_cost > budget:
            break
        if cost_indexed:
            while ptr < nsnap and snaps[ptr] < new_cost:
                tr.record(ptr, state.step, state.cumulative_cost)
                ptr += 1
        prev = state.current
        if kind == "mhda":
            state.last_visit = move.last_visit
        if kind == "two_cycle":
            state.phase = 1 - state.phase
        state.current = move.node
        state.cumulative_cost = new_cost
        state.step += 1
        accepted += move.accepted
        events += move.event
        history.record_visit(move.node, prev)
        if record:
            traj.append(move.node)
        if state.step > burn_steps and new_cost > burn_cost:
            tr.add(move.node)
        if not cost_indexed and ptr < nsnap and snaps[ptr] == state.step:
            tr.record(ptr, state.step, new_cost)
            ptr += 1
    while ptr < nsnap:
        tr.record(ptr, state.step, state.cumulative_cost)
        ptr += 1
    visit = store.to_dense(n) if config.lru_ratio is None else None
    traj = None if traj is None else np.asarray(traj, dtype=np.int64)
    emp = np.asarray(tr.emp, dtype=np.int64)
    return state.step, state.cumulative_cost, accepted, events, emp, tr.out_step, tr.out, visit, traj


def _run_compiled(config, graph, weights, counts, x0, rng, f, mu, inv_mu_tilde, snap_steps, snap_costs, record):
    n = graph.node_count
    cost_indexed = config.cost_indexed
    max_steps = config.total_steps if config.total_steps is not None else 2**62
    if cost_indexed:
        # every step costs at least 2 units
        max_steps = min(max_steps, int(config.budget // 2))
    nsnap = len(snap_costs) if cost_indexed else len(snap_steps)
    counts = np.array(counts, dtype=np.float64)
    log_exc = np.empty(n)
    traj = np.empty(max_steps + 1 if record else 0, dtype=np.int64)
    emp = np.zeros(n, dtype=np.int64)
    out_step = np.empty(nsnap, dtype=np.int64)
    out = {k: np.empty(nsnap) for k in ("tvd", "est", "is", "cost")}
    steps, cost, accepted, events = _kernels.run_chain_kernel(
        _kernels.KIND_CODES[config.sampler],
        graph.indptr,
        graph.indices,
        weights.log_values(graph),
        graph.log_degrees,
        counts,
        log_exc,
        float(config.alpha),
        int(config.mtm_k),
        MtmConfig(config.mtm_k, config.mtm_h).balance_code,
        int(x0),
        int(max_steps),
        float(config.budget) if cost_indexed else math.inf,
        int(config.burn_in_steps),
        config.effective_burn_in * config.budget if cost_indexed else -1.0,
        cost_indexed,
        snap_steps,
        snap_costs,
        mu,
        f,
        inv_mu_tilde,
        rng.proposal,
        rng.accept,
        traj,
        emp,
        out_step,
        out["cost"],
        out["tvd"],
        out["est"],
        out["is"],
    )
    traj = traj[: steps + 1] if record else None
    return steps, cost, accepted, events, emp, out_step, out, counts, traj


def run_chain(
    config: ExperimentConfig,
    graph: Graph,
    seed: int,
    labels: np.ndarray | None = None,
    record_trajectory: bool = False,
    backend: str = "auto",
) -> RunResult:
    """Run one chain of ``config.sampler`` on ``graph``.

    ``labels`` is the test function f used for the estimator snapshots
    (zeros when omitted).
    """
    if graph.node_count < 2 or not graph.is_connected():
        raise ConfigError("sampling needs a connected graph with at least 2 nodes")
    if backend not in ("auto", "python", "compiled"):
        raise ConfigError(f"unknown backend {backend!r}")
    if backend == "compiled" and config.lru_ratio is not None:
        raise ConfigError("the compiled backend does not support LRU stores")
    weights = config.weights
    n = graph.node_count
    init_rng, rng = chain_streams(seed)
    x0 = choose_initial_node(config, graph, init_rng)
    counts = fake_counts(config.fake_count_mode, graph, init_rng)
    mu = weights.mu(graph)
    f = np.zeros(n) if labels is None else np.asarray(labels, dtype=np.float64)
    if f.shape != (n,):
        raise ConfigError("labels must have one entry per node")
    inv_mu_tilde = np.exp(-weights.log_values(graph))
    snap_steps, snap_costs = _snapshot_plan(config)
    use_python = backend == "python" or config.lru_ratio is not None
    runner = _run_python if use_python else _run_compiled
    steps, cost, accepted, events, emp, out_step, out, visit, traj = runner(
        config, graph, weights, counts, x0, rng, f, mu, inv_mu_tilde, snap_steps, snap_costs, record_trajectory
    )
    m = int(emp.sum())
    final = emp / m if m else np.zeros(n)
    is_srrw = config.sampler == "srrw"
    return RunResult(
        steps=out_step,
        costs=out["cost"],
        tvd=out["tvd"],
        estimate=out["est"],
        is_estimate=out["is"],
        final_empirical_measure=final,
        accept_rate=accepted / steps if steps else 0.0,
        delayed_fire_count=0 if is_srrw else int(events),
        clamp_count=int(events) if is_srrw else 0,
        steps_taken=int(steps),
        total_cost=float(cost),
        initial_node=x0,
        visit_counts=visit,
        trajectory=traj,
    )


def run_budget(config: ExperimentConfig, graph: Graph, seed: int, **kwargs) -> RunResult:
    """Run until the next step would push the cumulative cost past the budget."""
    if config.budget is None:
        raise ConfigError("run_budget needs a budget")
    return run_chain(config, graph, seed, **kwargs)


@dataclass(eq=False)
class Aggregate:
    """Per-snapshot mean and standard error across replications."""

    config: ExperimentConfig
    steps: np.ndarray
    costs: np.ndarray
    metrics: dict[str, tuple[np.ndarray, np.ndarray]]
    runs: list[RunResult]
    labels: LabelAssignment | None

    def final(self, metric: str) -> tuple[float, float]:
        mean, se = self.metrics[metric]
        return float(mean[-1]), float(se[-1])

    def final_values(self, metric: str = "tvd") -> np.ndarray:
        attr = {"tvd": "tvd", "estimate": "estimate", "is_estimate": "is_estimate"}[metric]
        return np.array([getattr(r, attr)[-1] for r in self.runs])


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    r = len(values)
    mean = math.fsum(values) / r
    if r < 2:
        return mean, math.nan
    var = math.fsum((values - mean) ** 2) / (r - 1)
    return mean, math.sqrt(var / r)


def _aggregate_column(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pairs = [_mean_se(matrix[:, s]) for s in range(matrix.shape[1])]
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def _nrmse_column(matrix: np.ndarray, truth: float) -> tuple[np.ndarray, np.ndarray]:
    mean = np.full(matrix.shape[1], np.nan)
    se = np.full(matrix.shape[1], np.nan)
    if truth == 0:
        return mean, se
    for s in range(matrix.shape[1]):
        sq = (matrix[:, s] - truth) ** 2
        mse, mse_se = _mean_se(sq)
        mean[s] = math.sqrt(mse) / abs(truth)
        if mse > 0:
            se[s] = mse_se / (2.0 * math.sqrt(mse)) / abs(truth)
    return mean, se


def run_replicated(
    config: ExperimentConfig,
    graph: Graph,
    labels: LabelAssignment | None = None,
    workers: int | None = None,
    backend: str = "auto",
) -> Aggregate:
    """Run ``config.replications`` chains with seeds base_seed + r and aggregate.

    Means and standard errors are computed with exactly rounded sums, so the
    result does not depend on the order in which chains finish.
    """
    weights = config.weights
    if labels is None:
        mu = weights.mu(graph)
        labels = assign_labels(graph, config.label_p, label_rng(config.base_seed), mu)
    truth_kind = config.truth
    if truth_kind is None:
        if weights.kind != "uniform":
            raise ConfigError("non-uniform targets need an explicit truth ('mu' or 'uniform')")
        truth_kind = "mu"
    seeds = [config.base_seed + r for r in range(config.replications)]
    workers = workers or min(len(seeds), os.cpu_count() or 1)

    job = partial(run_chain, config, graph, labels=labels.labels, backend=backend)
    if workers > 1 and len(seeds) > 1:
        # the reference path holds the GIL, the compiled loop releases it
        if backend == "python" or config.lru_ratio is not None:
            pool = ProcessPoolExecutor(max_workers=workers, mp_context=multiprocessing.get_context("fork"))
        else:
            pool = ThreadPoolExecutor(max_workers=workers)
        with pool:
            runs = list(pool.map(job, seeds))
    else:
        runs = [job(s) for s in seeds]

    def stack(attr):
        return np.vstack([getattr(r, attr) for r in runs])

    steps_mean, _ = _aggregate_column(stack("steps").astype(np.float64))
    costs_mean, _ = _aggregate_column(stack("costs"))
    est_attr = "estimate" if truth_kind == "mu" else "is_estimate"
    metrics = {
        "tvd": _aggregate_column(stack("tvd")),
        "estimate": _aggregate_column(stack(est_attr)),
        "nrmse": _nrmse_column(stack(est_attr), labels.truth_for(truth_kind)),
    }
    return Aggregate(config, steps_mean, costs_mean, metrics, runs, labels)


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.12g}"


def write_csv(
    aggregates: dict[str, Aggregate] | Aggregate,
    out: TextIO,
    header: list[tuple[str, object]] | None = None,
) -> None:
    """Write ``step,cost,metric,mean,stderr`` rows preceded by '#' comments.

    With several aggregates the metric names are prefixed by their key.
    """
    for key, value in header or []:
        out.write(f"# {key} = {value}\n")
    out.write(CSV_HEADER + "\n")
    if isinstance(aggregates, Aggregate):
        aggregates = {"": aggregates}
    for prefix, agg in aggregates.items():
        for s in range(len(agg.steps)):
            for name in ("tvd", "nrmse", "estimate"):
                mean, se = agg.metrics[name]
                label = f"{prefix}:{name}" if prefix else name
                out.write(f"{_fmt(agg.steps[s])},{_fmt(agg.costs[s])},{label},{_fmt(mean[s])},{_fmt(se[s])}\n")
