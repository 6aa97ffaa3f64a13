"""One-step transition rules for graph samplers.

Every stepper proposes uniformly over the neighbors of the current node and
talks to the target only through ``oracle.log_ratio(i, j)``, so the same code
drives the plain target and the history-driven one.

Random numbers come from two generators in :class:`ChainRng`: ``proposal``
for node draws and ``accept`` for accept/reject and selection draws. Only
``Generator.random()`` is used; a node is picked from a neighbor list of
length d as ``nbrs[int(u * d)]``. The compiled kernels in
:mod:`hdtwalk._kernels` follow the same draw order, which keeps the two
implementations bit-identical.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import NamedTuple, Protocol

import numpy as np

from .graph import Graph
from .target import HistoryTarget

__all__ = [
    "SAMPLERS",
    "BALANCE_FUNCTIONS",
    "ChainRng",
    "chain_streams",
    "ChainState",
    "Move",
    "MtmConfig",
    "TargetOracle",
    "log_balance",
    "mh_step",
    "mtm_step",
    "mtm_log_acceptance",
    "mhda_step",
    "two_cycle_step",
    "srrw_step",
    "srrw_row",
    "step_cost",
]

SAMPLERS = ("mhrw", "mtm", "mhda", "two_cycle", "srrw")

# name -> integer code shared with the compiled kernels
BALANCE_FUNCTIONS = {"sqrt": 0, "min1": 1, "max1": 2, "u/(1+u)": 3, "1+u": 4}
_BALANCE_ALIASES = {"barker": "u/(1+u)", "one_plus": "1+u"}


class TargetOracle(Protocol):
    def log_ratio(self, i: int, j: int) -> float: ...


class ChainRng:
    """Independent proposal and acceptance streams for one chain."""

    def __init__(self, proposal: np.random.Generator, accept: np.random.Generator):
        self.proposal = proposal
        self.accept = accept

    @classmethod
    def from_seed(cls, seed: int) -> ChainRng:
        return chain_streams(seed)[1]


def chain_streams(seed: int) -> tuple[np.random.Generator, ChainRng]:
    """Initialization stream plus proposal/acceptance streams for one chain.

    The three are independent children of ``SeedSequence(seed)``.
    """
    init, prop, acc = np.random.SeedSequence(seed).spawn(3)
    gen = lambda s: np.random.Generator(np.random.PCG64(s))  # noqa: E731
    return gen(init), ChainRng(gen(prop), gen(acc))


@dataclass
class ChainState:
    current: int
    last_visit: int = -1
    phase: int = 0
    step: int = 0
    cumulative_cost: float = 0.0

    def __post_init__(self):
        if self.last_visit < 0:
            self.last_visit = self.current


class Move(NamedTuple):
    """Outcome of one step.

    ``event`` flags the sampler-specific side branch: the MHDA re-proposal
    fired, or SRRW clamped a negative self-loop mass.
    """

    node: int
    accepted: bool
    cost: float
    last_visit: int = -1
    event: bool = False


@dataclass(frozen=True)
class MtmConfig:
    num_candidates: int = 3
    balance_function: str = "sqrt"

    def __post_init__(self):
        if int(self.num_candidates) < 1:
            raise ValueError("MTM needs at least one candidate")
        name = _BALANCE_ALIASES.get(self.balance_function, self.balance_function)
        if name not in BALANCE_FUNCTIONS:
            raise ValueError(f"unknown balance function {self.balance_function!r}")
        object.__setattr__(self, "balance_function", name)

    @property
    def balance_code(self) -> int:
        return BALANCE_FUNCTIONS[self.balance_function]


def log_balance(code: int, z: float) -> float:
    """log h(e^z) for the locally balanced functions."""
    if code == 0:
        return 0.5 * z
    if code == 1:
        return z if z < 0.0 else 0.0
    if code == 2:
        return z if z > 0.0 else 0.0
    if code == 3:
        if z >= 0.0:
            return -math.log1p(math.exp(-z))
        return z - math.log1p(math.exp(z))
    if z >= 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


def _accept(log_a: float, u: float) -> bool:
    return log_a >= 0.0 or u < math.exp(log_a)


def _pick(graph: Graph, i: int, u: float) -> int:
    nbrs = graph.adjacency[i]
    if not nbrs:
        raise ValueError(f"node {i} has no neighbors")
    return nbrs[int(u * len(nbrs))]


def _log_mh(graph: Graph, oracle: TargetOracle, i: int, j: int) -> float:
    """log of pi_j Q_ji / (pi_i Q_ij) under the uniform-neighbor proposal."""
    ld = graph.log_degree_list
    return oracle.log_ratio(i, j) + (ld[i] - ld[j])


def mh_step(graph: Graph, oracle: TargetOracle, state: ChainState, rng: ChainRng) -> Move:
    i = state.current
    j = _pick(graph, i, rng.proposal.random())
    log_a = _log_mh(graph, oracle, i, j)
    if _accept(log_a, rng.accept.random()):
        return Move(j, True, 2.0)
    return Move(i, False, 2.0)


def _logsumexp(values: list[float]) -> float:
    m = values[0]
    for v in values:
        if v > m:
            m = v
    s = 0.0
    for v in values:
        s += math.exp(v - m)
    return m + math.log(s)


def mtm_log_acceptance(
    graph: Graph,
    oracle: TargetOracle,
    config: MtmConfig,
    i: int,
    candidates: list[int],
    selected: int,
    references: list[int],
) -> float:
    """log of the MTM acceptance ratio for fixed draws (before the min with 1)."""
    h = config.balance_code
    forward = [log_balance(h, _log_mh(graph, oracle, i, y)) for y in candidates]
    backward = [log_balance(h, _log_mh(graph, oracle, selected, i))]
    backward += [log_balance(h, _log_mh(graph, oracle, selected, x)) for x in references]
    return _logsumexp(forward) - _logsumexp(backward)


def mtm_step(graph: Graph, oracle: TargetOracle, config: MtmConfig, state: ChainState, rng: ChainRng) -> Move:
    i = state.current
    k = config.num_candidates
    h = config.balance_code
    cost = 2.0 * k
    cands = [_pick(graph, i, rng.proposal.random()) for _ in range(k)]
    lw = [log_balance(h, _log_mh(graph, oracle, i, y)) for y in cands]
    m = max(lw)
    w = [math.exp(v - m) for v in lw]
    total = 0.0
    for v in w:
        total += v
    target = rng.accept.random() * total
    sel = k - 1
    acc = 0.0
    for s in range(k):
        acc += w[s]
        if target < acc:
            sel = s
            break
    y = cands[sel]
    refs = [_pick(graph, y, rng.proposal.random()) for _ in range(k - 1)]
    back = [log_balance(h, _log_mh(graph, oracle, y, i))]
    back += [log_balance(h, _log_mh(graph, oracle, y, x)) for x in refs]
    log_a = _logsumexp(lw) - _logsumexp(back)
    if _accept(log_a, rng.accept.random()):
        return Move(y, True, cost)
    return Move(i, False, cost)


def mhda_step(graph: Graph, oracle: TargetOracle, state: ChainState, rng: ChainRng) -> Move:
    """Delayed-acceptance step that discourages immediate backtracking.

    ``Move.last_visit`` carries the updated auxiliary state.
    """
    i = state.current
    nbrs = graph.adjacency[i]
    d = len(nbrs)
    k = _pick(graph, i, rng.proposal.random())
    log_a = _log_mh(graph, oracle, i, k)
    if not _accept(log_a, rng.accept.random()):
        return Move(i, False, 2.0, state.last_visit)
    if k != state.last_visit or d <= 1:
        return Move(k, True, 2.0, i)
    idx = int(rng.proposal.random() * (d - 1))
    if idx >= bisect.bisect_left(nbrs, k):
        idx += 1
    r = nbrs[idx]
    log_r = _log_mh(graph, oracle, i, r)
    log_q = 2.0 * (log_r if log_r < 0.0 else 0.0) + (-2.0 * log_a if log_a < 0.0 else 0.0)
    if _accept(log_q, rng.accept.random()):
        return Move(r, True, 4.0, i, True)
    return Move(k, True, 4.0, i, True)


def two_cycle_step(
    graph: Graph, oracle: TargetOracle, config: MtmConfig, state: ChainState, rng: ChainRng
) -> Move:
    """MH on even phases, MTM on odd phases. The caller flips ``state.phase``."""
    if state.phase == 0:
        return mh_step(graph, oracle, state, rng)
    return mtm_step(graph, oracle, config, state, rng)


def srrw_row(graph: Graph, history: HistoryTarget, i: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """Closed neighborhood of ``i`` and its unnormalized SRRW weights.

    The third value reports whether a negative self-loop mass was clamped.
    """
    lmu = history.log_mu
    ld = graph.log_degrees
    start, stop = graph.indptr[i], graph.indptr[i + 1]
    d = stop - start
    nodes = np.empty(d + 1, dtype=np.int64)
    probs = np.empty(d + 1)
    s = 0
    placed = False
    stay = 1.0
    for p in range(start, stop):
        j = int(graph.indices[p])
        if not placed and j > i:
            nodes[s] = i
            self_slot = s
            s += 1
            placed = True
        z = (lmu[j] - lmu[i]) + (ld[i] - ld[j])
        pij = math.exp(z if z < 0.0 else 0.0) / d
        stay -= pij
        nodes[s] = j
        probs[s] = pij
        s += 1
    if not placed:
        nodes[s] = i
        self_slot = s
    clamped = stay < 0.0
    probs[self_slot] = 0.0 if clamped else stay
    expo = np.empty(d + 1)
    top = -math.inf
    for s in range(d + 1):
        e = -history.alpha * history.log_excess(int(nodes[s]))
        expo[s] = e
        if e > top:
            top = e
    weights = np.empty(d + 1)
    for s in range(d + 1):
        weights[s] = probs[s] * math.exp(expo[s] - top)
    return nodes, weights, clamped


def srrw_step(graph: Graph, history: HistoryTarget, state: ChainState, rng: ChainRng) -> Move:
    """Self-repellent step; the move is ``accepted`` whenever it leaves ``i``."""
    i = state.current
    nodes, weights, clamped = srrw_row(graph, history, i)
    total = 0.0
    for w in weights:
        total += w
    target = rng.proposal.random() * total
    acc = 0.0
    chosen = -1
    for s in range(len(nodes)):
        if weights[s] > 0.0:
            acc += weights[s]
            chosen = s
            if target < acc:
                break
    nxt = int(nodes[chosen])
    return Move(nxt, nxt != i, 2.0 * len(nodes), -1, clamped)


def step_cost(sampler: str, graph: Graph, i: int, num_candidates: int = 3, phase: int = 0, delayed: bool = False) -> float:
    """Cost in units of one target evaluation pair."""
    if sampler == "mhrw":
        return 2.0
    if sampler == "srrw":
        return 2.0 * (graph.degree(i) + 1)
    if sampler == "mtm":
        return 2.0 * num_candidates
    if sampler == "mhda":
        return 4.0 if delayed else 2.0
    if sampler == "two_cycle":
        return 2.0 if phase == 0 else 2.0 * num_candidates
    raise ValueError(f"unknown sampler {sampler!r}")
