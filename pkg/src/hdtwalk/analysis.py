"""Exact small-graph analysis.

Dense transition kernels, spectral covariance formulas for reversible
chains, the mean-field ODE x' = pi[x] - x with its Lyapunov function, and a
Monte Carlo covariance estimate for cross-checking the formulas.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .engine import ExperimentConfig, run_chain
from .graph import Graph
from .target import normalized_pi

__all__ = [
    "DENSE_NODE_CAP",
    "CostComparison",
    "KernelMatrix",
    "NotReversibleError",
    "OdeInstabilityError",
    "SpectralReport",
    "build_mh_kernel",
    "build_srrw_kernel",
    "cost_scaled_comparison",
    "covariance_base",
    "covariance_hdt",
    "covariance_srrw",
    "empirical_clt_covariance",
    "iid_empirical_measures",
    "jacobian_at_mu",
    "jacobian_fd_check",
    "lyapunov",
    "lyapunov_descent_check",
    "ode_integrate",
    "reversible_spectrum",
    "scaled_error_covariance",
    "write_spectral_csv",
]

DENSE_NODE_CAP = 2000


class NotReversibleError(ValueError):
    pass


class OdeInstabilityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    entries: np.ndarray
    target: np.ndarray

    def reversibility_residual(self, target: np.ndarray | None = None) -> float:
        t = self.target if target is None else target
        flow = t[:, None] * self.entries
        return float(np.abs(flow - flow.T).max())


def _check_dense(graph: Graph) -> None:
    if graph.node_count > DENSE_NODE_CAP:
        raise ValueError(
            f"graph has {graph.node_count} nodes; dense analysis is capped at {DENSE_NODE_CAP}, "
            "use empirical_clt_covariance instead"
        )


def _positive_vector(x, n: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError(f"{name} must have length {n}")
    if not np.all(x > 0) or not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be strictly positive (interior of the simplex)")
    return x / x.sum()


def build_mh_kernel(graph: Graph, mu) -> KernelMatrix:
    """Metropolis-Hastings kernel for mu with a uniform-neighbor proposal."""
    _check_dense(graph)
    n = graph.node_count
    mu = _positive_vector(mu, n, "mu")
    deg = graph.degrees.astype(np.float64)
    P = np.zeros((n, n))
    for i in range(n):
        nb = graph.neighbors(i)
        P[i, nb] = np.minimum(1.0, mu[nb] * deg[i] / (mu[i] * deg[nb])) / deg[i]
        P[i, i] = max(0.0, 1.0 - P[i, nb].sum())
    return KernelMatrix(P, mu)


def build_srrw_kernel(graph: Graph, mu, x, alpha: float) -> tuple[KernelMatrix, np.ndarray]:
    """Self-repellent kernel K[x] over the MH base chain and its stationary law."""
    n = graph.node_count
    mu = _positive_vector(mu, n, "mu")
    x = _positive_vector(x, n, "x")
    P = build_mh_kernel(graph, mu).entries
    r = (x / mu) ** (-alpha)
    W = P * r[None, :]
    z = W.sum(axis=1)
    K = W / z[:, None]
    pi = mu * r * z
    pi /= pi.sum()
    return KernelMatrix(K, pi), pi


@dataclass(frozen=True, eq=False)
class SpectralReport:
    """Eigenpairs of a reversible kernel, descending eigenvalues.

    Column i of ``left``/``right`` is u_i/v_i, with u_i = D_mu v_i and
    u_i^T v_i = 1; u_1 = mu and v_1 = 1.
    """

    eigenvalues: np.ndarray
    left: np.ndarray
    right: np.ndarray
    mu: np.ndarray

    def v_base(self) -> np.ndarray:
        return covariance_base(self)

    def v_hdt(self, alpha: float) -> np.ndarray:
        return covariance_hdt(covariance_base(self), alpha)

    def v_srrw(self, alpha: float) -> np.ndarray:
        return covariance_srrw(self, alpha)


def reversible_spectrum(kernel: KernelMatrix, tol: float = 1e-10) -> SpectralReport:
    mu = kernel.target
    resid = kernel.reversibility_residual()
    if resid > tol:
        raise NotReversibleError(
            f"kernel is not reversible (residual {resid:.3g}); "
            "estimate its covariance with empirical_clt_covariance instead"
        )
    s = np.sqrt(mu)
    S = s[:, None] * kernel.entries / s[None, :]
    S = 0.5 * (S + S.T)
    w, phi = np.linalg.eigh(S)
    order = np.argsort(w)[::-1]
    w, phi = w[order], phi[:, order]
    if abs(w[0] - 1.0) > 1e-9:
        raise ValueError(f"top eigenvalue {w[0]} is not 1; is the kernel stochastic?")
    w[0] = 1.0
    phi[:, 0] = s
    # eigenvalues that differ from +-1 only by rounding are snapped
    w[np.abs(w + 1.0) < 1e-13] = -1.0
    w = np.clip(w, -1.0, 1.0)
    right = phi / s[:, None]
    left = phi * s[:, None]
    for i in range(len(w)):
        nz = np.flatnonzero(np.abs(right[:, i]) > 1e-12)
        if len(nz) and right[nz[0], i] < 0:
            right[:, i] *= -1
            left[:, i] *= -1
    return SpectralReport(w, left, right, mu)


def _spectral_sum(report: SpectralReport, factors: np.ndarray) -> np.ndarray:
    U = report.left[:, 1:]
    V = (U * factors[None, :]) @ U.T
    return 0.5 * (V + V.T)


def _base_factors(report: SpectralReport) -> np.ndarray:
    lam = report.eigenvalues[1:]
    if np.any(lam >= 1.0 - 1e-12):
        raise ValueError("eigenvalue 1 is repeated: the chain is reducible (disconnected graph?)")
    return (1.0 + lam) / (1.0 - lam)


def covariance_base(report: SpectralReport) -> np.ndarray:
    """Asymptotic covariance of the scaled empirical-measure error."""
    return _spectral_sum(report, _base_factors(report))


def covariance_hdt(v_base: np.ndarray, alpha: float) -> np.ndarray:
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return np.asarray(v_base) / (2.0 * alpha + 1.0)


def covariance_srrw(report: SpectralReport, alpha: float) -> np.ndarray:
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    lam = report.eigenvalues[1:]
    return _spectral_sum(report, _base_factors(report) / (2.0 * alpha * (lam + 1.0) + 1.0))


@dataclass(frozen=True, eq=False)
class CostComparison:
    expected_neighborhood: float
    hdt_scaled: np.ndarray
    srrw_scaled: np.ndarray
    min_eigenvalue: float


def cost_scaled_comparison(report: SpectralReport, graph: Graph, mu, alpha: float) -> CostComparison:
    """Compare per-budget covariances of HDT and SRRW.

    HDT pays 2 units per sample and SRRW pays 2 * E_mu|closed nbhd|. The
    returned minimum eigenvalue is that of
    (2 / E|closed nbhd|) * C_srrw V_srrw - C_hdt V_hdt.
    """
    mu = np.asarray(mu, dtype=np.float64)
    e_nbhd = float(mu @ (graph.degrees + 1.0))
    c_hdt = 2.0
    c_srrw = 2.0 * e_nbhd
    hdt = c_hdt * covariance_hdt(covariance_base(report), alpha)
    srrw = (2.0 / e_nbhd) * c_srrw * covariance_srrw(report, alpha)
    diff = srrw - hdt
    min_eig = float(np.linalg.eigvalsh(0.5 * (diff + diff.T)).min())
    return CostComparison(e_nbhd, hdt, srrw, min_eig)


def _pi(mu: np.ndarray, x: np.ndarray, alpha: float) -> np.ndarray:
    return normalized_pi(mu, x, alpha)


def ode_rhs(mu, alpha: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return _pi(np.asarray(mu, dtype=np.float64), x, alpha) - x


def ode_integrate(mu, alpha: float, x0, h: float, steps: int) -> np.ndarray:
    """Classical RK4 for x' = pi[x] - x. Returns an array of shape (steps + 1, n)."""
    mu = np.asarray(mu, dtype=np.float64)
    x = np.asarray(x0, dtype=np.float64).copy()
    if x.shape != mu.shape:
        raise ValueError("x0 and mu must have the same length")
    if not np.all(x > 0):
        raise ValueError("x0 must lie in the interior of the simplex")
    out = np.empty((steps + 1, len(x)))
    out[0] = x
    base = (1.0 + alpha) * np.log(mu)

    def f(y):
        if not y.min() > 0:
            raise OdeInstabilityError("trajectory left the simplex interior; use a smaller step h")
        lp = base - alpha * np.log(y)
        p = np.exp(lp - lp.max())
        return p / p.sum() - y

    for k in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not x.min() > 0 or not np.isfinite(x).all():
            raise OdeInstabilityError("trajectory left the simplex interior; use a smaller step h")
        out[k + 1] = x
    return out


def lyapunov(mu, alpha: float, x) -> float:
    mu = np.asarray(mu, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return float(np.sum(mu * (x / mu) ** (-alpha)))


def lyapunov_descent_check(trajectory, mu, alpha: float, slack: float = 1e-12) -> bool:
    """True when the Lyapunov value never rises by more than ``slack`` per step."""
    values = np.array([lyapunov(mu, alpha, x) for x in trajectory])
    return bool(np.all(np.diff(values) <= slack))


def jacobian_at_mu(mu, alpha: float) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    n = len(mu)
    return alpha * np.outer(mu, np.ones(n)) - (alpha + 1.0) * np.eye(n)


def jacobian_fd_check(mu, alpha: float, epsilon: float = 1e-5) -> float:
    """Max entrywise gap between central differences of pi[x] - x and the analytic Jacobian."""
    mu = np.asarray(mu, dtype=np.float64)
    n = len(mu)
    fd = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = epsilon
        fd[:, j] = (ode_rhs(mu, alpha, mu + e) - ode_rhs(mu, alpha, mu - e)) / (2 * epsilon)
    return float(np.abs(fd - jacobian_at_mu(mu, alpha)).max())


def scaled_error_covariance(measures: np.ndarray, mu, n: int) -> np.ndarray:
    """Second moment of sqrt(n) (x_n - mu) across rows of ``measures``."""
    z = math.sqrt(n) * (np.asarray(measures) - np.asarray(mu)[None, :])
    return z.T @ z / z.shape[0]


def iid_empirical_measures(mu, n: int, runs: int, rng: np.random.Generator) -> np.ndarray:
    """Empirical measures of ``runs`` i.i.d. samples of size n from mu."""
    return rng.multinomial(n, np.asarray(mu), size=runs) / n


def empirical_clt_covariance(
    config: ExperimentConfig, graph: Graph, runs: int, horizon: int, workers: int | None = None
) -> np.ndarray:
    """Monte Carlo covariance of sqrt(n)(x_n - mu) over independent chains.

    Uses every sample of each chain (no burn-in), seeds base_seed + r.
    """
    cfg = config.replace(total_steps=horizon, budget=None, burn_in_fraction=0.0, snapshot_stride=horizon)
    seeds = [cfg.base_seed + r for r in range(runs)]

    def one(seed):
        return run_chain(cfg, graph, seed).final_empirical_measure

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            measures = np.vstack(list(pool.map(one, seeds)))
    else:
        measures = np.vstack([one(s) for s in seeds])
    return scaled_error_covariance(measures, cfg.weights.mu(graph), horizon)


def write_spectral_csv(report: SpectralReport, graph: Graph, alpha: float, out: TextIO) -> None:
    """Eigenvalues and covariance matrices as CSV blocks under a JSON header."""
    meta = {
        "graph": graph.fingerprint(),
        "nodes": graph.node_count,
        "alpha": alpha,
        "kernel": "metropolis-hastings, uniform neighbor proposal",
        "formulas": {
            "V_base": "sum_{i>=2} (1+l_i)/(1-l_i) u_i u_i^T",
            "V_hdt": "V_base / (2 alpha + 1)",
            "V_srrw": "sum_{i>=2} (1+l_i)/(1-l_i) / (2 alpha (l_i+1) + 1) u_i u_i^T",
        },
    }
    out.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    out.write("# block: eigenvalues\n")
    out.write(",".join(f"{v:.17g}" for v in report.eigenvalues) + "\n")
    for name, mat in (
        ("V_base", report.v_base()),
        ("V_hdt", report.v_hdt(alpha)),
        ("V_srrw", report.v_srrw(alpha)),
    ):
        out.write(f"# block: {name}\n")
        for row in mat:
            out.write(",".join(f"{v:.17g}" for v in row) + "\n")
