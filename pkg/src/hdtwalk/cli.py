"""Command-line front end.

Exit codes: 0 on success, 1 for configuration errors, 2 for data errors
(unreadable or malformed input files).

Experiment options come from ``--config FILE`` ("key = value" lines) and
are overridden by command-line flags. CSV outputs repeat the resolved
options as ``# config: key = value`` comment lines, so an output file can
be passed back as ``--config`` to reproduce it.
"""

from __future__ import annotations

import argparse
import contextlib
import sys
from dataclasses import fields

import numpy as np

from .analysis import (
    DENSE_NODE_CAP,
    build_mh_kernel,
    lyapunov,
    ode_integrate,
    reversible_spectrum,
    write_spectral_csv,
)
from .engine import CSV_HEADER, ConfigError, ExperimentConfig, label_rng, run_replicated, write_csv
from .graph import Graph, GraphFormatError, largest_connected_component, read_edge_list
from .metrics import assign_labels, write_labels
from .target import TargetWeights, load_weights

CONFIG_PREFIX = "# config:"
_FIELD_TYPES = {
    "sampler": str,
    "alpha": float,
    "total_steps": int,
    "budget": float,
    "burn_in_fraction": float,
    "fake_count_mode": str,
    "lru_ratio": float,
    "initial_state": str,
    "replications": int,
    "base_seed": int,
    "snapshot_stride": int,
    "budget_snapshots": int,
    "mtm_k": int,
    "mtm_h": str,
    "label_p": float,
    "truth": str,
}
# keys that are not ExperimentConfig fields
_EXTRA_KEYS = {"graph": str, "target": str, "workers": int}
_ALL_KEYS = {**_FIELD_TYPES, **_EXTRA_KEYS}


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _convert(key: str, raw: str):
    if raw.strip().lower() == "none":
        return None
    try:
        return _ALL_KEYS[key](raw.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def load_config(path: str) -> dict[str, object]:
    """Parse a "key = value" file; also accepts a CSV written by this tool."""
    out: dict[str, object] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line == CSV_HEADER:
                break
            if line.startswith(CONFIG_PREFIX):
                line = line[len(CONFIG_PREFIX) :].strip()
            elif not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            if key not in _ALL_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _convert(key, value)
    return out


def _fmt_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _load_graph(path: str | None) -> Graph:
    if not path:
        raise ConfigError("a graph path is required")
    try:
        return largest_connected_component(read_edge_list(path))
    except GraphFormatError as exc:
        raise DataError(f"{path}: {exc}") from None
    except OSError as exc:
        raise DataError(f"cannot read graph {path}: {exc}") from None


def _weights(spec: str | None, graph: Graph) -> TargetWeights:
    spec = spec or "uniform"
    if spec == "uniform":
        return TargetWeights.uniform()
    if spec == "degree":
        return TargetWeights.degree()
    if spec.startswith("file:"):
        try:
            return load_weights(spec[5:], graph)
        except (OSError, ValueError) as exc:
            raise DataError(f"target weights: {exc}") from None
    raise ConfigError(f"unknown target {spec!r}; expected uniform, degree or file:<path>")


def _experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("graph_path", nargs="?", help="edge-list file (or 'graph' key in the config)")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--output", "-o", help="CSV destination (default: stdout)")
    for key, typ in _ALL_KEYS.items():
        if key == "graph":
            continue
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=str, default=None, metavar=typ.__name__.upper())


def _resolve(args) -> tuple[dict[str, object], Graph, ExperimentConfig]:
    opts = load_config(args.config) if args.config else {}
    for key in _ALL_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = _convert(key, val)
    if args.graph_path:
        opts["graph"] = args.graph_path
    graph = _load_graph(opts.get("graph"))
    weights = _weights(opts.get("target"), graph)
    kwargs = {k: v for k, v in opts.items() if k in _FIELD_TYPES and v is not None}
    init = kwargs.get("initial_state")
    if isinstance(init, str) and init.startswith("fixed:"):
        label = int(init[6:])
        hits = np.flatnonzero(graph.original_labels == label)
        if not len(hits):
            raise ConfigError(f"fixed initial node {label} is not in the graph's largest component")
        kwargs["initial_state"] = "fixed"
        kwargs["initial_node"] = int(hits[0])
    cfg = ExperimentConfig(weights=weights, **kwargs)
    return opts, graph, cfg


def _header(opts: dict[str, object], cfg: ExperimentConfig) -> list[tuple[str, str]]:
    rows = [("graph", str(opts.get("graph"))), ("target", str(opts.get("target") or "uniform"))]
    for f in fields(ExperimentConfig):
        if f.name in _FIELD_TYPES:
            value = getattr(cfg, f.name)
            if f.name == "initial_state" and value == "fixed":
                value = f"fixed:{opts['initial_state'][6:]}"
            rows.append((f.name, _fmt_value(value)))
    return [(f"config: {k}", v) for k, v in rows]


@contextlib.contextmanager
def _sink(path: str | None):
    if path is None:
        yield sys.stdout
        return
    try:
        fh = open(path, "w", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None
    with fh:
        yield fh


def _echo(header) -> None:
    for k, v in header:
        print(f"{k} = {v}", file=sys.stderr)


def cmd_ingest(args) -> int:
    try:
        raw = read_edge_list(args.graph_path, symmetrize=not args.no_symmetrize)
    except GraphFormatError as exc:
        raise DataError(f"{args.graph_path}: {exc}") from None
    except OSError as exc:
        raise DataError(f"cannot read graph {args.graph_path}: {exc}") from None
    g = largest_connected_component(raw)
    print(f"nodes={g.node_count} edges={g.edge_count} avg_degree={g.average_degree:.3f}")
    if raw.node_count != g.node_count:
        print(f"# raw graph: nodes={raw.node_count} edges={raw.edge_count}", file=sys.stderr)
    return 0


def cmd_run(args) -> int:
    opts, graph, cfg = _resolve(args)
    if cfg.total_steps is None or cfg.budget is not None:
        raise ConfigError("run needs total_steps and no budget (use the budget subcommand)")
    header = _header(opts, cfg)
    _echo(header)
    agg = run_replicated(cfg, graph, workers=opts.get("workers"))
    with _sink(args.output) as out:
        write_csv(agg, out, header)
    return 0


def cmd_budget(args) -> int:
    opts, graph, cfg = _resolve(args)
    if cfg.budget is None:
        raise ConfigError("budget subcommand needs a budget")
    if cfg.sampler == "srrw":
        raise ConfigError("budget compares an HDT sampler against srrw; choose a non-srrw sampler")
    header = _header(opts, cfg)
    _echo(header)
    hdt = run_replicated(cfg, graph, workers=opts.get("workers"))
    srrw = run_replicated(cfg.replace(sampler="srrw", lru_ratio=None), graph, labels=hdt.labels, workers=opts.get("workers"))
    with _sink(args.output) as out:
        write_csv({cfg.sampler: hdt, "srrw": srrw}, out, header)
    return 0


def _parse_vector(spec: str, n: int | None = None) -> np.ndarray:
    if spec.startswith("uniform:"):
        k = int(spec[8:])
        return np.full(k, 1.0 / k)
    if spec == "uniform" and n is not None:
        return np.full(n, 1.0 / n)
    try:
        v = np.array([float(t) for t in spec.split(",")])
    except ValueError:
        raise ConfigError(f"cannot parse vector {spec!r}") from None
    if np.any(v <= 0):
        raise ConfigError("vector entries must be positive")
    return v / v.sum()


def cmd_spectral(args) -> int:
    graph = _load_graph(args.graph_path)
    if graph.node_count > DENSE_NODE_CAP:
        raise ConfigError(f"spectral analysis is limited to {DENSE_NODE_CAP} nodes (graph has {graph.node_count})")
    if args.mu in ("uniform", "degree") or args.mu.startswith("file:"):
        mu = _weights(args.mu, graph).mu(graph)
    else:
        mu = _parse_vector(args.mu, graph.node_count)
        if len(mu) != graph.node_count:
            raise ConfigError("mu length does not match the graph")
    report = reversible_spectrum(build_mh_kernel(graph, mu))
    with _sink(args.output) as out:
        write_spectral_csv(report, graph, args.alpha, out)
    return 0


def cmd_ode(args) -> int:
    mu = _parse_vector(args.mu)
    x0 = mu.copy() if args.x0 == "mu" else _parse_vector(args.x0)
    if len(x0) != len(mu):
        raise ConfigError("x0 and mu differ in length")
    traj = ode_integrate(mu, args.alpha, x0, args.h, args.steps)
    with _sink(args.output) as out:
        out.write(f"# config: mu = {args.mu}\n# config: x0 = {args.x0}\n")
        out.write(f"# config: alpha = {args.alpha!r}\n# config: h = {args.h!r}\n# config: steps = {args.steps}\n")
        out.write("t," + ",".join(f"x{i}" for i in range(len(mu))) + ",lyapunov\n")
        for k, x in enumerate(traj):
            vals = ",".join(f"{v:.17g}" for v in x)
            out.write(f"{k * args.h:.17g},{vals},{lyapunov(mu, args.alpha, x):.17g}\n")
    return 0


def cmd_labels(args) -> int:
    graph = _load_graph(args.graph_path)
    labels = assign_labels(graph, args.p, label_rng(args.seed))
    if args.output is None:
        for lab, f in zip(graph.original_labels, labels.labels):
            print(f"{int(lab)} {int(f)}")
    else:
        try:
            write_labels(args.output, graph, labels.labels)
        except OSError as exc:
            raise DataError(f"cannot write {args.output}: {exc}") from None
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hdtwalk", description="History-driven target MCMC on graphs")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="print node/edge statistics of the largest component")
    s.add_argument("graph_path")
    s.add_argument("--no-symmetrize", action="store_true", help="keep only reciprocated arcs")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("run", help="replicated fixed-step experiment")
    _experiment_args(s)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("budget", help="HDT sampler vs SRRW under one cost budget")
    _experiment_args(s)
    s.set_defaults(func=cmd_budget)

    s = sub.add_parser("spectral", help="eigenpairs and covariance matrices of the MH chain")
    s.add_argument("graph_path")
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--mu", default="uniform", help="uniform, degree, file:<path> or comma list")
    s.add_argument("--output", "-o")
    s.set_defaults(func=cmd_spectral)

    s = sub.add_parser("ode", help="integrate x' = pi[x] - x")
    s.add_argument("--mu", required=True, help="uniform:<n> or comma list")
    s.add_argument("--x0", default="mu", help="'mu' or comma list")
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--h", type=float, default=0.01)
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--output", "-o")
    s.set_defaults(func=cmd_ode)

    s = sub.add_parser("labels", help="random Bernoulli(p) node labels")
    s.add_argument("graph_path")
    s.add_argument("--p", type=float, default=0.3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", "-o")
    s.set_defaults(func=cmd_labels)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
