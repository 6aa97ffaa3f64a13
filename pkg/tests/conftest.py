import os
from pathlib import Path

import numpy as np
import pytest

from hdtwalk.graph import from_edges, largest_connected_component

DATA_DIR = Path(os.environ.get("HDT_DATA_DIR", Path(__file__).resolve().parent.parent / "data"))

_criteria: dict[str, dict] = {}


def random_connected_graph(n, extra_edges, rng):
    """Random spanning tree plus ``extra_edges`` random chords."""
    order = rng.permutation(n)
    edges = [(int(order[k]), int(order[rng.integers(k)])) for k in range(1, n)]
    for _ in range(extra_edges):
        u, v = rng.integers(n, size=2)
        edges.append((int(u), int(v)))
    return from_edges(edges, node_count=n)


def triangle():
    return from_edges([(0, 1), (1, 2), (2, 0)])


def path2():
    return from_edges([(0, 1)])


def star(leaves):
    return from_edges([(0, k) for k in range(1, leaves + 1)])


def cycle(n):
    return from_edges([(k, (k + 1) % n) for k in range(n)])


def load_dataset(stem):
    """Largest component of a dataset from HDT_DATA_DIR, or fail loudly."""
    from hdtwalk.graph import read_edge_list

    for name in (stem, stem + ".gz"):
        path = DATA_DIR / name
        if path.exists():
            return largest_connected_component(read_edge_list(path))
    pytest.fail(f"dataset missing: {DATA_DIR / stem} (set HDT_DATA_DIR)", pytrace=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def criterion(request):
    """Record a one-line detail for the acceptance summary."""
    marker = request.node.get_closest_marker("criterion")
    key = str(marker.args[0]) if marker else request.node.name
    entry = _criteria.setdefault(key, {"detail": "", "outcome": None, "title": marker.args[1] if marker else ""})

    def note(text):
        entry["detail"] = text

    return note


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    key = str(marker.args[0])
    entry = _criteria.setdefault(key, {"detail": "", "outcome": None, "title": marker.args[1]})
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry["outcome"] = "PASS" if rep.passed else "FAIL"
        if rep.failed and not entry["detail"]:
            msg = getattr(rep.longrepr, "reprcrash", None)
            entry["detail"] = msg.message.splitlines()[0] if msg else str(rep.longrepr).splitlines()[-1]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=lambda k: int(k) if k.isdigit() else 999):
        e = _criteria[key]
        if e["outcome"] is None:
            continue
        terminalreporter.write_line(f"criterion {key:>2} {e['outcome']}: {e['title']} | {e['detail']}")
