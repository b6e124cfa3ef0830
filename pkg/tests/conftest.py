import itertools

import numpy as np
import pytest

from eeral.graph import AnnotationPool, LabelSpace, new_scene_graph
from eeral.inference import PotentialTables


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_space():
    return LabelSpace(num_actions=3, num_activities=2)


def random_tables(rng, n, ts, ta, coupled=True, scale=1.0):
    B = rng.uniform(-scale, scale, (ta, ta))
    return PotentialTables(rng.uniform(-scale, scale, ts), rng.uniform(-scale, scale, (n, ta)),
                           rng.uniform(-scale, scale, (ts, ta)),
                           0.5 * (B + B.T) if coupled else np.zeros((ta, ta)))


def naive_marginals(pot, clamps=None):
    """Marginals by looping over every joint assignment (independent of the package)."""
    n = pot.person_unary.shape[0]
    ts, ta = pot.scene_unary.shape[0], pot.person_unary.shape[1]
    ps, pa = np.zeros(ts), np.zeros((n, ta))
    for y in itertools.product(range(ts), *[range(ta)] * n):
        if clamps and any(y[i] != v for i, v in clamps.items()):
            continue
        s = pot.scene_unary[y[0]]
        for p in range(n):
            s += pot.person_unary[p, y[p + 1]] + pot.scene_person[y[0], y[p + 1]]
            for q in range(p + 1, n):
                s += pot.person_person[y[p + 1], y[q + 1]]
        w = np.exp(s)
        ps[y[0]] += w
        for p in range(n):
            pa[p, y[p + 1]] += w
    return ps / ps.sum(), pa / pa.sum(axis=1, keepdims=True)


def make_graphs(rng, sizes, d_s=2, d_a=3, prefix="g"):
    return [new_scene_graph(f"{prefix}{k}", rng.standard_normal(d_s), rng.standard_normal((n, d_a)))
            for k, n in enumerate(sizes)]


def pool_from(label_space, graphs, labeled):
    """``labeled``: {graph_id: {node: label}}."""
    states = {}
    for g in graphs:
        s = np.full(g.n_nodes, -1)
        for i, y in labeled.get(g.graph_id, {}).items():
            s[i] = y
        states[g.graph_id] = s
    return AnnotationPool(label_space, states)


# lines appended by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
