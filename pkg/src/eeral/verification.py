"""Seeded oracle suites: sum-product vs enumeration, gradients vs finite
differences, and EER scores vs a brute-force joint table.

The references here deliberately avoid the inference module's machinery:
assignments come from ``itertools.product`` and every quantity is read off
the explicit list of weighted assignments.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .graph import AnnotationPool, LabelSpace, NodeRef, new_scene_graph
from .inference import EXACT, SUM_PRODUCT, InferenceConfig, PotentialTables, infer
from .model import ModelParams, loss, loss_gradient
from .selection import score_eer

SUITES = ("bp", "grad", "eer")
DEFAULT_TRIALS = {"bp": 200, "grad": 50, "eer": 100}

BP_TOL = 1e-9
GRAD_REL_TOL, GRAD_ABS_FLOOR, FD_STEP = 1e-4, 1e-7, 1e-4
EER_TOL = 1e-8
CLOSED_FORM_TOL = 1e-12
MONOTONE_TOL = -1e-10
INJECTED_ERROR = 1e-3


@dataclass
class Check:
    label: str
    value: float
    tolerance: float
    upper: bool = True  # value must stay below tolerance; False means above

    @property
    def passed(self) -> bool:
        return self.value < self.tolerance if self.upper else self.value >= self.tolerance

    def line(self) -> str:
        op = "<" if self.upper else ">="
        return f"{self.label} {op} {self.tolerance:g}: {'PASS' if self.passed else 'FAIL'} ({self.value:.3e})"


@dataclass
class SuiteResult:
    name: str
    trials: int
    checks: list[Check] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)
    info: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


# -- brute-force references ------------------------------------------------------

def enumerate_joint(pot: PotentialTables, clamps=None):
    """(assignments (K, N+1), probabilities (K,)) for every assignment consistent with ``clamps``."""
    n = pot.person_unary.shape[0]
    ts, ta = pot.num_activities, pot.num_actions
    clamps = clamps or {}
    rows, logw = [], []
    for y in itertools.product(range(ts), *[range(ta)] * n):
        if any(y[i] != v for i, v in clamps.items()):
            continue
        s = pot.scene_unary[y[0]]
        for p in range(1, n + 1):
            s += pot.person_unary[p - 1, y[p]] + pot.scene_person[y[0], y[p]]
            for q in range(p + 1, n + 1):
                s += pot.person_person[y[p], y[q]]
        rows.append(y)
        logw.append(s)
    logw = np.array(logw)
    w = np.exp(logw - logw.max())
    return np.array(rows, dtype=np.int64), w / w.sum()


def _marginals_of(assign, prob, sizes):
    return [np.bincount(assign[:, i], weights=prob, minlength=t) / prob.sum()
            for i, t in enumerate(sizes)]


def _entropy(m):
    nz = m[m > 0]
    return float(-(nz * np.log(nz)).sum())


def brute_force_eer(pot: PotentialTables, clamps=None) -> dict[int, float]:
    """Phi_i for each unclamped node, from one enumerated joint table."""
    clamps = dict(clamps or {})
    n = pot.person_unary.shape[0]
    sizes = [pot.num_activities] + [pot.num_actions] * n
    assign, prob = enumerate_joint(pot, clamps)
    base = _marginals_of(assign, prob, sizes)
    h_bar = np.mean([_entropy(m) for m in base])
    out = {}
    for i in range(n + 1):
        if i in clamps:
            continue
        expected = 0.0
        for j in range(sizes[i]):
            sel = assign[:, i] == j
            if base[i][j] == 0:
                continue
            cond = _marginals_of(assign[sel], prob[sel], sizes)
            expected += base[i][j] * np.mean([_entropy(m) for m in cond])
        out[i] = h_bar - expected
    return out


def finite_difference(fn, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def relative_errors(a: np.ndarray, b: np.ndarray, floor: float = GRAD_ABS_FLOOR) -> np.ndarray:
    """|a-b| / max(|a|, |b|), with entries whose absolute gap is under ``floor`` set to 0."""
    gap = np.abs(a - b)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    return np.where(gap < floor, 0.0, gap / scale)


# -- random instances --------------------------------------------------------------

def random_potentials(rng, n, ts, ta, coupled=True, scale=1.0) -> PotentialTables:
    B = rng.uniform(-scale, scale, (ta, ta))
    return PotentialTables(rng.uniform(-scale, scale, ts), rng.uniform(-scale, scale, (n, ta)),
                           rng.uniform(-scale, scale, (ts, ta)),
                           0.5 * (B + B.T) if coupled else np.zeros((ta, ta)))


def random_clamps(rng, n, ts, ta, max_fraction=0.5) -> dict[int, int]:
    k = int(rng.integers(0, int(max_fraction * (n + 1)) + 1))
    nodes = rng.choice(n + 1, size=k, replace=False)
    return {int(i): int(rng.integers(ts if i == 0 else ta)) for i in nodes}


def random_problem(rng, n_graphs, n_range, ts, ta, d_s, d_a, scale=0.5):
    ls = LabelSpace(ta, ts)
    graphs, states = [], {}
    for k in range(n_graphs):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        g = new_scene_graph(f"v{k}", rng.standard_normal(d_s), rng.standard_normal((n, d_a)))
        graphs.append(g)
        labels = np.array([rng.integers(ts)] + list(rng.integers(ta, size=n)))
        labels[rng.random(n + 1) < 0.4] = -1
        states[g.graph_id] = labels
    if all(np.all(s < 0) for s in states.values()):
        states[graphs[0].graph_id][0] = int(rng.integers(ts))
    params = ModelParams.random(ls, d_s, d_a, rng, scale=scale)
    return ls, graphs, AnnotationPool(ls, states), params


# -- suites ---------------------------------------------------------------------------

def suite_bp(trials: int, seed: int = 0, inject: bool = False) -> SuiteResult:
    """Sum-product on trees (no person-person coupling) against enumeration."""
    res = SuiteResult("bp", trials)
    cfg = InferenceConfig(rounds=4, backend=SUM_PRODUCT)
    worst = 0.0
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        n, ts, ta = int(rng.integers(1, 7)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
        pot = random_potentials(rng, n, ts, ta, coupled=False)
        clamps = random_clamps(rng, n, ts, ta) if t % 2 else {}
        bp = infer(None, pot, clamps, cfg)
        ex = infer(None, pot, clamps, InferenceConfig(backend=EXACT))
        err = max(float(np.abs(a - b).sum()) for a, b in zip(bp, ex))
        if inject:
            err += INJECTED_ERROR
        if err >= BP_TOL:
            res.failures.append(f"trial {t}: N={n} Ts={ts} Ta={ta} L1={err:.3e}")
        worst = max(worst, err)
    res.checks.append(Check("bp_tree_max_l1", worst, BP_TOL))
    return res


def suite_grad(trials: int, seed: int = 0, inject: bool = False) -> SuiteResult:
    """loss_gradient against central differences, both backends."""
    res = SuiteResult("grad", trials)
    worst = worst_gap = worst_raw = 0.0
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        ts, ta = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        d_s, d_a = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        ls, graphs, pool, params = random_problem(rng, int(rng.integers(1, 4)), (1, 4), ts, ta, d_s, d_a)
        rounds = int(rng.integers(1, 6))
        for backend in (SUM_PRODUCT, EXACT):
            cfg = InferenceConfig(rounds=rounds, backend=backend)
            g = loss_gradient(params, graphs, pool, cfg).to_vector()
            fd = finite_difference(
                lambda v: loss(params.from_vector(v), graphs, pool, cfg), params.to_vector())
            if inject:
                g = g + INJECTED_ERROR * np.maximum(1.0, np.abs(g))
            err = float(relative_errors(g, fd).max())
            worst_gap = max(worst_gap, float(np.abs(g - fd).max()))
            worst_raw = max(worst_raw, float(relative_errors(g, fd, floor=0.0).max()))
            if err >= GRAD_REL_TOL:
                res.failures.append(f"trial {t} {backend}: S={rounds} max rel err {err:.3e}")
            worst = max(worst, err)
    res.checks.append(Check("grad_max_rel_err", worst, GRAD_REL_TOL))
    res.info.update(max_abs_gap=worst_gap, max_rel_err_unfloored=worst_raw)
    return res


def eer_instance(rng, budget=10**5):
    while True:
        n, ts, ta = int(rng.integers(1, 6)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
        if ts * ta**n <= budget:
            return n, ts, ta


def suite_eer(trials: int, seed: int = 0, inject: bool = False) -> SuiteResult:
    """score_eer (exact backend) against the brute-force joint table; the
    decoupled closed form; and nonnegativity of every score."""
    res = SuiteResult("eer", trials)
    cfg = InferenceConfig(backend=EXACT)
    worst = worst_closed = 0.0
    lowest = np.inf
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        n, ts, ta = eer_instance(rng)
        decoupled = t % 4 == 0
        pot = random_potentials(rng, n, ts, ta, coupled=not decoupled, scale=1.5)
        if decoupled:
            pot = PotentialTables(pot.scene_unary, pot.person_unary, np.zeros((ts, ta)), np.zeros((ta, ta)))
        clamps = random_clamps(rng, n, ts, ta, max_fraction=0.4)
        graph = new_scene_graph("e", np.zeros(1), np.zeros((n, 1)))
        states = np.full(n + 1, -1)
        for i, y in clamps.items():
            states[i] = y
        pool = AnnotationPool(LabelSpace(ta, ts), {"e": states})
        got = score_eer([graph], lambda g: pot, pool, cfg).scores
        ref = brute_force_eer(pot, clamps)
        for i, phi_ref in ref.items():
            phi = got[NodeRef("e", i)] + (INJECTED_ERROR if inject else 0.0)
            err = abs(phi - phi_ref)
            worst = max(worst, err)
            lowest = min(lowest, phi)
            if err >= EER_TOL:
                res.failures.append(f"trial {t} node {i}: {phi:.12g} vs {phi_ref:.12g}")
            if decoupled:
                m = infer(None, pot, clamps, cfg).node(i)
                gap = abs(phi - _entropy(m) / (n + 1))
                worst_closed = max(worst_closed, gap)
                if gap >= CLOSED_FORM_TOL:
                    res.failures.append(f"trial {t} node {i}: closed form gap {gap:.3e}")
    res.checks.append(Check("eer_max_abs_err", worst, EER_TOL))
    res.checks.append(Check("eer_decoupled_closed_form_gap", worst_closed, CLOSED_FORM_TOL))
    res.checks.append(Check("eer_min_score", float(lowest), MONOTONE_TOL, upper=False))
    return res


def run_suite(name: str, trials: int | None = None, seed: int = 0, inject: bool = False) -> SuiteResult:
    fn = {"bp": suite_bp, "grad": suite_grad, "eer": suite_eer}.get(name)
    if fn is None:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    return fn(DEFAULT_TRIALS[name] if trials is None else trials, seed, inject)
