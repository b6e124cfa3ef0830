"""Query strategies over the unlabeled nodes of a graph collection.

Every strategy returns a :class:`SelectionScore` (higher = more useful to
label) and :func:`top_k` turns scores into a deterministic batch.  Labeled
nodes are observations: they are clamped in all selection-time inference.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .graph import AnnotationPool, NodeRef, SceneGraph
from .inference import (EXACT, ClampSet, InferenceConfig, InferenceError, PotentialTables,
                        check_clamps, check_potentials, clamp_unaries, entropies,
                        force_indicators, infer)

EER, SA, LC, MARGIN, EC, RND = "eer", "sa", "lc", "m", "ec", "rnd"
STRATEGIES = (EER, SA, LC, MARGIN, EC, RND)

PotentialsFn = Callable[[SceneGraph], PotentialTables]


class SelectionError(ValueError):
    pass


@dataclass
class SelectionScore:
    strategy: str
    scores: dict[NodeRef, float] = field(default_factory=dict)

    def __len__(self):
        return len(self.scores)


@dataclass
class Selection:
    nodes: list[NodeRef]
    scores: list[float]
    strategy: str = ""
    iteration: int = 0

    def __len__(self):
        return len(self.nodes)


# -- clamped sweeps -----------------------------------------------------------

@dataclass
class Sweep:
    """Base marginals plus one re-inference per (candidate node, label)."""

    base_scene: np.ndarray           # (Ts,)
    base_persons: np.ndarray         # (N, Ta)
    nodes: list[int]
    clamped_scene: list[np.ndarray]  # per node: (T_i, Ts)
    clamped_persons: list[np.ndarray]  # per node: (T_i, N, Ta)

    def base_node(self, i: int) -> np.ndarray:
        return self.base_scene if i == 0 else self.base_persons[i - 1]

    def base_entropies(self) -> np.ndarray:
        return np.concatenate([[entropies(self.base_scene)], entropies(self.base_persons)])

    def clamped_entropies(self, k: int) -> np.ndarray:
        """(T_i, N+1) node entropies under each clamp of candidate ``k``."""
        return np.concatenate([entropies(self.clamped_scene[k])[:, None],
                               entropies(self.clamped_persons[k])], axis=1)


def clamped_sweep(potentials: PotentialTables, base_clamps: ClampSet, nodes: Sequence[int],
                  cfg: InferenceConfig) -> Sweep:
    base_clamps = dict(base_clamps)
    for i in nodes:
        if i in base_clamps:
            raise SelectionError(f"node {i} is already clamped")
    configs = [base_clamps]
    for i in nodes:
        for j in range(potentials.alphabet(i)):
            configs.append({**base_clamps, i: j})
    if cfg.backend == EXACT:
        margs = [infer(None, potentials, c, cfg) for c in configs]
        ps = np.stack([m.scene for m in margs])
        pa = np.stack([m.persons for m in margs])
    else:
        check_potentials(None, potentials)
        check_clamps(potentials, base_clamps)
        us = np.empty((len(configs),) + potentials.scene_unary.shape)
        ua = np.empty((len(configs),) + potentials.person_unary.shape)
        for r, c in enumerate(configs):
            us[r], ua[r] = clamp_unaries(potentials.scene_unary, potentials.person_unary, c)
        ps, pa = _kernels.bp_marginals(us, ua, potentials.scene_person, potentials.person_person,
                                       cfg.rounds, cfg.damping)
        for r, c in enumerate(configs):
            force_indicators(ps[r], pa[r], c)
    cs, cp, r = [], [], 1
    for i in nodes:
        t = potentials.alphabet(i)
        cs.append(ps[r:r + t])
        cp.append(pa[r:r + t])
        r += t
    return Sweep(ps[0], pa[0], list(nodes), cs, cp)


def clamped_average_entropy(graph: SceneGraph | None, potentials: PotentialTables,
                            base_clamps: ClampSet, i: int, j: int, cfg: InferenceConfig) -> float:
    """Mean node entropy after fixing node ``i`` to label ``j`` (node i contributes 0)."""
    if i in base_clamps:
        raise SelectionError(f"node {i} is already clamped")
    if not 0 <= j < potentials.alphabet(i):
        raise InferenceError(f"label {j} out of range for node {i}")
    m = infer(graph, potentials, {**base_clamps, i: j}, cfg)
    return float(np.concatenate([[entropies(m.scene)], entropies(m.persons)]).mean())


def _eer_from_sweep(sw: Sweep) -> np.ndarray:
    h_bar = sw.base_entropies().mean()
    phi = np.empty(len(sw.nodes))
    for k, i in enumerate(sw.nodes):
        h_clamped = sw.clamped_entropies(k).mean(axis=1)
        phi[k] = h_bar - float(sw.base_node(i) @ h_clamped)
    return phi


def _ec_from_sweep(sw: Sweep) -> np.ndarray:
    base = np.concatenate([[np.argmax(sw.base_scene)], np.argmax(sw.base_persons, axis=1)])
    out = np.empty(len(sw.nodes))
    for k, i in enumerate(sw.nodes):
        clamped = np.concatenate([np.argmax(sw.clamped_scene[k], axis=1)[:, None],
                                  np.argmax(sw.clamped_persons[k], axis=2)], axis=1)
        changed = clamped != base[None, :]
        changed[:, i] = False
        out[k] = float(sw.base_node(i) @ changed.sum(axis=1))
    return out


def expected_entropy_reduction(graph: SceneGraph | None, potentials: PotentialTables,
                               base_clamps: ClampSet, i: int, cfg: InferenceConfig) -> float:
    """Average entropy now minus its expectation once node ``i`` is revealed."""
    return float(_eer_from_sweep(clamped_sweep(potentials, base_clamps, [i], cfg))[0])


# -- strategies over a pool ----------------------------------------------------

def _candidates(graphs: Iterable[SceneGraph], pool: AnnotationPool):
    found = False
    for g in sorted(graphs, key=lambda g: g.graph_id):
        nodes = pool.unlabeled_in(g.graph_id)
        if nodes:
            found = True
            yield g, nodes
    if not found:
        raise SelectionError("no unlabeled nodes to score")


def _sweep_scores(strategy, reducer, graphs, potentials_fn, pool, cfg):
    out = SelectionScore(strategy)
    for g, nodes in _candidates(graphs, pool):
        sw = clamped_sweep(potentials_fn(g), pool.clamps(g.graph_id), nodes, cfg)
        for i, v in zip(nodes, reducer(sw)):
            out.scores[NodeRef(g.graph_id, i)] = float(v)
    return out


def score_eer(graphs, potentials_fn: PotentialsFn, pool: AnnotationPool,
              cfg: InferenceConfig | None = None) -> SelectionScore:
    return _sweep_scores(EER, _eer_from_sweep, graphs, potentials_fn, pool, cfg or InferenceConfig())


def score_expected_change(graphs, potentials_fn: PotentialsFn, pool: AnnotationPool,
                          cfg: InferenceConfig | None = None) -> SelectionScore:
    return _sweep_scores(EC, _ec_from_sweep, graphs, potentials_fn, pool, cfg or InferenceConfig())


def _marginal_scores(strategy, fn, graphs, potentials_fn, pool, cfg):
    cfg = cfg or InferenceConfig()
    out = SelectionScore(strategy)
    for g, nodes in _candidates(graphs, pool):
        m = infer(g, potentials_fn(g), pool.clamps(g.graph_id), cfg)
        for i in nodes:
            out.scores[NodeRef(g.graph_id, i)] = float(fn(m.node(i)))
    return out


def least_confidence(p) -> float:
    return 1.0 - float(np.max(p))


def negative_margin(p) -> float:
    top2 = np.sort(np.asarray(p))[-2:]
    return -float(top2[1] - top2[0])


def score_entropy(graphs, potentials_fn, pool, cfg=None) -> SelectionScore:
    return _marginal_scores(SA, lambda p: entropies(p), graphs, potentials_fn, pool, cfg)


def score_least_confidence(graphs, potentials_fn, pool, cfg=None) -> SelectionScore:
    return _marginal_scores(LC, least_confidence, graphs, potentials_fn, pool, cfg)


def score_margin(graphs, potentials_fn, pool, cfg=None) -> SelectionScore:
    return _marginal_scores(MARGIN, negative_margin, graphs, potentials_fn, pool, cfg)


def score_random(pool: AnnotationPool, seed) -> SelectionScore:
    refs = pool.unlabeled
    if not refs:
        raise SelectionError("no unlabeled nodes to score")
    rng = np.random.default_rng(seed)
    return SelectionScore(RND, dict(zip(refs, rng.random(len(refs)).tolist())))


def score(strategy: str, graphs, potentials_fn, pool, cfg=None, seed=None) -> SelectionScore:
    if strategy == RND:
        return score_random(pool, seed)
    fn = {EER: score_eer, SA: score_entropy, LC: score_least_confidence,
          MARGIN: score_margin, EC: score_expected_change}.get(strategy)
    if fn is None:
        raise ValueError(f"unknown strategy {strategy!r}")
    return fn(graphs, potentials_fn, pool, cfg)


def top_k(scores: SelectionScore, k: int, iteration: int = 0) -> Selection:
    """Highest scores first; ties by graph id then node index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(scores.scores.items(), key=lambda kv: (-kv[1], kv[0].graph_id, kv[0].node_index))
    chosen = ranked[:k]
    return Selection([r for r, _ in chosen], [s for _, s in chosen], scores.strategy, iteration)


SELECTION_HEADER = ["iteration", "graph_id", "node_index", "node_type", "score", "strategy"]


def write_selections(path, selections: Sequence[Selection]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SELECTION_HEADER)
        for sel in selections:
            for ref, s in zip(sel.nodes, sel.scores):
                w.writerow([sel.iteration, ref.graph_id, ref.node_index, ref.node_type,
                            repr(float(s)), sel.strategy])
