"""Marginal inference over scene graphs.

Two backends share one interface: fixed-round sum-product (the unrolled
message passing used for training and selection) and exhaustive
enumeration of the joint, which serves as the reference on small graphs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .graph import SceneGraph

SUM_PRODUCT = "sum-product"
EXACT = "exact"
ENUMERATION_BUDGET = 10**7

ClampSet = Mapping[int, int]


class InferenceError(ValueError):
    pass


@dataclass(frozen=True)
class PotentialTables:
    scene_unary: np.ndarray     # (Ts,)
    person_unary: np.ndarray    # (N, Ta)
    scene_person: np.ndarray    # (Ts, Ta)
    person_person: np.ndarray   # (Ta, Ta)

    @property
    def num_activities(self) -> int:
        return self.scene_unary.shape[0]

    @property
    def num_actions(self) -> int:
        return self.person_unary.shape[1]

    def alphabet(self, node_index: int) -> int:
        return self.num_activities if node_index == 0 else self.num_actions


@dataclass(frozen=True)
class Marginals:
    scene: np.ndarray    # (Ts,)
    persons: np.ndarray  # (N, Ta)

    @property
    def n_nodes(self) -> int:
        return self.persons.shape[0] + 1

    def node(self, i: int) -> np.ndarray:
        return self.scene if i == 0 else self.persons[i - 1]

    def __iter__(self):
        yield self.scene
        yield from self.persons


@dataclass(frozen=True)
class InferenceConfig:
    rounds: int = 10
    backend: str = SUM_PRODUCT
    damping: float = 0.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.backend not in (SUM_PRODUCT, EXACT):
            raise ValueError(f"unknown backend {self.backend!r}")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")


def check_potentials(graph: SceneGraph | None, pot: PotentialTables) -> None:
    ts, ta = pot.num_activities, pot.num_actions
    if pot.scene_person.shape != (ts, ta) or pot.person_person.shape != (ta, ta):
        raise InferenceError(f"pairwise table shapes {pot.scene_person.shape}, "
                             f"{pot.person_person.shape} do not match alphabets ({ts}, {ta})")
    if graph is not None and pot.person_unary.shape[0] != graph.n_persons:
        raise InferenceError(f"graph {graph.graph_id} has {graph.n_persons} persons, "
                             f"potentials cover {pot.person_unary.shape[0]}")
    for name in ("scene_unary", "person_unary", "scene_person", "person_person"):
        if not np.all(np.isfinite(getattr(pot, name))):
            raise InferenceError(f"non-finite entry in {name}")


def check_clamps(pot: PotentialTables, clamps: ClampSet) -> None:
    n_nodes = pot.person_unary.shape[0] + 1
    for i, y in clamps.items():
        if not 0 <= i < n_nodes:
            raise InferenceError(f"clamp on unknown node {i}")
        if not 0 <= y < pot.alphabet(i):
            raise InferenceError(f"clamp label {y} out of range for node {i}")


def clamp_unaries(us: np.ndarray, ua: np.ndarray, clamps: ClampSet):
    """Replace clamped unaries with 0 at the fixed label and a huge negative elsewhere."""
    if not clamps:
        return us, ua
    us = us.copy()
    ua = ua.copy()
    for i, y in clamps.items():
        row = us if i == 0 else ua[i - 1]
        row[:] = _kernels.CLAMP_OFF
        row[y] = 0.0
    return us, ua


def force_indicators(ps: np.ndarray, pa: np.ndarray, clamps: ClampSet) -> None:
    for i, y in clamps.items():
        row = ps if i == 0 else pa[i - 1]
        row[:] = 0.0
        row[y] = 1.0


def infer(graph: SceneGraph | None, potentials: PotentialTables,
          clamps: ClampSet | None = None, cfg: InferenceConfig | None = None) -> Marginals:
    cfg = cfg or InferenceConfig()
    clamps = dict(clamps or {})
    check_potentials(graph, potentials)
    check_clamps(potentials, clamps)
    if cfg.backend == EXACT:
        ps, pa = _exact_marginals(potentials, clamps)
    else:
        us, ua = clamp_unaries(potentials.scene_unary, potentials.person_unary, clamps)
        ps, pa = _kernels.bp_marginals(us[None], ua[None], potentials.scene_person,
                                       potentials.person_person, cfg.rounds, cfg.damping)
        ps, pa = ps[0], pa[0]
    force_indicators(ps, pa, clamps)
    return Marginals(ps, pa)


# -- exhaustive enumeration ---------------------------------------------------

def joint_log_scores(potentials: PotentialTables, clamps: ClampSet | None = None,
                     budget: int = ENUMERATION_BUDGET) -> np.ndarray:
    """Unnormalized log-probability tensor with one axis per node (axis 0 = scene).

    Assignments inconsistent with ``clamps`` score -inf.
    """
    us, ua = potentials.scene_unary, potentials.person_unary
    A, B = potentials.scene_person, potentials.person_person
    n = ua.shape[0]
    ts, ta = us.shape[0], ua.shape[1]
    size = ts * ta**n
    if size > budget:
        raise InferenceError(f"enumeration of {size} assignments exceeds budget {budget}")
    shape = (ts,) + (ta,) * n

    def along(vec, axes):
        s = [1] * (n + 1)
        for ax, d in zip(axes, vec.shape):
            s[ax] = d
        return vec.reshape(s)

    score = np.zeros(shape)
    score = score + along(us, (0,))
    for p in range(n):
        score = score + along(ua[p], (p + 1,))
        score = score + along(A, (0, p + 1))
        for q in range(p + 1, n):
            score = score + along(B, (p + 1, q + 1))
    for i, y in (clamps or {}).items():
        gate = np.full(shape[i], -np.inf)
        gate[y] = 0.0
        score = score + along(gate, (i,))
    return score


def exact_joint_logZ(graph: SceneGraph | None, potentials: PotentialTables,
                     clamps: ClampSet | None = None, budget: int = ENUMERATION_BUDGET) -> float:
    check_potentials(graph, potentials)
    check_clamps(potentials, dict(clamps or {}))
    return float(logsumexp(joint_log_scores(potentials, clamps, budget)))


def node_marginals_from_joint(prob: np.ndarray) -> list[np.ndarray]:
    axes = range(prob.ndim)
    return [prob.sum(axis=tuple(a for a in axes if a != k)) for k in axes]


def _exact_marginals(potentials: PotentialTables, clamps: ClampSet):
    score = joint_log_scores(potentials, clamps)
    prob = np.exp(score - logsumexp(score))
    margs = node_marginals_from_joint(prob)
    ps = margs[0] / margs[0].sum()
    pa = np.stack([m / m.sum() for m in margs[1:]])
    return ps, pa


# -- entropies ----------------------------------------------------------------

def node_entropy(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    if abs(m.sum() - 1.0) > 1e-6 or np.any(m < -1e-12):
        raise InferenceError(f"not a probability vector (sum={m.sum():.8g})")
    nz = m[m > 0]
    return float(-(nz * np.log(nz)).sum())


def entropies(p: np.ndarray) -> np.ndarray:
    """Row-wise natural-log entropy over the last axis (0 log 0 = 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, p * np.log(p), 0.0)
    return -t.sum(axis=-1)


def average_entropy(marginals: Marginals) -> float:
    """Mean node entropy over every node, scene included."""
    return float((node_entropy(marginals.scene)
                  + sum(node_entropy(m) for m in marginals.persons)) / marginals.n_nodes)
