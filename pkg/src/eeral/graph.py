"""Scene graphs, ground truth and the labeled/unlabeled annotation pool.

A scene graph holds one frame: node 0 is the scene (group activity) and
nodes 1..N are persons.  Edges are implicit: the scene connects to every
person and persons form a clique.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

UNLABELED = -1
_LABEL_CHARS = string.digits + string.ascii_lowercase


class GraphError(ValueError):
    pass


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class LabelSpace:
    num_actions: int
    num_activities: int
    action_names: tuple[str, ...] | None = None
    activity_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.num_actions < 2 or self.num_activities < 2:
            raise ValueError("label alphabets need at least two labels")
        if self.action_names is not None and len(self.action_names) != self.num_actions:
            raise ValueError("action_names length must equal num_actions")
        if self.activity_names is not None and len(self.activity_names) != self.num_activities:
            raise ValueError("activity_names length must equal num_activities")

    def alphabet(self, node_index: int) -> int:
        return self.num_activities if node_index == 0 else self.num_actions


class NodeRef(NamedTuple):
    graph_id: str
    node_index: int

    @property
    def is_scene(self) -> bool:
        return self.node_index == 0

    @property
    def node_type(self) -> str:
        return "scene" if self.node_index == 0 else "action"


@dataclass(frozen=True, eq=False)
class SceneGraph:
    graph_id: str
    scene_feature: np.ndarray
    person_features: np.ndarray  # (N, d_a)

    @property
    def n_persons(self) -> int:
        return self.person_features.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.n_persons + 1

    @property
    def n_edges(self) -> int:
        n = self.n_persons
        return n + n * (n - 1) // 2

    @property
    def d_scene(self) -> int:
        return self.scene_feature.shape[0]

    @property
    def d_action(self) -> int:
        return self.person_features.shape[1]

    def nodes(self) -> Iterator[NodeRef]:
        for i in range(self.n_nodes):
            yield NodeRef(self.graph_id, i)

    def edges(self) -> Iterator[tuple[int, int]]:
        """Scene-person edges by person index, then person pairs in lexicographic order."""
        n = self.n_persons
        for p in range(1, n + 1):
            yield (0, p)
        for p in range(1, n + 1):
            for q in range(p + 1, n + 1):
                yield (p, q)


def new_scene_graph(graph_id, scene_feature, person_features) -> SceneGraph:
    scene = np.array(scene_feature, dtype=np.float64).reshape(-1)
    persons = [np.asarray(x, dtype=np.float64).reshape(-1) for x in person_features]
    if not persons:
        raise GraphError(f"graph {graph_id}: at least one person is required")
    dims = {p.shape[0] for p in persons}
    if len(dims) != 1:
        raise GraphError(f"graph {graph_id}: person features have inconsistent dimensions {sorted(dims)}")
    pf = np.stack(persons)
    scene.setflags(write=False)
    pf.setflags(write=False)
    return SceneGraph(str(graph_id), scene, pf)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    graph_id: str
    labels: np.ndarray  # (N+1,), index 0 = scene

    def __post_init__(self):
        self.labels.setflags(write=False)

    def label(self, node_index: int) -> int:
        return int(self.labels[node_index])


def make_truth(graph: SceneGraph, labels: Sequence[int], label_space: LabelSpace) -> GroundTruth:
    arr = np.array(labels, dtype=np.int64)
    if arr.shape != (graph.n_nodes,):
        raise GraphError(f"graph {graph.graph_id}: expected {graph.n_nodes} labels, got {arr.shape[0]}")
    for i, y in enumerate(arr):
        if not 0 <= y < label_space.alphabet(i):
            raise GraphError(f"graph {graph.graph_id}: label {y} out of range for node {i}")
    return GroundTruth(graph.graph_id, arr)


class AnnotationPool:
    """Node-level annotation state over a collection of graphs.

    Labels are write-once.  ``commit_labels`` returns a new pool and leaves
    the original untouched, so pools can be shared between readers.
    """

    def __init__(self, label_space: LabelSpace, states: dict[str, np.ndarray]):
        self.label_space = label_space
        self._states = {gid: np.array(s, dtype=np.int64) for gid, s in states.items()}
        for gid, s in self._states.items():
            for i, y in enumerate(s):
                if y != UNLABELED and not 0 <= y < label_space.alphabet(i):
                    raise AnnotationError(f"{gid}/{i}: label {y} out of range")
            s.setflags(write=False)

    @classmethod
    def empty(cls, label_space: LabelSpace, graphs: Iterable[SceneGraph]) -> AnnotationPool:
        return cls(label_space, {g.graph_id: np.full(g.n_nodes, UNLABELED) for g in graphs})

    def graph_ids(self) -> list[str]:
        return sorted(self._states)

    def states(self, graph_id: str) -> np.ndarray:
        """Per-node labels for one graph, -1 where unlabeled (read-only view)."""
        return self._states[graph_id]

    def label_of(self, ref: NodeRef) -> int | None:
        y = int(self._states[ref.graph_id][ref.node_index])
        return None if y == UNLABELED else y

    def is_labeled(self, ref: NodeRef) -> bool:
        return self._states[ref.graph_id][ref.node_index] != UNLABELED

    def clamps(self, graph_id: str) -> dict[int, int]:
        s = self._states[graph_id]
        return {int(i): int(s[i]) for i in np.flatnonzero(s != UNLABELED)}

    @property
    def labeled(self) -> list[NodeRef]:
        return [NodeRef(gid, int(i)) for gid in self.graph_ids()
                for i in np.flatnonzero(self._states[gid] != UNLABELED)]

    @property
    def unlabeled(self) -> list[NodeRef]:
        return [NodeRef(gid, int(i)) for gid in self.graph_ids()
                for i in np.flatnonzero(self._states[gid] == UNLABELED)]

    def unlabeled_in(self, graph_id: str) -> list[int]:
        return [int(i) for i in np.flatnonzero(self._states[graph_id] == UNLABELED)]

    def n_labeled(self) -> int:
        return int(sum((s != UNLABELED).sum() for s in self._states.values()))

    def n_unlabeled(self) -> int:
        return self.n_nodes() - self.n_labeled()

    def n_nodes(self) -> int:
        return int(sum(s.shape[0] for s in self._states.values()))

    def labeled_split(self) -> tuple[int, int]:
        """(scene, action) counts of labeled nodes."""
        scene = sum(int(s[0] != UNLABELED) for s in self._states.values())
        return scene, self.n_labeled() - scene

    def restricted(self, graph_ids: Iterable[str]) -> AnnotationPool:
        return AnnotationPool(self.label_space, {g: self._states[g] for g in graph_ids})

    def __eq__(self, other):
        if not isinstance(other, AnnotationPool):
            return NotImplemented
        return (self.label_space == other.label_space
                and self._states.keys() == other._states.keys()
                and all(np.array_equal(s, other._states[g]) for g, s in self._states.items()))


def commit_labels(pool: AnnotationPool, answers: Sequence[tuple[NodeRef, int]]) -> AnnotationPool:
    if not answers:
        return pool
    updated: dict[str, np.ndarray] = {}
    for ref, label in answers:
        if ref.graph_id not in pool._states:
            raise AnnotationError(f"unknown graph {ref.graph_id}")
        s = updated.get(ref.graph_id)
        if s is None:
            s = updated[ref.graph_id] = pool._states[ref.graph_id].copy()
        if not 0 <= ref.node_index < s.shape[0]:
            raise AnnotationError(f"{ref.graph_id}/{ref.node_index}: no such node")
        if s[ref.node_index] != UNLABELED:
            raise AnnotationError(f"{ref.graph_id}/{ref.node_index} is already labeled")
        if not 0 <= label < pool.label_space.alphabet(ref.node_index):
            raise AnnotationError(f"{ref.graph_id}/{ref.node_index}: label {label} out of range")
        s[ref.node_index] = label
    states = dict(pool._states)
    states.update(updated)
    return AnnotationPool(pool.label_space, states)


@dataclass
class Dataset:
    """Train/test graphs with their ground truth."""

    label_space: LabelSpace
    train: list[SceneGraph]
    train_truth: list[GroundTruth]
    test: list[SceneGraph]
    test_truth: list[GroundTruth]
    meta: dict = field(default_factory=dict)

    def truth_map(self) -> dict[str, GroundTruth]:
        return {t.graph_id: t for t in self.train_truth + self.test_truth}


# -- text serialization -----------------------------------------------------

def _label_char(y: int) -> str:
    return _LABEL_CHARS[y]


def _char_label(c: str) -> int:
    if c == ".":
        return UNLABELED
    idx = _LABEL_CHARS.find(c)
    if idx < 0:
        raise GraphError(f"bad label character {c!r}")
    return idx


def format_records(graphs: Sequence[SceneGraph], truths: Sequence[GroundTruth],
                   pool: AnnotationPool | None) -> str:
    lines = []
    for g, t in zip(graphs, truths):
        if g.graph_id != t.graph_id:
            raise GraphError(f"graph/truth order mismatch: {g.graph_id} vs {t.graph_id}")
        lines.append(f"graph {g.graph_id} {g.n_persons} {g.d_scene} {g.d_action}")
        lines.append(" ".join(repr(float(v)) for v in g.scene_feature))
        for row in g.person_features:
            lines.append(" ".join(repr(float(v)) for v in row))
        lines.append("truth " + " ".join(str(int(y)) for y in t.labels))
        states = pool.states(g.graph_id) if pool is not None and g.graph_id in pool.graph_ids() \
            else np.full(g.n_nodes, UNLABELED)
        lines.append("labels " + "".join("." if y == UNLABELED else _label_char(int(y)) for y in states))
    return "\n".join(lines) + "\n"


def parse_records(text: str) -> tuple[list[SceneGraph], list[GroundTruth], dict[str, np.ndarray]]:
    """Parse graph records; returns graphs, truths and raw label masks (-1 = unlabeled)."""
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    graphs, truths, masks = [], [], {}
    k = 0
    while k < len(rows):
        head = rows[k]
        if len(head) != 5 or head[0] != "graph":
            raise GraphError(f"record {len(graphs)}: expected 'graph <id> <N> <d_s> <d_a>', got {' '.join(head)!r}")
        gid, n, d_s, d_a = head[1], int(head[2]), int(head[3]), int(head[4])
        try:
            scene = [float(v) for v in rows[k + 1]]
            persons = [[float(v) for v in rows[k + 2 + p]] for p in range(n)]
            truth_row = rows[k + 2 + n]
            label_row = rows[k + 3 + n]
        except IndexError:
            raise GraphError(f"graph {gid}: truncated record") from None
        if len(scene) != d_s or any(len(p) != d_a for p in persons):
            raise GraphError(f"graph {gid}: feature dimensions do not match header")
        if truth_row[0] != "truth" or len(truth_row) != n + 2:
            raise GraphError(f"graph {gid}: malformed truth line")
        if label_row[0] != "labels" or len(label_row) != 2 or len(label_row[1]) != n + 1:
            raise GraphError(f"graph {gid}: malformed labels line")
        g = new_scene_graph(gid, scene, persons)
        graphs.append(g)
        truths.append(GroundTruth(gid, np.array([int(v) for v in truth_row[1:]], dtype=np.int64)))
        masks[gid] = np.array([_char_label(c) for c in label_row[1]], dtype=np.int64)
        k += 4 + n
    return graphs, truths, masks


def write_dataset(path, graphs, truths, pool=None) -> None:
    Path(path).write_text(format_records(graphs, truths, pool), encoding="utf-8")


def read_dataset(path, label_space: LabelSpace):
    graphs, truths, masks = parse_records(Path(path).read_text(encoding="utf-8"))
    truths = [make_truth(g, t.labels, label_space) for g, t in zip(graphs, truths)]
    return graphs, truths, AnnotationPool(label_space, masks)
