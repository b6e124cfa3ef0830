"""Accuracy, learning curves and selection-composition diagnostics."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from .graph import GroundTruth, SceneGraph
from .inference import EXACT, InferenceConfig, Marginals, infer
from .model import ModelParams, group_by_size, unary_logits


@dataclass(frozen=True)
class CurvePoint:
    strategy: str
    seed: int
    iteration: int
    annotations_added: int
    scene_acc: float
    action_acc: float


def accuracy(marginals: Sequence[Marginals], truths: Sequence[GroundTruth]) -> tuple[float, float]:
    """(scene accuracy, action accuracy) of argmax predictions; ties go to the lowest label."""
    if len(marginals) != len(truths):
        raise ValueError(f"{len(marginals)} marginals for {len(truths)} graphs")
    scene_hits, action_hits, n_actions = 0, 0, 0
    for m, t in zip(marginals, truths):
        if m.n_nodes != t.labels.shape[0]:
            raise ValueError(f"graph {t.graph_id}: node count mismatch")
        scene_hits += int(np.argmax(m.scene) == t.labels[0])
        action_hits += int(np.sum(np.argmax(m.persons, axis=1) == t.labels[1:]))
        n_actions += m.persons.shape[0]
    return scene_hits / len(truths), action_hits / n_actions


def predict(graphs: Sequence[SceneGraph], params: ModelParams, cfg: InferenceConfig) -> list[Marginals]:
    """Unclamped marginals for every graph, batched by graph size."""
    if cfg.backend == EXACT:
        return [infer(g, unary_logits(params, g), None, cfg) for g in graphs]
    out: dict[str, Marginals] = {}
    for grp in group_by_size(graphs):
        us = grp.Xs @ params.W_s.T
        ua = grp.Xa @ params.W_a.T
        ps, pa = _kernels.bp_marginals(us, ua, params.Psi_sp, params.effective_pp(),
                                       cfg.rounds, cfg.damping)
        for k, gid in enumerate(grp.graph_ids):
            out[gid] = Marginals(ps[k], pa[k])
    return [out[g.graph_id] for g in graphs]


def selection_composition(records, truths: Mapping[str, GroundTruth]) -> list[dict]:
    """Per iteration: scene/action counts of the committed batch and a
    histogram of the true action classes among the selected persons."""
    rows = []
    for rec in records:
        sel = rec.selection
        scene = action = 0
        hist: dict[int, int] = defaultdict(int)
        scene_hist: dict[int, int] = defaultdict(int)
        if sel is not None:
            for ref in sel.nodes:
                y = truths[ref.graph_id].label(ref.node_index)
                if ref.is_scene:
                    scene += 1
                    scene_hist[y] += 1
                else:
                    action += 1
                    hist[y] += 1
        rows.append({"iteration": rec.t + 1, "scene": scene, "action": action,
                     "action_hist": dict(sorted(hist.items())),
                     "scene_hist": dict(sorted(scene_hist.items()))})
    return rows


def aggregate_curves(points: Iterable[CurvePoint]) -> list[dict]:
    """Mean and (n-1)-normalized std per (strategy, iteration); std is 0 for one run."""
    cells: dict[tuple[str, int], list[CurvePoint]] = defaultdict(list)
    for p in points:
        cells[(p.strategy, p.iteration)].append(p)
    out = []
    for (strategy, it), ps in sorted(cells.items()):
        row = {"strategy": strategy, "iteration": it, "runs": len(ps),
               "annotations": float(np.mean([p.annotations_added for p in ps]))}
        for key in ("scene_acc", "action_acc"):
            v = np.array(sorted(getattr(p, key) for p in ps))
            row[f"{key}_mean"] = float(v.mean())
            row[f"{key}_std"] = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        out.append(row)
    return out


CURVE_HEADER = ["strategy", "seed", "iteration", "annotations", "scene_acc", "action_acc"]
COMPOSITION_HEADER = ["strategy", "seed", "iteration", "node_type", "class", "count"]
AGGREGATE_HEADER = ["strategy", "iteration", "runs", "annotations", "scene_acc_mean",
                    "scene_acc_std", "action_acc_mean", "action_acc_std"]


def _writer(f):
    return csv.writer(f, lineterminator="\n")


def write_curve(path, points: Sequence[CurvePoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(CURVE_HEADER)
        for p in points:
            w.writerow([p.strategy, p.seed, p.iteration, p.annotations_added,
                        repr(p.scene_acc), repr(p.action_acc)])


def read_curve(path) -> list[CurvePoint]:
    with open(path, newline="", encoding="utf-8") as f:
        return [CurvePoint(r["strategy"], int(r["seed"]), int(r["iteration"]), int(r["annotations"]),
                           float(r["scene_acc"]), float(r["action_acc"]))
                for r in csv.DictReader(f)]


def write_composition(path, strategy: str, seed: int, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(COMPOSITION_HEADER)
        for row in rows:
            w.writerow([strategy, seed, row["iteration"], "scene", "all", row["scene"]])
            w.writerow([strategy, seed, row["iteration"], "action", "all", row["action"]])
            for cls, n in row["scene_hist"].items():
                w.writerow([strategy, seed, row["iteration"], "scene", cls, n])
            for cls, n in row["action_hist"].items():
                w.writerow([strategy, seed, row["iteration"], "action", cls, n])


def write_aggregate(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(AGGREGATE_HEADER)
        for r in rows:
            w.writerow([r[k] if isinstance(r[k], (str, int)) else repr(r[k]) for k in AGGREGATE_HEADER])
