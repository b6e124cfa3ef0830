"""The train / score / select / annotate loop with a simulated oracle."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from functools import partial
from typing import Mapping, Sequence

import numpy as np

from .evaluation import CurvePoint, accuracy, predict
from .graph import AnnotationPool, Dataset, GroundTruth, NodeRef, commit_labels
from .inference import InferenceConfig
from .model import ModelParams, TrainConfig, fit, schedule, unary_logits
from .selection import STRATEGIES, Selection, score, top_k

log = logging.getLogger(__name__)

_TRAIN_STREAM, _SELECT_STREAM = 0, 1


@dataclass(frozen=True)
class LoopConfig:
    k_per_iteration: int
    num_iterations: int
    strategy: str = "eer"
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    infer_cfg: InferenceConfig = field(default_factory=InferenceConfig)
    rng_seed: int = 0

    def __post_init__(self):
        if self.k_per_iteration < 1:
            raise ValueError("k_per_iteration must be positive")
        if self.num_iterations < 0:
            raise ValueError("num_iterations must be nonnegative")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")


@dataclass
class IterationRecord:
    t: int
    labeled_total: int
    labeled_scene: int
    labeled_action: int
    scene_acc: float
    action_acc: float
    lr: float
    wd: float
    seconds: float
    selection: Selection | None = None


def oracle_answer(truth: Mapping[str, GroundTruth], refs: Sequence[NodeRef]) -> list[tuple[NodeRef, int]]:
    """Noiseless oracle: the stored true label of every requested node."""
    out = []
    for ref in refs:
        t = truth.get(ref.graph_id)
        if t is None or not 0 <= ref.node_index < t.labels.shape[0]:
            raise KeyError(f"unknown node {ref.graph_id}/{ref.node_index}")
        out.append((ref, t.label(ref.node_index)))
    return out


def run_active_learning(dataset: Dataset, pool_0: AnnotationPool, params_0: ModelParams,
                        loop_cfg: LoopConfig) -> list[IterationRecord]:
    """Warm-started active learning over ``dataset.train``.

    Record t holds the model trained on L_t, its test metrics, and the batch
    chosen to form L_{t+1}.  The run stops early once U is empty.
    """
    if pool_0.n_labeled() == 0:
        raise ValueError("the initial pool needs at least one labeled node")
    truth = {t.graph_id: t for t in dataset.train_truth}
    train_cfg, infer_cfg = loop_cfg.train_cfg, loop_cfg.infer_cfg
    pool, params = pool_0, params_0.copy()
    records = []
    for t in range(loop_cfg.num_iterations + 1):
        start = time.perf_counter()
        lr, wd = schedule(t, train_cfg)
        rng = np.random.default_rng([loop_cfg.rng_seed, t, _TRAIN_STREAM])
        params = fit(params, dataset.train, pool, train_cfg, infer_cfg, lr, wd, rng)
        if dataset.test:
            scene_acc, action_acc = accuracy(predict(dataset.test, params, infer_cfg), dataset.test_truth)
        else:
            scene_acc = action_acc = float("nan")
        n_scene, n_action = pool.labeled_split()
        rec = IterationRecord(t, n_scene + n_action, n_scene, n_action, scene_acc, action_acc, lr, wd, 0.0)
        if t < loop_cfg.num_iterations and pool.n_unlabeled() > 0:
            scores = score(loop_cfg.strategy, dataset.train, partial(unary_logits, params), pool,
                           infer_cfg, seed=[loop_cfg.rng_seed, t, _SELECT_STREAM])
            rec.selection = top_k(scores, loop_cfg.k_per_iteration, iteration=t + 1)
            pool = commit_labels(pool, oracle_answer(truth, rec.selection.nodes))
        rec.seconds = time.perf_counter() - start
        records.append(rec)
        log.info("%s t=%d labeled=%d scene_acc=%.4f action_acc=%.4f (%.1fs)", loop_cfg.strategy, t,
                 rec.labeled_total, scene_acc, action_acc, rec.seconds)
        if pool.n_unlabeled() == 0 and rec.selection is None:
            break
    return records


def curve_points(records: Sequence[IterationRecord], strategy: str, seed: int) -> list[CurvePoint]:
    base = records[0].labeled_total
    return [CurvePoint(strategy, seed, r.t, r.labeled_total - base, r.scene_acc, r.action_acc)
            for r in records]


RECORD_HEADER = ["t", "strategy", "seed", "labeled_total", "labeled_scene", "labeled_action",
                 "scene_acc", "action_acc", "lr", "wd", "seconds"]


def write_records(path, records: Sequence[IterationRecord], strategy: str, seed: int,
                  timings: bool = False) -> None:
    """One row per iteration.  ``seconds`` is written as 0 unless ``timings`` is
    set, so repeated runs produce identical files."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RECORD_HEADER)
        for r in records:
            w.writerow([r.t, strategy, seed, r.labeled_total, r.labeled_scene, r.labeled_action,
                        repr(r.scene_acc), repr(r.action_acc), repr(r.lr), repr(r.wd),
                        f"{r.seconds:.3f}" if timings else "0"])
