"""Log-linear structured predictor trained on partially labeled graphs.

Unary potentials are linear in the node features (one weight matrix for the
scene, one shared by all persons); two pairwise log tables are shared by
every scene-person and person-person edge.  The training loss is the
negative log marginal likelihood of the labeled nodes, differentiated
exactly through the unrolled message passing.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .graph import UNLABELED, AnnotationPool, LabelSpace, SceneGraph
from .inference import EXACT, InferenceConfig, PotentialTables, joint_log_scores

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class NumericalError(RuntimeError):
    pass


@dataclass
class ModelParams:
    W_s: np.ndarray     # (Ts, d_s)
    W_a: np.ndarray     # (Ta, d_a)
    Psi_sp: np.ndarray  # (Ts, Ta)
    Psi_pp: np.ndarray  # (Ta, Ta), used as (Psi_pp + Psi_pp.T) / 2

    @classmethod
    def zeros(cls, label_space: LabelSpace, d_s: int, d_a: int) -> ModelParams:
        ts, ta = label_space.num_activities, label_space.num_actions
        return cls(np.zeros((ts, d_s)), np.zeros((ta, d_a)), np.zeros((ts, ta)), np.zeros((ta, ta)))

    @classmethod
    def random(cls, label_space: LabelSpace, d_s: int, d_a: int, rng, scale: float = 0.01) -> ModelParams:
        p = cls.zeros(label_space, d_s, d_a)
        return cls(*(scale * rng.standard_normal(a.shape) for a in p.arrays()))

    @property
    def label_space(self) -> LabelSpace:
        return LabelSpace(self.W_a.shape[0], self.W_s.shape[0])

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]

    def copy(self) -> ModelParams:
        return ModelParams(*(a.copy() for a in self.arrays()))

    def scaled(self, c: float) -> ModelParams:
        return ModelParams(*(c * a for a in self.arrays()))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vec: np.ndarray) -> ModelParams:
        out, k = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[k:k + a.size], dtype=np.float64).reshape(a.shape).copy())
            k += a.size
        return ModelParams(*out)

    def effective_pp(self) -> np.ndarray:
        return 0.5 * (self.Psi_pp + self.Psi_pp.T)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.1
    lr_iter_mult: float = 0.5
    weight_decay: float = 0.003
    wd_iter_mult: float = 0.1
    epochs_per_iteration: int = 20
    momentum: float = 0.9
    batch: int = 8
    rng_seed: int = 0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0 < self.lr_iter_mult <= 1 or not 0 < self.wd_iter_mult <= 1:
            raise ValueError("iteration multipliers must lie in (0, 1]")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.epochs_per_iteration < 1 or self.batch < 1:
            raise ValueError("epochs_per_iteration and batch must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


def unary_logits(params: ModelParams, graph: SceneGraph) -> PotentialTables:
    if graph.d_scene != params.W_s.shape[1] or graph.d_action != params.W_a.shape[1]:
        raise ValueError(f"graph {graph.graph_id}: feature dims ({graph.d_scene}, {graph.d_action}) "
                         f"do not match weights ({params.W_s.shape[1]}, {params.W_a.shape[1]})")
    return PotentialTables(params.W_s @ graph.scene_feature,
                           graph.person_features @ params.W_a.T,
                           params.Psi_sp.copy(), params.effective_pp())


def schedule(iteration: int, cfg: TrainConfig) -> tuple[float, float]:
    return (cfg.base_lr * cfg.lr_iter_mult**iteration,
            cfg.weight_decay * cfg.wd_iter_mult**iteration)


# -- batched loss / gradient --------------------------------------------------

@dataclass
class _Group:
    n: int
    graph_ids: list[str]
    Xs: np.ndarray      # (G, d_s)
    Xa: np.ndarray      # (G, N, d_a)
    labels: np.ndarray  # (G, N+1), -1 = unlabeled


def group_by_size(graphs: Sequence[SceneGraph], pool: AnnotationPool | None = None,
                  labeled_only: bool = False) -> list[_Group]:
    """Stack graphs of equal person count (groups ordered by N, graphs by id)."""
    buckets: dict[int, list[SceneGraph]] = defaultdict(list)
    for g in graphs:
        if labeled_only and not np.any(pool.states(g.graph_id) != UNLABELED):
            continue
        buckets[g.n_persons].append(g)
    groups = []
    for n in sorted(buckets):
        gs = sorted(buckets[n], key=lambda g: g.graph_id)
        labels = (np.stack([pool.states(g.graph_id) for g in gs]) if pool is not None
                  else np.full((len(gs), n + 1), UNLABELED))
        groups.append(_Group(n, [g.graph_id for g in gs],
                             np.stack([g.scene_feature for g in gs]),
                             np.stack([g.person_features for g in gs]), labels))
    return groups


def _nll_terms(probs: np.ndarray, labels: np.ndarray):
    """Loss and d(loss)/d(log-belief) for one node type; labels -1 are skipped."""
    lab = labels >= 0
    y = np.where(lab, labels, 0)
    p_true = np.take_along_axis(probs, y[..., None], axis=-1)[..., 0]
    active = lab & (p_true >= PROB_FLOOR)
    loss = -np.log(np.maximum(p_true, PROB_FLOOR))[lab].sum()
    grad = probs.copy()
    np.put_along_axis(grad, y[..., None], np.take_along_axis(grad, y[..., None], -1) - 1.0, axis=-1)
    grad *= active[..., None]
    return float(loss), grad


def _group_loss_grad(params: ModelParams, grp: _Group, cfg: InferenceConfig, want_grad=True):
    us = grp.Xs @ params.W_s.T
    ua = grp.Xa @ params.W_a.T
    A, B = params.Psi_sp, params.effective_pp()
    if cfg.backend == EXACT:
        return _exact_group_loss_grad(params, grp, us, ua, A, B, want_grad)
    if not want_grad:
        bs, bp = _kernels.bp_forward_numpy(us, ua, A, B, cfg.rounds, cfg.damping)
    else:
        bs, bp, hist = _kernels.bp_forward_numpy(us, ua, A, B, cfg.rounds, cfg.damping, keep_history=True)
    ls, g_bs = _nll_terms(_kernels._softmax(bs, -1), grp.labels[:, 0])
    la, g_bp = _nll_terms(_kernels._softmax(bp, -1), grp.labels[:, 1:])
    if not want_grad:
        return ls + la, None
    g_us, g_ua, gA, gB = _kernels.bp_backward(us, ua, A, B, hist, cfg.damping, g_bs, g_bp)
    grad = ModelParams(g_us.T @ grp.Xs, np.einsum("gnt,gnd->td", g_ua, grp.Xa),
                       gA, 0.5 * (gB + gB.T))
    return ls + la, grad


def _exact_group_loss_grad(params, grp, us, ua, A, B, want_grad):
    n = grp.n
    loss = 0.0
    g_us = np.zeros_like(us)
    g_ua = np.zeros_like(ua)
    gA = np.zeros_like(A)
    gB = np.zeros_like(B)
    for k in range(us.shape[0]):
        score = joint_log_scores(PotentialTables(us[k], ua[k], A, B))
        prob = np.exp(score - logsumexp(score))
        # W = sum over labeled nodes of (P(.|y_l = y*) - P(.)); d loss = -<W, d score>
        W = np.zeros_like(prob)
        for i in np.flatnonzero(grp.labels[k] != UNLABELED):
            y = grp.labels[k, i]
            cond = np.zeros_like(prob)
            sl = (slice(None),) * i + (y,)
            cond[sl] = prob[sl]
            p_true = cond.sum()
            loss -= np.log(max(p_true, PROB_FLOOR))
            if p_true >= PROB_FLOOR:
                W += cond / p_true - prob
        if not want_grad:
            continue
        axes = tuple(range(n + 1))
        g_us[k] = -W.sum(axis=axes[1:])
        for p in range(n):
            g_ua[k, p] = -W.sum(axis=tuple(a for a in axes if a != p + 1))
            gA -= W.sum(axis=tuple(a for a in axes if a not in (0, p + 1)))
            for q in range(p + 1, n):
                gB -= W.sum(axis=tuple(a for a in axes if a not in (p + 1, q + 1)))
    if not want_grad:
        return loss, None
    grad = ModelParams(g_us.T @ grp.Xs, np.einsum("gnt,gnd->td", g_ua, grp.Xa),
                       gA, 0.5 * (gB + gB.T))
    return loss, grad


def _check_labeled(groups: list[_Group]) -> None:
    if not any(np.any(g.labels != UNLABELED) for g in groups):
        raise ValueError("loss needs at least one labeled node")


def loss(params: ModelParams, graphs: Sequence[SceneGraph], pool: AnnotationPool,
         cfg: InferenceConfig | None = None) -> float:
    """Sum over labeled nodes of -log P(y = y*), from unclamped inference."""
    cfg = cfg or InferenceConfig()
    groups = group_by_size(graphs, pool, labeled_only=True)
    _check_labeled(groups)
    return sum(_group_loss_grad(params, g, cfg, want_grad=False)[0] for g in groups)


def _sum_groups(params, groups, cfg):
    total = 0.0
    grad = None
    for grp in groups:
        l, g = _group_loss_grad(params, grp, cfg)
        total += l
        grad = g if grad is None else ModelParams(*(a + b for a, b in zip(grad.arrays(), g.arrays())))
    return total, grad


def loss_and_gradient(params: ModelParams, graphs: Sequence[SceneGraph], pool: AnnotationPool,
                      cfg: InferenceConfig | None = None) -> tuple[float, ModelParams]:
    cfg = cfg or InferenceConfig()
    groups = group_by_size(graphs, pool, labeled_only=True)
    _check_labeled(groups)
    return _sum_groups(params, groups, cfg)


def loss_gradient(params, graphs, pool, cfg=None) -> ModelParams:
    return loss_and_gradient(params, graphs, pool, cfg)[1]


# -- optimization --------------------------------------------------------------

class MomentumSGD:
    """velocity <- momentum * velocity + (grad + wd * params); params <- params - lr * velocity"""

    def __init__(self, momentum: float = 0.9):
        self.momentum = momentum
        self.velocity: list[np.ndarray] | None = None

    def step(self, params: ModelParams, grad: ModelParams, lr: float, wd: float) -> ModelParams:
        d = [g + wd * p for g, p in zip(grad.arrays(), params.arrays())]
        if self.velocity is None:
            self.velocity = d
        else:
            self.velocity = [self.momentum * v + di for v, di in zip(self.velocity, d)]
        return ModelParams(*(p - lr * v for p, v in zip(params.arrays(), self.velocity)))


def _check_finite(value, grad: ModelParams):
    if not np.isfinite(value) or not all(np.all(np.isfinite(a)) for a in grad.arrays()):
        raise NumericalError(f"non-finite loss or gradient (loss={value})")


def train_step(params: ModelParams, graphs: Sequence[SceneGraph], pool: AnnotationPool,
               train_cfg: TrainConfig, infer_cfg: InferenceConfig, effective_lr: float,
               effective_wd: float, optimizer: MomentumSGD | None = None) -> ModelParams:
    """One SGD step on ``graphs``.  Pass an optimizer to carry momentum across steps."""
    if effective_lr < 0:
        raise ValueError("learning rate must be nonnegative")
    value, grad = loss_and_gradient(params, graphs, pool, infer_cfg)
    _check_finite(value, grad)
    opt = optimizer or MomentumSGD(train_cfg.momentum)
    return opt.step(params, grad, effective_lr, effective_wd)


def fit(params: ModelParams, graphs: Sequence[SceneGraph], pool: AnnotationPool,
        train_cfg: TrainConfig, infer_cfg: InferenceConfig, lr: float, wd: float,
        rng: np.random.Generator) -> ModelParams:
    """``epochs_per_iteration`` epochs of minibatch SGD with a fresh momentum buffer.

    Each step follows the gradient of the mean NLL over the batch's labeled nodes.
    """
    labeled = [g for g in graphs if np.any(pool.states(g.graph_id) != UNLABELED)]
    if not labeled:
        raise ValueError("no labeled graphs to train on")
    opt = MomentumSGD(train_cfg.momentum)
    order = sorted(labeled, key=lambda g: g.graph_id)
    for epoch in range(train_cfg.epochs_per_iteration):
        perm = rng.permutation(len(order))
        total = 0.0
        for start in range(0, len(order), train_cfg.batch):
            chunk = [order[k] for k in perm[start:start + train_cfg.batch]]
            groups = group_by_size(chunk, pool)
            value, grad = _sum_groups(params, groups, infer_cfg)
            _check_finite(value, grad)
            # step on the per-node mean so lr does not scale with the label count
            n_lab = sum(int(np.sum(g.labels != UNLABELED)) for g in groups)
            params = opt.step(params, grad.scaled(1.0 / n_lab), lr, wd)
            total += value
        log.debug("epoch %d loss %.6f", epoch, total)
    return params


# -- checkpoint ----------------------------------------------------------------

def save_params(path, params: ModelParams) -> None:
    ts, ta = params.Psi_sp.shape
    lines = [f"params {ts} {ta} {params.W_s.shape[1]} {params.W_a.shape[1]}"]
    for a in params.arrays():
        lines.extend(" ".join("%.17g" % v for v in row) for row in a)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_params(path) -> ModelParams:
    rows = [ln.split() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    head = rows[0]
    if len(head) != 5 or head[0] != "params":
        raise ValueError("not a parameter file")
    ts, ta, d_s, d_a = map(int, head[1:])
    shapes = [(ts, d_s), (ta, d_a), (ts, ta), (ta, ta)]
    body = rows[1:]
    if len(body) != sum(s[0] for s in shapes):
        raise ValueError("parameter file has the wrong number of rows")
    out, k = [], 0
    for r, c in shapes:
        block = np.array([[float(v) for v in row] for row in body[k:k + r]], dtype=np.float64)
        if block.shape != (r, c):
            raise ValueError("parameter row has the wrong length")
        out.append(block)
        k += r
    return ModelParams(*out)

