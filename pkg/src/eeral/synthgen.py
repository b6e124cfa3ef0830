"""Seeded synthetic scene-graph datasets.

Each graph draws a scene label, a person count, one action per person from
a scene-conditional table, and features as class prototype plus Gaussian
noise.  The scene/action coupling lives only in the generative tables, so a
model has to learn it from data.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .graph import AnnotationPool, Dataset, GroundTruth, LabelSpace, new_scene_graph

VOLLEYBALL_ACTIONS = ("waiting", "setting", "digging", "falling", "spiking",
                      "blocking", "jumping", "moving", "standing")
VOLLEYBALL_ACTIVITIES = ("r_set", "r_spike", "r_pass", "r_winpoint",
                         "l_winpoint", "l_pass", "l_spike", "l_set")
COLLECTIVE_ACTIONS = ("crossing", "waiting", "queueing", "walking", "talking", "n/a")
COLLECTIVE_ACTIVITIES = ("crossing", "waiting", "queueing", "walking", "talking")

# per-stream salt so the stream layout never depends on call order
_PROTO_SCENE, _PROTO_ACTION, _SPLIT, _POOL = 101, 102, 103, 104


class GenConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    num_graphs: int
    persons_per_graph: tuple[int, int]
    label_space: LabelSpace
    feature_dims: tuple[int, int]
    noise_sigma: float
    scene_prior: tuple[float, ...]
    action_given_scene: tuple[tuple[float, ...], ...]
    prototype_separation: float = 1.0
    rng_seed: int = 0
    initial_labeled_fraction: float = 0.2
    test_fraction: float = 0.2
    scene_noise_sigma: float | None = None  # defaults to noise_sigma

    def validate(self) -> None:
        ls = self.label_space
        lo, hi = self.persons_per_graph
        if self.num_graphs < 1:
            raise GenConfigError("num_graphs must be >= 1")
        if not 1 <= lo <= hi:
            raise GenConfigError("persons_per_graph must satisfy 1 <= min <= max")
        if min(self.feature_dims) < 1:
            raise GenConfigError("feature dimensions must be positive")
        if self.noise_sigma < 0 or (self.scene_noise_sigma or 0) < 0:
            raise GenConfigError("noise_sigma must be nonnegative")
        if self.prototype_separation <= 0:
            raise GenConfigError("prototype_separation must be positive")
        if not 0 < self.initial_labeled_fraction <= 1:
            raise GenConfigError("initial_labeled_fraction must lie in (0, 1]")
        if not 0 <= self.test_fraction < 1:
            raise GenConfigError("test_fraction must lie in [0, 1)")
        prior = np.asarray(self.scene_prior, dtype=float)
        table = np.asarray(self.action_given_scene, dtype=float)
        if prior.shape != (ls.num_activities,) or abs(prior.sum() - 1) > 1e-9 or np.any(prior < 0):
            raise GenConfigError("scene_prior must be a distribution over the activities")
        if table.shape != (ls.num_activities, ls.num_actions) or np.any(table < 0) \
                or np.any(np.abs(table.sum(axis=1) - 1) > 1e-9):
            raise GenConfigError("action_given_scene must be row-stochastic, activities x actions")


def prototypes(n: int, dim: int, separation: float, seed, attempts: int = 2000) -> np.ndarray:
    """``n`` unit vectors in R^dim with pairwise distance >= ``separation``.

    Orthonormal rows when n <= dim; otherwise seeded rejection sampling.
    """
    bound = np.sqrt(2.0 * n / (n - 1)) if n > 1 else np.inf
    if separation > bound + 1e-12:
        raise GenConfigError(f"{n} unit vectors cannot be {separation} apart (max {bound:.4f})")
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        if n <= dim:
            q, _r = np.linalg.qr(rng.standard_normal((dim, n)))
            P = q.T
        else:
            P = rng.standard_normal((n, dim))
            P /= np.linalg.norm(P, axis=1, keepdims=True)
        d = np.linalg.norm(P[:, None] - P[None], axis=-1) + np.eye(n) * 1e9
        if d.min() >= separation:
            return P
    raise GenConfigError(f"could not place {n} prototypes {separation} apart in {dim} dimensions")


def generate(cfg: GenConfig) -> tuple[Dataset, AnnotationPool]:
    """Dataset plus the initial pool over its training graphs."""
    cfg.validate()
    ls = cfg.label_space
    d_s, d_a = cfg.feature_dims
    seed = cfg.rng_seed
    proto_s = prototypes(ls.num_activities, d_s, cfg.prototype_separation, [seed, _PROTO_SCENE])
    proto_a = prototypes(ls.num_actions, d_a, cfg.prototype_separation, [seed, _PROTO_ACTION])
    prior = np.asarray(cfg.scene_prior, dtype=float)
    table = np.asarray(cfg.action_given_scene, dtype=float)
    sig_s = cfg.noise_sigma if cfg.scene_noise_sigma is None else cfg.scene_noise_sigma
    lo, hi = cfg.persons_per_graph

    graphs, truths = [], []
    width = max(4, len(str(cfg.num_graphs - 1)))
    for k in range(cfg.num_graphs):
        rng = np.random.default_rng([seed, k])
        scene = int(rng.choice(ls.num_activities, p=prior))
        n = int(rng.integers(lo, hi + 1))
        actions = rng.choice(ls.num_actions, size=n, p=table[scene])
        xs = proto_s[scene] + sig_s * rng.standard_normal(d_s)
        xa = proto_a[actions] + cfg.noise_sigma * rng.standard_normal((n, d_a))
        gid = f"g{k:0{width}d}"
        graphs.append(new_scene_graph(gid, xs, xa))
        truths.append(GroundTruth(gid, np.concatenate([[scene], actions]).astype(np.int64)))

    order = np.random.default_rng([seed, _SPLIT]).permutation(cfg.num_graphs)
    n_test = int(round(cfg.test_fraction * cfg.num_graphs))
    test_idx = set(order[:n_test].tolist())
    train = [k for k in range(cfg.num_graphs) if k not in test_idx]
    test = sorted(test_idx)

    # fully label whole training graphs, in seeded order, until the target is met
    target = int(round(cfg.initial_labeled_fraction * sum(graphs[k].n_nodes for k in train)))
    states = {graphs[k].graph_id: np.full(graphs[k].n_nodes, -1, dtype=np.int64) for k in train}
    labeled = 0
    for k in np.random.default_rng([seed, _POOL]).permutation(train):
        if labeled >= target:
            break
        n_nodes = graphs[k].n_nodes
        if labeled + n_nodes - target > target - labeled and labeled > 0:
            break
        states[graphs[k].graph_id] = truths[k].labels.copy()
        labeled += n_nodes
    pool = AnnotationPool(ls, states)

    ds = Dataset(ls, [graphs[k] for k in train], [truths[k] for k in train],
                 [graphs[k] for k in test], [truths[k] for k in test],
                 meta={"seed": seed})
    return ds, pool


def _volleyball_table(ls: LabelSpace) -> np.ndarray:
    """Standing dominates everywhere; jumping only in spike scenes; each scene
    has two signature actions."""
    standing, jumping = VOLLEYBALL_ACTIONS.index("standing"), VOLLEYBALL_ACTIONS.index("jumping")
    others = [a for a in range(ls.num_actions) if a not in (standing, jumping)]
    spike_scenes = [VOLLEYBALL_ACTIVITIES.index("r_spike"), VOLLEYBALL_ACTIVITIES.index("l_spike")]
    table = np.zeros((ls.num_activities, ls.num_actions))
    for s in range(ls.num_activities):
        table[s, standing] = 0.70
        jump = 0.04 if s in spike_scenes else 0.0
        table[s, jumping] = jump
        rest = 0.30 - jump
        first, second = others[s % len(others)], others[(s // len(others) + s + 3) % len(others)]
        table[s, others] = 0.15 * rest / len(others)
        table[s, first] += 0.60 * rest
        table[s, second] += 0.25 * rest
    return table


def _collective_table(ls: LabelSpace) -> np.ndarray:
    # activity k mostly shows action k; "n/a" is a small constant background
    table = np.full((ls.num_activities, ls.num_actions), 0.04)
    for s in range(ls.num_activities):
        table[s, s] = 0.0
        table[s] /= table[s].sum()
        table[s] *= 0.30
        table[s, s] = 0.70
    return table


def preset(name: str, **overrides) -> GenConfig:
    """Named configurations mirroring the two benchmark datasets at desk scale."""
    if name == "volleyball-like":
        ls = LabelSpace(9, 8, VOLLEYBALL_ACTIONS, VOLLEYBALL_ACTIVITIES)
        cfg = GenConfig(num_graphs=500, persons_per_graph=(6, 12), label_space=ls,
                        feature_dims=(8, 12), noise_sigma=0.35, scene_noise_sigma=0.6,
                        scene_prior=tuple([1 / 8] * 8),
                        action_given_scene=tuple(map(tuple, _volleyball_table(ls))),
                        prototype_separation=1.0, initial_labeled_fraction=0.1)
    elif name == "collective-like":
        ls = LabelSpace(6, 5, COLLECTIVE_ACTIONS, COLLECTIVE_ACTIVITIES)
        cfg = GenConfig(num_graphs=500, persons_per_graph=(2, 8), label_space=ls,
                        feature_dims=(6, 8), noise_sigma=0.35, scene_noise_sigma=0.6,
                        scene_prior=tuple([0.2] * 5),
                        action_given_scene=tuple(map(tuple, _collective_table(ls))),
                        prototype_separation=1.0, initial_labeled_fraction=0.1)
    else:
        raise GenConfigError(f"unknown preset {name!r}")
    return replace(cfg, **overrides)


PRESETS = ("volleyball-like", "collective-like")
