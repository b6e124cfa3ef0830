"""Command-line entry point: gen, run, verify, aggregate.

Exit codes: 0 success, 1 usage/config error, 2 verification failure,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .active import LoopConfig, curve_points, run_active_learning, write_records
from .evaluation import (aggregate_curves, read_curve, selection_composition, write_aggregate,
                         write_composition, write_curve)
from .graph import Dataset, GraphError, LabelSpace, read_dataset, write_dataset
from .inference import EXACT, SUM_PRODUCT, InferenceConfig
from .model import ModelParams, NumericalError, TrainConfig
from .selection import STRATEGIES, write_selections
from .synthgen import PRESETS, GenConfigError, generate, preset
from .verification import SUITES, run_suite

log = logging.getLogger("eeral")

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _str_list(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


# key -> (type, default).  Flags override the config file, which overrides these.
GEN_KEYS = {
    "preset": (str, "volleyball-like"),
    "graphs": (int, None),
    "persons_min": (int, None),
    "persons_max": (int, None),
    "d_s": (int, None),
    "d_a": (int, None),
    "noise_sigma": (float, None),
    "scene_noise_sigma": (float, None),
    "separation": (float, None),
    "init_fraction": (float, None),
    "test_fraction": (float, None),
}
RUN_KEYS = {
    "data": (str, None),
    "strategy": (_str_list, ["eer", "rnd"]),
    "seeds": (_int_list, [0]),
    "k": (int, 50),
    "iters": (int, 8),
    "epochs": (_int_list, None),
    "rounds": (int, 5),
    "damping": (float, 0.0),
    "backend": (str, SUM_PRODUCT),
    "lr": (float, None),
    "lr_mult": (float, None),
    "wd": (float, None),
    "wd_mult": (float, None),
    "momentum": (float, None),
    "batch": (int, None),
}
COMMON_KEYS = {"seed": (int, 0), "out": (str, None)}


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    for k, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{k}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(args, keys: dict) -> dict:
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    unknown = set(cfg) - set(keys)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for key, (typ, default) in keys.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in cfg:
            try:
                out[key] = typ(cfg[key])
            except ValueError:
                raise ConfigError(f"config key {key}: bad value {cfg[key]!r}") from None
        else:
            out[key] = default
    return out


def gen_config(opts: dict, seed: int):
    overrides = {"rng_seed": seed}
    base = preset(opts["preset"])
    lo, hi = base.persons_per_graph
    d_s, d_a = base.feature_dims
    if opts["graphs"] is not None:
        overrides["num_graphs"] = opts["graphs"]
    if opts["persons_min"] is not None or opts["persons_max"] is not None:
        overrides["persons_per_graph"] = (opts["persons_min"] or lo, opts["persons_max"] or hi)
    if opts["d_s"] is not None or opts["d_a"] is not None:
        overrides["feature_dims"] = (opts["d_s"] or d_s, opts["d_a"] or d_a)
    for key, field in (("noise_sigma", "noise_sigma"), ("scene_noise_sigma", "scene_noise_sigma"),
                       ("separation", "prototype_separation"),
                       ("init_fraction", "initial_labeled_fraction"), ("test_fraction", "test_fraction")):
        if opts[key] is not None:
            overrides[field] = opts[key]
    cfg = replace(base, **overrides)
    cfg.validate()
    return cfg


# -- dataset directories -------------------------------------------------------------

def write_meta(path, ls: LabelSpace, meta: dict) -> None:
    lines = [f"num_actions={ls.num_actions}", f"num_activities={ls.num_activities}"]
    if ls.action_names:
        lines.append("action_names=" + ",".join(ls.action_names))
    if ls.activity_names:
        lines.append("activity_names=" + ",".join(ls.activity_names))
    lines += [f"{k}={v}" for k, v in sorted(meta.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(directory) -> tuple[Dataset, object]:
    d = Path(directory)
    for name in ("meta.txt", "train.txt", "test.txt"):
        if not (d / name).is_file():
            raise FileNotFoundError(f"dataset file {d / name} not found")
    meta = read_config(d / "meta.txt")

    def names(key):
        return tuple(meta[key].split(",")) if key in meta else None

    ls = LabelSpace(int(meta["num_actions"]), int(meta["num_activities"]),
                    names("action_names"), names("activity_names"))
    train, train_truth, pool = read_dataset(d / "train.txt", ls)
    test, test_truth, _ = read_dataset(d / "test.txt", ls)
    return Dataset(ls, train, train_truth, test, test_truth, meta), pool


def save_dataset(directory, ds: Dataset, pool) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_dataset(d / "train.txt", ds.train, ds.train_truth, pool)
    write_dataset(d / "test.txt", ds.test, ds.test_truth)
    write_meta(d / "meta.txt", ds.label_space, ds.meta)


# -- commands -----------------------------------------------------------------------------

def cmd_gen(args) -> int:
    opts = resolve(args, {**GEN_KEYS, **COMMON_KEYS})
    if opts["out"] is None:
        raise ConfigError("--out is required")
    cfg = gen_config(opts, opts["seed"])
    ds, pool = generate(cfg)
    ds.meta.update(preset=opts["preset"], d_s=cfg.feature_dims[0], d_a=cfg.feature_dims[1])
    save_dataset(opts["out"], ds, pool)
    n_scene, n_action = pool.labeled_split()
    ls = ds.label_space
    print(f"T_a={ls.num_actions} T_s={ls.num_activities} train_graphs={len(ds.train)} "
          f"test_graphs={len(ds.test)} train_nodes={pool.n_nodes()} "
          f"labeled={pool.n_labeled()} (scene {n_scene}, action {n_action})")
    return EXIT_OK


def _run_one(job):
    """One (strategy, seed, epochs) run; writes only its own files."""
    ds, pool, loop_cfg, out, tag, label, timings = job
    d_s, d_a = ds.train[0].d_scene, ds.train[0].d_action
    params = ModelParams.zeros(ds.label_space, d_s, d_a)
    records = run_active_learning(ds, pool, params, loop_cfg)
    seed = loop_cfg.rng_seed
    points = curve_points(records, label, seed)
    out = Path(out)
    write_curve(out / f"curve_{tag}.csv", points)
    write_records(out / f"records_{tag}.csv", records, label, seed, timings)
    write_selections(out / f"selections_{tag}.csv", [r.selection for r in records if r.selection])
    write_composition(out / f"composition_{tag}.csv", label, seed,
                      selection_composition(records, ds.truth_map()))
    return points


def worker_count(n_jobs: int) -> int:
    raw = os.environ.get("EERAL_THREADS", "0")
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"EERAL_THREADS must be an integer, got {raw!r}") from None
    if cap < 0:
        raise ConfigError("EERAL_THREADS must be >= 0")
    cap = cap or (os.cpu_count() or 1)
    return max(1, min(cap, n_jobs))


def cmd_run(args) -> int:
    opts = resolve(args, {**RUN_KEYS, **GEN_KEYS, **COMMON_KEYS})
    if opts["out"] is None:
        raise ConfigError("--out is required")
    for s in opts["strategy"]:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; choose from {', '.join(STRATEGIES)}")
    if not opts["seeds"]:
        raise ConfigError("--seeds is empty")
    if opts["iters"] < 0 or opts["k"] < 1:
        raise ConfigError("--iters must be >= 0 and --k >= 1")
    if opts["backend"] not in (SUM_PRODUCT, EXACT):
        raise ConfigError(f"unknown backend {opts['backend']!r}")

    base = TrainConfig()
    train_fields = {"lr": "base_lr", "lr_mult": "lr_iter_mult", "wd": "weight_decay",
                    "wd_mult": "wd_iter_mult", "momentum": "momentum", "batch": "batch"}
    train_cfg = replace(base, **{f: opts[k] for k, f in train_fields.items() if opts[k] is not None})
    infer_cfg = InferenceConfig(rounds=opts["rounds"], backend=opts["backend"], damping=opts["damping"])
    epochs = opts["epochs"] or [train_cfg.epochs_per_iteration]

    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    shared = load_dataset(opts["data"]) if opts["data"] else None
    jobs = []
    for seed in opts["seeds"]:
        # without --data each seed draws its own dataset from the preset
        ds, pool = shared or generate(gen_config(opts, seed))
        for strategy in opts["strategy"]:
            for ep in epochs:
                loop_cfg = LoopConfig(opts["k"], opts["iters"], strategy,
                                      replace(train_cfg, epochs_per_iteration=ep), infer_cfg, seed)
                label = strategy if len(epochs) == 1 else f"{strategy}-ep{ep}"
                jobs.append((ds, pool, loop_cfg, out, f"{label}_seed{seed}", label, args.timing))

    workers = worker_count(len(jobs))
    if workers == 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_run_one, jobs))
    points = [p for ps in results for p in ps]
    rows = aggregate_curves(points)
    write_aggregate(out / "aggregate.csv", rows)
    _print_aggregate(rows)
    return EXIT_OK


def _print_aggregate(rows) -> None:
    print(f"{'strategy':<12}{'iter':>5}{'annot':>8}{'scene':>16}{'action':>16}")
    for r in rows:
        print(f"{r['strategy']:<12}{r['iteration']:>5}{r['annotations']:>8.0f}"
              f"{r['scene_acc_mean']:>9.4f}±{r['scene_acc_std']:.4f}"
              f"{r['action_acc_mean']:>9.4f}±{r['action_acc_std']:.4f}")


def cmd_aggregate(args) -> int:
    opts = resolve(args, COMMON_KEYS)
    files = sorted(Path(args.runs).glob("curve_*.csv"))
    if not files:
        raise FileNotFoundError(f"no curve_*.csv files under {args.runs}")
    points = [p for f in files for p in read_curve(f)]
    rows = aggregate_curves(points)
    write_aggregate(opts["out"] or Path(args.runs) / "aggregate.csv", rows)
    _print_aggregate(rows)
    return EXIT_OK


def cmd_verify(args) -> int:
    suites = _str_list(args.suite)
    for s in suites:
        if s not in SUITES:
            raise ConfigError(f"unknown suite {s!r}; choose from {', '.join(SUITES)}")
    ok = True
    for s in suites:
        res = run_suite(s, args.trials, args.seed or 0, args.inject_failure)
        for c in res.checks:
            print(c.line())
        for line in res.failures[:20]:
            print(f"  {s}: {line}")
        ok &= res.passed
    return EXIT_OK if ok else EXIT_VERIFY


# -- parser -----------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--out", help="output directory (gen/run) or file (aggregate)")
    p.add_argument("--config", help="flat key=value file; flags take precedence")


def _add_gen_flags(p):
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--graphs", type=int, help="number of graphs (train + test)")
    p.add_argument("--persons-min", type=int)
    p.add_argument("--persons-max", type=int)
    p.add_argument("--d-s", type=int, help="scene feature dimension")
    p.add_argument("--d-a", type=int, help="person feature dimension")
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--scene-noise-sigma", type=float)
    p.add_argument("--separation", type=float, help="minimum prototype distance")
    p.add_argument("--init-fraction", type=float, help="initially labeled fraction of train nodes")
    p.add_argument("--test-fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eeral", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_common(p)
    _add_gen_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="active-learning runs over strategies x seeds x epochs")
    _add_common(p)
    p.add_argument("--data", help="dataset directory from `gen`; without it each seed generates from --preset")
    p.add_argument("--strategy", type=_str_list, help=f"comma list from {','.join(STRATEGIES)}")
    p.add_argument("--seeds", type=_int_list, help="comma list of run seeds")
    p.add_argument("--k", type=int, help="annotations per iteration")
    p.add_argument("--iters", type=int, help="number of selection iterations")
    p.add_argument("--epochs", type=_int_list, help="epochs per iteration; a comma list sweeps them")
    p.add_argument("--rounds", type=int, help="message-passing rounds")
    p.add_argument("--damping", type=float)
    p.add_argument("--backend", choices=(SUM_PRODUCT, EXACT))
    p.add_argument("--lr", type=float, help="base learning rate")
    p.add_argument("--lr-mult", type=float, help="per-iteration learning-rate factor")
    p.add_argument("--wd", type=float, help="base weight decay")
    p.add_argument("--wd-mult", type=float, help="per-iteration weight-decay factor")
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch", type=int, help="graphs per gradient step")
    p.add_argument("--timing", action="store_true", help="record wall time (breaks byte-identical output)")
    _add_gen_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run the oracle suites")
    p.add_argument("--suite", default=",".join(SUITES), help="comma list of bp,grad,eer")
    p.add_argument("--trials", type=int, help="trials per suite (suite default if omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--inject-failure", action="store_true", help="perturb results to test the harness")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("aggregate", help="mean/std over curve files")
    p.add_argument("runs", help="directory holding curve_*.csv")
    _add_common(p)
    p.set_defaults(func=cmd_aggregate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, GenConfigError, GraphError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
