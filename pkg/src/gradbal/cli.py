"""Command-line front end: `gradbal run|herding|bench`.

`run` executes a variant x seed experiment matrix from an INI-style config
(`[section]` headers, `key = value` lines), writing one CSV of epoch
reports per run plus a summary.json of per-variant means. `herding` is a
micro-benchmark of ordering quality on a frozen zero-centered vector set,
printed as CSV. `bench` compares per-epoch wall time across variants
against the random-reshuffle baseline.

Exit codes: 0 success, 1 invalid config or arguments (the message names
the offending field), 2 a run diverged (partial results are kept).
The GRADBAL_OUTPUT_DIR environment variable overrides the output
directory and nothing else.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .datasets import gen_blobs, gen_linreg, load_csv, normalize, train_test_split
from .errors import ConfigError, DataFormatError, DivergenceError
from .kernels import KernelConfig, KernelKind
from .sorters import GradientMatrix, Variant, new_sorter, parse_variant
from .training import (
    OptimConfig,
    herding_discrepancy,
    reports_from_csv,
    reports_to_csv,
    run_experiment,
)

OUTPUT_DIR_ENV = "GRADBAL_OUTPUT_DIR"

_RECURSIVE = (Variant.RECURSIVE_BALANCE, Variant.RECURSIVE_PAIR_BALANCE)


def _parse_bool(text):
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_seeds(text):
    return [int(tok) for tok in str(text).replace(",", " ").split()]


def _parse_variants(text):
    toks = [tok for tok in str(text).replace(",", " ").split() if tok]
    if not toks:
        raise ValueError("empty variant list")
    return [parse_variant(tok).value for tok in toks]


def _parse_c_bound(text):
    if str(text).strip().lower() == "auto":
        return None
    value = float(text)
    if not value > 0:
        raise ValueError(f"c_bound must be positive or 'auto', got {text}")
    return value


def _parse_kernel_kind(text):
    lowered = str(text).strip().lower()
    for kind in KernelKind:
        if kind.value == lowered:
            return kind.value
    raise ValueError(f"kernel must be deterministic or probabilistic, got {text!r}")


# section -> key -> (converter, default); None default means optional
_SCHEMA = {
    "data": {
        "kind": (str.lower, "blobs"),
        "n": (int, 1024),
        "feature_dim": (int, 20),
        "class_count": (int, 2),
        "separation": (float, 3.0),
        "noise_sd": (float, 0.1),
        "seed": (int, 0),
        "path": (str, None),
        "normalize": (_parse_bool, False),
        "train_fraction": (float, 5 / 6),
        "split_seed": (int, 0),
    },
    "model": {
        "kind": (str.lower, "logistic"),
        "hidden": (int, 32),
    },
    "order": {
        "variants": (_parse_variants, ["random_reshuffle", "mean_balance"]),
        "kernel": (_parse_kernel_kind, "deterministic"),
        "c_bound": (_parse_c_bound, None),
        "depth": (int, 3),
    },
    "optim": {
        "learning_rate": (float, 0.001),
        "momentum": (float, 0.9),
        "weight_decay": (float, 0.01),
        "batch_size": (int, 16),
        "epochs": (int, 10),
    },
    "run": {
        "seeds": (_parse_seeds, [0, 7, 42]),
        "output_dir": (str, "."),
        "workers": (int, 0),  # 0 means serial
        "backend": (str.lower, "auto"),
    },
}


def load_config(path, overrides=()):
    """Parse and fully validate a config; raises ConfigError naming the
    offending field before any computation starts."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    cfg = {sec: {key: default for key, (_, default) in keys.items()} for sec, keys in _SCHEMA.items()}
    pairs = []
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser[section].items():
            pairs.append((section, key, raw))
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        pairs.append((section.strip(), key.strip(), raw.strip()))
    for section, key, raw in pairs:
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        converter, _ = _SCHEMA[section][key]
        try:
            cfg[section][key] = converter(raw)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"bad value for {section}.{key}: {exc}") from None
    _validate_config(cfg)
    return cfg


def _validate_config(cfg):
    data, model, order, optim, run = (cfg[s] for s in ("data", "model", "order", "optim", "run"))
    if data["kind"] not in ("blobs", "linreg", "csv"):
        raise ConfigError(f"data.kind must be blobs, linreg, or csv, got {data['kind']!r}")
    if data["kind"] == "csv" and not data["path"]:
        raise ConfigError("data.path is required when data.kind = csv")
    if data["kind"] != "csv":
        if data["n"] < 2:
            raise ConfigError(f"data.n must be >= 2, got {data['n']}")
        if data["feature_dim"] < 1:
            raise ConfigError(f"data.feature_dim must be >= 1, got {data['feature_dim']}")
    if not 0.0 < data["train_fraction"] < 1.0:
        raise ConfigError(f"data.train_fraction must be in (0, 1), got {data['train_fraction']}")
    if model["kind"] not in ("linreg", "logistic", "multinomial", "mlp"):
        raise ConfigError(f"unknown model.kind {model['kind']!r}")
    if model["kind"] == "logistic" and data["kind"] == "blobs" and data["class_count"] != 2:
        raise ConfigError("model.kind logistic needs data.class_count = 2 (use multinomial)")
    if order["depth"] < 1:
        raise ConfigError(f"order.depth must be >= 1, got {order['depth']}")
    try:
        OptimConfig(**optim)
    except ValueError as exc:
        raise ConfigError(f"optim: {exc}") from None
    if "recursive_pair_balance" in order["variants"]:
        b = optim["batch_size"]
        if b < 2 or b & (b - 1):
            raise ConfigError(
                f"optim.batch_size must be a power of 2 >= 2 for recursive_pair_balance, got {b}"
            )
        if data["kind"] != "csv":  # csv row count is only known at load time
            n_train = int(round(data["n"] * data["train_fraction"]))
            n_train = min(max(n_train, 1), data["n"] - 1)
            tail = n_train % b
            if tail == 1 or (tail and tail & (tail - 1)):
                raise ConfigError(
                    f"recursive_pair_balance: the train split has {n_train} examples "
                    f"(data.n={data['n']}, data.train_fraction={data['train_fraction']}), leaving "
                    f"a final batch of {tail} with optim.batch_size={b}; the tail must be a power of 2"
                )
    if not run["seeds"]:
        raise ConfigError("run.seeds must not be empty")
    if any(s < 0 for s in run["seeds"]):
        raise ConfigError(f"run.seeds must be unsigned, got {run['seeds']}")
    if run["workers"] < 0:
        raise ConfigError(f"run.workers must be >= 0, got {run['workers']}")
    if run["backend"] not in ("auto", "python", "compiled"):
        raise ConfigError(f"run.backend must be auto, python, or compiled, got {run['backend']!r}")


def _build_dataset(data_cfg):
    kind = data_cfg["kind"]
    if kind == "blobs":
        ds = gen_blobs(data_cfg["n"], data_cfg["feature_dim"], data_cfg["class_count"],
                       data_cfg["separation"], data_cfg["seed"])
    elif kind == "linreg":
        ds, _ = gen_linreg(data_cfg["n"], data_cfg["feature_dim"], data_cfg["noise_sd"],
                           data_cfg["seed"])
    else:
        ds = load_csv(data_cfg["path"])
    if data_cfg["normalize"]:
        ds = normalize(ds)
    return train_test_split(ds, data_cfg["train_fraction"], seed=data_cfg["split_seed"])


def _kernel_config(order_cfg):
    kind = KernelKind(order_cfg["kernel"])
    if kind is KernelKind.DETERMINISTIC:
        return KernelConfig(kind=kind)
    return KernelConfig(kind=kind, c_bound=order_cfg["c_bound"])


def _run_task(task):
    """Executes one (variant, seed) cell; runs inside a worker process."""
    cfg = task["config"]
    variant = parse_variant(task["variant"])
    train, test = _build_dataset(cfg["data"])
    class_count = train.meta.class_count if train.meta.class_count is not None else 2
    depth = cfg["order"]["depth"] if variant in _RECURSIVE else None
    backend = None if cfg["run"]["backend"] == "auto" else cfg["run"]["backend"]
    try:
        reports = run_experiment(
            train,
            cfg["model"]["kind"],
            variant,
            OptimConfig(**cfg["optim"]),
            task["seed"],
            kernel=_kernel_config(cfg["order"]),
            depth=depth,
            test=test,
            backend=backend,
            hidden=cfg["model"]["hidden"],
        )
        return {"variant": variant.value, "seed": task["seed"], "status": "ok",
                "csv": reports_to_csv(reports), "message": ""}
    except DivergenceError as exc:
        return {"variant": variant.value, "seed": task["seed"], "status": "diverged",
                "csv": reports_to_csv(exc.reports or []), "message": str(exc)}


def _output_dir(cfg):
    return os.environ.get(OUTPUT_DIR_ENV) or cfg["run"]["output_dir"]


def _summarize(cfg, outcomes):
    """Arithmetic means over the seeds that completed, per variant."""
    variants = {}
    for variant in cfg["order"]["variants"]:
        cells = [o for o in outcomes if o["variant"] == variant]
        finished = [o for o in cells if o["status"] == "ok"]
        entry = {
            "seeds": [o["seed"] for o in cells],
            "diverged_seeds": [o["seed"] for o in cells if o["status"] == "diverged"],
        }
        if finished:
            finals = [reports_from_csv(o["csv"])[-1] for o in finished]
            walls = [np.mean([r.wall_seconds for r in reports_from_csv(o["csv"])]) for o in finished]
            entry.update(
                final_train_loss_mean=float(np.mean([r.train_loss for r in finals])),
                final_test_accuracy_mean=float(np.mean([r.test_accuracy for r in finals])),
                mean_epoch_seconds=float(np.mean(walls)),
                accumulator_slots=finals[0].accumulator_slots,
            )
        variants[variant] = entry
    return {"schema_version": 1, "variants": variants}


def cmd_run(config_path, overrides=()) -> int:
    try:
        cfg = load_config(config_path, overrides)
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    tasks = [{"config": cfg, "variant": v, "seed": s}
             for v in cfg["order"]["variants"] for s in cfg["run"]["seeds"]]
    workers = cfg["run"]["workers"]
    try:
        if workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_run_task, tasks))
        else:
            outcomes = [_run_task(t) for t in tasks]
    except (ValueError, DataFormatError) as exc:
        # bad shapes that only a loaded dataset reveals (csv inputs)
        print(f"error: {exc}", file=sys.stderr)
        return 1

    out_root = _output_dir(cfg)
    for outcome in outcomes:
        cell_dir = os.path.join(out_root, "results", outcome["variant"])
        os.makedirs(cell_dir, exist_ok=True)
        with open(os.path.join(cell_dir, f"{outcome['seed']}.csv"), "w", encoding="ascii") as fh:
            fh.write(outcome["csv"])
        if outcome["status"] == "diverged":
            print(f"diverged: {outcome['variant']} seed {outcome['seed']}: {outcome['message']}",
                  file=sys.stderr)
    summary_path = os.path.join(out_root, "summary.json")
    os.makedirs(out_root, exist_ok=True)
    with open(summary_path, "w", encoding="ascii") as fh:
        json.dump(_summarize(cfg, outcomes), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(summary_path)
    return 2 if any(o["status"] == "diverged" for o in outcomes) else 0


def cmd_herding(n, d, epochs, variant, kernel="deterministic", seed=0, depth=3,
                batch_size=64, c_bound=None, out=None) -> int:
    """Orders a frozen zero-centered Gaussian vector set for `epochs`
    epochs; prints epoch,discrepancy,random_baseline CSV rows 0..epochs."""
    out = out if out is not None else sys.stdout
    try:
        if n < 1 or d < 1 or epochs < 0 or batch_size < 1:
            raise ConfigError(f"invalid sizes: n={n}, d={d}, epochs={epochs}, batch_size={batch_size}")
        variant = parse_variant(variant)
        kind = KernelKind(_parse_kernel_kind(kernel))
        kcfg = KernelConfig(kind=kind) if kind is KernelKind.DETERMINISTIC \
            else KernelConfig(kind=kind, c_bound=c_bound)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    vec_s, base_s, sorter_s, kernel_s = (int(x) for x in np.random.SeedSequence(seed).generate_state(4))
    vectors = np.random.default_rng(vec_s).standard_normal((n, d))
    vectors -= vectors.mean(axis=0)

    base_rng = np.random.default_rng(base_s)
    baseline = float(np.mean([
        herding_discrepancy(vectors[base_rng.permutation(n)]) for _ in range(100)
    ]))

    kcfg = dataclasses.replace(kcfg, seed=kernel_s)
    use_depth = depth if variant in _RECURSIVE else None
    try:
        sorter = new_sorter(variant, n, d, kernel=kcfg, depth=use_depth, seed=sorter_s)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    out.write("epoch,discrepancy,random_baseline\n")
    out.write(f"0,{herding_discrepancy(vectors[sorter.order])!r},{baseline!r}\n")
    for epoch in range(1, epochs + 1):
        order = sorter.order
        for start in range(0, n, batch_size):
            ids = order[start:start + batch_size]
            sorter.step(GradientMatrix(vectors[ids], ids))
        perm = sorter.next_epoch()
        out.write(f"{epoch},{herding_discrepancy(vectors[perm])!r},{baseline!r}\n")
    return 0


def cmd_bench(config_path, overrides=(), out=None) -> int:
    """Per-variant mean epoch seconds and overhead vs random reshuffling."""
    out = out if out is not None else sys.stdout
    try:
        cfg = load_config(config_path, overrides)
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    variants = list(cfg["order"]["variants"])
    if "random_reshuffle" not in variants:
        variants.insert(0, "random_reshuffle")
    seed = cfg["run"]["seeds"][0]
    rows = []
    for variant in variants:
        try:
            outcome = _run_task({"config": cfg, "variant": variant, "seed": seed})
        except (ValueError, DataFormatError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        if outcome["status"] != "ok":
            print(f"error: {variant} diverged during bench: {outcome['message']}", file=sys.stderr)
            return 2
        reports = reports_from_csv(outcome["csv"])
        mean_wall = float(np.mean([r.wall_seconds for r in reports]))
        rows.append((variant, mean_wall, reports[0].accumulator_slots))
    rr_wall = next(wall for variant, wall, _ in rows if variant == "random_reshuffle")
    out.write("variant,mean_epoch_seconds,overhead_ratio,accumulator_slots\n")
    for variant, wall, slots in rows:
        ratio = 1.0 if variant == "random_reshuffle" else wall / rr_wall
        out.write(f"{variant},{wall!r},{ratio!r},{slots}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradbal",
        description="Gradient-balancing example-ordering experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a variant x seed experiment matrix from a config file")
    p_run.add_argument("config", help="INI-style config path")
    p_run.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override a config value")

    p_herd = sub.add_parser("herding", help="ordering-quality micro-benchmark on frozen vectors")
    p_herd.add_argument("--n", type=int, default=256)
    p_herd.add_argument("--d", type=int, default=16)
    p_herd.add_argument("--epochs", type=int, default=10)
    p_herd.add_argument("--variant", default="mean_balance")
    p_herd.add_argument("--kernel", default="deterministic")
    p_herd.add_argument("--seed", type=int, default=0)
    p_herd.add_argument("--depth", type=int, default=3)
    p_herd.add_argument("--batch-size", type=int, default=64)
    p_herd.add_argument("--c-bound", type=float, default=None,
                        help="probabilistic kernel bound (default: auto)")

    p_bench = sub.add_parser("bench", help="compare per-epoch wall time across variants")
    p_bench.add_argument("config", help="INI-style config path")
    p_bench.add_argument("--set", dest="overrides", action="append", default=[],
                         metavar="SECTION.KEY=VALUE", help="override a config value")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.overrides)
    if args.command == "herding":
        return cmd_herding(args.n, args.d, args.epochs, args.variant, kernel=args.kernel,
                           seed=args.seed, depth=args.depth, batch_size=args.batch_size,
                           c_bound=args.c_bound)
    return cmd_bench(args.config, args.overrides)


if __name__ == "__main__":
    sys.exit(main())
