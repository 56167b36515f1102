"""Permuted-order SGD training loop and its evaluation quantities.

One experiment wires a dataset, a model, and a sorter together: every
epoch walks the current permutation in batches, hands the per-sample
gradient rows to the sorter, and takes an SGD step on the batch mean.
The sorter's `next_epoch` then emits the order for the next pass.

Per epoch we record train loss, test accuracy (classification; nan for
regression), the herding discrepancy of the just-emitted order measured
on the gradients recorded this epoch (stale, like the algorithm itself),
wall seconds around the batch loop plus next_epoch (evaluation excluded),
accumulator slot count, and cumulative kernel overflow count. Identical
(config, seed) reproduce identical reports except wall_seconds.
"""

from __future__ import annotations

import dataclasses
import io
import json
import time
from dataclasses import dataclass

import numpy as np

from . import _accel
from .datasets import Dataset
from .errors import DivergenceError
from .kernels import KernelConfig
from .models import Model, make_model
from .sorters import Variant, new_sorter, parse_variant

REPORT_SCHEMA_VERSION = 1

CSV_COLUMNS = (
    "epoch",
    "train_loss",
    "test_accuracy",
    "herding_discrepancy",
    "wall_seconds",
    "accumulator_slots",
    "overflow_count",
)

# wall-clock fields vary run to run; determinism checks skip them
TIMING_COLUMNS = ("wall_seconds",)

DIVERGENCE_FACTOR = 10.0


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.01
    batch_size: int = 16
    epochs: int = 10

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    train_loss: float
    test_accuracy: float
    herding_discrepancy: float
    wall_seconds: float
    accumulator_slots: int
    overflow_count: int


def sgd_step(params, mean_grad, velocity, cfg: OptimConfig):
    """In-place SGD with momentum, weight decay folded into the gradient:
    g_eff = grad + wd * params; v <- momentum*v + g_eff; params -= lr*v."""
    params = np.asarray(params)
    mean_grad = np.asarray(mean_grad)
    velocity = np.asarray(velocity)
    if not (params.shape == mean_grad.shape == velocity.shape):
        raise ValueError(
            f"shape mismatch: params {params.shape}, grad {mean_grad.shape}, velocity {velocity.shape}"
        )
    g_eff = mean_grad + cfg.weight_decay * params
    velocity *= cfg.momentum
    velocity += g_eff
    params -= cfg.learning_rate * velocity


def herding_discrepancy(vectors) -> float:
    """max over prefixes k of ||sum_{i<=k} (v_i - mean)||_inf."""
    vectors = np.ascontiguousarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] < 1:
        raise ValueError(f"need a nonempty 2-d vector array, got shape {vectors.shape}")
    centered = vectors - vectors.mean(axis=0)
    return float(_accel.impl.max_prefix_inf(centered))


def _derive_seeds(seed: int):
    init_s, sorter_s, kernel_s = np.random.SeedSequence(seed).generate_state(3)
    return int(init_s), int(sorter_s), int(kernel_s)


def _validate_batching(variant: Variant, n: int, batch_size: int):
    if variant is not Variant.RECURSIVE_PAIR_BALANCE:
        return
    if batch_size < 2 or batch_size & (batch_size - 1):
        raise ValueError(
            f"recursive pair balance requires a power-of-2 batch size >= 2, got {batch_size}"
        )
    tail = n % batch_size
    if tail == 1 or (tail and tail & (tail - 1)):
        raise ValueError(
            f"recursive pair balance: final batch of {tail} examples (n={n}, "
            f"batch_size={batch_size}) is not a power of 2 >= 2"
        )


def run_experiment(train: Dataset, model, variant, optim: OptimConfig, seed: int,
                   kernel: KernelConfig | None = None, depth: int | None = None,
                   test: Dataset | None = None, backend: str | None = None,
                   hidden: int = 32) -> list[EpochReport]:
    """Train for optim.epochs epochs; returns one EpochReport per epoch.

    `model` is a Model instance or a kind string (built against the
    dataset's dimensions). The run seed derives three independent streams:
    model init, the sorter's shuffles, and the kernel's uniforms.
    """
    variant = parse_variant(variant)
    _validate_batching(variant, len(train), optim.batch_size)
    if isinstance(model, str):
        class_count = train.meta.class_count if train.meta.class_count is not None else 2
        model = make_model(model, train.meta.feature_dim, class_count=class_count, hidden=hidden)
    if not isinstance(model, Model):
        raise TypeError(f"model must be a Model or kind string, got {type(model).__name__}")

    init_seed, sorter_seed, kernel_seed = _derive_seeds(seed)
    kernel = kernel if kernel is not None else KernelConfig()
    kernel = dataclasses.replace(kernel, seed=kernel_seed)

    n, d = len(train), model.param_dim
    sorter = new_sorter(variant, n, d, kernel=kernel, depth=depth, seed=sorter_seed, backend=backend)
    params = model.init_params(init_seed)
    velocity = np.zeros(d)
    grad_log = np.empty((n, d))

    initial_loss, _ = model.loss(params, train.X, train.y)
    reports: list[EpochReport] = []
    for epoch in range(optim.epochs):
        order = sorter.order
        t0 = time.perf_counter()
        for start in range(0, n, optim.batch_size):
            ids = order[start:start + optim.batch_size]
            X, y = train.batch(ids)
            grads = model.per_sample_grads(params, X, y, ids)
            sorter.step(grads)
            grad_log[ids] = grads.rows
            sgd_step(params.theta, grads.rows.mean(axis=0), velocity, optim)
        next_order = sorter.next_epoch()
        wall = time.perf_counter() - t0

        train_loss, _ = model.loss(params, train.X, train.y)
        test_acc = model.accuracy(params, test.X, test.y) if test is not None else float("nan")
        report = EpochReport(
            epoch=epoch,
            train_loss=float(train_loss),
            test_accuracy=float(test_acc),
            herding_discrepancy=herding_discrepancy(grad_log[next_order]),
            wall_seconds=wall,
            accumulator_slots=sorter.accumulator_slots,
            overflow_count=sorter.herding_stats().overflow_count,
        )
        reports.append(report)
        if not np.isfinite(train_loss):
            raise DivergenceError(
                f"train loss became non-finite at epoch {epoch} (learning-rate divergence)",
                reports=reports,
            )
        if train_loss > DIVERGENCE_FACTOR * initial_loss:
            raise DivergenceError(
                f"train loss {train_loss:.6g} exceeded {DIVERGENCE_FACTOR:g} x initial "
                f"{initial_loss:.6g} at epoch {epoch}",
                reports=reports,
            )
    return reports


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for r in reports:
        row = (
            str(r.epoch),
            repr(r.train_loss),
            repr(r.test_accuracy),
            repr(r.herding_discrepancy),
            repr(r.wall_seconds),
            str(r.accumulator_slots),
            str(r.overflow_count),
        )
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def reports_from_csv(text: str) -> list[EpochReport]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split(",") != list(CSV_COLUMNS):
        raise ValueError(f"bad report header: {lines[0] if lines else ''!r}")
    out = []
    for ln in lines[1:]:
        f = ln.split(",")
        out.append(EpochReport(int(f[0]), float(f[1]), float(f[2]), float(f[3]),
                               float(f[4]), int(f[5]), int(f[6])))
    return out


def reports_to_json(reports) -> str:
    payload = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "epochs": [dataclasses.asdict(r) for r in reports],
    }
    return json.dumps(payload, indent=2, sort_keys=True)
