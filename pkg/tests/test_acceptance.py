"""Acceptance suite: twelve checks covering ordering validity, kernel
bounds, ordering quality, the directional training-loss comparison, memory
accounting, input guards, gradient oracles, and end-to-end determinism.

Each test measures first, records one summary line (printed at the end of
the pytest run), then asserts. Tolerances and runtime budgets are pinned
in the assertions themselves.
"""

import itertools
import json
import os
import time

import numpy as np

from gradbal.cli import cmd_run
from gradbal.datasets import gen_blobs
from gradbal.kernels import Balancer, KernelConfig, KernelKind
from gradbal.models import make_model
from gradbal.sorters import (
    AccumulatorTree,
    BatchBalanceSorter,
    GradientMatrix,
    Variant,
    new_sorter,
)
from gradbal.training import OptimConfig, herding_discrepancy, run_experiment

DET = KernelConfig()


def run_epochs(sorter, vectors, batch_size, epochs):
    for _ in range(epochs):
        order = sorter.order
        for start in range(0, len(order), batch_size):
            ids = order[start:start + batch_size]
            sorter.step(GradientMatrix(vectors[ids], ids))
        sorter.next_epoch()
    return sorter.order


def test_criterion_01_permutations_are_bijective(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    total_epochs = 0
    bad = 0
    for variant in Variant:
        for trial in range(56):
            kernel = DET if trial % 2 == 0 else \
                KernelConfig(kind=KernelKind.PROBABILISTIC, seed=trial)
            d = int(rng.integers(1, 9))
            if variant is Variant.RECURSIVE_PAIR_BALANCE:
                b = int(2 ** rng.integers(1, 6))
                n = b * int(rng.integers(1, 512 // b + 1))
            else:
                n = int(rng.integers(1, 513))
                b = int(rng.integers(1, n + 1))
            depth = 3 if variant in (Variant.RECURSIVE_BALANCE, Variant.RECURSIVE_PAIR_BALANCE) else None
            sorter = new_sorter(variant, n, d, kernel=kernel, depth=depth, seed=trial)
            for _ in range(3):
                vectors = rng.standard_normal((n, d))
                order = sorter.order
                for start in range(0, n, b):
                    ids = order[start:start + b]
                    sorter.step(GradientMatrix(vectors[ids], ids))
                perm = sorter.next_epoch()
                total_epochs += 1
                if not np.array_equal(np.sort(perm), np.arange(n)):
                    bad += 1
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and total_epochs >= 1000 and elapsed < 30.0
    record_criterion(1, "bijective permutations, all variants",
                     ok, f"{total_epochs} epochs, {bad} invalid, {elapsed:.1f}s (budget 30s)")


def test_criterion_02_deterministic_energy_bound(record_criterion):
    worst = 0.0
    for seed in (0, 1, 2):
        rng = np.random.default_rng(seed)
        vecs = rng.standard_normal((10_000, 16)) * rng.uniform(0.1, 3.0, size=(10_000, 1))
        acc = np.zeros(16)
        Balancer(DET, 16).balance(acc, vecs)
        ratio = float(acc @ acc) / float((vecs * vecs).sum())
        worst = max(worst, ratio)
    ok = worst <= 1.0 + 1e-6
    record_criterion(2, "energy bound ||a_T||^2 <= sum ||v||^2",
                     ok, f"worst ratio {worst:.6f} over 3x10^4 steps (tol 1+1e-6)")


def test_criterion_03_probabilistic_boundary_and_fair_coin(record_criterion):
    cfg = KernelConfig(kind=KernelKind.PROBABILISTIC, c_bound=2.5, seed=9)
    bal = Balancer(cfg, 2)
    acc = np.array([1.0, 0.0])

    at_plus_c = bal.frozen_signs(acc, np.tile([2.5, 0.0], (64, 1)))
    at_minus_c = bal.frozen_signs(acc, np.tile([-2.5, 0.0], (64, 1)))
    orthogonal = bal.frozen_signs(acc, np.tile([0.0, 1.0], (100_000, 1)))
    freq = float((orthogonal > 0).mean())

    ok = bool((at_plus_c == -1).all() and (at_minus_c == 1).all() and abs(freq - 0.5) <= 0.01)
    record_criterion(3, "prob kernel: +c/-c forced, fair coin at 0",
                     ok, f"+c all -1: {(at_plus_c == -1).all()}, -c all +1: "
                         f"{(at_minus_c == 1).all()}, freq(+1)={freq:.4f} (0.5 +/- 0.01)")


def test_criterion_04_herding_beats_random_shuffles(record_criterion):
    t0 = time.perf_counter()
    n, d = 256, 16
    vectors = np.random.default_rng(41).standard_normal((n, d))
    vectors -= vectors.mean(axis=0)

    shuffle_rng = np.random.default_rng(42)
    baseline = float(np.mean([
        herding_discrepancy(vectors[shuffle_rng.permutation(n)]) for _ in range(100)
    ]))
    sorter = new_sorter(Variant.MEAN_BALANCE, n, d, kernel=DET, seed=7)
    order = run_epochs(sorter, vectors, batch_size=64, epochs=10)
    final = herding_discrepancy(vectors[order])
    elapsed = time.perf_counter() - t0
    ok = final <= 0.5 * baseline and elapsed < 10.0
    record_criterion(4, "mean balance <= 0.5 x random baseline (n=256, d=16, 10 epochs)",
                     ok, f"balanced {final:.3f} vs baseline {baseline:.3f} "
                         f"(ratio {final / baseline:.3f}, need <= 0.5), {elapsed:.1f}s (budget 10s)")


def test_criterion_05_probabilistic_quality_vs_random_signs(record_criterion):
    t0 = time.perf_counter()
    n, d, c = 4096, 32, 30.0
    balanced, random_sign = [], []
    for s in range(20):
        rng = np.random.default_rng(1000 + s)
        vecs = rng.standard_normal((n, d))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        acc = np.zeros(d)
        bal = Balancer(KernelConfig(kind=KernelKind.PROBABILISTIC, c_bound=c, seed=3000 + s), d)
        bal.balance(acc, vecs)
        balanced.append(np.abs(acc).max())
        signs = rng.choice([-1.0, 1.0], size=n)
        random_sign.append(np.abs(signs @ vecs).max())
    med_bal = float(np.median(balanced))
    med_base = float(np.median(random_sign))
    elapsed = time.perf_counter() - t0
    ratio = med_bal / med_base
    ok = ratio <= 0.25 and elapsed < 30.0
    record_criterion(5, "prob balancing final ||a||_inf <= 0.25 x random signs (median, 20 seeds)",
                     ok, f"median {med_bal:.3f} vs {med_base:.3f}, ratio {ratio:.3f} "
                         f"(need <= 0.25), {elapsed:.1f}s (budget 30s)")


def test_criterion_06_small_instance_exhaustive_oracle(record_criterion):
    t0 = time.perf_counter()
    vectors = np.random.default_rng(5).standard_normal((8, 2))
    vectors -= vectors.mean(axis=0)

    perms = np.array(list(itertools.permutations(range(8))), dtype=np.int64)
    prefix = np.cumsum(vectors[perms], axis=1)
    optimal = float(np.abs(prefix).max(axis=(1, 2)).min())

    sorter = new_sorter(Variant.MEAN_BALANCE, 8, 2, kernel=DET, seed=0)
    order = run_epochs(sorter, vectors, batch_size=4, epochs=5)
    achieved = herding_discrepancy(vectors[order])
    elapsed = time.perf_counter() - t0
    ok = achieved <= 2.0 * optimal and elapsed < 5.0
    record_criterion(6, "within 2x of exhaustive 8! optimum after 5 epochs",
                     ok, f"achieved {achieved:.4f} vs optimal {optimal:.4f} "
                         f"(ratio {achieved / max(optimal, 1e-12):.2f}, need <= 2), "
                         f"{elapsed:.1f}s (budget 5s)")


def test_criterion_07_training_loss_direction(record_criterion):
    t0 = time.perf_counter()
    train = gen_blobs(n=1024, feature_dim=20, class_count=2, separation=3.0, seed=0)
    optim = OptimConfig(epochs=30)  # lr 0.001, momentum 0.9, wd 0.01, batch 16
    depths = {"recursive_balance": 3, "recursive_pair_balance": 3}
    finals = {}
    for variant in ("random_reshuffle", "mean_balance", "pair_balance",
                    "batch_balance", "recursive_balance", "recursive_pair_balance"):
        losses = []
        for seed in (0, 7, 42):
            reports = run_experiment(train, "logistic", variant, optim, seed,
                                     depth=depths.get(variant))
            losses.append(reports[-1].train_loss)
        finals[variant] = float(np.mean(losses))
    elapsed = time.perf_counter() - t0

    rr = finals["random_reshuffle"]
    slack_ok = all(finals[v] <= rr + 0.002 for v in
                   ("pair_balance", "batch_balance", "recursive_balance", "recursive_pair_balance"))
    mb_ok = finals["mean_balance"] <= rr
    ok = mb_ok and slack_ok and elapsed < 180.0
    digits = ", ".join(f"{v}={finals[v]:.6f}" for v in finals)
    record_criterion(7, "mean balance <= RR final train loss; others within +0.002",
                     ok, f"{digits}; mb<=rr: {mb_ok}, slack checks: {slack_ok}, "
                         f"{elapsed:.0f}s (budget 180s)")


def test_criterion_08_tree_slot_accounting(record_criterion):
    sizes = {D: AccumulatorTree(D, 3).node_count for D in range(1, 7)}
    ok = all(sizes[D] == 2 ** (D + 1) - 1 for D in sizes)
    sorter = new_sorter(Variant.RECURSIVE_BALANCE, 8, 2, kernel=DET, depth=3, seed=0)
    ok = ok and sorter.accumulator_slots == 15
    record_criterion(8, "accumulator tree allocates exactly 2^(D+1)-1 slots",
                     ok, f"depth->slots {sizes}, sorter slots at D=3: {sorter.accumulator_slots}")


class _SignRecorder(BatchBalanceSorter):
    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.sign_map = {}

    def _place_batch(self, ids, signs):
        self.sign_map.update(zip(ids.tolist(), signs.tolist()))
        super()._place_batch(ids, signs)


def test_criterion_09_batch_balance_row_order_invariance(record_criterion):
    rng = np.random.default_rng(77)
    mismatches = 0
    for trial in range(200):
        n = int(rng.integers(8, 65))
        d = int(rng.integers(1, 7))
        vectors = rng.standard_normal((n, d))
        base = _SignRecorder(n, d, kernel=DET, seed=trial)
        shuf = _SignRecorder(n, d, kernel=DET, seed=trial)
        order = rng.permutation(n)
        start = 0
        while start < n:
            ids = order[start:start + int(rng.integers(1, 17))]
            start += len(ids)
            base.step(GradientMatrix(vectors[ids], ids))
            mix = rng.permutation(len(ids))
            shuf.step(GradientMatrix(vectors[ids[mix]], ids[mix]))
        if base.sign_map != shuf.sign_map:
            mismatches += 1
    ok = mismatches == 0
    record_criterion(9, "batch balance sign map ignores within-batch row order",
                     ok, f"200 trials, {mismatches} mismatches")


def test_criterion_10_recursive_pair_batch_size_guard(record_criterion):
    sorter = new_sorter(Variant.RECURSIVE_PAIR_BALANCE, 24, 3, kernel=DET, depth=3, seed=0)
    rejected = False
    try:
        sorter.step(GradientMatrix(np.ones((12, 3)), np.arange(12)))
    except ValueError as exc:
        rejected = "power-of-2" in str(exc)
    accepted = []
    for b in (2, 4, 8, 16):
        s = new_sorter(Variant.RECURSIVE_PAIR_BALANCE, b, 3, kernel=DET, depth=3, seed=0)
        rng = np.random.default_rng(b)
        run_epochs(s, rng.standard_normal((b, 3)), batch_size=b, epochs=1)
        accepted.append(b)
    ok = rejected and accepted == [2, 4, 8, 16]
    record_criterion(10, "batch 12 rejected, powers of 2 accepted",
                     ok, f"12 rejected with power-of-2 error: {rejected}, accepted: {accepted}")


def test_criterion_11_gradients_match_finite_differences(record_criterion):
    rng = np.random.default_rng(13)
    specs = [("linreg", make_model("linreg", 5)),
             ("logistic", make_model("logistic", 5)),
             ("multinomial", make_model("multinomial", 4, class_count=3)),
             ("mlp", make_model("mlp", 4, class_count=3, hidden=6))]
    worst = {}
    for name, model in specs:
        errs = []
        for point in range(10):
            params = model.init_params(seed=point)
            params.theta[:] = params.theta + 0.5 * rng.standard_normal(params.dim)
            X = rng.standard_normal((5, model.feature_dim))
            y = rng.standard_normal(5) if name == "linreg" \
                else rng.integers(0, model.class_count, size=5)
            rows = model.per_sample_grads(params, X, y, np.arange(5)).rows
            for i in rng.choice(params.dim, size=10, replace=params.dim < 10):
                h = 1e-5 * max(1.0, abs(params.theta[i]))
                params.theta[i] += h
                up = model.loss(params, X, y)[1]
                params.theta[i] -= 2 * h
                down = model.loss(params, X, y)[1]
                params.theta[i] += h
                fd = (up - down) / (2 * h)
                errs.append(np.abs(rows[:, i] - fd) / np.maximum(np.abs(fd), 1e-6))
        worst[name] = float(np.max(errs))
    ok = all(v <= 1e-4 for v in worst.values())
    detail = ", ".join(f"{k} max rel err {v:.2e}" for k, v in worst.items())
    record_criterion(11, "per-sample gradients match central differences (100 points/model)",
                     ok, f"{detail} (tol 1e-4)")


def test_criterion_12_rerun_reproduces_csv_bytes(record_criterion, tmp_path, capsys):
    config = """\
[data]
kind = blobs
n = 96
feature_dim = 5
class_count = 2
separation = 3.0
seed = 1
train_fraction = 0.667

[model]
kind = logistic

[order]
variants = mean_balance, recursive_pair_balance
kernel = probabilistic
depth = 2

[optim]
learning_rate = 0.01
epochs = 2
batch_size = 16

[run]
seeds = 0, 1
output_dir = {out}
"""
    path = tmp_path / "repro.ini"
    outs = []
    for run_dir in ("first", "second"):
        out = tmp_path / run_dir
        path.write_text(config.format(out=out))
        rc = cmd_run(str(path))
        assert rc == 0
        outs.append(out)
    capsys.readouterr()

    wall_col = 4  # wall_seconds position in the report header
    compared, identical = 0, True
    for variant in ("mean_balance", "recursive_pair_balance"):
        for seed in (0, 1):
            texts = []
            for out in outs:
                with open(os.path.join(out, "results", variant, f"{seed}.csv")) as fh:
                    rows = [ln.split(",") for ln in fh.read().splitlines()]
                for row in rows[1:]:
                    row[wall_col] = ""
                texts.append("\n".join(",".join(r) for r in rows))
            compared += 1
            identical = identical and texts[0] == texts[1]
    summaries = []
    for out in outs:
        payload = json.loads((out / "summary.json").read_text())
        for entry in payload["variants"].values():
            entry.pop("mean_epoch_seconds", None)
        summaries.append(payload)
    ok = identical and compared == 4 and summaries[0] == summaries[1]
    record_criterion(12, "identical CSV bytes across reruns (wall-time column aside)",
                     ok, f"{compared} report files compared, identical: {identical}, "
                         f"summaries match: {summaries[0] == summaries[1]}")
