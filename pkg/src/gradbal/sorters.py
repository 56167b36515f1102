"""Example-order sorters: gradient-balancing variants plus random reshuffling.

Each sorter consumes per-sample gradients batch-by-batch during an epoch
(`step`) and emits the next epoch's permutation (`next_epoch`). The
balancing variants assign each example a sign via a kernel from
:mod:`gradbal.kernels` and convert signs to positions with a two-cursor
rule: +1 examples fill the order from the front, -1 examples from the back
(so the back region ends up in reversed arrival order). Keeping signed
prefix sums small this way drives down the herding discrepancy of the
emitted order.

Variants:

* random_reshuffle: ignores gradients, fresh seeded shuffle each epoch.
* mean_balance: balances g - stale_mean per example against one
  accumulator, updated as it goes. O(n) kernel calls, O(d) memory.
* pair_balance: balances differences of consecutive examples (pairs span
  batch boundaries); the pair's sign goes to the first member, its
  negation to the second. No stale mean. An odd leftover example is
  balanced solo at epoch end.
* batch_balance: computes all signs in a batch against the accumulator
  frozen at batch start, then applies one bulk update. Within-batch row
  order therefore cannot affect the sign an example receives.
* recursive_balance: each centered gradient descends a depth-D binary
  tree of accumulators (left on +1, right on -1), landing in one of 2^D
  leaves; leaves are concatenated in index order, with the deepest sign
  picking the front or back of the leaf's slice.
* recursive_pair_balance: pair differences recurse through the tree one
  level per halving of the batch (depth min(D, log2 B)); +1 members go to
  the left subgroup. Batch size must be a power of 2.
"""

from __future__ import annotations

import collections
import enum
import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataFormatError
from .kernels import Balancer, KernelConfig


class Variant(enum.Enum):
    RANDOM_RESHUFFLE = "random_reshuffle"
    MEAN_BALANCE = "mean_balance"
    PAIR_BALANCE = "pair_balance"
    BATCH_BALANCE = "batch_balance"
    RECURSIVE_BALANCE = "recursive_balance"
    RECURSIVE_PAIR_BALANCE = "recursive_pair_balance"


def parse_variant(name) -> Variant:
    """Accepts snake_case, kebab-case, or CamelCase variant names."""
    if isinstance(name, Variant):
        return name
    squashed = str(name).lower().replace("-", "").replace("_", "").replace(" ", "")
    for v in Variant:
        if v.value.replace("_", "") == squashed:
            return v
    known = ", ".join(v.value for v in Variant)
    raise ConfigError(f"unknown ordering variant {name!r} (known: {known})")


@dataclass
class GradientMatrix:
    """A batch of per-sample flattened gradients with their example ids."""

    rows: np.ndarray
    example_ids: np.ndarray

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float64)
        self.example_ids = np.ascontiguousarray(self.example_ids, dtype=np.int64)
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise ValueError(f"gradient rows must be a nonempty 2-d array, got shape {self.rows.shape}")
        if self.example_ids.shape != (self.rows.shape[0],):
            raise ValueError(
                f"example_ids shape {self.example_ids.shape} does not match {self.rows.shape[0]} rows"
            )
        if len(np.unique(self.example_ids)) != len(self.example_ids):
            raise ValueError("duplicate example ids within a batch")

    @property
    def batch_size(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


class AccumulatorTree:
    """Complete binary tree of 2^(depth+1) - 1 accumulators, level order.

    Stored as one (node_count, dim) array so kernels can walk it without
    indirection. Node (level, j) lives at flat index 2^level - 1 + j.
    """

    def __init__(self, depth: int, dim: int):
        if depth < 1:
            raise ConfigError(f"tree depth must be >= 1, got {depth}")
        if dim < 1:
            raise ConfigError(f"tree dimension must be >= 1, got {dim}")
        self.depth = int(depth)
        self.dim = int(dim)
        self.values = np.zeros((2 ** (self.depth + 1) - 1, self.dim), dtype=np.float64)

    @property
    def node_count(self) -> int:
        return self.values.shape[0]

    @property
    def leaf_count(self) -> int:
        return 2**self.depth

    def node(self, level: int, index: int) -> np.ndarray:
        if not 0 <= level <= self.depth:
            raise IndexError(f"level {level} outside [0, {self.depth}]")
        if not 0 <= index < 2**level:
            raise IndexError(f"index {index} outside level {level}")
        return self.values[(1 << level) - 1 + index]

    def reset(self):
        self.values[:] = 0.0


@dataclass
class HerdingStats:
    """Read-only balancing diagnostics; counters are cumulative."""

    variant: str
    epoch_index: int
    acc_l2: float
    acc_linf: float
    overflow_count: int
    kernel_calls: int
    plus_count: int
    minus_count: int

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


def save_permutation(path, order):
    """One index per line, text."""
    order = np.asarray(order, dtype=np.int64)
    with open(path, "w", encoding="ascii") as fh:
        for idx in order:
            fh.write(f"{int(idx)}\n")


def load_permutation(path) -> np.ndarray:
    values = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(int(line))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: not an integer: {line!r}") from None
    order = np.array(values, dtype=np.int64)
    if len(order) == 0:
        raise DataFormatError(f"{path}: no indices found")
    if not np.array_equal(np.sort(order), np.arange(len(order))):
        raise DataFormatError(f"{path}: indices are not a permutation of 0..{len(order) - 1}")
    return order


class Sorter:
    """Base protocol: step() per batch, next_epoch() once all n are seen."""

    variant: Variant
    uses_stale_mean = False  # subclasses that center by the stale mean flip this

    def __init__(self, n: int, dim: int, kernel: KernelConfig | None = None, seed: int = 0,
                 backend: str | None = None):
        if n < 1:
            raise ConfigError(f"example count must be >= 1, got {n}")
        if dim < 1:
            raise ConfigError(f"gradient dimension must be >= 1, got {dim}")
        self.n = int(n)
        self.dim = int(dim)
        self.kernel = kernel if kernel is not None else KernelConfig()
        self._rng = np.random.default_rng(seed)
        self._balancer = self._make_balancer(backend)
        self.order = self._rng.permutation(self.n).astype(np.int64)
        self.stale_mean = np.zeros(self.dim, dtype=np.float64)
        self.running_sum = np.zeros(self.dim, dtype=np.float64)
        self.epoch_index = 0
        self._seen = np.zeros(self.n, dtype=bool)
        self._seen_count = 0
        self._plus = 0
        self._minus = 0
        self._reset_placement()

    # -- hooks ---------------------------------------------------------

    def _make_balancer(self, backend):
        return Balancer(self.kernel, self.dim, backend=backend)

    def _reset_placement(self):
        self._next_order = np.full(self.n, -1, dtype=np.int64)
        self._front = 0
        self._back = self.n - 1

    def _consume(self, grads: GradientMatrix):
        raise NotImplementedError

    def _finalize_epoch(self):
        """Variant hook run at next_epoch before the order is emitted."""

    def _emit(self) -> np.ndarray:
        if self._front != self._back + 1:
            raise AssertionError(
                f"placement cursors did not meet: front={self._front} back={self._back}"
            )
        return self._next_order

    def _zero_state(self):
        """Variant hook: clear accumulators for the next epoch."""

    # -- protocol ------------------------------------------------------

    def step(self, grads: GradientMatrix):
        if not isinstance(grads, GradientMatrix):
            raise TypeError(f"step expects a GradientMatrix, got {type(grads).__name__}")
        if grads.dim != self.dim:
            raise ValueError(f"gradient dimension {grads.dim} does not match sorter dimension {self.dim}")
        ids = grads.example_ids
        if ids.min() < 0 or ids.max() >= self.n:
            raise ValueError(f"example ids must lie in [0, {self.n}), got range [{ids.min()}, {ids.max()}]")
        if self._seen[ids].any():
            dup = ids[self._seen[ids]][0]
            raise ValueError(f"example {dup} was already stepped this epoch")
        self._seen[ids] = True
        self._seen_count += len(ids)
        self.running_sum += grads.rows.sum(axis=0)
        self._consume(grads)

    def next_epoch(self) -> np.ndarray:
        if self._seen_count != self.n:
            missing = self.n - self._seen_count
            raise ValueError(f"epoch incomplete: {missing} of {self.n} examples not yet stepped")
        self._finalize_epoch()
        order = self._emit().copy()
        if self.uses_stale_mean:
            self.stale_mean = self.running_sum / self.n
        self.running_sum = np.zeros(self.dim, dtype=np.float64)
        self._seen[:] = False
        self._seen_count = 0
        self._zero_state()
        self._reset_placement()
        if self._balancer is not None:
            self._balancer.begin_epoch()
        self.epoch_index += 1
        self.order = order
        return order

    # -- placement -----------------------------------------------------

    def _place_batch(self, ids, signs):
        """Two-cursor placement of a batch, equivalent to one-at-a-time."""
        plus = signs > 0
        front_ids = ids[plus]
        back_ids = ids[~plus]
        k, m = len(front_ids), len(back_ids)
        self._next_order[self._front:self._front + k] = front_ids
        if m:
            self._next_order[self._back - m + 1:self._back + 1] = back_ids[::-1]
        self._front += k
        self._back -= m
        self._plus += k
        self._minus += m
        if self._front > self._back + 1:
            raise AssertionError("placement cursors crossed")

    # -- diagnostics ----------------------------------------------------

    def _acc_norms(self):
        return 0.0, 0.0

    @property
    def accumulator_slots(self) -> int:
        return 0

    def herding_stats(self) -> HerdingStats:
        l2, linf = self._acc_norms()
        overflow = self._balancer.overflow_count if self._balancer is not None else 0
        calls = self._balancer.call_count if self._balancer is not None else 0
        return HerdingStats(
            variant=self.variant.value,
            epoch_index=self.epoch_index,
            acc_l2=float(l2),
            acc_linf=float(linf),
            overflow_count=int(overflow),
            kernel_calls=int(calls),
            plus_count=self._plus,
            minus_count=self._minus,
        )


class RandomReshuffleSorter(Sorter):
    """Gradient-blind baseline: a fresh seeded shuffle every epoch."""

    variant = Variant.RANDOM_RESHUFFLE

    def _make_balancer(self, backend):
        return None

    def _consume(self, grads):
        pass

    def _emit(self):
        return self._rng.permutation(self.n).astype(np.int64)


class _FlatSorter(Sorter):
    """Shared state for the single-accumulator variants."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._acc = np.zeros(self.dim, dtype=np.float64)

    def _zero_state(self):
        self._acc[:] = 0.0

    def _acc_norms(self):
        return float(np.linalg.norm(self._acc)), float(np.abs(self._acc).max())

    @property
    def accumulator_slots(self) -> int:
        return 1


class MeanBalanceSorter(_FlatSorter):
    variant = Variant.MEAN_BALANCE
    uses_stale_mean = True

    def _consume(self, grads):
        vecs = grads.rows - self.stale_mean
        signs = self._balancer.balance(self._acc, vecs)
        self._place_batch(grads.example_ids, signs)


class PairBalanceSorter(_FlatSorter):
    variant = Variant.PAIR_BALANCE

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._held_id = None
        self._held_row = None

    def _consume(self, grads):
        rows, ids = grads.rows, grads.example_ids
        if self._held_id is not None:
            rows = np.concatenate([self._held_row[None, :], rows])
            ids = np.concatenate([np.array([self._held_id], dtype=np.int64), ids])
            self._held_id = None
            self._held_row = None
        npairs = len(rows) // 2
        if len(rows) % 2:
            self._held_id = int(ids[-1])
            self._held_row = rows[-1].copy()
        if npairs == 0:
            return
        diffs = rows[0:2 * npairs:2] - rows[1:2 * npairs:2]
        pair_signs = self._balancer.balance(self._acc, diffs)
        signs = np.empty(2 * npairs, dtype=np.int8)
        signs[0::2] = pair_signs
        signs[1::2] = -pair_signs
        self._place_batch(ids[:2 * npairs], signs)

    def _finalize_epoch(self):
        if self._held_id is None:
            return
        # odd example count: balance the leftover solo against a zero mean
        sign = self._balancer.balance(self._acc, self._held_row[None, :])
        self._place_batch(np.array([self._held_id], dtype=np.int64), sign)
        self._held_id = None
        self._held_row = None


class BatchBalanceSorter(_FlatSorter):
    variant = Variant.BATCH_BALANCE
    uses_stale_mean = True

    def _consume(self, grads):
        vecs = grads.rows - self.stale_mean
        signs = self._balancer.frozen_signs(self._acc, vecs)
        self._acc += vecs.T @ signs.astype(np.float64)
        self._place_batch(grads.example_ids, signs)


class _TreeSorter(Sorter):
    """Shared state for the tree variants: nodes plus per-leaf deques."""

    def __init__(self, n, dim, kernel=None, depth=None, seed=0, backend=None):
        if depth is None:
            raise ConfigError(f"{self.variant.value} requires a tree depth")
        self.tree = AccumulatorTree(depth, dim)
        super().__init__(n, dim, kernel=kernel, seed=seed, backend=backend)

    def _zero_state(self):
        self.tree.reset()

    def _reset_placement(self):
        # leaf loads are data-dependent, so positions are deques rather
        # than a pre-sized array; front pushes go to the deque front
        self._leaves = [collections.deque() for _ in range(self.tree.leaf_count)]

    def _emit(self):
        total = sum(len(d) for d in self._leaves)
        if total != self.n:
            raise AssertionError(f"leaf deques hold {total} entries, expected {self.n}")
        return np.fromiter(itertools.chain.from_iterable(self._leaves), dtype=np.int64, count=total)

    def _place_leaf(self, example_id, leaf, sign):
        if sign > 0:
            self._leaves[leaf].appendleft(example_id)
            self._plus += 1
        else:
            self._leaves[leaf].append(example_id)
            self._minus += 1

    def _acc_norms(self):
        norms = np.linalg.norm(self.tree.values, axis=1)
        return float(norms.max()), float(np.abs(self.tree.values).max())

    @property
    def accumulator_slots(self) -> int:
        return self.tree.node_count


class RecursiveBalanceSorter(_TreeSorter):
    variant = Variant.RECURSIVE_BALANCE
    uses_stale_mean = True

    def _consume(self, grads):
        vecs = grads.rows - self.stale_mean
        leaves, last_signs = self._balancer.descend(self.tree.values, vecs, self.tree.depth)
        for ex, leaf, sign in zip(grads.example_ids, leaves, last_signs):
            self._place_leaf(int(ex), int(leaf), int(sign))


class RecursivePairBalanceSorter(_TreeSorter):
    variant = Variant.RECURSIVE_PAIR_BALANCE

    def _consume(self, grads):
        rows, ids = grads.rows, grads.example_ids
        b = len(rows)
        if b < 2 or b & (b - 1):
            raise ValueError(
                f"recursive pair balance requires a power-of-2 batch size >= 2, got {b}"
            )
        levels = min(self.tree.depth, b.bit_length() - 1)
        groups = [(0, np.arange(b))]
        for level in range(levels):
            base = (1 << level) - 1
            next_groups = []
            updates = []
            for j, members in groups:
                firsts = members[0::2]
                seconds = members[1::2]
                diffs = rows[firsts] - rows[seconds]
                # node frozen while this level's signs are computed
                signs = self._balancer.frozen_signs(self.tree.values[base + j], diffs)
                updates.append((base + j, diffs.T @ signs.astype(np.float64)))
                plus = signs > 0
                left = np.where(plus, firsts, seconds)
                right = np.where(plus, seconds, firsts)
                next_groups.append((2 * j, left))
                next_groups.append((2 * j + 1, right))
            for idx, delta in updates:
                self.tree.values[idx] += delta
            groups = next_groups
        shift = self.tree.depth - levels
        for j, members in groups:
            leaf = j << shift
            sign = 1 if j % 2 == 0 else -1
            for row_idx in members:
                self._place_leaf(int(ids[row_idx]), leaf, sign)


_SORTERS = {
    Variant.RANDOM_RESHUFFLE: RandomReshuffleSorter,
    Variant.MEAN_BALANCE: MeanBalanceSorter,
    Variant.PAIR_BALANCE: PairBalanceSorter,
    Variant.BATCH_BALANCE: BatchBalanceSorter,
    Variant.RECURSIVE_BALANCE: RecursiveBalanceSorter,
    Variant.RECURSIVE_PAIR_BALANCE: RecursivePairBalanceSorter,
}

_TREE_VARIANTS = frozenset({Variant.RECURSIVE_BALANCE, Variant.RECURSIVE_PAIR_BALANCE})


def new_sorter(variant, n, dim, kernel: KernelConfig | None = None, depth: int | None = None,
               seed: int = 0, backend: str | None = None) -> Sorter:
    """Build the sorter for a variant; depth is required iff recursive."""
    variant = parse_variant(variant)
    cls = _SORTERS[variant]
    if variant in _TREE_VARIANTS:
        if depth is None:
            raise ConfigError(f"{variant.value} requires depth >= 1")
        return cls(n, dim, kernel=kernel, depth=depth, seed=seed, backend=backend)
    if depth is not None:
        raise ConfigError(f"{variant.value} does not take a tree depth")
    return cls(n, dim, kernel=kernel, seed=seed, backend=backend)
