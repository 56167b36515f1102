"""Sign-assignment kernels for online vector balancing.

A balancing kernel decides, for a running accumulator ``a`` and an incoming
vector ``v``, which sign ``s`` keeps the signed running sum ``a + s*v``
small. Two kernels are provided:

* deterministic: ``s = +1`` iff ``<a, v> <= 0``, the L2-minimizing choice
  (ties, including the zero accumulator, break to +1). Guarantees
  ``||a + s*v||^2 <= ||a||^2 + ||v||^2`` at every step.
* probabilistic: ``P(s = +1) = clamp(0.5 * (1 - <a, v>/c), 0, 1)`` for a
  bound ``c > 0``; inner products beyond ``c`` clamp the probability and
  are tallied as overflows instead of raising.

All kernel arithmetic is float64 regardless of the caller's input dtype:
accumulators sum thousands of terms and the widening is cheap insurance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import ConfigError

# Automatic probabilistic bound: c = factor x the largest input norm seen in
# previous epochs, refreshed at each epoch boundary (first epoch bootstraps
# from its first batch).
AUTO_BOUND_FACTOR = 30.0


class Sign(enum.IntEnum):
    """Balancing sign; arithmetic use maps to the reals +1.0 / -1.0."""

    PLUS = 1
    MINUS = -1


class KernelKind(enum.Enum):
    DETERMINISTIC = "deterministic"
    PROBABILISTIC = "probabilistic"


@dataclass(frozen=True)
class KernelConfig:
    """Kernel selection plus the probabilistic kernel's knobs.

    ``c_bound``: positive bound on |<a, v>| (probabilistic only); ``None``
    selects the automatic per-epoch bound. ``seed`` drives the kernel's
    private uniform stream (probabilistic only).
    """

    kind: KernelKind = KernelKind.DETERMINISTIC
    c_bound: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.kind, KernelKind):
            raise ConfigError(f"kernel kind must be a KernelKind, got {self.kind!r}")
        if self.kind is KernelKind.DETERMINISTIC:
            if self.c_bound is not None:
                raise ConfigError("c_bound only applies to the probabilistic kernel")
        elif self.c_bound is not None and not self.c_bound > 0:
            raise ConfigError(f"c_bound must be positive, got {self.c_bound}")


@dataclass
class KernelCounters:
    """Mutable tallies kept across kernel invocations."""

    calls: int = 0
    overflow: int = 0


def _as_vector(v, dim):
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.shape != (dim,):
        raise ValueError(f"dimension mismatch: expected ({dim},), got {v.shape}")
    return v


class Accumulator:
    """d-dimensional running signed sum with a cached squared L2 norm."""

    __slots__ = ("values", "_norm_sq")

    def __init__(self, dim_or_values):
        if np.isscalar(dim_or_values):
            dim = int(dim_or_values)
            if dim < 1:
                raise ValueError(f"accumulator dimension must be >= 1, got {dim}")
            self.values = np.zeros(dim, dtype=np.float64)
            self._norm_sq = 0.0
        else:
            self.values = np.array(dim_or_values, dtype=np.float64)
            if self.values.ndim != 1 or self.values.shape[0] < 1:
                raise ValueError(f"accumulator values must be a 1-d vector, got shape {self.values.shape}")
            self._norm_sq = float(self.values @ self.values)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def norm_sq(self) -> float:
        if self._norm_sq is None:
            self._norm_sq = float(self.values @ self.values)
        return self._norm_sq

    def mark_dirty(self):
        """Invalidate the norm cache after an in-place backend update."""
        self._norm_sq = None

    def add(self, v, sign):
        """Apply ``values += sign * v`` and keep the norm cache consistent."""
        v = _as_vector(v, self.dim)
        s = int(sign)
        if s not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {sign!r}")
        if self._norm_sq is None:
            if s == 1:
                self.values += v
            else:
                self.values -= v
            return
        ip = float(self.values @ v)
        vv = float(v @ v)
        if s == 1:
            self.values += v
        else:
            self.values -= v
        new = self._norm_sq + 2.0 * s * ip + vv
        # heavy cancellation wipes the incremental estimate; recompute exactly
        if new < 1e-8 * (self._norm_sq + vv):
            new = float(self.values @ self.values)
        self._norm_sq = max(new, 0.0)

    def reset(self):
        self.values[:] = 0.0
        self._norm_sq = 0.0

    def __repr__(self):
        return f"Accumulator(dim={self.dim}, norm={np.sqrt(self.norm_sq):.4g})"


def deterministic_sign(acc: Accumulator, v) -> Sign:
    """L2-minimizing sign of ``v`` against ``acc``; pure, does not mutate."""
    v = _as_vector(v, acc.dim)
    return Sign.PLUS if float(acc.values @ v) <= 0.0 else Sign.MINUS


def probabilistic_sign(acc: Accumulator, v, cfg: KernelConfig, rng, counters=None) -> Sign:
    """Probabilistic sign of ``v`` against ``acc``; draws exactly one uniform.

    ``cfg`` must be probabilistic with an explicit ``c_bound`` (the automatic
    bound is an epoch-level policy owned by ``Balancer``). When
    ``|<a, v>| > c_bound`` the clamped decision is tallied on
    ``counters.overflow`` if counters are given. Does not mutate ``acc``.
    """
    if cfg.kind is not KernelKind.PROBABILISTIC:
        raise ConfigError("probabilistic_sign requires a probabilistic KernelConfig")
    if cfg.c_bound is None:
        raise ConfigError("probabilistic_sign requires an explicit c_bound")
    v = _as_vector(v, acc.dim)
    ip = float(acc.values @ v)
    u = rng.random()
    if counters is not None:
        counters.calls += 1
        if abs(ip) > cfg.c_bound:
            counters.overflow += 1
    p = min(max(0.5 * (1.0 - ip / cfg.c_bound), 0.0), 1.0)
    return Sign.PLUS if u < p else Sign.MINUS


def accumulate(acc: Accumulator, v, sign):
    """The update ``a <- a + s*v``."""
    acc.add(v, sign)


class Balancer:
    """Stateful engine running one kernel over batches of vectors.

    Owns the kernel's uniform stream, the call/overflow tallies, and the
    automatic-bound bookkeeping; dispatches the inner loops to the selected
    backend. A Balancer is single-owner: callers must serialize use.
    """

    def __init__(self, cfg: KernelConfig, dim: int, backend: str | None = None):
        self.cfg = cfg
        self.dim = int(dim)
        self.counters = KernelCounters()
        self._impl = _accel.get_impl(backend)
        self._rng = np.random.default_rng(cfg.seed)
        self._max_input_norm = 0.0
        self._epoch_c = cfg.c_bound  # None in auto mode until first use

    @property
    def probabilistic(self) -> bool:
        return self.cfg.kind is KernelKind.PROBABILISTIC

    @property
    def overflow_count(self) -> int:
        return self.counters.overflow

    @property
    def call_count(self) -> int:
        return self.counters.calls

    def begin_epoch(self):
        """Refresh the automatic bound from the norms seen so far."""
        if self.probabilistic and self.cfg.c_bound is None and self._max_input_norm > 0.0:
            self._epoch_c = AUTO_BOUND_FACTOR * self._max_input_norm

    def _as_batch(self, vecs):
        vecs = np.ascontiguousarray(vecs, dtype=np.float64)
        if vecs.ndim != 2 or vecs.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: expected (*, {self.dim}), got {vecs.shape}")
        return vecs

    def _bound_for(self, vecs) -> float:
        if self.cfg.c_bound is not None:
            return self.cfg.c_bound
        if self._epoch_c is None:
            # first balancing epoch: bootstrap from the first batch
            m = float(np.sqrt((vecs * vecs).sum(axis=1).max())) if len(vecs) else 0.0
            self._epoch_c = AUTO_BOUND_FACTOR * m if m > 0.0 else 1.0
        return self._epoch_c

    def _note_inputs(self, vecs):
        if self.cfg.c_bound is None and len(vecs):
            m = float(np.sqrt((vecs * vecs).sum(axis=1).max()))
            if m > self._max_input_norm:
                self._max_input_norm = m

    def balance(self, acc_values, vecs) -> np.ndarray:
        """Sequential sign-and-accumulate over rows; mutates ``acc_values``.

        Returns the int8 sign per row. The probabilistic kernel draws one
        uniform per row, in row order.
        """
        vecs = self._as_batch(vecs)
        signs = np.empty(len(vecs), dtype=np.int8)
        if len(vecs) == 0:
            return signs
        if self.probabilistic:
            c = self._bound_for(vecs)
            u = self._rng.random(len(vecs))
            self.counters.overflow += self._impl.prob_balance(acc_values, vecs, c, u, signs)
            self._note_inputs(vecs)
        else:
            self._impl.det_balance(acc_values, vecs, signs)
        self.counters.calls += len(vecs)
        return signs

    def frozen_signs(self, acc_values, vecs) -> np.ndarray:
        """Signs of each row against a frozen accumulator; no mutation."""
        vecs = self._as_batch(vecs)
        signs = np.empty(len(vecs), dtype=np.int8)
        if len(vecs) == 0:
            return signs
        if self.probabilistic:
            c = self._bound_for(vecs)
            u = self._rng.random(len(vecs))
            self.counters.overflow += self._impl.prob_signs_frozen(acc_values, vecs, c, u, signs)
            self._note_inputs(vecs)
        else:
            self._impl.det_signs_frozen(acc_values, vecs, signs)
        self.counters.calls += len(vecs)
        return signs

    def descend(self, nodes, vecs, depth: int):
        """Walk each row down the accumulator tree, mutating node values.

        Returns ``(leaves, last_signs)``: landing leaf in [0, 2**depth) and
        the deepest-level sign per row. Costs ``depth`` kernel calls per row.
        """
        vecs = self._as_batch(vecs)
        leaves = np.empty(len(vecs), dtype=np.int64)
        last_signs = np.empty(len(vecs), dtype=np.int8)
        if len(vecs) == 0:
            return leaves, last_signs
        if self.probabilistic:
            c = self._bound_for(vecs)
            u = self._rng.random(len(vecs) * depth)
            self.counters.overflow += self._impl.prob_tree_descend(
                nodes, vecs, depth, c, u, leaves, last_signs
            )
            self._note_inputs(vecs)
        else:
            self._impl.det_tree_descend(nodes, vecs, depth, leaves, last_signs)
        self.counters.calls += len(vecs) * depth
        return leaves, last_signs
