"""Small models with exact analytic per-sample gradients.

The ordering algorithms consume unaveraged gradient rows, one per example,
so every model here implements per-example backprop by hand instead of
relying on an autodiff engine that only exposes batch means. All math is
float64 and pure: same (params, batch) in, bit-identical values out.

Parameter vectors are flat; each model documents its block layout (the
flattening order is fixed and carried in ModelParams.layout).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .sorters import GradientMatrix


@dataclass
class ModelParams:
    """Flat parameter vector plus a named block layout.

    layout maps block name -> (start, stop); the ranges must partition
    0..dim exactly, in order.
    """

    theta: np.ndarray
    layout: dict

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 1:
            raise ValueError(f"theta must be flat, got shape {self.theta.shape}")
        spans = sorted(self.layout.values())
        cursor = 0
        for start, stop in spans:
            if start != cursor or stop <= start:
                raise ValueError(f"layout ranges do not partition 0..{self.theta.shape[0]}: {self.layout}")
            cursor = stop
        if cursor != self.theta.shape[0]:
            raise ValueError(f"layout covers 0..{cursor} but theta has dimension {self.theta.shape[0]}")

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def block(self, name: str) -> np.ndarray:
        start, stop = self.layout[name]
        return self.theta[start:stop]

    def copy(self) -> "ModelParams":
        return ModelParams(self.theta.copy(), dict(self.layout))


def _check_batch(X, y, feature_dim):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != feature_dim:
        raise ValueError(f"features must be (*, {feature_dim}), got {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("non-finite input features")
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise ValueError(f"targets shape {y.shape} does not match {X.shape[0]} examples")
    return X, y


def _check_labels(y, class_count):
    y = y.astype(np.int64, copy=False)
    if len(y) and (y.min() < 0 or y.max() >= class_count):
        raise ValueError(f"labels must lie in [0, {class_count})")
    return y


def _sigmoid(z):
    # tanh form is stable for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log_softmax(Z):
    zmax = Z.max(axis=1, keepdims=True)
    shifted = Z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class Model:
    """Interface: flat params in, losses and per-sample gradient rows out."""

    kind: str
    classification: bool

    def __init__(self, feature_dim: int):
        if feature_dim < 1:
            raise ConfigError(f"feature_dim must be >= 1, got {feature_dim}")
        self.feature_dim = int(feature_dim)

    @property
    def param_dim(self) -> int:
        return max(stop for _, stop in self.layout.values())

    def init_params(self, seed: int = 0) -> ModelParams:
        raise NotImplementedError

    def loss(self, params: ModelParams, X, y):
        """Returns (mean loss, per-example losses)."""
        losses = self._per_example_losses(params, *_check_batch(X, y, self.feature_dim))
        return float(losses.mean()), losses

    def per_sample_grads(self, params: ModelParams, X, y, example_ids) -> GradientMatrix:
        X, y = _check_batch(X, y, self.feature_dim)
        rows = self._grad_rows(params, X, y)
        return GradientMatrix(rows, np.asarray(example_ids, dtype=np.int64))

    def _per_example_losses(self, params, X, y):
        raise NotImplementedError

    def _grad_rows(self, params, X, y):
        raise NotImplementedError

    def predict(self, params: ModelParams, X):
        raise NotImplementedError

    def accuracy(self, params: ModelParams, X, y) -> float:
        if not self.classification:
            return float("nan")
        X, y = _check_batch(X, y, self.feature_dim)
        return float((self.predict(params, X) == y.astype(np.int64)).mean())


class LinearRegression(Model):
    """Least squares, per-example loss = 0.5 * (x.w + b - y)^2."""

    kind = "linreg"
    classification = False

    def __init__(self, feature_dim):
        super().__init__(feature_dim)
        self.layout = {"w": (0, feature_dim), "b": (feature_dim, feature_dim + 1)}

    def init_params(self, seed: int = 0) -> ModelParams:
        # convex objective: zero start, seed unused
        return ModelParams(np.zeros(self.param_dim), dict(self.layout))

    def _residual(self, params, X, y):
        return X @ params.block("w") + params.block("b")[0] - y.astype(np.float64)

    def _per_example_losses(self, params, X, y):
        return 0.5 * self._residual(params, X, y) ** 2

    def _grad_rows(self, params, X, y):
        r = self._residual(params, X, y)
        return np.hstack([r[:, None] * X, r[:, None]])

    def predict(self, params, X):
        X, _ = _check_batch(X, np.zeros(len(X)), self.feature_dim)
        return X @ params.block("w") + params.block("b")[0]


class BinaryLogistic(Model):
    """Labels in {0, 1}; per-example loss = softplus(z) - y*z, z = x.w + b."""

    kind = "logistic"
    classification = True

    def __init__(self, feature_dim):
        super().__init__(feature_dim)
        self.class_count = 2
        self.layout = {"w": (0, feature_dim), "b": (feature_dim, feature_dim + 1)}

    def init_params(self, seed: int = 0) -> ModelParams:
        return ModelParams(np.zeros(self.param_dim), dict(self.layout))

    def _logits(self, params, X):
        return X @ params.block("w") + params.block("b")[0]

    def _per_example_losses(self, params, X, y):
        y = _check_labels(y, 2)
        z = self._logits(params, X)
        return np.logaddexp(0.0, z) - y * z

    def _grad_rows(self, params, X, y):
        y = _check_labels(y, 2)
        s = _sigmoid(self._logits(params, X)) - y
        return np.hstack([s[:, None] * X, s[:, None]])

    def predict(self, params, X):
        X, _ = _check_batch(X, np.zeros(len(X)), self.feature_dim)
        return (self._logits(params, X) > 0.0).astype(np.int64)


class MultinomialLogistic(Model):
    """Softmax regression; blocks: W (class_count x feature_dim), b."""

    kind = "multinomial"
    classification = True

    def __init__(self, feature_dim, class_count):
        super().__init__(feature_dim)
        if class_count < 2:
            raise ConfigError(f"class_count must be >= 2, got {class_count}")
        self.class_count = int(class_count)
        wd = self.class_count * feature_dim
        self.layout = {"W": (0, wd), "b": (wd, wd + self.class_count)}

    def init_params(self, seed: int = 0) -> ModelParams:
        return ModelParams(np.zeros(self.param_dim), dict(self.layout))

    def _logits(self, params, X):
        W = params.block("W").reshape(self.class_count, self.feature_dim)
        return X @ W.T + params.block("b")

    def _per_example_losses(self, params, X, y):
        y = _check_labels(y, self.class_count)
        logp = _log_softmax(self._logits(params, X))
        return -logp[np.arange(len(y)), y]

    def _grad_rows(self, params, X, y):
        y = _check_labels(y, self.class_count)
        P = np.exp(_log_softmax(self._logits(params, X)))
        dZ = P
        dZ[np.arange(len(y)), y] -= 1.0
        dW = np.einsum("bc,bf->bcf", dZ, X).reshape(len(y), -1)
        return np.hstack([dW, dZ])

    def predict(self, params, X):
        X, _ = _check_batch(X, np.zeros(len(X)), self.feature_dim)
        return self._logits(params, X).argmax(axis=1).astype(np.int64)


class TwoLayerTanh(Model):
    """tanh hidden layer, softmax output, manual backprop.

    Blocks in flattening order: W1 (hidden x feature), b1, W2
    (class_count x hidden), b2. tanh keeps the loss smooth so central
    finite differences agree tightly everywhere.
    """

    kind = "mlp"
    classification = True

    def __init__(self, feature_dim, class_count, hidden=32):
        super().__init__(feature_dim)
        if class_count < 2:
            raise ConfigError(f"class_count must be >= 2, got {class_count}")
        if hidden < 1:
            raise ConfigError(f"hidden width must be >= 1, got {hidden}")
        self.class_count = int(class_count)
        self.hidden = int(hidden)
        h, f, c = self.hidden, feature_dim, self.class_count
        self.layout = {
            "W1": (0, h * f),
            "b1": (h * f, h * f + h),
            "W2": (h * f + h, h * f + h + c * h),
            "b2": (h * f + h + c * h, h * f + h + c * h + c),
        }

    def init_params(self, seed: int = 0) -> ModelParams:
        # tanh at zero is a saddle, so weights start at scaled Gaussians
        rng = np.random.default_rng(seed)
        theta = np.zeros(self.param_dim)
        params = ModelParams(theta, dict(self.layout))
        params.block("W1")[:] = rng.standard_normal(self.hidden * self.feature_dim) / np.sqrt(self.feature_dim)
        params.block("W2")[:] = rng.standard_normal(self.class_count * self.hidden) / np.sqrt(self.hidden)
        return params

    def _unpack(self, params):
        W1 = params.block("W1").reshape(self.hidden, self.feature_dim)
        b1 = params.block("b1")
        W2 = params.block("W2").reshape(self.class_count, self.hidden)
        b2 = params.block("b2")
        return W1, b1, W2, b2

    def _forward(self, params, X):
        W1, b1, W2, b2 = self._unpack(params)
        H = np.tanh(X @ W1.T + b1)
        return H, H @ W2.T + b2

    def _per_example_losses(self, params, X, y):
        y = _check_labels(y, self.class_count)
        _, Z = self._forward(params, X)
        return -_log_softmax(Z)[np.arange(len(y)), y]

    def _grad_rows(self, params, X, y):
        y = _check_labels(y, self.class_count)
        _, _, W2, _ = self._unpack(params)
        H, Z = self._forward(params, X)
        dZ = np.exp(_log_softmax(Z))
        dZ[np.arange(len(y)), y] -= 1.0
        dH = dZ @ W2
        dA = dH * (1.0 - H * H)
        b = len(y)
        dW1 = np.einsum("bh,bf->bhf", dA, X).reshape(b, -1)
        dW2 = np.einsum("bc,bh->bch", dZ, H).reshape(b, -1)
        return np.hstack([dW1, dA, dW2, dZ])

    def predict(self, params, X):
        X, _ = _check_batch(X, np.zeros(len(X)), self.feature_dim)
        _, Z = self._forward(params, X)
        return Z.argmax(axis=1).astype(np.int64)


_MODEL_KINDS = ("linreg", "logistic", "multinomial", "mlp")


def make_model(kind: str, feature_dim: int, class_count: int = 2, hidden: int = 32) -> Model:
    kind = str(kind).strip().lower()
    if kind == "linreg":
        return LinearRegression(feature_dim)
    if kind == "logistic":
        if class_count != 2:
            raise ConfigError(f"logistic is binary; got class_count={class_count} (use multinomial)")
        return BinaryLogistic(feature_dim)
    if kind == "multinomial":
        return MultinomialLogistic(feature_dim, class_count)
    if kind == "mlp":
        return TwoLayerTanh(feature_dim, class_count, hidden=hidden)
    raise ConfigError(f"unknown model kind {kind!r} (known: {', '.join(_MODEL_KINDS)})")
