import numpy as np
import pytest

from gradbal.errors import ConfigError
from gradbal.models import (
    BinaryLogistic,
    LinearRegression,
    ModelParams,
    MultinomialLogistic,
    TwoLayerTanh,
    make_model,
)

RNG = np.random.default_rng(20240817)


def small_models():
    return [
        (LinearRegression(3), None),
        (BinaryLogistic(3), 2),
        (MultinomialLogistic(3, 4), 4),
        (TwoLayerTanh(3, 3, hidden=4), 3),
    ]


def random_batch(model, class_count, b, rng):
    X = rng.standard_normal((b, model.feature_dim))
    if class_count is None:
        y = rng.standard_normal(b)
    else:
        y = rng.integers(0, class_count, size=b)
    return X, y


def random_params(model, rng):
    if isinstance(model, TwoLayerTanh):
        return model.init_params(seed=int(rng.integers(1 << 30)))
    p = model.init_params()
    p.theta[:] = rng.standard_normal(p.dim)
    return p


# -- params container --------------------------------------------------


def test_params_layout_must_partition():
    ModelParams(np.zeros(5), {"a": (0, 2), "b": (2, 5)})
    with pytest.raises(ValueError):
        ModelParams(np.zeros(5), {"a": (0, 2), "b": (3, 5)})  # gap
    with pytest.raises(ValueError):
        ModelParams(np.zeros(5), {"a": (0, 3), "b": (2, 5)})  # overlap
    with pytest.raises(ValueError):
        ModelParams(np.zeros(5), {"a": (0, 2)})  # short
    with pytest.raises(ValueError):
        ModelParams(np.zeros((2, 2)), {"a": (0, 4)})  # not flat


def test_params_block_is_a_view():
    p = ModelParams(np.zeros(4), {"w": (0, 3), "b": (3, 4)})
    p.block("w")[:] = 7.0
    np.testing.assert_array_equal(p.theta, [7.0, 7.0, 7.0, 0.0])
    q = p.copy()
    q.theta[0] = -1.0
    assert p.theta[0] == 7.0


# -- closed-form values ------------------------------------------------


def test_losses_at_zero_params_are_log_class_count():
    X = RNG.standard_normal((6, 3))
    logistic = BinaryLogistic(3)
    mean, per = logistic.loss(logistic.init_params(), X, np.array([0, 1, 1, 0, 1, 0]))
    np.testing.assert_allclose(per, np.log(2.0), rtol=1e-15)
    assert mean == pytest.approx(np.log(2.0))

    multi = MultinomialLogistic(3, 5)
    _, per = multi.loss(multi.init_params(), X, np.arange(6) % 5)
    np.testing.assert_allclose(per, np.log(5.0), rtol=1e-15)

    # zero weights silence the hidden layer too
    mlp = TwoLayerTanh(3, 4, hidden=8)
    zero = ModelParams(np.zeros(mlp.param_dim), dict(mlp.layout))
    _, per = mlp.loss(zero, X, np.arange(6) % 4)
    np.testing.assert_allclose(per, np.log(4.0), rtol=1e-15)


def test_logistic_gradient_hand_value():
    # at theta = 0 and y = 1 the sigmoid is 1/2, so the row is -[x, 1]/2
    m = BinaryLogistic(3)
    x = np.array([[0.5, -2.0, 1.0]])
    g = m.per_sample_grads(m.init_params(), x, np.array([1]), np.array([0]))
    np.testing.assert_allclose(g.rows[0], [-0.25, 1.0, -0.5, -0.5], rtol=1e-15)


def test_linreg_interpolating_params_give_zero_loss():
    X = RNG.standard_normal((8, 3))
    w = np.array([1.0, -2.0, 0.5])
    y = X @ w + 3.0
    m = LinearRegression(3)
    p = m.init_params()
    p.block("w")[:] = w
    p.block("b")[:] = 3.0
    mean, per = m.loss(p, X, y)
    assert mean < 1e-28
    g = m.per_sample_grads(p, X, y, np.arange(8))
    assert np.abs(g.rows).max() < 1e-13
    np.testing.assert_allclose(m.predict(p, X), y, rtol=1e-14)


def test_linreg_gradient_matches_normal_equations():
    X = RNG.standard_normal((20, 4))
    y = RNG.standard_normal(20)
    m = LinearRegression(4)
    p = m.init_params()
    p.theta[:] = RNG.standard_normal(p.dim)
    rows = m.per_sample_grads(p, X, y, np.arange(20)).rows
    A = np.hstack([X, np.ones((20, 1))])
    r = A @ p.theta - y
    np.testing.assert_allclose(rows.mean(axis=0), A.T @ r / 20, rtol=1e-12)


# -- structural properties ---------------------------------------------


def test_mean_loss_equals_mean_of_per_example_losses():
    for model, cc in small_models():
        p = random_params(model, RNG)
        X, y = random_batch(model, cc, 9, RNG)
        mean, per = model.loss(p, X, y)
        assert per.shape == (9,)
        assert mean == pytest.approx(per.mean(), rel=1e-15)


def test_grad_rows_shape_and_ids_pass_through():
    for model, cc in small_models():
        p = random_params(model, RNG)
        X, y = random_batch(model, cc, 5, RNG)
        ids = np.array([3, 1, 4, 0, 2])
        g = model.per_sample_grads(p, X, y, ids)
        assert g.rows.shape == (5, p.dim)
        np.testing.assert_array_equal(g.example_ids, ids)


def test_duplicated_example_gets_identical_rows():
    for model, cc in small_models():
        p = random_params(model, RNG)
        X, y = random_batch(model, cc, 1, RNG)
        Xr = np.repeat(X, 4, axis=0)
        yr = np.repeat(y, 4)
        rows = model.per_sample_grads(p, Xr, yr, np.arange(4)).rows
        for k in range(1, 4):
            np.testing.assert_array_equal(rows[k], rows[0])


def test_grad_and_loss_are_pure():
    for model, cc in small_models():
        p = random_params(model, RNG)
        X, y = random_batch(model, cc, 6, RNG)
        before = p.theta.copy()
        xb = X.copy()
        r1 = model.per_sample_grads(p, X, y, np.arange(6)).rows
        l1 = model.loss(p, X, y)[1]
        r2 = model.per_sample_grads(p, X, y, np.arange(6)).rows
        np.testing.assert_array_equal(p.theta, before)
        np.testing.assert_array_equal(X, xb)
        np.testing.assert_array_equal(r1, r2)
        np.testing.assert_array_equal(l1, model.loss(p, X, y)[1])


def test_per_sample_grads_match_central_differences():
    # every coordinate of every row, h scaled to the parameter magnitude
    rng = np.random.default_rng(99)
    for model, cc in small_models():
        p = random_params(model, rng)
        X, y = random_batch(model, cc, 3, rng)
        rows = model.per_sample_grads(p, X, y, np.arange(3)).rows
        fd = np.empty_like(rows)
        for i in range(p.dim):
            h = 1e-5 * max(1.0, abs(p.theta[i]))
            p.theta[i] += h
            up = model.loss(p, X, y)[1]
            p.theta[i] -= 2 * h
            down = model.loss(p, X, y)[1]
            p.theta[i] += h
            fd[:, i] = (up - down) / (2 * h)
        err = np.abs(rows - fd) / np.maximum(np.abs(fd), 1e-8)
        assert err.max() < 1e-4, f"{model.kind}: max rel err {err.max():.2e}"


# -- prediction and validation -----------------------------------------


def test_predict_and_accuracy():
    m = BinaryLogistic(2)
    p = m.init_params()
    p.block("w")[:] = [10.0, 0.0]
    X = np.array([[1.0, 0.0], [-1.0, 0.0], [2.0, 5.0]])
    np.testing.assert_array_equal(m.predict(p, X), [1, 0, 1])
    assert m.accuracy(p, X, np.array([1, 0, 1])) == 1.0
    assert m.accuracy(p, X, np.array([0, 0, 1])) == pytest.approx(2 / 3)
    assert np.isnan(LinearRegression(2).accuracy(p, X, np.zeros(3)))


def test_multinomial_predict_argmax():
    m = MultinomialLogistic(2, 3)
    p = m.init_params()
    p.block("b")[:] = [0.0, 1.0, -1.0]
    X = np.zeros((4, 2))
    np.testing.assert_array_equal(m.predict(p, X), [1, 1, 1, 1])


def test_input_validation():
    m = BinaryLogistic(3)
    p = m.init_params()
    with pytest.raises(ValueError, match="non-finite"):
        m.loss(p, np.array([[1.0, np.inf, 0.0]]), np.array([1]))
    with pytest.raises(ValueError, match=r"\(\*, 3\)"):
        m.loss(p, np.ones((2, 4)), np.array([0, 1]))
    with pytest.raises(ValueError, match="targets shape"):
        m.loss(p, np.ones((2, 3)), np.array([0, 1, 1]))
    with pytest.raises(ValueError, match=r"\[0, 2\)"):
        m.loss(p, np.ones((2, 3)), np.array([0, 2]))


def test_mlp_init_is_seeded():
    m = TwoLayerTanh(5, 3, hidden=7)
    a = m.init_params(seed=4)
    b = m.init_params(seed=4)
    c = m.init_params(seed=5)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, c.theta)
    np.testing.assert_array_equal(a.block("b1"), np.zeros(7))
    np.testing.assert_array_equal(a.block("b2"), np.zeros(3))


def test_make_model_dispatch_and_errors():
    assert make_model("linreg", 3).kind == "linreg"
    assert make_model("Logistic", 3).kind == "logistic"
    assert make_model("multinomial", 3, class_count=6).class_count == 6
    assert make_model("mlp", 3, class_count=3, hidden=9).hidden == 9
    with pytest.raises(ConfigError, match="unknown model kind"):
        make_model("tree", 3)
    with pytest.raises(ConfigError, match="binary"):
        make_model("logistic", 3, class_count=4)
    with pytest.raises(ConfigError):
        make_model("multinomial", 3, class_count=1)
    with pytest.raises(ConfigError):
        make_model("mlp", 3, class_count=3, hidden=0)
    with pytest.raises(ConfigError):
        LinearRegression(0)
