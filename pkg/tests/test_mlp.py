import logging

import numpy as np
import pytest

from oracles import finite_difference_gradients
from pororom.mlp import (MlpParams, TrainingDivergedError, backward, forward,
                         init_mlp, loss_mse, predict_coefficients, train)

RNG = np.random.default_rng(3)
X60 = RNG.uniform(size=(60, 2))
Y_LIN = np.column_stack([0.3 * X60[:, 0] - 0.2 * X60[:, 1] + 0.1,
                         0.5 * X60[:, 1]])


def test_init_shapes_and_glorot_bounds():
    params = init_mlp(3, 7, in_dim=3, out_dim=10, seed=0)
    assert params.layer_sizes == [3, 7, 7, 7, 10]
    assert [W.shape for W in params.weights] == [(7, 3), (7, 7), (7, 7),
                                                 (10, 7)]
    for W, b in zip(params.weights, params.biases):
        lim = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        assert np.abs(W).max() <= lim
        assert np.all(b == 0.0)


def test_init_is_seeded():
    a = init_mlp(2, 5, 3, 2, seed=4)
    b = init_mlp(2, 5, 3, 2, seed=4)
    c = init_mlp(2, 5, 3, 2, seed=5)
    for Wa, Wb in zip(a.weights, b.weights):
        assert np.array_equal(Wa, Wb)
    assert not np.array_equal(a.weights[0], c.weights[0])


@pytest.mark.parametrize("n_hidden", [1, 3, 5])
def test_backprop_matches_finite_differences(n_hidden):
    params = init_mlp(n_hidden, 4, in_dim=2, out_dim=3, seed=n_hidden)
    X = RNG.normal(size=(5, 2))
    Y = RNG.normal(size=(5, 3))
    gw, gb = backward(params, X, Y)
    fw, fb = finite_difference_gradients(lambda p: loss_mse(p, X, Y), params)
    scale = max(np.abs(g).max() for g in fw)
    for g, f in zip(gw + gb, fw + fb):
        assert np.abs(g - f).max() / scale < 1e-5


def test_forward_input_checks():
    params = init_mlp(1, 4, 2, 2, seed=0)
    with pytest.raises(ValueError, match="width"):
        forward(params, np.ones((3, 5)))
    with pytest.raises(ValueError, match="non-finite"):
        forward(params, np.array([[1.0, np.nan]]))


def test_param_container_validation():
    with pytest.raises(ValueError, match="pair up"):
        MlpParams(weights=[np.ones((2, 2))], biases=[])
    with pytest.raises(ValueError, match="activation"):
        MlpParams(weights=[np.ones((2, 2))], biases=[np.zeros(2)],
                  activation="sigmoid")
    with pytest.raises(ValueError, match="at least 1"):
        init_mlp(0, 4, 2, 2)


def test_training_fits_a_constant_target():
    Y = np.full((60, 2), 0.7)
    params = init_mlp(1, 4, 2, 2, seed=1)
    best, report = train(params, X60, Y, epochs=2500, seed=5, batch_size=64,
                         learning_rate=1e-2)
    assert loss_mse(best, X60, Y) < 1e-4
    assert report.best_val_loss == report.val_loss.min()
    assert report.n_train + report.n_val == 60


def test_training_fits_a_linear_target():
    params = init_mlp(1, 8, 2, 2, seed=2)
    best, _ = train(params, X60, Y_LIN, epochs=2000, seed=5, batch_size=16,
                    learning_rate=3e-3)
    assert loss_mse(best, X60, Y_LIN) < 1e-4


def test_training_is_bit_reproducible():
    runs = []
    for _ in range(2):
        params = init_mlp(2, 6, 2, 2, seed=9)
        best, report = train(params, X60, Y_LIN, epochs=40, seed=7)
        runs.append((best, report))
    for Wa, Wb in zip(runs[0][0].weights, runs[1][0].weights):
        assert np.array_equal(Wa, Wb)
    assert np.array_equal(runs[0][1].val_loss, runs[1][1].val_loss)


def test_exploding_step_raises():
    params = init_mlp(2, 8, 2, 2, seed=3, activation="relu")
    with np.errstate(all="ignore"), \
            pytest.raises(TrainingDivergedError, match="non-finite"):
        train(params, X60, Y_LIN, epochs=3, seed=5, learning_rate=1e200)


def test_train_argument_validation():
    params = init_mlp(1, 4, 2, 2, seed=0)
    with pytest.raises(ValueError, match="matching"):
        train(params, X60, Y_LIN[:-1], epochs=1)
    with pytest.raises(ValueError, match="epoch"):
        train(params, X60, Y_LIN, epochs=0)
    with pytest.raises(ValueError, match="val_fraction"):
        train(params, X60, Y_LIN, epochs=1, val_fraction=1.0)
    with pytest.raises(ValueError, match="no training rows"):
        train(params, X60[:2], Y_LIN[:2], epochs=1, val_fraction=0.9)


def identity_net():
    # relu with inputs shifted far into the positive regime acts as the
    # identity on [0, 1]^2, so every number below is hand arithmetic
    return MlpParams(weights=[np.eye(2), np.eye(2)],
                     biases=[np.full(2, 10.0), np.full(2, -10.0)],
                     activation="relu")


def test_predict_coefficients_denormalizes():
    in_ranges = np.array([[0.0, 10.0], [-16.0, -12.0]])
    out_ranges = np.array([[0.0, 10.0], [-16.0, -12.0]])
    out = predict_coefficients(identity_net(), in_ranges, out_ranges,
                               t=5.0, mu=[1e-14], in_log=[False, True])
    assert np.allclose(out, [5.0, -14.0], atol=1e-12)


def test_predict_coefficients_clamps_and_warns(caplog):
    in_ranges = np.array([[0.0, 10.0], [0.0, 1.0]])
    out_ranges = np.array([[0.0, 10.0], [0.0, 1.0]])
    with caplog.at_level(logging.WARNING, logger="pororom.mlp"):
        out = predict_coefficients(identity_net(), in_ranges, out_ranges,
                                   t=20.0, mu=[0.5])
    assert any("clamping" in rec.message for rec in caplog.records)
    assert np.allclose(out, [10.0, 0.5], atol=1e-12)


def test_predict_coefficients_argument_checks():
    ranges = np.array([[0.0, 1.0], [0.0, 1.0]])
    with pytest.raises(ValueError, match="ranges are required"):
        predict_coefficients(identity_net(), None, ranges, t=0.5, mu=[0.5])
    with pytest.raises(ValueError, match="parameter components"):
        predict_coefficients(identity_net(), ranges, ranges, t=0.5,
                             mu=[0.5, 0.5])
