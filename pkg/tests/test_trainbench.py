import csv
import io

import numpy as np
import pytest

from secagglab.errors import ConfigurationError, TrainingError
from secagglab.trainbench import (
    FLOAT_FEDAVG,
    MNIST_2NN,
    ModelSpec,
    SyntheticTask,
    evaluate,
    local_train,
    loss_and_grad,
    run_learning_comparison,
)

TINY = ModelSpec((4, 2), ("softmax",))  # 10 parameters


def test_2nn_parameter_count():
    assert MNIST_2NN.parameter_count == 199_210


def test_flatten_round_trip():
    spec = ModelSpec((5, 3, 2), ("relu", "softmax"))
    flat = np.arange(spec.parameter_count, dtype=np.float64)
    assert np.array_equal(spec.flatten(spec.unflatten(flat)), flat)
    with pytest.raises(ConfigurationError):
        spec.unflatten(flat[:-1])


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        ModelSpec((3, 2), ("relu", "softmax"))
    with pytest.raises(ConfigurationError):
        ModelSpec((3, 2), ("tanh",))


def _central_differences(spec, w, x, y, h=1e-6):
    g = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (loss_and_grad(spec, w + e, x, y)[0] - loss_and_grad(spec, w - e, x, y)[0]) / (2 * h)
    return g


@pytest.mark.parametrize("spec", [TINY, ModelSpec((3, 4, 2), ("relu", "identity"))])
def test_gradient_matches_finite_differences(spec):
    rng = np.random.default_rng(0)
    w = rng.normal(size=spec.parameter_count)
    x = rng.normal(size=(7, spec.layer_sizes[0]))
    y = rng.integers(0, spec.layer_sizes[-1], 7)
    analytic = loss_and_grad(spec, w, x, y)[1]
    numeric = _central_differences(spec, w, x, y)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
    assert np.max(rel) < 1e-4


def test_one_sgd_step_on_linear_model():
    spec = ModelSpec((3, 2), ("identity",))
    rng = np.random.default_rng(1)
    w = rng.normal(size=spec.parameter_count)
    x, y = rng.normal(size=(4, 3)), np.array([0, 1, 1, 0])
    _, g = loss_and_grad(spec, w, x, y)
    out = local_train(w, (x, y), epochs=1, learning_rate=0.1, spec=spec, batch_size=4)
    assert np.allclose(out, w - 0.1 * g, rtol=0, atol=1e-15)


def test_fitted_linear_model_is_a_fixed_point():
    spec = ModelSpec((2, 2), ("identity",))
    # identity weights, zero bias: outputs equal the one-hot inputs
    w = spec.flatten([(np.eye(2), np.zeros(2))])
    x, y = np.eye(2)[[0, 1, 1]], np.array([0, 1, 1])
    assert np.array_equal(local_train(w, (x, y), epochs=3, spec=spec), w)


def test_divergence_raises():
    spec = ModelSpec((2, 2), ("identity",))
    x, y = np.full((4, 2), 100.0), np.zeros(4, dtype=int)
    with pytest.raises(TrainingError):
        local_train(np.ones(spec.parameter_count), (x, y), epochs=50, learning_rate=1.0, spec=spec)


def test_local_training_is_deterministic():
    task = SyntheticTask()
    spec = ModelSpec((16, 8, 10), ("relu", "softmax"))
    w = spec.init(0)
    a = local_train(w, task.shard(3), spec=spec, seed=[0, 1, 3])
    assert np.array_equal(a, local_train(w, task.shard(3), spec=spec, seed=[0, 1, 3]))


def test_task_shards_are_one_label_and_disjoint():
    task = SyntheticTask(clients=12)
    shards = [task.shard(c) for c in range(12)]
    assert all(len(set(y)) == 1 for _, y in shards)
    assert {int(y[0]) for _, y in shards} == set(range(10))
    rows = np.concatenate([x for x, _ in shards])
    assert len(np.unique(rows, axis=0)) == len(rows)


def test_same_protocol_twice_gives_zero_difference():
    result = run_learning_comparison(SyntheticTask(), "accessfl", "accessfl", 3)
    assert result.max_model_diff == [0.0, 0.0, 0.0]


def test_quantized_protocols_track_each_other_exactly():
    result = run_learning_comparison(SyntheticTask(), "accessfl", "secaggplus", 3)
    assert result.max_model_diff == [0.0, 0.0, 0.0]


def test_learning_happens():
    result = run_learning_comparison(SyntheticTask(), "accessfl", FLOAT_FEDAVG, 10)
    arm = result.arms[0]
    assert arm.accuracies[-1] > arm.accuracies[0] + 0.3
    assert arm.losses[-1] < arm.losses[0]


def test_curve_csv():
    result = run_learning_comparison(SyntheticTask(), "accessfl", FLOAT_FEDAVG, 2)
    rows = list(csv.DictReader(io.StringIO(result.to_csv())))
    assert list(rows[0]) == ["round", "protocol", "loss", "accuracy", "max_model_diff"]
    assert [(r["round"], r["protocol"]) for r in rows] == [
        ("1", "accessfl"), ("1", FLOAT_FEDAVG), ("2", "accessfl"), ("2", FLOAT_FEDAVG)]


def test_curves_are_reproducible():
    a = run_learning_comparison(SyntheticTask(), "accessfl", FLOAT_FEDAVG, 3, seed=4)
    b = run_learning_comparison(SyntheticTask(), "accessfl", FLOAT_FEDAVG, 3, seed=4)
    assert a.to_csv() == b.to_csv()


def test_raw_sum_reading_matches_in_both_arms():
    task = SyntheticTask(clients=6, class_count=6)
    result = run_learning_comparison(task, "accessfl", FLOAT_FEDAVG, 1, average=False, learning_rate=0.01)
    assert result.max_model_diff[0] <= task.clients / (2 * 2**16)
    # the unaveraged global is |C| times larger than the averaged one
    averaged = run_learning_comparison(task, "accessfl", FLOAT_FEDAVG, 1, learning_rate=0.01)
    assert np.allclose(result.arms[1].weights, task.clients * averaged.arms[1].weights)


def test_evaluate_perfect_classifier():
    spec = ModelSpec((2, 2), ("softmax",))
    w = spec.flatten([(np.eye(2) * 50, np.zeros(2))])
    loss, acc = evaluate(spec, w, (np.eye(2), np.array([0, 1])))
    assert acc == 1.0 and loss < 1e-10
