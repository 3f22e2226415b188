"""Small federated training harness: numpy MLPs, a non-IID synthetic task and
side-by-side runs of two aggregation protocols on identical local training."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, TrainingError
from .masking import QuantizationConfig, dequantize, quantize
from .simnet import open_session

FLOAT_FEDAVG = "fedavg-float"  # unquantized averaging, no network


@dataclass(frozen=True)
class ModelSpec:
    """Dense network. ``activations`` has one entry per layer; the last is the output.

    Output ``softmax`` trains with cross-entropy, ``identity`` with half the
    mean squared error against one-hot targets.
    """

    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ConfigurationError("need at least an input and an output layer")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ConfigurationError("one activation per layer")
        hidden, out = self.activations[:-1], self.activations[-1]
        if any(a not in ("relu", "identity") for a in hidden) or out not in ("softmax", "identity"):
            raise ConfigurationError(f"unsupported activations {self.activations}")

    @property
    def shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        return [((a, b), (b,)) for a, b in zip(self.layer_sizes, self.layer_sizes[1:])]

    @property
    def parameter_count(self) -> int:
        return sum(a * b + b for (a, b), _ in self.shapes)

    def unflatten(self, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.parameter_count,):
            raise ConfigurationError(f"expected {self.parameter_count} parameters, got {flat.shape}")
        out, pos = [], 0
        for (a, b), _ in self.shapes:
            w = flat[pos : pos + a * b].reshape(a, b)
            pos += a * b
            out.append((w, flat[pos : pos + b]))
            pos += b
        return out

    @staticmethod
    def flatten(layers) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])

    def init(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        layers = [(rng.normal(0, np.sqrt(2.0 / a), (a, b)), np.zeros(b)) for (a, b), _ in self.shapes]
        return self.flatten(layers)


# two dense hidden layers of 200 units on 28x28 inputs
MNIST_2NN = ModelSpec((784, 200, 200, 10), ("relu", "relu", "softmax"))


def forward(spec: ModelSpec, flat: np.ndarray, x: np.ndarray) -> np.ndarray:
    h = x
    for (w, b), act in zip(spec.unflatten(flat), spec.activations):
        h = h @ w + b
        if act == "relu":
            h = np.maximum(h, 0)
    return h


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(spec: ModelSpec, flat: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and its gradient, by backpropagation."""
    layers = spec.unflatten(flat)
    acts, pre = [x], []
    for (w, b), act in zip(layers, spec.activations):
        z = acts[-1] @ w + b
        pre.append(z)
        acts.append(np.maximum(z, 0) if act == "relu" else z)
    n = x.shape[0]
    target = np.eye(spec.layer_sizes[-1])[y]
    if spec.activations[-1] == "softmax":
        p = _softmax(pre[-1])
        loss = -np.mean(np.log(p[np.arange(n), y] + 1e-300))
        delta = (p - target) / n
    else:
        diff = pre[-1] - target
        loss = 0.5 * np.mean(np.sum(diff**2, axis=1))
        delta = diff / n
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads.append((acts[i].T @ delta, delta.sum(axis=0)))
        if i:
            delta = delta @ w.T
            if spec.activations[i - 1] == "relu":
                delta = delta * (pre[i - 1] > 0)
    return float(loss), spec.flatten(grads[::-1])


def local_train(weights: np.ndarray, shard: tuple[np.ndarray, np.ndarray], epochs: int = 1,
                learning_rate: float = 0.1, *, spec: ModelSpec, batch_size: int = 32, seed=0) -> np.ndarray:
    """Mini-batch SGD on ``shard`` = (features, labels); deterministic per ``seed``."""
    x, y = shard
    w = np.array(weights, dtype=np.float64)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start : start + batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, g = loss_and_grad(spec, w, x[idx], y[idx])
            if not np.isfinite(loss) or not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite loss {loss} during local training")
            w -= learning_rate * g
    if not np.all(np.isfinite(w)):
        raise TrainingError("local training produced non-finite weights")
    return w


@dataclass(frozen=True)
class SyntheticTask:
    """Gaussian class clusters; client ``c`` only sees label ``c % class_count``."""

    clients: int = 10
    feature_dim: int = 16
    class_count: int = 10
    samples_per_client: int = 64
    test_samples_per_class: int = 50
    spread: float = 1.0
    seed: int = 0

    def _means(self):
        rng = np.random.default_rng([self.seed, 0])
        return rng.normal(0, 1.5, (self.class_count, self.feature_dim))

    def _draw(self, label: int, count: int, stream: int):
        rng = np.random.default_rng([self.seed, 1, stream])
        x = self._means()[label] + rng.normal(0, self.spread, (count, self.feature_dim))
        return x, np.full(count, label, dtype=np.int64)

    def label_of(self, client: int) -> int:
        return client % self.class_count

    def shard(self, client: int):
        return self._draw(self.label_of(client), self.samples_per_client, 1000 + client)

    def test_set(self):
        parts = [self._draw(k, self.test_samples_per_class, k) for k in range(self.class_count)]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def evaluate(spec: ModelSpec, flat: np.ndarray, data) -> tuple[float, float]:
    x, y = data
    logits = forward(spec, flat, x)
    if spec.activations[-1] == "softmax":
        p = _softmax(logits)
        loss = -np.mean(np.log(p[np.arange(len(y)), y] + 1e-300))
    else:
        loss = 0.5 * np.mean(np.sum((logits - np.eye(spec.layer_sizes[-1])[y]) ** 2, axis=1))
    return float(loss), float(np.mean(np.argmax(logits, axis=1) == y))


@dataclass
class Arm:
    """One protocol's federated trajectory."""

    protocol: str
    weights: np.ndarray
    losses: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)
    transparency: list = field(default_factory=list)
    globals: list = field(default_factory=list)


@dataclass
class ComparisonResult:
    arms: tuple[Arm, Arm]
    max_model_diff: list[float]

    def rows(self) -> list[dict]:
        out = []
        for i, diff in enumerate(self.max_model_diff):
            for arm in self.arms:
                out.append({"round": i + 1, "protocol": arm.protocol, "loss": arm.losses[i],
                            "accuracy": arm.accuracies[i], "max_model_diff": diff})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, ["round", "protocol", "loss", "accuracy", "max_model_diff"],
                                lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()


def run_learning_comparison(task: SyntheticTask, protocol_a: str, protocol_b: str, rounds: int, *,
                            spec: ModelSpec | None = None, cfg: QuantizationConfig = QuantizationConfig(),
                            epochs: int = 1, learning_rate: float = 0.1, average: bool = True,
                            seed: int = 0) -> ComparisonResult:
    """Train two federated trajectories from the same start with the same local seeds.

    Each round every client trains from its arm's global model, the arm's
    protocol aggregates the quantized updates, and the sum is dequantized
    (divided by the contributor count unless ``average`` is false).  For the
    network protocols each arm also records its transparency error: the
    distance between its aggregate and the float mean of the very same local
    models.
    """
    spec = spec or ModelSpec((task.feature_dim, 32, task.class_count), ("relu", "softmax"))
    cfg.check_headroom(task.clients)
    start = spec.init(seed)
    test = task.test_set()
    arms = (Arm(protocol_a, start.copy()), Arm(protocol_b, start.copy()))
    sessions = {}
    for arm in arms:
        if arm.protocol != FLOAT_FEDAVG:
            session = open_session(arm.protocol, task.clients, spec.parameter_count, seed=seed)
            session.setup(quantize(start, cfg).elements)
            sessions[id(arm)] = session
    shards = [task.shard(c) for c in range(task.clients)]
    diffs = []
    for n in range(1, rounds + 1):
        for arm in arms:
            local = {c: local_train(arm.weights, shards[c], epochs, learning_rate, spec=spec,
                                    seed=[seed, n, c])
                     for c in range(task.clients)}
            float_mean = np.mean([local[c] for c in sorted(local)], axis=0)
            if arm.protocol == FLOAT_FEDAVG:
                arm.weights = float_mean if average else float_mean * task.clients
            else:
                session = sessions[id(arm)]
                outcome = session.run_round(n, {c: quantize(w, cfg).elements for c, w in local.items()})
                count = len(outcome.participants)
                arm.weights = dequantize(outcome.aggregate, cfg, count if average else 1)
                mean = arm.weights if average else arm.weights / count
                arm.transparency.append(float(np.max(np.abs(mean - float_mean))))
            loss, acc = evaluate(spec, arm.weights, test)
            if not np.isfinite(loss):
                raise TrainingError(f"{arm.protocol} diverged in round {n}")
            arm.losses.append(loss)
            arm.accuracies.append(acc)
            arm.globals.append(arm.weights.copy())
        diffs.append(float(np.max(np.abs(arms[0].weights - arms[1].weights))))
    return ComparisonResult(arms, diffs)
