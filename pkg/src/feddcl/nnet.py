"""Dense feed-forward networks, mini-batch SGD, FedAvg aggregation, metrics.

Models are value types: training returns a new model and never mutates its
input. A single training call is single-threaded and bit-reproducible from
its (model, data, config) triple.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datahub import CLASSIFICATION, REGRESSION, Task
from .errors import AggregationError, NumericError, ParameterError
from .rng import RngStream

HEADS = (REGRESSION, CLASSIFICATION)


@dataclass
class MlpModel:
    """ReLU MLP with a linear (regression) or softmax (classification) head."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: str
    init_seed: int

    def copy(self) -> "MlpModel":
        return MlpModel(
            layer_sizes=self.layer_sizes,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            head=self.head,
            init_seed=self.init_seed,
        )

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def aggregable_with(self, other: "MlpModel") -> bool:
        return self.layer_sizes == other.layer_sizes and self.head == other.head


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float = 0.01
    batch_size: int = 32
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        # 0 is allowed so a zero step size leaves the model untouched
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ParameterError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")


@dataclass(frozen=True)
class EvalReport:
    kind: str  # "rmse" | "accuracy"
    value: float
    n_eval: int

    def __post_init__(self):
        if self.kind == "accuracy" and not 0.0 <= self.value <= 1.0:
            raise ParameterError(f"accuracy must lie in [0, 1], got {self.value}")
        if self.kind == "rmse" and self.value < 0.0:
            raise ParameterError(f"rmse must be >= 0, got {self.value}")


def init_model(layer_sizes: Sequence[int], head: str, seed: int) -> MlpModel:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ParameterError(f"need at least input and output layers, got {sizes}")
    if any(s < 1 for s in sizes):
        raise ParameterError(f"layer sizes must be >= 1, got {sizes}")
    if head not in HEADS:
        raise ParameterError(f"unknown head {head!r}")
    gen = RngStream(seed).generator()
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(gen.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(layer_sizes=sizes, weights=weights, biases=biases,
                    head=head, init_seed=int(seed))


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward_pass(model: MlpModel, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Returns (activations, pre-activations); activations[0] is the input."""
    acts = [x]
    zs = []
    a = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        zs.append(z)
        a = _relu(z) if l < last else z
        acts.append(a)
    return acts, zs


def forward(model: MlpModel, x) -> np.ndarray:
    """Predictions for ``x``: raw affine output or softmax rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_sizes[0]:
        raise ParameterError(
            f"input must be n-by-{model.layer_sizes[0]}, got shape {x.shape}"
        )
    _, zs = _forward_pass(model, x)
    logits = zs[-1]
    if model.head == CLASSIFICATION:
        return np.exp(_log_softmax(logits))
    return logits


def _loss_and_grads(model: MlpModel, x: np.ndarray, y: np.ndarray):
    acts, zs = _forward_pass(model, x)
    logits = zs[-1]
    n = x.shape[0]
    if model.head == REGRESSION:
        diff = logits - y
        loss = float(np.mean(diff * diff))
        delta = 2.0 * diff / diff.size
    else:
        logp = _log_softmax(logits)
        loss = float(-np.sum(y * logp) / n)
        delta = (np.exp(logp) - y) / n
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for l in range(len(model.weights) - 1, -1, -1):
        grads_w[l] = acts[l].T @ delta
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l].T) * (zs[l - 1] > 0)
    return loss, grads_w, grads_b


def batch_loss(model: MlpModel, x, y) -> float:
    """Full-batch training loss (MSE or cross-entropy) without updates."""
    loss, _, _ = _loss_and_grads(model, np.asarray(x, float), np.asarray(y, float))
    return loss


def train_local(model: MlpModel, x, y, cfg: TrainConfig,
                on_epoch: Callable[[int, MlpModel], None] | None = None) -> MlpModel:
    """Mini-batch SGD for ``cfg.epochs`` epochs; returns a new model.

    Batches are drawn by a seeded shuffle each epoch and the final incomplete
    batch is used. ``on_epoch(epoch_index, model_copy)`` fires after each
    epoch when given.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] < 1:
        raise ParameterError(f"bad training shapes x={x.shape} y={y.shape}")
    if x.shape[1] != model.layer_sizes[0] or y.shape[1] != model.layer_sizes[-1]:
        raise ParameterError(
            f"data shapes {x.shape}/{y.shape} do not fit model layers {model.layer_sizes}"
        )
    out = model.copy()
    gen = RngStream(cfg.shuffle_seed).generator()
    n = x.shape[0]
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        perm = gen.permutation(n)
        for start in range(0, n, cfg.batch_size):
            take = perm[start:start + cfg.batch_size]
            loss, gw, gb = _loss_and_grads(out, x[take], y[take])
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, "
                    f"batch {start // cfg.batch_size}"
                )
            for l in range(len(out.weights)):
                out.weights[l] -= lr * gw[l]
                out.biases[l] -= lr * gb[l]
        if on_epoch is not None:
            on_epoch(epoch, out.copy())
    return out


def fedavg_aggregate(models: Sequence[MlpModel], weights: Sequence[float]) -> MlpModel:
    """Sample-count-weighted parameter average, accumulated in ascending order."""
    if not models:
        raise AggregationError("no models to aggregate")
    if len(models) != len(weights):
        raise AggregationError(
            f"got {len(models)} models but {len(weights)} weights"
        )
    if any(w <= 0 for w in weights):
        raise AggregationError("aggregation weights must be positive")
    base = models[0]
    for k, m in enumerate(models):
        if not base.aggregable_with(m):
            raise AggregationError(
                f"participant {k} has layers {m.layer_sizes}/head {m.head!r}, "
                f"expected {base.layer_sizes}/head {base.head!r}"
            )
    total = float(sum(weights))
    agg = base.copy()
    for l in range(len(agg.weights)):
        agg.weights[l] = np.zeros_like(agg.weights[l])
        agg.biases[l] = np.zeros_like(agg.biases[l])
    for k in range(len(models)):
        w_k = float(weights[k])
        for l in range(len(agg.weights)):
            agg.weights[l] += w_k * models[k].weights[l]
            agg.biases[l] += w_k * models[k].biases[l]
    for l in range(len(agg.weights)):
        agg.weights[l] /= total
        agg.biases[l] /= total
    return agg


def evaluate(model: MlpModel, x, y, task: Task) -> EvalReport:
    """RMSE over all entries (regression) or argmax accuracy (classification)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] < 1:
        raise ParameterError("evaluation set is empty")
    pred = forward(model, x)
    if pred.shape != y.shape:
        raise ParameterError(f"prediction shape {pred.shape} != target shape {y.shape}")
    if task.kind == REGRESSION:
        value = float(np.sqrt(np.mean((pred - y) ** 2)))
        return EvalReport(kind="rmse", value=value, n_eval=x.shape[0])
    hits = np.argmax(pred, axis=1) == np.argmax(y, axis=1)  # argmax ties: lowest index
    return EvalReport(kind="accuracy", value=float(np.mean(hits)), n_eval=x.shape[0])


def grad_check(model: MlpModel, x, y, step: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences."""
    if model.n_params > 1000:
        raise ParameterError(
            f"grad_check is for small models (<= 1000 parameters), got {model.n_params}"
        )
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _, gw, gb = _loss_and_grads(model, x, y)
    probe = model.copy()
    worst = 0.0
    for arrays, grads in ((probe.weights, gw), (probe.biases, gb)):
        for arr, grad in zip(arrays, grads):
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + step
                up, _, _ = _loss_and_grads(probe, x, y)
                flat[idx] = orig - step
                down, _, _ = _loss_and_grads(probe, x, y)
                flat[idx] = orig
                fd = (up - down) / (2.0 * step)
                rel = abs(fd - gflat[idx]) / max(1.0, abs(fd) + abs(gflat[idx]))
                worst = max(worst, rel)
    return worst


_CKPT_FORMAT = "mlp-checkpoint"
_CKPT_VERSION = 1


def model_to_bytes(model: MlpModel) -> bytes:
    """Versioned binary dump; byte-identical for identical parameters."""
    header = {
        "format": _CKPT_FORMAT,
        "version": _CKPT_VERSION,
        "layer_sizes": list(model.layer_sizes),
        "head": model.head,
        "init_seed": model.init_seed,
    }
    buf = io.BytesIO()
    buf.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
    for w, b in zip(model.weights, model.biases):
        np.save(buf, w)
        np.save(buf, b)
    return buf.getvalue()


def model_from_bytes(data: bytes) -> MlpModel:
    buf = io.BytesIO(data)
    header = json.loads(buf.readline().decode("utf-8"))
    if header.get("format") != _CKPT_FORMAT or header.get("version") != _CKPT_VERSION:
        raise ParameterError(f"not a version-{_CKPT_VERSION} model checkpoint")
    sizes = tuple(header["layer_sizes"])
    weights = []
    biases = []
    for _ in range(len(sizes) - 1):
        weights.append(np.load(buf, allow_pickle=False))
        biases.append(np.load(buf, allow_pickle=False))
    return MlpModel(layer_sizes=sizes, weights=weights, biases=biases,
                    head=header["head"], init_seed=int(header["init_seed"]))


def save_model(model: MlpModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> MlpModel:
    return model_from_bytes(Path(path).read_bytes())
