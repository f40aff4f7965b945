"""Sequential networks: build-time shape validation, training loop, persistence."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence

import numpy as np

from ..errors import DataError, FormatError, ShapeError, StateError
from .layers import Layer, layer_from_config
from .losses import LOSSES
from .optim import Optimizer, TrainConfig

MODEL_FORMAT = "gridsense-model"
MODEL_VERSION = 1


class Sequential:
    def __init__(self, layers: Sequence[Layer], input_shape: Sequence[int], seed: int = 0):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.meta: Dict[str, object] = {}
        rng = np.random.default_rng(seed)
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.build(shape, rng)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        self.output_shape = shape
        self._forwarded = False

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"expected input (batch, {self.input_shape}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, training)
        self._forwarded = True
        return x

    __call__ = forward

    def predict(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        outs = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs) if outs else np.zeros((0,) + self.output_shape)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if not self._forwarded:
            raise StateError("backward called before forward")
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def named_params(self) -> Dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def named_grads(self) -> Dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.grads.items()}

    def param_count(self) -> int:
        return int(sum(v.size for v in self.named_params().values()))


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DataError(f"labels must lie in [0, {classes})")
    out = np.zeros((labels.size, classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass
class TrainHistory:
    loss: List[float] = field(default_factory=list)
    accuracy: List[float] = field(default_factory=list)


def train(net: Sequential, x: np.ndarray, y: np.ndarray, config: TrainConfig,
          loss: str = "cross_entropy") -> TrainHistory:
    """Mini-batch training with seeded shuffling.

    For ``cross_entropy`` ``y`` holds integer class labels; for ``mse`` it
    holds targets shaped like the network output. Parameters are updated in
    place; the per-epoch mean loss is returned.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n == 0:
        raise DataError("empty training set")
    if len(y) != n:
        raise DataError(f"{n} inputs but {len(y)} targets")
    loss_fn: Callable = LOSSES[loss]
    classify = loss == "cross_entropy"
    target = one_hot(y, net.output_shape[0]) if classify else np.asarray(y, dtype=float)
    labels = np.asarray(y) if classify else None
    rng = np.random.default_rng(config.seed)
    opt = Optimizer(config)
    history = TrainHistory()
    bs = config.batch_size
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            if len(idx) < 2 and n >= 2:
                idx = order[start - 1:start + bs]  # keep batchnorm batches >= 2
            pred = net.forward(x[idx], training=True)
            value, grad = loss_fn(pred, target[idx])
            net.backward(grad)
            opt.step(net.named_params(), net.named_grads())
            total += value * len(idx)
            if classify:
                correct += int(np.sum(pred.argmax(axis=1) == labels[idx]))
        history.loss.append(total / n)
        if classify:
            history.accuracy.append(correct / n)
    return history


def _encode(a: np.ndarray) -> dict:
    data = np.ascontiguousarray(a, dtype="<f8").tobytes()
    return {"shape": list(a.shape), "data": base64.b64encode(data).decode("ascii")}


def _decode(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(blob["shape"]).astype(float)


def to_document(net: Sequential) -> dict:
    layers = []
    for layer in net.layers:
        layers.append({
            "kind": layer.kind,
            "config": layer.config(),
            "params": {k: _encode(v) for k, v in sorted(layer.params.items())},
            "buffers": {k: _encode(v) for k, v in sorted(layer.buffers.items())},
        })
    return {"format": MODEL_FORMAT, "version": MODEL_VERSION, "input_shape": list(net.input_shape),
            "layers": layers, "meta": net.meta}


def from_document(doc: dict) -> Sequential:
    if doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"not a {MODEL_FORMAT} document")
    version = doc.get("version")
    if not isinstance(version, int) or version > MODEL_VERSION or version < 1:
        raise FormatError(f"model version {version!r} is not supported (this build reads up to "
                          f"version {MODEL_VERSION})")
    layers = [layer_from_config(spec["kind"], spec.get("config", {})) for spec in doc["layers"]]
    net = Sequential(layers, doc["input_shape"])
    for layer, spec in zip(net.layers, doc["layers"]):
        for store, key in ((layer.params, "params"), (layer.buffers, "buffers")):
            for name, blob in spec.get(key, {}).items():
                arr = _decode(blob)
                if name not in store or store[name].shape != arr.shape:
                    raise FormatError(f"{layer.kind}: unexpected {key[:-1]} {name} {arr.shape}")
                store[name] = arr
    net.meta = dict(doc.get("meta", {}))
    return net


def dumps(net: Sequential) -> str:
    return json.dumps(to_document(net), sort_keys=True, indent=1)


def loads(text: str) -> Sequential:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"model file is not valid JSON: {exc}") from None
    return from_document(doc)


def save(net: Sequential, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(net))


def load(path) -> Sequential:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())
