"""
Classifier Module.
Semi-supervised evaluation head: a ten-way softmax layer on top of a trained
network, in two phases (frozen backbone, then joint fine-tuning), plus the
plain fully-connected baseline trained from scratch.

For discriminative use the network is read as a deterministic sigmoid MLP:
each layer maps x ↦ σ(f(x, W) + c) using probabilities, never samples.
Visible biases take no part in that mapping and receive zero gradient.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from drbn.config.settings import semisup_settings, train_settings
from drbn.core.conv_rbm import ConvRbmParams, conv_preactivation
from drbn.core.errors import EmptyBatchError, ShapeError
from drbn.core.math_core import (
    DenseTensor,
    Rng,
    conv_filter_correlation,
    conv_transpose,
    default_dtype,
    make_rng,
    sigmoid,
)
from drbn.core.network import Drbn, NetworkSpec, as_layer_input, init_network, upward_pass
from drbn.core.optim import adam_step, init_adam
from drbn.core.rbm import RbmParams, hidden_preactivation
from drbn.utils.logger import logger

N_CLASSES = 10


class HeadConfig(BaseModel):
    """Supervised training budget; best-on-validation epoch is kept."""
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(default=semisup_settings.HEAD_EPOCHS, ge=0)
    batch_size: int = Field(default=semisup_settings.HEAD_BATCH, ge=1)
    learning_rate: float = Field(default=train_settings.LR, ge=0.0)
    beta1: float = Field(default=train_settings.BETA1, ge=0.0, lt=1.0)
    beta2: float = Field(default=train_settings.BETA2, ge=0.0, lt=1.0)
    epsilon: float = Field(default=train_settings.EPSILON, gt=0.0)
    n_classes: int = Field(default=N_CLASSES, ge=2)
    seed: int = Field(default=0, ge=0)


@dataclass(frozen=True)
class SoftmaxHead:
    W: DenseTensor      # feature_dim × n_classes
    b: DenseTensor      # n_classes

    def as_dict(self) -> dict[str, DenseTensor]:
        return {"W": self.W, "b": self.b}

    def with_arrays(self, arrays: dict[str, DenseTensor]) -> "SoftmaxHead":
        return SoftmaxHead(W=arrays["W"], b=arrays["b"])

    @property
    def feature_dim(self) -> int:
        return self.W.shape[0]


@dataclass
class HeadMetrics:
    train_error: float
    validation_error: Optional[float] = None
    test_error: Optional[float] = None
    best_epoch: int = 0
    losses: list[float] = field(default_factory=list)


@dataclass
class HeadResult:
    head: SoftmaxHead
    metrics: HeadMetrics


@dataclass
class FineTuneResult:
    net: Drbn
    head: SoftmaxHead
    metrics: HeadMetrics


@dataclass
class SemisupRecord:
    labels_used: int
    model: str
    phase: str
    seed: int
    test_error: float

    def to_line(self) -> str:
        return (
            f"labels_used={self.labels_used} model={self.model} phase={self.phase} "
            f"seed={self.seed} test_error={self.test_error:.6f}"
        )


# ─── Softmax ──────────────────────────────────────────────────────────────────
def softmax(logits: DenseTensor) -> DenseTensor:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def init_head(feature_dim: int, n_classes: int = N_CLASSES, dtype=None) -> SoftmaxHead:
    dtype = dtype or default_dtype()
    return SoftmaxHead(W=np.zeros((feature_dim, n_classes), dtype=dtype), b=np.zeros(n_classes, dtype=dtype))


def predict_proba(head: SoftmaxHead, features: DenseTensor) -> DenseTensor:
    return softmax(features @ head.W + head.b)


def error_rate(head: SoftmaxHead, features: DenseTensor, labels: np.ndarray) -> float:
    if features.shape[0] == 0:
        raise EmptyBatchError("error_rate needs at least one example")
    predictions = np.argmax(features @ head.W + head.b, axis=1)
    return float(np.mean(predictions != labels))


def _check_labels(labels: np.ndarray, n: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if n == 0:
        raise EmptyBatchError("no labeled examples")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    return labels.astype(np.int64)


def _cross_entropy(probs: DenseTensor, labels: np.ndarray) -> float:
    picked = probs[np.arange(labels.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(picked, np.finfo(probs.dtype).tiny))))


# ─── Features ─────────────────────────────────────────────────────────────────
def extract_features(images: DenseTensor, net: Drbn) -> DenseTensor:
    """Deterministic upward pass with probabilities; returns top activations flattened to n × feature_dim."""
    record = upward_pass(images, net, rng=None, sample=False)
    top = record.states[-1]
    return top.reshape(top.shape[0], -1)


# ─── Head Training ────────────────────────────────────────────────────────────
def train_head(
    features: DenseTensor,
    labels: np.ndarray,
    config: HeadConfig,
    validation: Optional[tuple[DenseTensor, np.ndarray]] = None,
) -> HeadResult:
    """
    Minibatch Adam on softmax cross-entropy over frozen features. The epoch with
    the lowest validation error (training error when no validation set) is kept.
    """
    n = features.shape[0]
    labels = _check_labels(labels, n, config.n_classes)
    head = init_head(features.shape[1], config.n_classes, features.dtype)
    opt = init_adam(head.as_dict(), config.learning_rate, config.beta1, config.beta2, config.epsilon)
    rng = make_rng(config.seed)
    onehot = np.eye(config.n_classes, dtype=features.dtype)[labels]

    def selection_error(h: SoftmaxHead) -> float:
        if validation is not None:
            return error_rate(h, validation[0], validation[1])
        return error_rate(h, features, labels)

    best_head, best_err, best_epoch = head, selection_error(head), 0
    losses: list[float] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x, y = features[idx], onehot[idx]
            probs = predict_proba(head, x)
            delta = (probs - y) / idx.shape[0]
            grads = {"W": x.T @ delta, "b": delta.sum(axis=0)}
            arrays, opt = adam_step(head.as_dict(), grads, opt)
            head = head.with_arrays(arrays)
        losses.append(_cross_entropy(predict_proba(head, features), labels))
        err = selection_error(head)
        if err < best_err:
            best_head, best_err, best_epoch = head, err, epoch

    metrics = HeadMetrics(
        train_error=error_rate(best_head, features, labels),
        validation_error=best_err if validation is not None else None,
        best_epoch=best_epoch,
        losses=losses,
    )
    logger.debug(f"Head trained: train error {metrics.train_error:.4f}, best epoch {best_epoch}")
    return HeadResult(head=best_head, metrics=metrics)


def evaluate(net: Drbn, head: SoftmaxHead, images: DenseTensor, labels: np.ndarray) -> float:
    """Error rate of the network + head on labeled images."""
    return error_rate(head, extract_features(images, net), np.asarray(labels))


# ─── Backpropagation ──────────────────────────────────────────────────────────
def _forward(net: Drbn, images: DenseTensor) -> list[DenseTensor]:
    """Activations a^(0..L) of the sigmoid-MLP view, each in its layer-output shape."""
    x = images.reshape((images.shape[0],) + net.input_shape)
    activations = [x]
    for layer in net.layers:
        inp = as_layer_input(x, layer)
        if isinstance(layer, ConvRbmParams):
            x = sigmoid(conv_preactivation(inp, layer))
        else:
            x = sigmoid(hidden_preactivation(inp, layer))
        activations.append(x)
    return activations


def backprop(
    net: Drbn,
    head: SoftmaxHead,
    images: DenseTensor,
    labels: np.ndarray,
) -> tuple[float, list[dict[str, DenseTensor]], dict[str, DenseTensor]]:
    """Mean cross-entropy and its analytic gradients for every layer and the head."""
    n = images.shape[0]
    labels = _check_labels(labels, n, head.W.shape[1])
    activations = _forward(net, images)
    top = activations[-1].reshape(n, -1)
    probs = predict_proba(head, top)
    loss = _cross_entropy(probs, labels)

    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    head_grads = {"W": top.T @ delta, "b": delta.sum(axis=0)}

    upstream = (delta @ head.W.T).reshape(activations[-1].shape)
    layer_grads: list[dict[str, DenseTensor]] = [{} for _ in net.layers]
    for level in range(net.n_layers - 1, -1, -1):
        layer = net.layers[level]
        out = activations[level + 1]
        inp = as_layer_input(activations[level], layer)
        d_pre = upstream * out * (1.0 - out)
        if isinstance(layer, ConvRbmParams):
            grads = {
                "W": conv_filter_correlation(inp, d_pre, layer.filter_size, layer.stride),
                "b": np.zeros_like(layer.b),
                "c": d_pre.sum(axis=(0, 1, 2)),
            }
            d_inp = conv_transpose(d_pre, layer.W, layer.stride, layer.input_shape[:2])
        else:
            grads = {"W": inp.T @ d_pre, "b": np.zeros_like(layer.b), "c": d_pre.sum(axis=0)}
            d_inp = d_pre @ layer.W.T
        layer_grads[level] = grads
        upstream = d_inp.reshape(activations[level].shape)
    return loss, layer_grads, head_grads


def fine_tune(
    net: Drbn,
    head: SoftmaxHead,
    images: DenseTensor,
    labels: np.ndarray,
    config: HeadConfig,
    validation: Optional[tuple[DenseTensor, np.ndarray]] = None,
) -> FineTuneResult:
    """
    Joint cross-entropy descent through every layer and the head (typically at
    a reduced learning rate). Keeps the best-on-validation epoch; epoch 0 is
    the incoming model, so a zero learning rate reproduces the frozen metrics.
    """
    n = images.shape[0]
    labels = _check_labels(labels, n, head.W.shape[1])
    layer_opts = [
        init_adam(layer.as_dict(), config.learning_rate, config.beta1, config.beta2, config.epsilon)
        for layer in net.layers
    ]
    head_opt = init_adam(head.as_dict(), config.learning_rate, config.beta1, config.beta2, config.epsilon)
    rng = make_rng(config.seed)

    def selection_error(m: Drbn, h: SoftmaxHead) -> float:
        if validation is not None:
            return evaluate(m, h, validation[0], validation[1])
        return evaluate(m, h, images, labels)

    best = (net, head)
    best_err, best_epoch = selection_error(net, head), 0
    losses: list[float] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, layer_grads, head_grads = backprop(net, head, images[idx], labels[idx])
            epoch_loss += loss * idx.shape[0]
            new_layers = []
            for i, (layer, grads) in enumerate(zip(net.layers, layer_grads)):
                arrays, layer_opts[i] = adam_step(layer.as_dict(), grads, layer_opts[i])
                new_layers.append(layer.with_arrays(arrays))
            net = net.replace_layers(new_layers)
            arrays, head_opt = adam_step(head.as_dict(), head_grads, head_opt)
            head = head.with_arrays(arrays)
        losses.append(epoch_loss / n)
        err = selection_error(net, head)
        if err < best_err:
            best, best_err, best_epoch = (net, head), err, epoch

    best_net, best_head = best
    metrics = HeadMetrics(
        train_error=evaluate(best_net, best_head, images, labels),
        validation_error=best_err if validation is not None else None,
        best_epoch=best_epoch,
        losses=losses,
    )
    logger.debug(f"Fine-tuned: train error {metrics.train_error:.4f}, best epoch {best_epoch}")
    return FineTuneResult(net=best_net, head=best_head, metrics=metrics)


# ─── Baseline ─────────────────────────────────────────────────────────────────
def init_plain_network(spec: NetworkSpec, rng: Rng, dtype=None) -> Drbn:
    """Same layer sizes as the backbone, Glorot-scaled Gaussian weights, zero biases."""
    net = init_network(spec, rng, std=1.0, dtype=dtype)
    layers = []
    for layer in net.layers:
        if isinstance(layer, RbmParams):
            fan_in, fan_out = layer.n_visible, layer.n_hidden
        else:
            receptive = layer.filter_size * layer.filter_size
            fan_in, fan_out = receptive * layer.W.shape[3], receptive * layer.n_filters
        scale = np.sqrt(2.0 / (fan_in + fan_out))
        arrays = layer.as_dict()
        layers.append(layer.with_arrays({**arrays, "W": arrays["W"] * scale}))
    return net.replace_layers(layers)


def plain_fc_baseline(
    images: DenseTensor,
    labels: np.ndarray,
    spec: NetworkSpec,
    config: HeadConfig,
    validation: Optional[tuple[DenseTensor, np.ndarray]] = None,
    test: Optional[tuple[DenseTensor, np.ndarray]] = None,
) -> FineTuneResult:
    """Randomly initialized network of the same sizes, trained with labels only."""
    rng = make_rng(config.seed)
    net = init_plain_network(spec, rng)
    head = init_head(int(np.prod(spec.top_shape)), config.n_classes, net.layers[0].W.dtype)
    result = fine_tune(net, head, images, labels, config, validation)
    if test is not None:
        result.metrics.test_error = evaluate(result.net, result.head, test[0], test[1])
    return result