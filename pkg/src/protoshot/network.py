"""Network evaluation: forward composition, gradient tape, input gradients.

Weights live in a plain dict (name -> float32 array) owned by the model
bundle; evaluation casts them to the requested dtype on the fly. Every layer
output is checked for NaN/Inf and a violation is a hard error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .errors import (
    NonFiniteError,
    ShapeMismatchError,
    UnsupportedLayerError,
    ValidationError,
    WeightLookupError,
)


def _weight(store, name, dtype):
    try:
        w = store[name]
    except (KeyError, TypeError):
        raise WeightLookupError(f"weight {name!r} not found in store") from None
    return w if w.dtype == dtype else w.astype(dtype)


def _ensure_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced at {where}")


def evaluate_layer(spec, x, store, dtype, *, training=False, rng=None, want_cache=False):
    """Run one layer on a batch. Returns y, or (y, cache) with want_cache."""
    kind = spec.kind
    if kind == "conv2d":
        k = _weight(store, spec.weight_named("kernel").name, dtype)
        b = _weight(store, spec.weight_named("bias").name, dtype)
        return L.conv2d_forward(x, k, b, spec.stride, spec.padding, want_cache=want_cache)
    if kind == "maxpool2d":
        return L.maxpool2d_forward(x, spec.pool, spec.stride, want_cache=want_cache)
    if kind == "dense":
        k = _weight(store, spec.weight_named("kernel").name, dtype)
        b = _weight(store, spec.weight_named("bias").name, dtype)
        y = L.dense_forward(x, k, b)
        return (y, x) if want_cache else y
    if kind == "relu":
        y = L.relu_forward(x)
        return (y, x) if want_cache else y
    if kind == "batchnorm-inference":
        g = _weight(store, spec.weight_named("gamma").name, dtype)
        be = _weight(store, spec.weight_named("beta").name, dtype)
        mu = _weight(store, spec.weight_named("moving_mean").name, dtype)
        var = _weight(store, spec.weight_named("moving_var").name, dtype)
        y = L.batchnorm_forward(x, g, be, mu, var, spec.epsilon)
        return (y, None) if want_cache else y
    if kind == "dropout":
        mask = None
        if training:
            if rng is None:
                raise ValidationError("dropout in training mode needs an rng")
            mask = (rng.uniform_array(x.shape) >= spec.rate).astype(x.dtype)
        y = L.dropout_forward(x, spec.rate, mask)
        return (y, mask) if want_cache else y
    if kind == "flatten":
        y = x.reshape(x.shape[0], -1)
        return (y, x.shape) if want_cache else y
    if kind == "softmax":
        y = L.softmax_forward(x)
        return (y, y) if want_cache else y
    raise UnsupportedLayerError(f"unknown layer kind {kind!r}")


def backward_layer(spec, dy, cache, store, dtype):
    """Input gradient (and weight grads where applicable) for one layer."""
    kind = spec.kind
    if kind == "conv2d":
        k = _weight(store, spec.weight_named("kernel").name, dtype)
        dx, dk, db = L.conv2d_backward(dy, cache, k, spec.stride)
        return dx, {spec.weight_named("kernel").name: dk, spec.weight_named("bias").name: db}
    if kind == "maxpool2d":
        return L.maxpool2d_backward(dy, cache, spec.pool, spec.stride), {}
    if kind == "dense":
        k = _weight(store, spec.weight_named("kernel").name, dtype)
        dx, dk, db = L.dense_backward(dy, cache, k)
        return dx, {spec.weight_named("kernel").name: dk, spec.weight_named("bias").name: db}
    if kind == "relu":
        return L.relu_backward(dy, cache), {}
    if kind == "batchnorm-inference":
        g = _weight(store, spec.weight_named("gamma").name, dtype)
        var = _weight(store, spec.weight_named("moving_var").name, dtype)
        return L.batchnorm_backward(dy, g, var, spec.epsilon), {}
    if kind == "dropout":
        return L.dropout_backward(dy, spec.rate, cache), {}
    if kind == "flatten":
        return dy.reshape(cache), {}
    if kind == "softmax":
        return L.softmax_backward(dy, cache), {}
    raise UnsupportedLayerError(f"unknown layer kind {kind!r}")


@dataclass
class TapeEntry:
    spec: object
    x: np.ndarray
    y: np.ndarray
    cache: object


class GradientTape:
    """Recorded forward intermediates, enough to replay and to backpropagate."""

    def __init__(self, dtype):
        self.dtype = dtype
        self.entries: list[TapeEntry] = []

    @property
    def output(self) -> np.ndarray:
        return self.entries[-1].y

    def layer_index(self, name: str) -> int:
        for i, e in enumerate(self.entries):
            if e.spec.name == name:
                return i
        raise ValidationError(f"layer {name!r} not on tape")

    def replay_forward(self, store) -> np.ndarray:
        """Re-run the recorded layers on the recorded input.

        Dropout masks are reused from the recording, so the result is
        bit-identical to the recorded output in the same precision mode.
        """
        x = self.entries[0].x if self.entries else None
        for e in self.entries:
            if e.spec.kind == "dropout":
                x = L.dropout_forward(x, e.spec.rate, e.cache)
            else:
                x = evaluate_layer(e.spec, x, store, self.dtype)
        return x

    def backward(self, dy: np.ndarray, store, *, start: int | None = None,
                 collect_weight_grads: bool = False):
        """Backpropagate dy (gradient w.r.t. the output of entry `start`,
        default the last entry) down to the network input.

        Returns (dx, weight_grads); weight_grads is {} unless requested.
        """
        if start is None:
            start = len(self.entries) - 1
        grads: dict[str, np.ndarray] = {}
        for e in reversed(self.entries[: start + 1]):
            dy, wg = backward_layer(e.spec, dy, e.cache, store, self.dtype)
            if collect_weight_grads:
                grads.update(wg)
        return dy, grads


def forward_batch(model, x, *, stop_layer=None, dtype=np.float32,
                  training=False, rng=None, record=False):
    """Run a batch (N, ...) through the model's layers in manifest order.

    stop_layer truncates the composition after the named layer. With
    record=True a GradientTape is returned alongside the activations.
    """
    if stop_layer is not None and all(s.name != stop_layer for s in model.layers):
        raise ValidationError(f"stop layer {stop_layer!r} not in manifest")
    x = np.ascontiguousarray(x, dtype=dtype)
    tape = GradientTape(dtype) if record else None
    store = model.weights
    for spec in model.layers:
        if record:
            y, cache = evaluate_layer(spec, x, store, dtype, training=training,
                                      rng=rng, want_cache=True)
            tape.entries.append(TapeEntry(spec, x, y, cache))
        else:
            y = evaluate_layer(spec, x, store, dtype, training=training, rng=rng)
        _ensure_finite(y, f"layer {spec.name!r}")
        x = y
        if spec.name == stop_layer:
            break
    return (x, tape) if record else x


def network_forward(model, x, stop_layer=None, dtype=np.float32):
    """Single-sample forward pass; see forward_batch for the batched form."""
    if tuple(x.shape) != tuple(model.input_shape):
        raise ShapeMismatchError(
            f"input shape {tuple(x.shape)} != model input {tuple(model.input_shape)}"
        )
    return forward_batch(model, x[None], stop_layer=stop_layer, dtype=dtype)[0]


def _require_softmax_head(model):
    if not model.layers or model.layers[-1].kind != "softmax":
        raise UnsupportedLayerError("model must end in softmax for this operation")


def cross_entropy(model, x, target_class, dtype=np.float32) -> float:
    """Categorical cross-entropy of a single sample against target_class."""
    _require_softmax_head(model)
    p = network_forward(model, x, dtype=dtype)
    return float(-np.log(p[target_class]))


def input_gradient(model, x, target_class, dtype=np.float32) -> np.ndarray:
    """d(cross-entropy)/d(input) via reverse-mode replay of the tape.

    The softmax layer and the loss are fused into probs - onehot, evaluated
    at the recorded probabilities, then backpropagated through the rest.
    """
    _require_softmax_head(model)
    if not (0 <= int(target_class) < model.num_classes):
        raise ValidationError(f"target class {target_class} out of range")
    y, tape = forward_batch(model, np.asarray(x)[None], dtype=dtype, record=True)
    dlogits = y.copy()
    dlogits[0, int(target_class)] -= 1.0
    dx, _ = tape.backward(dlogits, model.weights, start=len(tape.entries) - 2)
    _ensure_finite(dx, "input gradient")
    return dx[0]


def input_gradient_batch(model, xs, target_classes, dtype=np.float32) -> np.ndarray:
    """Batched d(cross-entropy)/d(input), one target class per row."""
    _require_softmax_head(model)
    targets = np.asarray(target_classes, dtype=np.int64)
    y, tape = forward_batch(model, np.asarray(xs), dtype=dtype, record=True)
    dlogits = y.copy()
    dlogits[np.arange(len(targets)), targets] -= 1.0
    dx, _ = tape.backward(dlogits, model.weights, start=len(tape.entries) - 2)
    _ensure_finite(dx, "input gradient")
    return dx


def class_logit_gradient(model, x, class_index, dtype=np.float32) -> np.ndarray:
    """Gradient of the pre-softmax activation of one class w.r.t. the input."""
    _require_softmax_head(model)
    y, tape = forward_batch(model, np.asarray(x)[None], dtype=dtype, record=True)
    seed = np.zeros_like(tape.entries[-2].y)
    seed[0, int(class_index)] = 1.0
    dx, _ = tape.backward(seed, model.weights, start=len(tape.entries) - 2)
    _ensure_finite(dx, "logit gradient")
    return dx[0]


def finite_difference_gradient(model, x, target_class, step=1e-4) -> np.ndarray:
    """Central-difference d(cross-entropy)/d(input), double precision.

    The independent oracle for input_gradient: 2*D forward passes, batched.
    """
    if step <= 0:
        raise ValidationError("step must be > 0")
    _require_softmax_head(model)
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    d = flat.size
    eye = np.eye(d, dtype=np.float64) * step
    plus = (flat[None, :] + eye).reshape((d,) + x.shape)
    minus = (flat[None, :] - eye).reshape((d,) + x.shape)
    grad = np.empty(d, dtype=np.float64)
    c = int(target_class)
    chunk = 512
    for lo in range(0, d, chunk):
        hi = min(lo + chunk, d)
        pp = forward_batch(model, plus[lo:hi], dtype=np.float64)[:, c]
        pm = forward_batch(model, minus[lo:hi], dtype=np.float64)[:, c]
        grad[lo:hi] = (-np.log(pp) + np.log(pm)) / (2.0 * step)
    return grad.reshape(x.shape)
