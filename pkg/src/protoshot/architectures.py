"""Stock architectures used throughout the package.

Shapes here are manifest facts: a bundle can exist without materialized
weights (parameter arithmetic only) and be filled in later by init_weights.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .layers import LayerSpec, WeightRef, output_shape
from .model import ModelBundle, validate_bundle
from .rng import Rng

DIGIT_LABELS = tuple(str(d) for d in range(10))


class _Builder:
    """Tracks the running activation shape while stacking layers."""

    def __init__(self, input_shape):
        self.input_shape = tuple(input_shape)
        self.shape = self.input_shape
        self.layers = []

    def add(self, spec: LayerSpec) -> None:
        self.shape = output_shape(spec, self.shape)
        self.layers.append(spec)

    @property
    def channels(self) -> int:
        return int(self.shape[-1])

    def conv(self, name, filters, kernel=3, stride=1, padding="valid"):
        cin = self.channels
        kern = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel)
        self.add(LayerSpec(
            name=name, kind="conv2d", filters=filters, kernel=kern,
            stride=stride, padding=padding,
            weights=(
                WeightRef("kernel", f"{name}/kernel", kern + (cin, filters)),
                WeightRef("bias", f"{name}/bias", (filters,)),
            ),
        ))

    def batchnorm(self, name, epsilon=1e-3):
        c = self.channels
        self.add(LayerSpec(
            name=name, kind="batchnorm-inference", epsilon=epsilon,
            weights=(
                WeightRef("gamma", f"{name}/gamma", (c,)),
                WeightRef("beta", f"{name}/beta", (c,)),
                WeightRef("moving_mean", f"{name}/moving_mean", (c,), trainable=False),
                WeightRef("moving_var", f"{name}/moving_var", (c,), trainable=False),
            ),
        ))

    def relu(self, name):
        self.add(LayerSpec(name=name, kind="relu"))

    def maxpool(self, name, pool=2, stride=None):
        p = (pool, pool) if isinstance(pool, int) else tuple(pool)
        self.add(LayerSpec(name=name, kind="maxpool2d", pool=p,
                           stride=p[0] if stride is None else stride))

    def dropout(self, name, rate):
        self.add(LayerSpec(name=name, kind="dropout", rate=rate))

    def flatten(self, name="flatten"):
        self.add(LayerSpec(name=name, kind="flatten"))

    def dense(self, name, units):
        fan_in = int(np.prod(self.shape, dtype=np.int64))
        if len(self.shape) != 1:
            raise ValidationError("dense expects a flattened input; add a flatten layer")
        self.add(LayerSpec(
            name=name, kind="dense", units=units,
            weights=(
                WeightRef("kernel", f"{name}/kernel", (fan_in, units)),
                WeightRef("bias", f"{name}/bias", (units,)),
            ),
        ))

    def softmax(self, name="probs"):
        self.add(LayerSpec(name=name, kind="softmax"))

    def bundle(self, feature_layer, class_labels=(), weights=None) -> ModelBundle:
        b = ModelBundle(
            layers=tuple(self.layers),
            weights={} if weights is None else weights,
            input_shape=self.input_shape,
            feature_layer=feature_layer,
            class_labels=tuple(class_labels),
        )
        validate_bundle(b, require_weights=weights is not None)
        return b


def digit_cnn() -> ModelBundle:
    """28x28x1 digit classifier: two valid convs, pool, 128-wide feature layer.

    1,199,882 parameters in total.
    """
    b = _Builder((28, 28, 1))
    b.conv("conv1", 32)
    b.relu("relu1")
    b.conv("conv2", 64)
    b.relu("relu2")
    b.maxpool("pool1")
    b.dropout("drop1", 0.25)
    b.flatten()
    b.dense("fc1", 128)
    b.relu("feature")
    b.dropout("drop2", 0.5)
    b.dense("logits", 10)
    b.softmax()
    return b.bundle(feature_layer="feature", class_labels=DIGIT_LABELS)


def compact_digit_cnn() -> ModelBundle:
    """Reduced digit model sized so a full training run fits in CI minutes."""
    b = _Builder((28, 28, 1))
    b.conv("conv1", 16)
    b.relu("relu1")
    b.conv("conv2", 32)
    b.relu("relu2")
    b.maxpool("pool1")
    b.flatten()
    b.dense("fc1", 64)
    b.relu("feature")
    b.dense("logits", 10)
    b.softmax()
    return b.bundle(feature_layer="feature", class_labels=DIGIT_LABELS)


def fewshot_embedder() -> ModelBundle:
    """Headless 4-block embedding network, 64-wide output.

    112,448 parameters; the 512 batchnorm moving statistics are frozen.
    """
    b = _Builder((28, 28, 1))
    for i in range(1, 5):
        b.conv(f"conv{i}", 64, padding="same")
        b.batchnorm(f"bn{i}")
        b.relu(f"relu{i}")
        b.maxpool(f"pool{i}")
    b.flatten("embedding")
    return b.bundle(feature_layer="embedding")


def vgg16() -> ModelBundle:
    """VGG16 manifest for parameter arithmetic; weights are never materialized.

    138,357,544 parameters (224x224x3 input, 1000 classes).
    """
    cfg = [(1, 2, 64), (2, 2, 128), (3, 3, 256), (4, 3, 512), (5, 3, 512)]
    b = _Builder((224, 224, 3))
    for block, n, filters in cfg:
        for i in range(1, n + 1):
            b.conv(f"block{block}_conv{i}", filters, padding="same")
            b.relu(f"block{block}_relu{i}")
        b.maxpool(f"block{block}_pool")
    b.flatten()
    b.dense("fc1", 4096)
    b.relu("fc1_relu")
    b.dense("fc2", 4096)
    b.relu("feature")
    b.dense("logits", 1000)
    b.softmax()
    return b.bundle(
        feature_layer="feature",
        class_labels=tuple(f"class_{i:04d}" for i in range(1000)),
    )


def init_weights(bundle: ModelBundle, seed: int) -> ModelBundle:
    """Materialize a seeded weight store: fan-scaled uniform kernels
    (Glorot style), zero biases, identity batchnorm statistics."""
    rng = Rng(seed)
    store = {}
    for spec in bundle.layers:
        for ref in spec.weights:
            shape = tuple(ref.shape)
            if ref.role == "kernel":
                if len(shape) == 4:  # conv: (kh, kw, cin, cout)
                    fan_in = shape[0] * shape[1] * shape[2]
                    fan_out = shape[0] * shape[1] * shape[3]
                else:  # dense: (in, out)
                    fan_in, fan_out = shape
                limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
                w = rng.uniform_array(shape, low=-limit, high=limit)
            elif ref.role in ("bias", "beta", "moving_mean"):
                w = np.zeros(shape, dtype=np.float64)
            elif ref.role in ("gamma", "moving_var"):
                w = np.ones(shape, dtype=np.float64)
            else:
                raise ValidationError(f"no initializer for weight role {ref.role!r}")
            store[ref.name] = w.astype(np.float32)
    return bundle.with_weights(store)
