"""Minimal cross-entropy trainer (SGD and ADAM) over the layer vocabulary.

Deterministic by construction: shuffling and dropout masks come from the
package generator seeded by the config, the optimizer loop is single
threaded, and updates apply in manifest order, so one seed gives bitwise
identical weights on every run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .errors import NonFiniteError, UnsupportedLayerError, ValidationError
from .model import ModelBundle, predict_batch
from .network import forward_batch
from .rng import Rng


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 6e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-7
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    dropout: bool = False  # draw train-time dropout masks when True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ValidationError("batch size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")


def _trainable_names(bundle: ModelBundle):
    names = []
    for spec in bundle.layers:
        if spec.kind == "batchnorm-inference":
            raise UnsupportedLayerError(
                f"layer {spec.name!r}: batchnorm is inference-only, not trainable"
            )
        for ref in spec.weights:
            if ref.trainable:
                names.append(ref.name)
    return names


def train(bundle: ModelBundle, dataset: LabeledDataset, config: TrainConfig,
          progress=None):
    """Minimize categorical cross-entropy; returns (trained bundle, history).

    history is the per-epoch mean loss over all samples. progress, if given,
    is called with (epochs_done, total_epochs) after each epoch; it has no
    effect on the arithmetic.
    """
    if not bundle.layers or bundle.layers[-1].kind != "softmax":
        raise UnsupportedLayerError("training needs a softmax classification output")
    classes = bundle.num_classes
    if dataset.labels.min() < 0 or dataset.labels.max() >= classes:
        raise ValidationError(
            f"labels must lie in [0, {classes}), got max {int(dataset.labels.max())}"
        )
    names = _trainable_names(bundle)
    work = bundle.with_weights({k: v.copy() for k, v in bundle.weights.items()})
    weights = work.weights  # the dict the forward pass reads; updated in place

    rng = Rng(config.seed)
    lr = np.float32(config.learning_rate)
    if config.optimizer == "adam":
        m = {k: np.zeros_like(weights[k]) for k in names}
        v = {k: np.zeros_like(weights[k]) for k in names}
        b1, b2 = np.float32(config.beta1), np.float32(config.beta2)
        eps = np.float32(config.adam_epsilon)
        step = 0

    n = len(dataset)
    history = []
    for _ in range(config.epochs):
        order = np.arange(n)
        rng.shuffle(order)
        loss_sum = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            xb = dataset.images[idx]
            yb = dataset.labels[idx]
            probs, tape = forward_batch(
                work, xb, dtype=np.float32, record=True,
                training=config.dropout, rng=rng if config.dropout else None,
            )
            picked = probs[np.arange(len(idx)), yb]
            batch_loss = float(-np.log(np.maximum(picked, 1e-30)).mean())
            if not np.isfinite(batch_loss):
                raise NonFiniteError("training loss diverged to non-finite values")
            loss_sum += batch_loss * len(idx)

            # softmax and cross-entropy fused: d(mean CE)/d(logits)
            dlogits = probs.copy()
            dlogits[np.arange(len(idx)), yb] -= 1.0
            dlogits /= np.float32(len(idx))
            _, grads = tape.backward(
                dlogits, weights, start=len(tape.entries) - 2,
                collect_weight_grads=True,
            )

            if config.optimizer == "sgd":
                for k in names:
                    weights[k] = weights[k] - lr * grads[k].astype(np.float32)
            else:
                step += 1
                c1 = np.float32(1.0 - float(b1) ** step)
                c2 = np.float32(1.0 - float(b2) ** step)
                for k in names:
                    g = grads[k].astype(np.float32)
                    m[k] = b1 * m[k] + (np.float32(1) - b1) * g
                    v[k] = b2 * v[k] + (np.float32(1) - b2) * g * g
                    weights[k] = weights[k] - lr * (m[k] / c1) / (
                        np.sqrt(v[k] / c2) + eps
                    )
        history.append(loss_sum / n)
        if progress is not None:
            progress(len(history), config.epochs)
    return work, history


def evaluate_accuracy(bundle: ModelBundle, dataset: LabeledDataset,
                      batch_size=256) -> float:
    """Fraction of samples whose predicted class equals the label."""
    hits = 0
    for lo in range(0, len(dataset), batch_size):
        xb = dataset.images[lo : lo + batch_size]
        yb = dataset.labels[lo : lo + batch_size]
        pred, _ = predict_batch(bundle, xb)
        hits += int(np.sum(pred == yb))
    return hits / len(dataset)
