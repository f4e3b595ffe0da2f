"""Experiment drivers: rotation sweeps, region ablation, FGSM adversarial
generation, and the score-threshold adversarial detector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .errors import ShapeMismatchError, ValidationError
from .model import predict_batch
from .network import input_gradient, input_gradient_batch
from .rng import Rng


def rotate_image(x: np.ndarray, angle_degrees: float) -> np.ndarray:
    """Counter-clockwise rotation about the image center, bilinear, fill 0.

    The center is ((H-1)/2, (W-1)/2); on even grids a 90-degree turn lands
    every pixel exactly on the grid, so those angles are lossless.
    """
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != 1:
        raise ShapeMismatchError(f"expected single-channel (H, W, 1), got {x.shape}")
    if x.shape[0] != x.shape[1]:
        raise ShapeMismatchError(f"rotation needs a square image, got {x.shape}")
    if angle_degrees % 360 == 0:
        return x.copy()
    h, w = x.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(angle_degrees)
    cos, sin = np.cos(theta), np.sin(theta)

    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    di, dj = ii - cy, jj - cx
    # inverse map: where does each output pixel sample from
    si = di * cos + dj * sin + cy
    sj = -di * sin + dj * cos + cx

    i0 = np.floor(si).astype(np.int64)
    j0 = np.floor(sj).astype(np.int64)
    fi, fj = si - i0, sj - j0

    out = np.zeros((h, w), dtype=np.float64)
    plane = x[..., 0].astype(np.float64)
    for (oi, oj, wgt) in (
        (i0, j0, (1 - fi) * (1 - fj)),
        (i0, j0 + 1, (1 - fi) * fj),
        (i0 + 1, j0, fi * (1 - fj)),
        (i0 + 1, j0 + 1, fi * fj),
    ):
        valid = (oi >= 0) & (oi < h) & (oj >= 0) & (oj < w)
        out[valid] += wgt[valid] * plane[oi[valid], oj[valid]]
    return out.astype(x.dtype)[..., None]


@dataclass(frozen=True)
class SweepTrace:
    """Per-angle scores for each class of interest plus model predictions."""

    parameter: np.ndarray  # (T,) swept values (degrees)
    classes: tuple  # classes of interest, in column order
    protoshot: np.ndarray  # (T, len(classes))
    exmatchina: np.ndarray  # (T, len(classes))
    predicted: np.ndarray  # (T,) model argmax

    def __post_init__(self):
        t = len(self.parameter)
        for name in ("protoshot", "exmatchina"):
            arr = getattr(self, name)
            if arr.shape != (t, len(self.classes)):
                raise ValidationError(f"{name} series shape {arr.shape} != {(t, len(self.classes))}")
        if self.predicted.shape != (t,):
            raise ValidationError("predicted series length mismatch")

    def __len__(self) -> int:
        return len(self.parameter)

    def _argmax_classes(self, arr) -> np.ndarray:
        cls = np.asarray(self.classes)
        return cls[np.argmax(arr, axis=1)]

    def protoshot_argmax(self) -> np.ndarray:
        return self._argmax_classes(self.protoshot)

    def exmatchina_argmax(self) -> np.ndarray:
        return self._argmax_classes(self.exmatchina)

    def agreement_rates(self):
        """(protoshot_rate, exmatchina_rate) of argmax == model prediction."""
        ps = float(np.mean(self.protoshot_argmax() == self.predicted))
        ex = float(np.mean(self.exmatchina_argmax() == self.predicted))
        return ps, ex


def rotation_sweep(bundle, prototypes, support_sets, x, step_degrees=1.0,
                   feature_extractor=None, class_head=None,
                   batch_size=64, dtype=np.float32) -> SweepTrace:
    """Scores and predictions for the query rotated through [0, 360).

    prototypes and support_sets are mappings class -> Prototype / SupportSet
    over the same classes of interest.
    """
    from .model import split_model

    if step_degrees <= 0:
        raise ValidationError("step_degrees must be > 0")
    classes = tuple(sorted(prototypes))
    if sorted(support_sets) != list(classes):
        raise ValidationError("prototypes and support sets must cover the same classes")
    if feature_extractor is None or class_head is None:
        feature_extractor, class_head = split_model(bundle)

    angles = np.arange(0.0, 360.0, float(step_degrees))
    rotated = np.stack([rotate_image(x, a) for a in angles])

    proto_cols, ex_cols = [], []
    for c in classes:
        scores = np.empty(len(angles))
        ex = np.empty(len(angles))
        for lo in range(0, len(angles), batch_size):
            chunk = rotated[lo : lo + batch_size]
            scores[lo : lo + len(chunk)] = engine.score_batch(
                prototypes[c], feature_extractor, class_head, chunk, dtype
            )
            ex[lo : lo + len(chunk)] = engine.exmatchina_star_batch(
                support_sets[c], feature_extractor, chunk, dtype
            )
        proto_cols.append(scores)
        ex_cols.append(ex)

    predicted = np.empty(len(angles), dtype=np.int64)
    for lo in range(0, len(angles), batch_size):
        chunk = rotated[lo : lo + batch_size]
        predicted[lo : lo + len(chunk)] = predict_batch(bundle, chunk, dtype=dtype)[0]

    return SweepTrace(
        parameter=angles,
        classes=classes,
        protoshot=np.stack(proto_cols, axis=1),
        exmatchina=np.stack(ex_cols, axis=1),
        predicted=predicted,
    )


def region_ablation(prototype, feature_extractor, class_head, x, masks,
                    reference_value=0.0, dtype=np.float32) -> list:
    """Score after zeroing each masked region; the unmasked baseline comes
    first as ("baseline", score).

    masks is a sequence of (mask_id, bool grid) pairs over x's spatial
    extents.
    """
    x = np.asarray(x)
    h, w = x.shape[:2]
    stack = [x]
    ids = ["baseline"]
    for mask_id, mask in masks:
        mask = np.asarray(mask)
        if mask.shape != (h, w):
            raise ShapeMismatchError(
                f"mask {mask_id!r} shape {mask.shape} != image extents {(h, w)}"
            )
        xm = x.copy()
        xm[mask.astype(bool)] = reference_value
        stack.append(xm)
        ids.append(mask_id)
    scores = engine.score_batch(
        prototype, feature_extractor, class_head, np.stack(stack), dtype
    )
    return list(zip(ids, (float(s) for s in scores)))


def fgsm_generate(bundle, x, true_label, epsilon=0.15, dtype=np.float32) -> np.ndarray:
    """x + epsilon * sign(d loss / d x), clamped to [0, 1]."""
    if epsilon < 0:
        raise ValidationError("epsilon must be >= 0")
    x = np.asarray(x)
    if epsilon == 0:
        return x.copy()
    g = input_gradient(bundle, x, true_label, dtype=dtype)
    return np.clip(x + epsilon * np.sign(g), 0.0, 1.0).astype(x.dtype)


def fgsm_batch(bundle, xs, labels, epsilon=0.15, batch_size=128, dtype=np.float32) -> np.ndarray:
    if epsilon < 0:
        raise ValidationError("epsilon must be >= 0")
    xs = np.asarray(xs)
    if epsilon == 0:
        return xs.copy()
    out = np.empty_like(xs)
    labels = np.asarray(labels)
    for lo in range(0, len(xs), batch_size):
        hi = min(lo + batch_size, len(xs))
        g = input_gradient_batch(bundle, xs[lo:hi], labels[lo:hi], dtype=dtype)
        out[lo:hi] = np.clip(xs[lo:hi] + epsilon * np.sign(g), 0.0, 1.0)
    return out


@dataclass(frozen=True)
class RocCurve:
    """Threshold-detector operating points and area under the curve."""

    points: np.ndarray  # (T, 2) of (fpr, tpr), sorted
    auc: float
    thresholds: np.ndarray


def detector_roc(benign_scores, adversarial_scores) -> RocCurve:
    """ROC of the rule "score below threshold means adversarial".

    Thresholds sweep every distinct score plus -inf/+inf; AUC by the
    trapezoidal rule. Depends only on score ranks.
    """
    benign = np.asarray(benign_scores, dtype=np.float64)
    adv = np.asarray(adversarial_scores, dtype=np.float64)
    if benign.size == 0 or adv.size == 0:
        raise ValidationError("both score lists must be non-empty")
    thresholds = np.concatenate(
        ([-np.inf], np.unique(np.concatenate([benign, adv])), [np.inf])
    )
    fpr = np.array([np.mean(benign < t) for t in thresholds])
    tpr = np.array([np.mean(adv < t) for t in thresholds])
    order = np.lexsort((tpr, fpr))
    points = np.column_stack([fpr, tpr])[order]
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    auc = float(trapezoid(points[:, 1], points[:, 0]))
    return RocCurve(points=points, auc=auc, thresholds=thresholds)


def score_distributions(bundle, prototypes, dataset, n, seed, epsilon=0.15,
                        feature_extractor=None, class_head=None, dtype=np.float32):
    """In-class scores for n seeded samples, benign vs FGSM counterparts.

    Each sample is scored against its own class's prototype; the FGSM copy
    (cross-entropy against the true label) is scored the same way. Returns
    (benign_scores, adversarial_scores) as length-n arrays.
    """
    from .model import split_model

    if feature_extractor is None or class_head is None:
        feature_extractor, class_head = split_model(bundle)
    if n < 1 or n > len(dataset):
        raise ValidationError(f"cannot draw {n} samples from {len(dataset)}")
    for c in np.unique(dataset.labels):
        if int(c) not in prototypes:
            raise ValidationError(f"no prototype for dataset class {int(c)}")

    rng = Rng(seed)
    picks = rng.sample_without_replacement(len(dataset), n)
    images = dataset.images[picks]
    labels = dataset.labels[picks]
    adv = fgsm_batch(bundle, images, labels, epsilon, dtype=dtype)

    benign_scores = np.empty(n)
    adv_scores = np.empty(n)
    for c in np.unique(labels):
        at = np.flatnonzero(labels == c)
        proto = prototypes[int(c)]
        benign_scores[at] = engine.score_batch(
            proto, feature_extractor, class_head, images[at], dtype
        )
        adv_scores[at] = engine.score_batch(
            proto, feature_extractor, class_head, adv[at], dtype
        )
    return benign_scores, adv_scores
