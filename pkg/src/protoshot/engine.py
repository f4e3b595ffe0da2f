"""Prototype scoring core: class prototypes, weighted cosine scores,
occlusion attribution, nearest-exemplar and gradient baselines, and the
display normalization shared by every exporter.

Conventions:
  - f(x) is the feature-layer activation, w^c the classification-head
    column for class c. A prototype is the support mean of f(x) * w^c.
  - Scores are plain cosine similarities in [-1, 1]; a norm below 1e-12
    makes the score 0 and sets the degenerate flag rather than dividing.
  - Attribution is occlusion-based: z(i, j) = z_ref - score(x with the
    patch at (i, j) replaced by the reference value). Positive values mean
    the region supports the class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SupportSet
from .errors import NonFiniteError, ShapeMismatchError, ValidationError
from .network import class_logit_gradient

DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class Prototype:
    """Support-set mean of class-weighted features, with its provenance."""

    class_index: int
    vector: np.ndarray  # (K,)
    support_seed: int = 0
    support_size: int = 0

    def __post_init__(self):
        v = np.asarray(self.vector)
        if v.ndim != 1:
            raise ValidationError("prototype vector must be 1-D")
        if not np.all(np.isfinite(v)):
            raise NonFiniteError("prototype vector has non-finite entries")

    @property
    def width(self) -> int:
        return int(self.vector.shape[0])


@dataclass(frozen=True)
class ScoreRecord:
    """A cosine score plus its per-dimension decomposition.

    components[k] = p[k] * fw[k] / (|p| * |fw|); they sum to the score.
    """

    score: float
    components: np.ndarray
    class_index: int
    degenerate: bool = False


@dataclass(frozen=True)
class AttributionMap:
    """Grid of score deltas aligned with the query image's spatial extents."""

    values: np.ndarray  # (H, W)
    z_ref: float
    patch_size: int
    reference_value: float
    class_index: int = -1
    method: str = "occlusion"


def _weighted_features(feature_extractor, class_head, images, c, dtype=np.float32):
    feats = feature_extractor.features(np.asarray(images), dtype=dtype)
    w = class_head.class_weights(c).astype(feats.dtype)
    if feats.shape[1] != w.shape[0]:
        raise ShapeMismatchError(
            f"feature width {feats.shape[1]} != head width {w.shape[0]}"
        )
    return feats * w


def compute_prototype(feature_extractor, class_head, support: SupportSet,
                      dtype=np.float32) -> Prototype:
    """Mean class-weighted feature vector over the support set."""
    if len(support) == 0:
        raise ValidationError("support set is empty")
    weighted = _weighted_features(
        feature_extractor, class_head, support.images, support.class_index, dtype
    )
    return Prototype(
        class_index=support.class_index,
        vector=weighted.mean(axis=0),
        support_seed=support.seed,
        support_size=len(support),
    )


def cosine_scores(prototype_vector: np.ndarray, weighted_features: np.ndarray) -> np.ndarray:
    """Cosine of each row against the prototype; degenerate rows score 0.

    Accumulates in float64 with an elementwise product and a per-row sum so
    the result for a given row never depends on how the batch was chunked.
    """
    p = np.asarray(prototype_vector, dtype=np.float64)
    fw = np.asarray(weighted_features, dtype=np.float64)
    pnorm = np.sqrt((p * p).sum())
    fnorm = np.sqrt((fw * fw).sum(axis=1))
    denom = pnorm * fnorm
    safe = denom > DEGENERATE_NORM
    num = (fw * p).sum(axis=1)
    return np.where(safe, num / np.where(safe, denom, 1.0), 0.0)


def score_batch(prototype: Prototype, feature_extractor, class_head, images,
                dtype=np.float32) -> np.ndarray:
    """Vector of scores for a stack of query images (no decompositions)."""
    weighted = _weighted_features(
        feature_extractor, class_head, images, prototype.class_index, dtype
    )
    if not np.all(np.isfinite(weighted)):
        raise NonFiniteError("non-finite features in query batch")
    return cosine_scores(prototype.vector.astype(weighted.dtype), weighted)


def protoshot_score(prototype: Prototype, feature_extractor, class_head, x,
                    dtype=np.float32) -> ScoreRecord:
    """Weighted cosine similarity of one query against a prototype."""
    weighted = _weighted_features(
        feature_extractor, class_head, np.asarray(x)[None], prototype.class_index, dtype
    )[0]
    if not np.all(np.isfinite(weighted)):
        raise NonFiniteError("non-finite features for query")
    p = prototype.vector.astype(np.float64)
    fw = weighted.astype(np.float64)
    denom = float(np.sqrt((p * p).sum())) * float(np.sqrt((fw * fw).sum()))
    if denom <= DEGENERATE_NORM:
        return ScoreRecord(
            score=0.0,
            components=np.zeros_like(p, dtype=np.float64),
            class_index=prototype.class_index,
            degenerate=True,
        )
    components = (p * fw) / denom
    return ScoreRecord(
        score=float(components.sum()),
        components=components,
        class_index=prototype.class_index,
    )


def patch_window(i: int, j: int, patch_size: int, h: int, w: int):
    """Row/col slices of the patch for the cell (i, j), shifted to fit.

    Odd patches center on the cell; even patches anchor their top-left at
    the cell. Windows that would stick out are shifted inward, so every
    window has the full patch area and the cell is always inside it.
    """
    off = patch_size // 2 if patch_size % 2 == 1 else 0
    r0 = min(max(i - off, 0), h - patch_size)
    c0 = min(max(j - off, 0), w - patch_size)
    return slice(r0, r0 + patch_size), slice(c0, c0 + patch_size)


def attribution_map(prototype: Prototype, feature_extractor, class_head, x,
                    reference_value=0.0, patch_size=1, batch_size=256,
                    progress=None, dtype=np.float32) -> AttributionMap:
    """Occlusion attribution over every spatial cell of the query.

    For each cell a copy of x gets its patch replaced by reference_value
    and is rescored; z = z_ref - score(perturbed). The perturbed copies are
    scored in batches; progress (if given) is called with (done, total)
    after each batch. Cells whose patch already equals reference_value are
    exactly 0.0.
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeMismatchError(f"query must be (H, W, C), got {x.shape}")
    h, w, _ = x.shape
    if patch_size < 1:
        raise ValidationError("patch_size must be >= 1")
    if patch_size > min(h, w):
        raise ValidationError(
            f"patch {patch_size} larger than image extents {(h, w)}"
        )

    z_ref = float(score_batch(prototype, feature_extractor, class_head, x[None], dtype)[0])

    total = h * w
    scores = np.empty(total, dtype=np.float64)
    noop = np.zeros(total, dtype=bool)
    cells = [(i, j) for i in range(h) for j in range(w)]
    done = 0
    for lo in range(0, total, batch_size):
        batch_cells = cells[lo : lo + batch_size]
        stack = np.repeat(x[None], len(batch_cells), axis=0)
        for b, (i, j) in enumerate(batch_cells):
            rows, colsl = patch_window(i, j, patch_size, h, w)
            stack[b, rows, colsl, :] = reference_value
            noop[lo + b] = bool((stack[b, rows, colsl, :] == x[rows, colsl, :]).all())
        scores[lo : lo + len(batch_cells)] = score_batch(
            prototype, feature_extractor, class_head, stack, dtype
        )
        done += len(batch_cells)
        if progress is not None:
            progress(done, total)

    values = z_ref - scores.reshape(h, w)
    # identity replacements must come out as exactly 0.0; the scorer is not
    # required to reproduce z_ref bitwise across different batch shapes
    values[noop.reshape(h, w)] = 0.0
    return AttributionMap(
        values=values,
        z_ref=z_ref,
        patch_size=int(patch_size),
        reference_value=float(reference_value),
        class_index=prototype.class_index,
    )


def exmatchina_star(support: SupportSet, feature_extractor, x, dtype=np.float32):
    """Best unweighted feature cosine between the query and any exemplar.

    Returns (best_score, best_index); index is the position in the support
    set, ties resolved to the first maximum.
    """
    if len(support) == 0:
        raise ValidationError("support set is empty")
    feats = feature_extractor.features(support.images, dtype=dtype)
    q = feature_extractor.features(np.asarray(x)[None], dtype=dtype)[0]
    qnorm = float(np.linalg.norm(q))
    norms = np.linalg.norm(feats, axis=1)
    denom = norms * qnorm
    safe = denom > DEGENERATE_NORM
    sims = np.where(safe, (feats @ q) / np.where(safe, denom, 1.0), 0.0)
    best = int(np.argmax(sims))
    return float(sims[best]), best


def exmatchina_star_batch(support: SupportSet, feature_extractor, images,
                          dtype=np.float32) -> np.ndarray:
    """Best exemplar cosine for each query in a stack."""
    feats = feature_extractor.features(support.images, dtype=dtype)
    qs = feature_extractor.features(np.asarray(images), dtype=dtype)
    denom = np.linalg.norm(feats, axis=1)[None, :] * np.linalg.norm(qs, axis=1)[:, None]
    safe = denom > DEGENERATE_NORM
    sims = np.where(safe, (qs @ feats.T) / np.where(safe, denom, 1.0), 0.0)
    return sims.max(axis=1)


def saliency_map(bundle, x, c, dtype=np.float32) -> AttributionMap:
    """Gradient of the class-c pre-softmax activation w.r.t. the input,
    summed over channels."""
    g = class_logit_gradient(bundle, np.asarray(x), c, dtype=dtype)
    return AttributionMap(
        values=np.asarray(g, dtype=np.float64).sum(axis=-1),
        z_ref=0.0,
        patch_size=0,
        reference_value=float("nan"),
        class_index=int(c),
        method="saliency",
    )


def normalize_for_display(values):
    """Scale a map into [-1, 1] by its 99.9th-percentile absolute value.

    Returns (scaled, color_bound). The percentile interpolates linearly
    between order statistics; an all-zero map gets bound 1 so the output
    stays defined.
    """
    if isinstance(values, AttributionMap):
        values = values.values
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValidationError("cannot normalize an empty map")
    bound = float(np.percentile(np.abs(values), 99.9))
    if bound == 0.0:
        bound = 1.0
    return np.clip(values / bound, -1.0, 1.0), bound
