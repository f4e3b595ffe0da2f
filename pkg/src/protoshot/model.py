"""Model bundles and the PSX on-disk format.

A bundle is an ordered layer manifest, a weight store, the name of the
feature layer, and class labels. On disk it is a JSON manifest plus a raw
binary blob:

  manifest: format_version "psx1", input_shape, layers (each layer lists its
            weight entries with name/shape/offset/byte_length/trainable),
            feature_layer, class_labels.
  blob:     8-byte magic b"PSXBLOB1" followed by the weight tensors as
            little-endian float32, row-major, at the declared offsets.

The writer is canonical (fixed key order, two-space indent, contiguous
offsets starting at 8) so save -> load -> save reproduces files byte for
byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import layers as L
from . import network
from .errors import FormatError, UnsupportedLayerError, ValidationError

BLOB_MAGIC = b"PSXBLOB1"
FORMAT_VERSION = "psx1"

# manifest keys emitted per layer kind, in order
_CONFIG_KEYS = {
    "conv2d": ("filters", "kernel", "stride", "padding"),
    "maxpool2d": ("pool", "stride"),
    "dense": ("units",),
    "relu": (),
    "batchnorm-inference": ("epsilon",),
    "dropout": ("rate",),
    "flatten": (),
    "softmax": (),
}


@dataclass(frozen=True)
class ModelBundle:
    layers: tuple
    weights: dict
    input_shape: tuple
    feature_layer: str
    class_labels: tuple = ()

    @property
    def num_classes(self) -> int:
        return len(self.class_labels)

    def layer(self, name: str):
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise ValidationError(f"no layer named {name!r}")

    def layer_output_shapes(self) -> list:
        """Per-layer output shape, following the manifest order."""
        shapes = []
        cur = tuple(self.input_shape)
        for spec in self.layers:
            cur = L.output_shape(spec, cur)
            shapes.append(cur)
        return shapes

    def output_shape_of(self, name: str) -> tuple:
        cur = tuple(self.input_shape)
        for spec in self.layers:
            cur = L.output_shape(spec, cur)
            if spec.name == name:
                return cur
        raise ValidationError(f"no layer named {name!r}")

    def with_weights(self, weights: dict) -> "ModelBundle":
        return replace(self, weights=dict(weights))


def validate_bundle(bundle: ModelBundle, require_weights: bool = True) -> None:
    """Structural checks: unique names, resolvable weights, consistent shapes.

    require_weights=False admits manifest-only bundles (parameter arithmetic
    without materialized tensors).
    """
    names = [s.name for s in bundle.layers]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate layer names in manifest")
    if bundle.feature_layer not in names:
        raise ValidationError(f"feature layer {bundle.feature_layer!r} not in manifest")
    wnames = [w.name for s in bundle.layers for w in s.weights]
    if len(set(wnames)) != len(wnames):
        raise ValidationError("duplicate weight names in manifest")
    for spec in bundle.layers:
        L.validate_layer(spec)
    bundle.layer_output_shapes()  # raises on inconsistent chain
    if require_weights:
        for spec in bundle.layers:
            for ref in spec.weights:
                if ref.name not in bundle.weights:
                    raise ValidationError(f"weight {ref.name!r} missing from store")
                got = tuple(bundle.weights[ref.name].shape)
                if got != tuple(ref.shape):
                    raise ValidationError(
                        f"weight {ref.name!r} has shape {got}, manifest says {tuple(ref.shape)}"
                    )


def count_parameters(bundle: ModelBundle):
    """(total, trainable, non_trainable) element counts from the manifest.

    Works on manifest-only bundles; batchnorm moving statistics are the
    non-trainable entries.
    """
    total = trainable = 0
    for spec in bundle.layers:
        for ref in spec.weights:
            n = int(np.prod(ref.shape, dtype=np.int64)) if ref.shape else 1
            total += n
            if ref.trainable:
                trainable += n
    return total, trainable, total - trainable


# ---------------------------------------------------------------------------
# PSX serialization


def _layer_to_json(spec, offsets) -> dict:
    entry = {"name": spec.name, "kind": spec.kind}
    for key in _CONFIG_KEYS[spec.kind]:
        entry[key] = getattr(spec, key)
    entry["weights"] = [
        {
            "role": ref.role,
            "name": ref.name,
            "shape": list(ref.shape),
            "offset": offsets[ref.name][0],
            "byte_length": offsets[ref.name][1],
            "trainable": bool(ref.trainable),
        }
        for ref in spec.weights
    ]
    return entry


def save_model(bundle: ModelBundle, manifest_path, blob_path) -> None:
    """Write the canonical PSX pair for a fully materialized bundle."""
    validate_bundle(bundle)
    offsets = {}
    cursor = len(BLOB_MAGIC)
    chunks = [BLOB_MAGIC]
    for spec in bundle.layers:
        for ref in spec.weights:
            raw = np.ascontiguousarray(bundle.weights[ref.name], dtype="<f4").tobytes()
            offsets[ref.name] = (cursor, len(raw))
            chunks.append(raw)
            cursor += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "input_shape": list(bundle.input_shape),
        "layers": [_layer_to_json(spec, offsets) for spec in bundle.layers],
        "feature_layer": bundle.feature_layer,
        "class_labels": list(bundle.class_labels),
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(blob_path, "wb") as fh:
        fh.write(b"".join(chunks))


def _spec_from_json(entry: dict):
    kind = entry.get("kind")
    if kind not in _CONFIG_KEYS:
        raise FormatError(f"unknown layer kind {kind!r} in manifest")
    cfg = {key: entry[key] for key in _CONFIG_KEYS[kind] if key in entry}
    for pair_key in ("kernel", "pool"):
        if pair_key in cfg:
            cfg[pair_key] = tuple(int(d) for d in cfg[pair_key])
    if "stride" in cfg:
        cfg["stride"] = int(cfg["stride"])
    weights = tuple(
        L.WeightRef(
            role=w["role"],
            name=w["name"],
            shape=tuple(int(d) for d in w["shape"]),
            trainable=bool(w.get("trainable", True)),
        )
        for w in entry.get("weights", ())
    )
    spec = L.LayerSpec(name=entry["name"], kind=kind, weights=weights, **cfg)
    L.validate_layer(spec)
    return spec


def load_model(manifest_path, blob_path) -> ModelBundle:
    """Read a PSX pair into an immutable ModelBundle."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest is not valid JSON: {exc}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"unsupported format_version {manifest.get('format_version')!r}"
        )
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    if blob[: len(BLOB_MAGIC)] != BLOB_MAGIC:
        raise FormatError("blob magic mismatch, not a PSXBLOB1 file")

    specs = []
    store = {}
    for entry in manifest.get("layers", []):
        spec = _spec_from_json(entry)
        specs.append(spec)
        for w in entry.get("weights", ()):
            name = w["name"]
            if name in store:
                raise FormatError(f"duplicate weight name {name!r}")
            shape = tuple(int(d) for d in w["shape"])
            offset, nbytes = int(w["offset"]), int(w["byte_length"])
            want = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
            if nbytes != want:
                raise FormatError(
                    f"weight {name!r}: byte_length {nbytes} inconsistent with shape {shape}"
                )
            if offset < len(BLOB_MAGIC) or offset + nbytes > len(blob):
                raise FormatError(f"weight {name!r} extends past end of blob")
            arr = np.frombuffer(blob, dtype="<f4", count=want // 4, offset=offset)
            store[name] = arr.reshape(shape).copy()

    bundle = ModelBundle(
        layers=tuple(specs),
        weights=store,
        input_shape=tuple(int(d) for d in manifest["input_shape"]),
        feature_layer=manifest["feature_layer"],
        class_labels=tuple(manifest.get("class_labels", ())),
    )
    try:
        validate_bundle(bundle)
    except ValidationError as exc:
        raise FormatError(str(exc)) from None
    return bundle


# ---------------------------------------------------------------------------
# Feature/classifier split


@dataclass(frozen=True)
class ClassHead:
    """Per-class weight vectors w^c (columns) and biases b^c."""

    weights: np.ndarray  # (K, C)
    biases: np.ndarray  # (C,)
    synthetic: bool = False  # all-ones head for headless bundles

    @property
    def feature_width(self) -> int:
        return int(self.weights.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.weights.shape[1])

    def class_weights(self, c: int) -> np.ndarray:
        if self.synthetic:
            # few-shot mode: every class shares the all-ones weight vector
            return self.weights[:, 0]
        if not (0 <= int(c) < self.num_classes):
            raise ValidationError(f"class index {c} out of range")
        return self.weights[:, int(c)]

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights + self.biases


@dataclass(frozen=True)
class FeatureExtractor:
    """Forward composition truncated at the bundle's feature layer."""

    bundle: ModelBundle
    layer_name: str
    width: int = field(default=0)

    def features(self, x_batch: np.ndarray, dtype=np.float32) -> np.ndarray:
        out = network.forward_batch(
            self.bundle, x_batch, stop_layer=self.layer_name, dtype=dtype
        )
        return out.reshape(out.shape[0], -1)

    def features_one(self, x: np.ndarray, dtype=np.float32) -> np.ndarray:
        return self.features(np.asarray(x)[None], dtype=dtype)[0]


def _head_layers(bundle: ModelBundle):
    names = [s.name for s in bundle.layers]
    idx = names.index(bundle.feature_layer)
    return bundle.layers[idx + 1 :]


def split_model(bundle: ModelBundle):
    """(FeatureExtractor, ClassHead) at the designated feature layer.

    A headless bundle (nothing after the feature layer) gets a synthetic
    all-ones head so few-shot scoring uses the same code path. Dropout in
    the head is tolerated (identity at inference); anything else besides a
    single dense + softmax is an error.
    """
    feat_shape = bundle.output_shape_of(bundle.feature_layer)
    width = int(np.prod(feat_shape, dtype=np.int64))
    extractor = FeatureExtractor(bundle=bundle, layer_name=bundle.feature_layer, width=width)

    head = [s for s in _head_layers(bundle) if s.kind != "dropout"]
    if not head:
        classes = max(bundle.num_classes, 1)
        ones = np.ones((width, classes), dtype=np.float32)
        zeros = np.zeros(classes, dtype=np.float32)
        return extractor, ClassHead(weights=ones, biases=zeros, synthetic=True)
    kinds = [s.kind for s in head]
    if kinds != ["dense", "softmax"]:
        raise UnsupportedLayerError(
            f"classification head must be dense+softmax, found {kinds}"
        )
    dense = head[0]
    kernel = bundle.weights[dense.weight_named("kernel").name]
    bias = bundle.weights[dense.weight_named("bias").name]
    if kernel.shape[0] != width:
        raise ValidationError(
            f"feature width {width} does not match head kernel {kernel.shape}"
        )
    return extractor, ClassHead(weights=kernel, biases=bias)


def predict(bundle: ModelBundle, x: np.ndarray, dtype=np.float32):
    """(class_index, probability_vector) for one input; ties go low."""
    head = _head_layers(bundle)
    if not head:
        raise UnsupportedLayerError("headless bundle has no classes to predict")
    probs = network.network_forward(bundle, np.asarray(x), dtype=dtype)
    return int(np.argmax(probs)), probs


def predict_batch(bundle: ModelBundle, x: np.ndarray, dtype=np.float32):
    if not _head_layers(bundle):
        raise UnsupportedLayerError("headless bundle has no classes to predict")
    probs = network.forward_batch(bundle, x, dtype=dtype)
    return np.argmax(probs, axis=1), probs
