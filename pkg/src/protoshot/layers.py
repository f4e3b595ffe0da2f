"""Layer vocabulary: specs, shape rules, and forward/backward kernels.

Everything operates on dense numpy arrays, channels-last, with an explicit
leading batch axis inside the kernels: images are (N, H, W, C) and vectors
are (N, K). Single-sample entry points live in :mod:`protoshot.network`.

Compute runs in float32 by default; callers pass ``dtype=np.float64`` to get
the double-precision verification mode. Kernels are pure functions, so a
fixed input and dtype give bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError, UnsupportedLayerError, ValidationError

LAYER_KINDS = (
    "conv2d",
    "maxpool2d",
    "dense",
    "relu",
    "batchnorm-inference",
    "dropout",
    "flatten",
    "softmax",
)

# Fixed role order per kind; defines blob layout and save determinism.
WEIGHT_ROLES = {
    "conv2d": ("kernel", "bias"),
    "dense": ("kernel", "bias"),
    "batchnorm-inference": ("gamma", "beta", "moving_mean", "moving_var"),
}


@dataclass(frozen=True)
class WeightRef:
    """Named slot in the model's weight store, with its declared shape."""

    role: str
    name: str
    shape: tuple[int, ...]
    trainable: bool = True

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class LayerSpec:
    """One manifest row: a layer kind plus its hyperparameters and weight refs.

    Immutable; safe to share across threads.
    """

    name: str
    kind: str
    filters: int | None = None
    kernel: tuple[int, int] | None = None
    stride: int = 1
    padding: str = "valid"
    pool: tuple[int, int] | None = None
    units: int | None = None
    epsilon: float | None = None
    rate: float | None = None
    weights: tuple[WeightRef, ...] = field(default_factory=tuple)

    def weight_named(self, role: str) -> WeightRef:
        for ref in self.weights:
            if ref.role == role:
                return ref
        raise UnsupportedLayerError(f"layer {self.name!r} has no {role!r} weight")


def validate_layer(spec: LayerSpec) -> None:
    """Check hyperparameters against the layer kind. Raises ValidationError."""
    if spec.kind not in LAYER_KINDS:
        raise ValidationError(f"unknown layer kind {spec.kind!r}")
    if spec.kind == "conv2d":
        if not spec.filters or spec.filters < 1:
            raise ValidationError(f"conv2d {spec.name!r}: filters must be >= 1")
        if not spec.kernel or min(spec.kernel) < 1:
            raise ValidationError(f"conv2d {spec.name!r}: kernel extents must be >= 1")
        if spec.stride < 1:
            raise ValidationError(f"conv2d {spec.name!r}: stride must be >= 1")
        if spec.padding not in ("valid", "same"):
            raise ValidationError(f"conv2d {spec.name!r}: padding must be valid|same")
    elif spec.kind == "maxpool2d":
        if not spec.pool or min(spec.pool) < 1:
            raise ValidationError(f"maxpool2d {spec.name!r}: pool size must be >= 1")
        if spec.stride < 1:
            raise ValidationError(f"maxpool2d {spec.name!r}: stride must be >= 1")
    elif spec.kind == "dense":
        if not spec.units or spec.units < 1:
            raise ValidationError(f"dense {spec.name!r}: units must be >= 1")
    elif spec.kind == "batchnorm-inference":
        if spec.epsilon is None or spec.epsilon <= 0:
            raise ValidationError(f"batchnorm {spec.name!r}: epsilon must be > 0")
    elif spec.kind == "dropout":
        if spec.rate is None or not (0.0 <= spec.rate < 1.0):
            raise ValidationError(f"dropout {spec.name!r}: rate must be in [0, 1)")
    roles = WEIGHT_ROLES.get(spec.kind, ())
    have = tuple(ref.role for ref in spec.weights)
    if have != roles:
        raise ValidationError(
            f"layer {spec.name!r} ({spec.kind}) must declare weight roles {roles}, got {have}"
        )


def output_shape(spec: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Per-sample output shape, validating weight shapes against in_shape."""
    if spec.kind == "conv2d":
        if len(in_shape) != 3:
            raise ShapeMismatchError(f"conv2d {spec.name!r}: input must be (H, W, C), got {in_shape}")
        h, w, c = in_shape
        kh, kw = spec.kernel
        kref = spec.weight_named("kernel")
        if kref.shape != (kh, kw, c, spec.filters):
            raise ShapeMismatchError(
                f"conv2d {spec.name!r}: kernel weight shape {kref.shape} != {(kh, kw, c, spec.filters)}"
            )
        if spec.weight_named("bias").shape != (spec.filters,):
            raise ShapeMismatchError(f"conv2d {spec.name!r}: bias shape mismatch")
        if spec.padding == "valid":
            if h < kh or w < kw:
                raise ShapeMismatchError(f"conv2d {spec.name!r}: kernel {spec.kernel} larger than input {in_shape}")
            oh = (h - kh) // spec.stride + 1
            ow = (w - kw) // spec.stride + 1
        else:
            oh = -(-h // spec.stride)
            ow = -(-w // spec.stride)
        return (oh, ow, spec.filters)
    if spec.kind == "maxpool2d":
        if len(in_shape) != 3:
            raise ShapeMismatchError(f"maxpool2d {spec.name!r}: input must be (H, W, C), got {in_shape}")
        h, w, c = in_shape
        ph, pw = spec.pool
        if h < ph or w < pw:
            raise ShapeMismatchError(f"maxpool2d {spec.name!r}: pool {spec.pool} larger than input {in_shape}")
        return ((h - ph) // spec.stride + 1, (w - pw) // spec.stride + 1, c)
    if spec.kind == "dense":
        if len(in_shape) != 1:
            raise ShapeMismatchError(f"dense {spec.name!r}: input must be flat, got {in_shape}")
        kref = spec.weight_named("kernel")
        if kref.shape != (in_shape[0], spec.units):
            raise ShapeMismatchError(
                f"dense {spec.name!r}: kernel weight shape {kref.shape} != {(in_shape[0], spec.units)}"
            )
        if spec.weight_named("bias").shape != (spec.units,):
            raise ShapeMismatchError(f"dense {spec.name!r}: bias shape mismatch")
        return (spec.units,)
    if spec.kind == "batchnorm-inference":
        c = in_shape[-1]
        for ref in spec.weights:
            if ref.shape != (c,):
                raise ShapeMismatchError(
                    f"batchnorm {spec.name!r}: {ref.role} shape {ref.shape} != {(c,)}"
                )
        return in_shape
    if spec.kind == "flatten":
        return (int(np.prod(in_shape)),)
    if spec.kind in ("relu", "dropout", "softmax"):
        return in_shape
    raise UnsupportedLayerError(f"unknown layer kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# conv2d

def _same_pads(extent: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-extent // stride)
    total = max((out - 1) * stride + k - extent, 0)
    return total // 2, total - total // 2


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Patch matrix (N, Ho, Wo, kh, kw, C) from padded input (N, Hp, Wp, C)."""
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    view = view[:, ::stride, ::stride]  # (N, Ho, Wo, C, kh, kw)
    return np.ascontiguousarray(view.transpose(0, 1, 2, 4, 5, 3))


def conv2d_forward(x, kernel, bias, stride=1, padding="valid", want_cache=False):
    n, h, w, c = x.shape
    kh, kw, _, filters = kernel.shape
    if padding == "same":
        pt, pb = _same_pads(h, kh, stride)
        pl, pr = _same_pads(w, kw, stride)
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    else:
        pt = pl = 0
        xp = x
    cols = _im2col(xp, kh, kw, stride)
    ncols = cols.reshape(-1, kh * kw * c)
    y = ncols @ kernel.reshape(kh * kw * c, filters) + bias
    y = y.reshape(n, cols.shape[1], cols.shape[2], filters)
    if want_cache:
        return y, (cols, xp.shape, x.shape, (pt, pl))
    return y


def conv2d_backward(dy, cache, kernel, stride=1):
    cols, xp_shape, x_shape, (pt, pl) = cache
    n, ho, wo, filters = dy.shape
    kh, kw, cin, _ = kernel.shape
    dy_mat = dy.reshape(-1, filters)
    dkernel = (cols.reshape(-1, kh * kw * cin).T @ dy_mat).reshape(kernel.shape)
    dbias = dy_mat.sum(axis=0)
    dcols = (dy_mat @ kernel.reshape(kh * kw * cin, filters).T).reshape(n, ho, wo, kh, kw, cin)
    dxp = np.zeros(xp_shape, dtype=dy.dtype)
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, ki : ki + ho * stride : stride, kj : kj + wo * stride : stride, :] += dcols[:, :, :, ki, kj, :]
    h, w = x_shape[1], x_shape[2]
    dx = dxp[:, pt : pt + h, pl : pl + w, :]
    return dx, dkernel, dbias


# ---------------------------------------------------------------------------
# maxpool2d

def maxpool2d_forward(x, pool, stride, want_cache=False):
    n, h, w, c = x.shape
    ph, pw = pool
    view = np.lib.stride_tricks.sliding_window_view(x, (ph, pw), axis=(1, 2))
    view = view[:, ::stride, ::stride]  # (N, Ho, Wo, C, ph, pw)
    flat = view.reshape(*view.shape[:4], ph * pw)
    # argmax over the row-major window scan; ties go to the first maximum
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    if want_cache:
        return y, (arg, x.shape)
    return y


def maxpool2d_backward(dy, cache, pool, stride):
    arg, x_shape = cache
    n, h, w, c = x_shape
    ph, pw = pool
    no, ho, wo, co = dy.shape
    ai, aj = np.divmod(arg, pw)
    base_i = (np.arange(ho) * stride)[None, :, None, None]
    base_j = (np.arange(wo) * stride)[None, None, :, None]
    rows = base_i + ai
    cols = base_j + aj
    batch = np.arange(no)[:, None, None, None]
    chan = np.arange(co)[None, None, None, :]
    flat_idx = ((batch * h + rows) * w + cols) * c + chan
    dx = np.zeros(n * h * w * c, dtype=dy.dtype)
    np.add.at(dx, flat_idx.ravel(), dy.ravel())
    return dx.reshape(x_shape)


# ---------------------------------------------------------------------------
# everything else

def dense_forward(x, kernel, bias):
    return x @ kernel + bias


def dense_backward(dy, x, kernel):
    return dy @ kernel.T, x.T @ dy, dy.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(dy, x_pre):
    return np.where(x_pre > 0, dy, 0)


def batchnorm_forward(x, gamma, beta, mean, var, epsilon):
    inv = gamma / np.sqrt(var + epsilon)
    return (x - mean) * inv + beta


def batchnorm_backward(dy, gamma, var, epsilon):
    return dy * (gamma / np.sqrt(var + epsilon))


def dropout_forward(x, rate, mask=None):
    """Inverted dropout. mask=None means inference (identity)."""
    if mask is None:
        return x
    return x * mask / (1.0 - rate)


def dropout_backward(dy, rate, mask):
    if mask is None:
        return dy
    return dy * mask / (1.0 - rate)


def softmax_forward(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dy, y):
    dot = (dy * y).sum(axis=-1, keepdims=True)
    return y * (dy - dot)
