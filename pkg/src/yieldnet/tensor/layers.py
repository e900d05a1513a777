"""Dense-tensor layer ops with forward and reverse-mode passes.

Data layout is NHWC throughout: batch, height (time), width (bin), channels
(bands). All arithmetic is 64-bit. Layers are value-semantic over numpy
arrays; forward caches are returned to the caller rather than stored on the
layer, so a frozen graph can serve concurrent inference.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import GraphBuildError
from . import backend
from .init import xavier_uniform

VALID = "valid"
SAME = "same"


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer, serializable to/from JSON."""

    kind: str  # conv2d | batchnorm | relu | dense | flatten
    filter_height: int | None = None
    filter_width: int | None = None
    stride: int | None = None
    padding: str | None = None
    out_channels: int | None = None
    out_units: int | None = None
    epsilon: float = 1e-5
    momentum: float = 0.99

    def __post_init__(self):
        if self.kind == "conv2d":
            if None in (self.filter_height, self.filter_width, self.stride,
                        self.padding, self.out_channels):
                raise ValueError("conv2d spec requires filter size, stride, padding, out_channels")
            if self.stride <= 0:
                raise ValueError(f"stride must be positive, got {self.stride}")
            if self.padding not in (VALID, SAME):
                raise ValueError(f"padding must be 'valid' or 'same', got {self.padding!r}")
        elif self.kind == "dense":
            if self.out_units is None or self.out_units <= 0:
                raise ValueError("dense spec requires positive out_units")
        elif self.kind not in ("batchnorm", "relu", "flatten"):
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_json(self) -> dict:
        d = {"kind": self.kind}
        for k in ("filter_height", "filter_width", "stride", "padding",
                  "out_channels", "out_units"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        if self.kind == "batchnorm":
            d["epsilon"] = self.epsilon
            d["momentum"] = self.momentum
        return d

    @staticmethod
    def from_json(d: dict) -> "LayerSpec":
        return LayerSpec(**d)


def conv_spec(kh, kw, stride, padding, out_channels) -> LayerSpec:
    return LayerSpec(kind="conv2d", filter_height=kh, filter_width=kw,
                     stride=stride, padding=padding, out_channels=out_channels)


def dense_spec(out_units) -> LayerSpec:
    return LayerSpec(kind="dense", out_units=out_units)


class ParamBlock:
    """Named parameter arrays for one layer.

    Running statistics are registered non-trainable: they ride along in
    checkpoints but are excluded from the trainable count and from Adam.
    """

    def __init__(self, name: str):
        self.name = name
        self.arrays: dict[str, np.ndarray] = {}
        self._trainable: list[str] = []

    def add(self, key: str, value: np.ndarray, trainable: bool = True):
        self.arrays[key] = np.asarray(value, dtype=np.float64)
        if trainable:
            self._trainable.append(key)

    def trainable_items(self):
        return [(k, self.arrays[k]) for k in self._trainable]

    def trainable_keys(self):
        return list(self._trainable)

    def trainable_count(self) -> int:
        return sum(self.arrays[k].size for k in self._trainable)

    def __repr__(self):
        return f"ParamBlock({self.name!r}, {self.trainable_count()} trainable)"


class GradStore:
    """Accumulates parameter gradients keyed by ParamBlock identity.

    Shared blocks receive summed contributions from every branch that
    touches them.
    """

    def __init__(self):
        self._grads: dict[int, dict[str, np.ndarray]] = {}

    def add(self, block: ParamBlock, key: str, grad: np.ndarray):
        slot = self._grads.setdefault(id(block), {})
        if key in slot:
            slot[key] = slot[key] + grad
        else:
            slot[key] = np.asarray(grad, dtype=np.float64)

    def get(self, block: ParamBlock, key: str) -> np.ndarray:
        return self._grads[id(block)][key]


def conv_geometry(h, w, kh, kw, stride, padding):
    """Output extents and (top, bottom, left, right) padding for one conv.

    'valid' requires the filter to fit; 'same' gives ceil(extent/stride)
    outputs with any odd padding pixel going to the bottom/right.
    """
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    if padding == VALID:
        if h < kh or w < kw:
            raise GraphBuildError(
                f"{kh}x{kw} filter does not fit {h}x{w} input under valid padding")
        oh = (h - kh) // stride + 1
        ow = (w - kw) // stride + 1
        pads = (0, 0, 0, 0)
    elif padding == SAME:
        oh = -(-h // stride)
        ow = -(-w // stride)
        ph = max((oh - 1) * stride + kh - h, 0)
        pw = max((ow - 1) * stride + kw - w, 0)
        pads = (ph // 2, ph - ph // 2, pw // 2, pw - pw // 2)
    else:
        raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")
    return oh, ow, pads


class Layer:
    """Base layer: parameter-free and shape-preserving unless overridden."""

    params: ParamBlock | None = None

    def __init__(self, spec: LayerSpec, name: str):
        self.spec = spec
        self.name = name

    def build(self, in_shape: tuple, rng: np.random.Generator) -> tuple:
        return in_shape

    def forward(self, x: np.ndarray, mode: str, caches: list | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache, grads: GradStore) -> np.ndarray:
        raise NotImplementedError


class Conv2D(Layer):
    """2-D convolution over the spatial plane with bands/features as channels."""

    def build(self, in_shape, rng):
        h, w, cin = in_shape
        s = self.spec
        oh, ow, pads = conv_geometry(h, w, s.filter_height, s.filter_width,
                                     s.stride, s.padding)
        self._geom = (h, w, oh, ow, pads)
        fan_in = s.filter_height * s.filter_width * cin
        fan_out = s.filter_height * s.filter_width * s.out_channels
        self.params = ParamBlock(self.name)
        self.params.add("weights", xavier_uniform(
            (s.filter_height, s.filter_width, cin, s.out_channels), fan_in, fan_out, rng))
        self.params.add("bias", np.zeros(s.out_channels))
        return (oh, ow, s.out_channels)

    def forward(self, x, mode, caches=None):
        s = self.spec
        w = self.params.arrays["weights"]
        kh, kw, cin, cout = w.shape
        if x.ndim != 4 or x.shape[3] != cin:
            raise ValueError(
                f"conv2d {self.name}: expected input (N,H,W,{cin}), got {x.shape}")
        h, win, oh, ow, pads = self._geom
        if x.shape[1] != h or x.shape[2] != win:
            raise ValueError(
                f"conv2d {self.name}: built for {h}x{win} inputs, got {x.shape[1]}x{x.shape[2]}")
        cols = backend.im2col(np.ascontiguousarray(x, dtype=np.float64),
                              kh, kw, s.stride, pads, oh, ow)
        y = cols @ w.reshape(kh * kw * cin, cout) + self.params.arrays["bias"]
        if caches is not None:
            caches.append((x.shape, cols))
        return y.reshape(x.shape[0], oh, ow, cout)

    def backward(self, dy, cache, grads):
        s = self.spec
        w = self.params.arrays["weights"]
        kh, kw, cin, cout = w.shape
        xshape, cols = cache
        _, _, oh, ow, pads = self._geom
        dy2 = dy.reshape(-1, cout)
        grads.add(self.params, "weights", (cols.T @ dy2).reshape(w.shape))
        grads.add(self.params, "bias", dy2.sum(axis=0))
        dcols = dy2 @ w.reshape(kh * kw * cin, cout).T
        return backend.col2im(np.ascontiguousarray(dcols), xshape,
                              kh, kw, s.stride, pads, oh, ow)

    def backward_params(self, dy, cache, grads):
        w = self.params.arrays["weights"]
        cout = w.shape[3]
        _, cols = cache
        dy2 = dy.reshape(-1, cout)
        grads.add(self.params, "weights", (cols.T @ dy2).reshape(w.shape))
        grads.add(self.params, "bias", dy2.sum(axis=0))


class BatchNorm(Layer):
    """Per-channel normalization over all leading axes.

    Train mode normalizes with the batch mean and population variance and
    updates running statistics with exponential momentum; infer mode
    normalizes with the running statistics.
    """

    def build(self, in_shape, rng):
        channels = in_shape[-1]
        self.params = ParamBlock(self.name)
        self.params.add("gamma", np.ones(channels))
        self.params.add("beta", np.zeros(channels))
        self.params.add("running_mean", np.zeros(channels), trainable=False)
        self.params.add("running_var", np.ones(channels), trainable=False)
        return in_shape

    def forward(self, x, mode, caches=None):
        p = self.params.arrays
        c = p["gamma"].shape[0]
        if x.shape[-1] != c:
            raise ValueError(
                f"batchnorm {self.name}: expected {c} channels, got {x.shape[-1]}")
        flat = x.reshape(-1, c)
        if mode == "train":
            if flat.shape[0] < 2:
                raise ValueError(
                    f"batchnorm {self.name}: train mode needs >= 2 values per channel, "
                    f"got {flat.shape[0]}")
            mean = flat.mean(axis=0)
            var = flat.var(axis=0)  # population (biased) variance
            denom = var + self.spec.epsilon
            if np.any(denom <= 0.0):
                raise ZeroDivisionError(
                    f"batchnorm {self.name}: zero variance with epsilon "
                    f"{self.spec.epsilon}")
            std = np.sqrt(denom)
            m = self.spec.momentum
            p["running_mean"] *= m
            p["running_mean"] += (1.0 - m) * mean
            p["running_var"] *= m
            p["running_var"] += (1.0 - m) * var
        else:
            mean = p["running_mean"]
            denom = p["running_var"] + self.spec.epsilon
            if np.any(denom <= 0.0):
                raise ZeroDivisionError(
                    f"batchnorm {self.name}: zero running variance with epsilon "
                    f"{self.spec.epsilon}")
            std = np.sqrt(denom)
        xhat = (flat - mean) / std
        y = p["gamma"] * xhat + p["beta"]
        if caches is not None:
            caches.append((mode, xhat, std, x.shape))
        return y.reshape(x.shape)

    def backward(self, dy, cache, grads):
        mode, xhat, std, xshape = cache
        p = self.params.arrays
        c = p["gamma"].shape[0]
        dy2 = dy.reshape(-1, c)
        grads.add(self.params, "gamma", (dy2 * xhat).sum(axis=0))
        grads.add(self.params, "beta", dy2.sum(axis=0))
        dxhat = dy2 * p["gamma"]
        if mode == "train":
            dx = (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)) / std
        else:
            dx = dxhat / std
        return dx.reshape(xshape)


class ReLU(Layer):
    def forward(self, x, mode, caches=None):
        y = np.maximum(x, 0.0)
        if caches is not None:
            caches.append(x > 0.0)  # derivative at exactly 0 is 0
        return y

    def backward(self, dy, cache, grads):
        return dy * cache


class Flatten(Layer):
    def build(self, in_shape, rng):
        n = 1
        for e in in_shape:
            n *= e
        return (n,)

    def forward(self, x, mode, caches=None):
        if caches is not None:
            caches.append(x.shape)
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, cache, grads):
        return dy.reshape(cache)


class Dense(Layer):
    """Affine map x @ W + b on (N, F) inputs."""

    def build(self, in_shape, rng):
        if len(in_shape) != 1:
            raise GraphBuildError(
                f"dense {self.name}: expected flat input, got shape {in_shape}")
        fan_in = in_shape[0]
        fan_out = self.spec.out_units
        self.params = ParamBlock(self.name)
        self.params.add("weights", xavier_uniform((fan_in, fan_out), fan_in, fan_out, rng))
        self.params.add("bias", np.zeros(fan_out))
        return (fan_out,)

    def forward(self, x, mode, caches=None):
        w = self.params.arrays["weights"]
        if x.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ValueError(
                f"dense {self.name}: expected input (N,{w.shape[0]}), got {x.shape}")
        if caches is not None:
            caches.append(x)
        return x @ w + self.params.arrays["bias"]

    def backward(self, dy, cache, grads):
        w = self.params.arrays["weights"]
        grads.add(self.params, "weights", cache.T @ dy)
        grads.add(self.params, "bias", dy.sum(axis=0))
        return dy @ w.T

    def backward_params(self, dy, cache, grads):
        grads.add(self.params, "weights", cache.T @ dy)
        grads.add(self.params, "bias", dy.sum(axis=0))


_LAYER_CLASSES = {
    "conv2d": Conv2D,
    "batchnorm": BatchNorm,
    "relu": ReLU,
    "dense": Dense,
    "flatten": Flatten,
}


def make_layer(spec: LayerSpec, name: str) -> Layer:
    return _LAYER_CLASSES[spec.kind](spec, name)
