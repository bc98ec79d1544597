"""Declarative network recipes.

A :class:`ModelSpec` is an input shape plus an ordered tuple of
:class:`LayerSpec` records. Global recipes (VGG3, the volumetric CNN), the
narrowing rule that derives a local subnetwork from a global spec and a
patch, and the coarse aggregation nets all produce ``ModelSpec`` values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .engine.conv import conv_output_shape
from .exceptions import FormatError, ParameterError, ShapeError

LAYER_KINDS = (
    "conv", "maxpool", "global-avgpool", "dense", "relu", "sigmoid",
    "softmax", "dropout", "batchnorm", "flatten",
)

# hyperparameters required (and allowed) per kind
_REQUIRED = {
    "conv": {"channels", "kernel", "padding", "stride"},
    "maxpool": {"window"},
    "dense": {"units"},
    "dropout": {"rate"},
    "batchnorm": {"momentum", "eps"},
}
_HYPER = ("channels", "kernel", "padding", "stride", "window", "units", "rate", "momentum", "eps")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    channels: int | None = None
    kernel: tuple[int, ...] | None = None
    padding: str | None = None
    stride: int | None = None
    window: tuple[int, ...] | None = None
    units: int | None = None
    rate: float | None = None
    momentum: float | None = None
    eps: float | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")
        needed = _REQUIRED.get(self.kind, set())
        for name in _HYPER:
            present = getattr(self, name) is not None
            if present != (name in needed):
                state = "missing" if name in needed else "not allowed"
                raise ParameterError(f"{self.kind} layer: hyperparameter {name!r} {state}")
        if self.kind == "dropout" and not 0 <= self.rate < 1:
            raise ParameterError(f"dropout rate must lie in [0, 1), got {self.rate}")
        if self.kind == "conv" and (self.channels < 1 or self.stride < 1):
            raise ParameterError("conv channels and stride must be positive")
        if self.kind == "dense" and self.units < 1:
            raise ParameterError("dense units must be positive")

    def to_text(self):
        parts = [self.kind]
        for name in _HYPER:
            value = getattr(self, name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = "x".join(map(str, value))
            parts.append(f"{name}={value}")
        return " ".join(parts)

    @classmethod
    def from_text(cls, text):
        tok = text.split()
        if not tok:
            raise FormatError("empty layer record")
        kwargs = {}
        for item in tok[1:]:
            if "=" not in item:
                raise FormatError(f"malformed layer hyperparameter {item!r}")
            key, value = item.split("=", 1)
            if key in ("kernel", "window"):
                kwargs[key] = tuple(int(v) for v in value.split("x"))
            elif key in ("channels", "stride", "units"):
                kwargs[key] = int(value)
            elif key in ("rate", "momentum", "eps"):
                kwargs[key] = float(value)
            elif key == "padding":
                kwargs[key] = value
            else:
                raise FormatError(f"unknown layer hyperparameter {key!r}")
        return cls(tok[0], **kwargs)


def conv(channels, kernel, padding="same", stride=1):
    return LayerSpec("conv", channels=channels, kernel=tuple(kernel), padding=padding, stride=stride)


def maxpool(window):
    return LayerSpec("maxpool", window=tuple(window))


def dense(units):
    return LayerSpec("dense", units=units)


def dropout(rate):
    return LayerSpec("dropout", rate=rate)


def batchnorm(momentum=0.99, eps=1e-5):
    return LayerSpec("batchnorm", momentum=momentum, eps=eps)


RELU, SIGMOID, SOFTMAX = LayerSpec("relu"), LayerSpec("sigmoid"), LayerSpec("softmax")
FLATTEN, GLOBAL_AVGPOOL = LayerSpec("flatten"), LayerSpec("global-avgpool")


def layer_output_shape(layer, shape):
    """Per-sample output shape of ``layer`` for per-sample input ``shape``."""
    kind = layer.kind
    if kind == "conv":
        if len(shape) - 1 != len(layer.kernel):
            raise ShapeError(f"conv kernel {layer.kernel} does not match input {shape}")
        return (*conv_output_shape(shape[:-1], layer.kernel, layer.stride, layer.padding), layer.channels)
    if kind == "maxpool":
        if len(shape) - 1 != len(layer.window):
            raise ShapeError(f"pooling window {layer.window} does not match input {shape}")
        if any(e < w for e, w in zip(shape[:-1], layer.window)):
            raise ShapeError(f"pooling window {layer.window} does not fit input {shape}")
        return (*(e // w for e, w in zip(shape[:-1], layer.window)), shape[-1])
    if kind == "global-avgpool":
        if len(shape) < 2:
            raise ShapeError(f"global average pooling needs a spatial input, got {shape}")
        return (shape[-1],)
    if kind == "flatten":
        return (math.prod(shape),)
    if kind == "dense":
        if len(shape) != 1:
            raise ShapeError(f"dense layer needs a flat input, got {shape}")
        return (layer.units,)
    if kind == "softmax" and len(shape) != 1:
        raise ShapeError(f"softmax expects a flat input, got {shape}")
    return tuple(shape)


def layer_param_shapes(layer, shape):
    """Trainable parameter shapes of ``layer`` given its per-sample input shape."""
    if layer.kind == "conv":
        return {"kernel": (*layer.kernel, shape[-1], layer.channels), "bias": (layer.channels,)}
    if layer.kind == "dense":
        return {"weights": (shape[0], layer.units), "bias": (layer.units,)}
    if layer.kind == "batchnorm":
        return {"gamma": (shape[-1],), "beta": (shape[-1],)}
    return {}


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    n_classes: int
    name: str = "model"
    shapes: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(e) for e in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.n_classes < 2:
            raise ParameterError(f"class count must be >= 2, got {self.n_classes}")
        shapes, shape = [], self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer_output_shape(layer, shape)
            except ShapeError as exc:
                raise ShapeError(f"{self.name}: layer {i} ({layer.kind}): {exc}") from exc
            shapes.append(shape)
        object.__setattr__(self, "shapes", tuple(shapes))
        if len(self.layers) < 2 or self.layers[-2].kind != "dense":
            raise ShapeError(f"{self.name}: network must end with a dense layer and its activation")
        expected = ("sigmoid", 1) if self.binary else ("softmax", self.n_classes)
        if (self.layers[-1].kind, self.layers[-2].units) != expected:
            raise ShapeError(
                f"{self.name}: K={self.n_classes} requires a final dense {expected[1]} + {expected[0]}"
            )

    @property
    def binary(self):
        return self.n_classes == 2

    @property
    def output_width(self):
        return 1 if self.binary else self.n_classes

    @property
    def loss(self):
        return "binary" if self.binary else "categorical"

    @property
    def spatial_rank(self):
        return len(self.input_shape) - 1

    def input_shapes(self):
        return (self.input_shape, *self.shapes[:-1])

    def param_shapes(self):
        """``{"<layer index>.<name>": shape}`` for every trainable tensor."""
        out = {}
        for i, (layer, shape) in enumerate(zip(self.layers, self.input_shapes())):
            for name, pshape in layer_param_shapes(layer, shape).items():
                out[f"{i}.{name}"] = pshape
        return out

    def n_params(self):
        return sum(math.prod(s) for s in self.param_shapes().values())

    def kinds(self):
        return tuple(layer.kind for layer in self.layers)

    def conv_channels(self):
        return [layer.channels for layer in self.layers if layer.kind == "conv"]

    def dense_units(self):
        return [layer.units for layer in self.layers if layer.kind == "dense"]

    def to_text(self):
        lines = [
            f"name = {self.name}",
            f"input = {' '.join(map(str, self.input_shape))}",
            f"classes = {self.n_classes}",
        ]
        lines += [f"layer.{i} = {layer.to_text()}" for i, layer in enumerate(self.layers)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        header, layers = {}, {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"malformed model spec line {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key.startswith("layer."):
                layers[int(key.split(".", 1)[1])] = LayerSpec.from_text(value)
            else:
                header[key] = value
        try:
            return cls(
                tuple(int(v) for v in header["input"].split()),
                tuple(layers[i] for i in sorted(layers)),
                int(header["classes"]),
                header.get("name", "model"),
            )
        except KeyError as exc:
            raise FormatError(f"model spec missing field {exc}") from exc


def _head(K):
    return [dense(1), SIGMOID] if K == 2 else [dense(K), SOFTMAX]


def vgg3_global(input_shape, K):
    """Three conv stacks {32,32}, {64,64}, {128,128} and a dense 128 + K head."""
    input_shape = tuple(input_shape)
    if len(input_shape) != 3:
        raise ShapeError(f"VGG3 takes a 2D input (H, W, C), got {input_shape}")
    if min(input_shape[:2]) < 8:
        raise ShapeError(f"VGG3 input {input_shape} cannot survive three 2x2 poolings")
    layers = []
    for ch in (32, 64, 128):
        layers += [conv(ch, (3, 3)), RELU, conv(ch, (3, 3)), RELU, maxpool((2, 2)), dropout(0.2)]
    layers += [FLATTEN, dense(128), RELU, *_head(K)]
    return ModelSpec(input_shape, tuple(layers), K, "vgg3")


def cnn3d_global(input_shape):
    """Four single-conv 3x3x3 stacks (64, 64, 128, 256) with pool + BN, binary head."""
    input_shape = tuple(input_shape)
    if len(input_shape) != 4:
        raise ShapeError(f"3D CNN takes a volumetric input (H, W, D, C), got {input_shape}")
    if min(input_shape[:3]) < 16:
        raise ShapeError(f"3D CNN input {input_shape} cannot survive four 2x2x2 poolings")
    layers = []
    for ch in (64, 64, 128, 256):
        layers += [conv(ch, (3, 3, 3)), RELU, maxpool((2, 2, 2)), batchnorm()]
    layers += [GLOBAL_AVGPOOL, dense(256), RELU, dropout(0.3), dense(1), SIGMOID]
    return ModelSpec(input_shape, tuple(layers), 2, "cnn3d")


@dataclass(frozen=True)
class ScalingRule:
    divisor: int
    min_conv_channels: int = 4
    min_dense_units: int = 8

    def __post_init__(self):
        if self.divisor < 1:
            raise ParameterError(f"width divisor must be >= 1, got {self.divisor}")

    @classmethod
    def for_plan(cls, plan, **kwargs):
        """Divisor ``ceil(N ** (1/d))``: the per-dimension split factor."""
        d = plan.domain.ndim
        s = 1
        while s ** d < plan.n:
            s += 1
        return cls(s, **kwargs)

    def narrow(self, width, floor):
        return max(-(-width // self.divisor), min(floor, width))


def scale_to_local(global_spec, patch, rule):
    """Narrow ``global_spec`` to a subnetwork for ``patch``.

    Conv channels and hidden dense widths are divided by ``rule.divisor``
    (rounded up, floored at the rule minimums); the output layer, the layer
    kinds and their order are kept. Pooling layers that no longer fit the
    shrunken feature map are dropped.
    """
    size = tuple(getattr(patch, "size", patch))
    spatial = global_spec.input_shape[:-1]
    if len(size) != len(spatial):
        raise ShapeError(f"patch rank {len(size)} != spatial rank {len(spatial)}")
    if any(s > e for s, e in zip(size, spatial)):
        raise ShapeError(f"patch {size} exceeds the global input {spatial}")
    for layer in global_spec.layers:
        if layer.kind == "conv" and any(k > s for k, s in zip(layer.kernel, size)):
            raise ShapeError(f"patch {size} is smaller than the {layer.kernel} kernel")

    last_dense = max(i for i, layer in enumerate(global_spec.layers) if layer.kind == "dense")
    layers, shape = [], (*size, global_spec.input_shape[-1])
    for i, layer in enumerate(global_spec.layers):
        if layer.kind == "conv":
            layer = replace(layer, channels=rule.narrow(layer.channels, rule.min_conv_channels))
        elif layer.kind == "dense" and i != last_dense:
            layer = replace(layer, units=rule.narrow(layer.units, rule.min_dense_units))
        elif layer.kind == "maxpool" and any(e < w for e, w in zip(shape[:-1], layer.window)):
            continue
        shape = layer_output_shape(layer, shape)
        layers.append(layer)
    return ModelSpec((*size, global_spec.input_shape[-1]), tuple(layers),
                     global_spec.n_classes, f"{global_spec.name}-local")


COARSE_VARIANTS = ("plain", "dropout20", "ct")


def coarse_input_width(N, K):
    """Bundle width: ``N * K`` for multiclass, ``N`` for binary local nets."""
    return N if K == 2 else N * K


def coarse_dnn_spec(N, K, variant="plain"):
    """Dense aggregation net over the concatenated local probabilities."""
    if N < 1 or K < 2:
        raise ParameterError(f"coarse net needs N >= 1 and K >= 2, got N={N}, K={K}")
    if variant in ("plain", "dropout20"):
        hidden, rate = (128, 64, 32), (0.2 if variant == "dropout20" else None)
    elif variant == "ct":
        if K != 2:
            raise ParameterError("the 'ct' coarse variant is binary (K=2)")
        hidden, rate = (64, 32, 16), 0.4
    else:
        raise ParameterError(f"unknown coarse variant {variant!r}; expected one of {COARSE_VARIANTS}")
    layers = []
    for units in hidden:
        layers += [dense(units), RELU]
        if rate is not None:
            layers.append(dropout(rate))
    layers += _head(K)
    return ModelSpec((coarse_input_width(N, K),), tuple(layers), K, f"coarse-{variant}")

