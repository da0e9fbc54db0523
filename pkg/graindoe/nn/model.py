"""
CNN model
Mô tả kiến trúc, khởi tạo trọng số, forward và backprop cho CNN ba tầng convolution
"""

import io
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from dotenv import dotenv_values

from ..exceptions import ConfigurationError, TrainingFault
from .hyperparams import Hyperparams, Profile, get_profile
from .tensor_ops import (
    activation_apply,
    activation_backward,
    bce_loss,
    conv2d_backward,
    conv2d_forward,
    conv_output_size,
    dense_backward,
    dense_forward,
    dropout_mask,
    maxpool2_backward,
    maxpool2_forward,
)


logger = structlog.get_logger(__name__)

LAYER_KINDS = ("conv2d", "maxpool2", "dropout", "flatten", "dense", "activation")
TRAINABLE_KINDS = ("conv2d", "dense")

KERAS_NAMES = {
    "conv2d": "conv2d_{n} (Conv2D)",
    "maxpool2": "max_pooling2d_{n} (MaxPooling2)",
    "dropout": "dropout_{n} (Dropout)",
    "flatten": "flatten_{n} (Flatten)",
    "dense": "dense_{n} (Dense)",
    "activation": "activation_{n} (Activation)",
}


@dataclass(frozen=True)
class LayerSpec:
    """Mô tả một layer"""
    kind: str
    filters: int = 0
    kernel: int = 0
    stride: int = 1
    padding: str = "valid"
    drop_rate: float = 0.0
    units: int = 0
    activation: Optional[str] = None
    max_norm: Optional[float] = None
    l1: float = 0.0
    l2: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind '{self.kind}'")
        if self.kind == "conv2d" and (self.kernel % 2 == 0 or self.kernel < 1):
            raise ConfigurationError(f"conv2d kernel must be odd, got {self.kernel}")
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ConfigurationError(f"drop rate must be in [0, 1], got {self.drop_rate}")
        if self.max_norm is not None and self.max_norm <= 0:
            raise ConfigurationError("max-norm must be positive")
        if self.l1 < 0 or self.l2 < 0:
            raise ConfigurationError("L1/L2 penalties must be non-negative")

    @property
    def trainable(self) -> bool:
        return self.kind in TRAINABLE_KINDS


@dataclass(frozen=True)
class ModelSpec:
    """Kiến trúc mạng: danh sách layer và shape đầu vào (C, H, W)"""
    layers: Tuple[LayerSpec, ...]
    input_shape: Tuple[int, int, int]
    shapes: Tuple[Tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "shapes", tuple(self._propagate()))
        last = self.layers[-1] if self.layers else None
        if last is None or last.activation != "sigmoid" or self.shapes[-1] != (1,):
            raise ConfigurationError("model must end in a single sigmoid unit")

    def _propagate(self) -> List[Tuple[int, ...]]:
        shape: Tuple[int, ...] = self.input_shape
        out = []
        for index, layer in enumerate(self.layers):
            if layer.kind == "conv2d":
                if len(shape) != 3:
                    raise ConfigurationError(f"layer {index} (conv2d) needs a spatial input, got {shape}")
                h = conv_output_size(shape[1], layer.kernel, layer.stride, layer.padding)
                w = conv_output_size(shape[2], layer.kernel, layer.stride, layer.padding)
                shape = (layer.filters, h, w)
            elif layer.kind == "maxpool2":
                if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
                    raise ConfigurationError(f"layer {index} (maxpool2) cannot pool shape {shape}")
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            elif layer.kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif layer.kind == "dense":
                if len(shape) != 1:
                    raise ConfigurationError(f"layer {index} (dense) needs a flat input, got {shape}")
                shape = (layer.units,)
            if any(dim < 1 for dim in shape):
                raise ConfigurationError(f"spatial shape collapses to {shape} at layer {index} ({layer.kind})")
            out.append(shape)
        return out

    def trainable_indices(self) -> List[int]:
        return [i for i, layer in enumerate(self.layers) if layer.trainable]

    def param_shapes(self) -> Dict[int, Dict[str, Tuple[int, ...]]]:
        """Shape của kernel/bias cho từng layer có tham số"""
        result = {}
        for index, layer in enumerate(self.layers):
            in_shape = self.input_shape if index == 0 else self.shapes[index - 1]
            if layer.kind == "conv2d":
                result[index] = {
                    "kernel": (layer.filters, in_shape[0], layer.kernel, layer.kernel),
                    "bias": (layer.filters,),
                }
            elif layer.kind == "dense":
                result[index] = {"kernel": (layer.units, in_shape[0]), "bias": (layer.units,)}
        return result


class Weights:
    """Trọng số theo layer index: {index: {"kernel": array, "bias": array}}"""

    def __init__(self, params: Optional[Dict[int, Dict[str, np.ndarray]]] = None):
        self.params: Dict[int, Dict[str, np.ndarray]] = params or {}

    def __getitem__(self, index: int) -> Dict[str, np.ndarray]:
        return self.params[index]

    def __contains__(self, index: int) -> bool:
        return index in self.params

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self.params))

    def arrays(self) -> Iterator[Tuple[int, str, np.ndarray]]:
        for index in self:
            for name in ("kernel", "bias"):
                yield index, name, self.params[index][name]

    def copy(self) -> "Weights":
        return Weights({i: {k: v.copy() for k, v in p.items()} for i, p in self.params.items()})

    def astype(self, dtype) -> "Weights":
        return Weights({i: {k: v.astype(dtype) for k, v in p.items()} for i, p in self.params.items()})

    def zeros_like(self) -> "Weights":
        return Weights({i: {k: np.zeros_like(v) for k, v in p.items()} for i, p in self.params.items()})

    def count(self) -> int:
        return int(sum(arr.size for _, _, arr in self.arrays()))

    def shapes(self) -> Dict[int, Dict[str, Tuple[int, ...]]]:
        return {i: {k: tuple(v.shape) for k, v in p.items()} for i, p in self.params.items()}

    def equals(self, other: "Weights") -> bool:
        if sorted(self.params) != sorted(other.params):
            return False
        return all(np.array_equal(arr, other[i][name]) for i, name, arr in self.arrays())


def build_model(
    h: Hyperparams,
    profile: str = "paper",
    input_shape: Optional[Tuple[int, int, int]] = None,
) -> ModelSpec:
    """
    Dựng ModelSpec từ Hyperparams

    Three conv blocks (conv -> optional 2x2 max-pool -> dropout), flatten,
    dense with the treatment activation, dropout, dense(1), sigmoid.
    Max-norm applies to the dense layers only.
    """
    prof: Profile = get_profile(profile)
    layers: List[LayerSpec] = []
    strides = (h.stride_c1, 1, 1)
    kernels = (h.filter_c1, h.filter_c2, h.filter_c3)
    pools = (h.maxpool_c1, h.maxpool_c2, h.maxpool_c3)

    for block, key in enumerate(("c1", "c2", "c3")):
        layers.append(LayerSpec(
            kind="conv2d",
            filters=prof.filters[block],
            kernel=kernels[block],
            stride=strides[block],
            padding=h.padding,
            activation=h.activation,
            l1=h.l1(key),
            l2=h.l2(key),
        ))
        if pools[block]:
            layers.append(LayerSpec(kind="maxpool2"))
        layers.append(LayerSpec(kind="dropout", drop_rate=h.drop(key)))

    layers.append(LayerSpec(kind="flatten"))
    layers.append(LayerSpec(
        kind="dense",
        units=prof.dense_units,
        activation=h.activation,
        max_norm=h.kernel_constraint,
        l1=h.l1_d1,
        l2=h.l2_d1,
    ))
    layers.append(LayerSpec(kind="dropout", drop_rate=h.drop_d1))
    layers.append(LayerSpec(kind="dense", units=1, max_norm=h.kernel_constraint))
    layers.append(LayerSpec(kind="activation", activation="sigmoid"))

    spec = ModelSpec(layers=tuple(layers), input_shape=input_shape or prof.input_shape)
    logger.debug("🧱 Model built", profile=profile, layers=len(spec.layers), output=spec.shapes[-1])
    return spec


def count_params(spec: ModelSpec) -> Tuple[int, Dict[int, int]]:
    """Tổng số tham số và số tham số theo layer"""
    per_layer = {
        index: int(sum(np.prod(shape) for shape in shapes.values()))
        for index, shapes in spec.param_shapes().items()
    }
    return sum(per_layer.values()), per_layer


def summary_table(spec: ModelSpec) -> str:
    """Bảng layer kiểu Keras: tên, output shape, số tham số"""
    _, per_layer = count_params(spec)
    counters: Dict[str, int] = {}
    lines = [f"{'Layer (type)':<32}{'Output Shape':<24}Param #"]
    for index, layer in enumerate(spec.layers):
        counters[layer.kind] = counters.get(layer.kind, 0) + 1
        name = KERAS_NAMES[layer.kind].format(n=counters[layer.kind])
        shape = "(None, " + ", ".join(str(d) for d in spec.shapes[index]) + ")"
        lines.append(f"{name:<32}{shape:<24}{per_layer.get(index, 0)}")
    total, _ = count_params(spec)
    lines.append(f"Total params: {total:,}")
    return "\n".join(lines)


def init_weights(spec: ModelSpec, rng: np.random.Generator, dtype=np.float32) -> Weights:
    """Khởi tạo Glorot-uniform cho kernel, bias bằng 0"""
    params = {}
    for index, shapes in spec.param_shapes().items():
        kshape = shapes["kernel"]
        if len(kshape) == 4:
            receptive = kshape[2] * kshape[3]
            fan_in, fan_out = kshape[1] * receptive, kshape[0] * receptive
        else:
            fan_in, fan_out = kshape[1], kshape[0]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[index] = {
            "kernel": rng.uniform(-limit, limit, size=kshape).astype(dtype),
            "bias": np.zeros(shapes["bias"], dtype=dtype),
        }
    return Weights(params)


def make_dropout_masks(
    spec: ModelSpec, batch_size: int, rng: np.random.Generator, dtype=np.float32
) -> Dict[int, np.ndarray]:
    """Sinh mask cho mọi dropout layer của một batch"""
    masks = {}
    for index, layer in enumerate(spec.layers):
        if layer.kind == "dropout" and layer.drop_rate > 0:
            masks[index] = dropout_mask((batch_size,) + spec.shapes[index], layer.drop_rate, rng, dtype)
    return masks


def forward(
    spec: ModelSpec,
    weights: Weights,
    x: np.ndarray,
    masks: Optional[Dict[int, np.ndarray]] = None,
) -> Tuple[np.ndarray, List[Dict]]:
    """
    Forward pass

    Dropout is applied only where a mask is given; inference passes no masks.

    Returns:
        Xác suất good shape (N,) và cache từng layer
    """
    if tuple(x.shape[1:]) != spec.input_shape:
        raise ConfigurationError(f"input shape {tuple(x.shape[1:])} does not match model {spec.input_shape}")
    masks = masks or {}
    caches: List[Dict] = []
    out = x
    for index, layer in enumerate(spec.layers):
        cache: Dict = {"input": out}
        if layer.kind == "conv2d":
            pre, cache["conv"] = conv2d_forward(
                out, weights[index]["kernel"], weights[index]["bias"], layer.stride, layer.padding
            )
            cache["pre"] = pre
            out = activation_apply(layer.activation, pre)
        elif layer.kind == "maxpool2":
            out, cache["pool"] = maxpool2_forward(out)
        elif layer.kind == "dropout":
            if index in masks:
                out = out * masks[index]
        elif layer.kind == "flatten":
            out = out.reshape(out.shape[0], -1)
        elif layer.kind == "dense":
            pre = dense_forward(out, weights[index]["kernel"], weights[index]["bias"])
            cache["pre"] = pre
            out = activation_apply(layer.activation, pre)
        elif layer.kind == "activation":
            cache["pre"] = out
            out = activation_apply(layer.activation, out)
        cache["output"] = out
        caches.append(cache)
    return out.reshape(-1), caches


def predict(spec: ModelSpec, weights: Weights, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Dự đoán theo batch, không dropout"""
    outputs = [forward(spec, weights, x[start:start + batch_size])[0] for start in range(0, len(x), batch_size)]
    return np.concatenate(outputs) if outputs else np.zeros(0, dtype=np.float32)


def penalty(spec: ModelSpec, weights: Weights) -> float:
    """Phạt L1/L2 trên kernel: sum(l2 * w^2 + l1 * |w|)"""
    total = 0.0
    for index in spec.trainable_indices():
        layer = spec.layers[index]
        kernel = weights[index]["kernel"]
        if layer.l2:
            total += layer.l2 * float(np.sum(np.square(kernel, dtype=np.float64)))
        if layer.l1:
            total += layer.l1 * float(np.sum(np.abs(kernel, dtype=np.float64)))
    return total


def total_loss(spec: ModelSpec, weights: Weights, x: np.ndarray, labels: np.ndarray, masks=None) -> float:
    probs, _ = forward(spec, weights, x, masks)
    return bce_loss(probs, labels) + penalty(spec, weights)


def backprop(
    spec: ModelSpec,
    weights: Weights,
    x: np.ndarray,
    labels: np.ndarray,
    masks: Optional[Dict[int, np.ndarray]] = None,
    skip: Sequence[int] = (),
) -> Tuple[float, Weights]:
    """
    Gradient chính xác của BCE + L1/L2 theo mọi kernel/bias

    The sigmoid output and the cross-entropy are differentiated together with
    respect to the logit. Layers listed in ``skip`` receive zero gradients and
    backprop stops below the lowest trainable layer that still needs one.

    Returns:
        (loss, gradients)
    """
    probs, caches = forward(spec, weights, x, masks)
    y = np.asarray(labels, dtype=probs.dtype).reshape(-1)
    n = probs.shape[0]
    loss = bce_loss(probs, y) + penalty(spec, weights)
    if not np.isfinite(loss):
        raise TrainingFault("non-finite loss")

    grads = weights.zeros_like()
    needed = [i for i in spec.trainable_indices() if i not in skip]
    lowest = min(needed) if needed else len(spec.layers)

    # dL/dlogit for sigmoid + BCE
    dout = ((probs - y) / n).reshape(n, 1)
    last = len(spec.layers) - 1
    for index in range(last, lowest - 1, -1):
        layer = spec.layers[index]
        cache = caches[index]
        if layer.kind == "activation":
            if index != last:
                dout = activation_backward(layer.activation, dout, cache["pre"], cache["output"])
        elif layer.kind == "dense":
            if index != last:
                dout = activation_backward(layer.activation, dout, cache["pre"], cache["output"])
            dx, dk, db = dense_backward(dout, cache["input"], weights[index]["kernel"])
            grads[index]["kernel"] = dk
            grads[index]["bias"] = db
            dout = dx
        elif layer.kind == "flatten":
            dout = dout.reshape(cache["input"].shape)
        elif layer.kind == "dropout":
            if masks and index in masks:
                dout = dout * masks[index]
        elif layer.kind == "maxpool2":
            dout = maxpool2_backward(dout, cache["pool"])
        elif layer.kind == "conv2d":
            dout = activation_backward(layer.activation, dout, cache["pre"], cache["output"])
            dx, dk, db = conv2d_backward(dout, weights[index]["kernel"], cache["conv"], need_dx=index > lowest)
            grads[index]["kernel"] = dk
            grads[index]["bias"] = db
            dout = dx

        if layer.trainable:
            kernel = weights[index]["kernel"]
            if layer.l2:
                grads[index]["kernel"] = grads[index]["kernel"] + 2.0 * layer.l2 * kernel
            if layer.l1:
                grads[index]["kernel"] = grads[index]["kernel"] + layer.l1 * np.sign(kernel)
            if not (np.all(np.isfinite(grads[index]["kernel"])) and np.all(np.isfinite(grads[index]["bias"]))):
                raise TrainingFault("non-finite gradient", layer_index=index)

    for index in skip:
        if index in grads:
            grads[index]["kernel"][...] = 0
            grads[index]["bias"][...] = 0
    return loss, grads


def spec_to_text(spec: ModelSpec) -> str:
    """ModelSpec -> tài liệu key=value"""
    lines = ["INPUT_SHAPE=" + ",".join(str(v) for v in spec.input_shape), f"LAYER_COUNT={len(spec.layers)}"]
    for index, layer in enumerate(spec.layers):
        for key, value in asdict(layer).items():
            lines.append(f"LAYER_{index:02d}_{key.upper()}={'' if value is None else value}")
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> ModelSpec:
    """Tài liệu key=value -> ModelSpec"""
    values = dotenv_values(stream=io.StringIO(text))
    try:
        input_shape = tuple(int(v) for v in values["INPUT_SHAPE"].split(","))
        count = int(values["LAYER_COUNT"])
    except (KeyError, ValueError, AttributeError) as e:
        raise ConfigurationError(f"malformed model spec document: {e}") from e

    names = [f.name for f in fields(LayerSpec)]
    layers = []
    for index in range(count):
        kwargs = {}
        for name in names:
            raw = values.get(f"LAYER_{index:02d}_{name.upper()}")
            if raw is None or raw == "":
                continue
            if name in ("kind", "padding", "activation"):
                kwargs[name] = raw
            elif name in ("filters", "kernel", "stride", "units"):
                kwargs[name] = int(raw)
            else:
                kwargs[name] = float(raw)
        layers.append(LayerSpec(**kwargs))
    return ModelSpec(layers=tuple(layers), input_shape=input_shape)


def freeze_indices(spec: ModelSpec, frozen_convs: int = 2) -> List[int]:
    """Index của các conv layer đầu tiên bị đóng băng khi fine-tune"""
    convs = [i for i, layer in enumerate(spec.layers) if layer.kind == "conv2d"]
    return convs[:frozen_convs]

