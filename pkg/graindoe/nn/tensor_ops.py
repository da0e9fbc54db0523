"""
Tensor operations
Phép toán tensor NCHW cho CNN: convolution, max-pooling, activation, loss, dropout

All tensors are numpy arrays shaped (batch, channels, height, width). Every
forward function returns its output together with the cache its backward
counterpart needs.
"""

from typing import Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..exceptions import ConfigurationError


SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
BCE_EPSILON = 1e-7

ACTIVATIONS = ("tanh", "selu", "relu", "sigmoid")


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> int:
    """Kích thước đầu ra của convolution theo một trục"""
    if padding == "same":
        return -(-size // stride)
    if padding == "valid":
        return (size - kernel) // stride + 1 if size >= kernel else 0
    raise ConfigurationError(f"unknown padding '{padding}'")


def _pad_amounts(size: int, kernel: int, stride: int, padding: str) -> Tuple[int, int, int]:
    out = conv_output_size(size, kernel, stride, padding)
    if padding == "valid":
        return out, 0, 0
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def conv2d_forward(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int = 1, padding: str = "valid"
) -> Tuple[np.ndarray, Dict]:
    """
    Cross-correlation 2D (không lật kernel)

    Args:
        x: Input (N, C, H, W)
        kernel: Filters (F, C, k, k)
        bias: Bias (F,)
        stride: Bước trượt
        padding: "same" (ceil(in/stride)) hoặc "valid"

    Returns:
        Output (N, F, out_h, out_w) và cache cho backward
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ConfigurationError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    f, kc, k, k2 = kernel.shape
    if kc != c or k != k2:
        raise ConfigurationError(f"kernel {kernel.shape} does not match input channels {c}")
    if bias.shape != (f,):
        raise ConfigurationError(f"bias shape {bias.shape} does not match {f} filters")

    out_h, top, bottom = _pad_amounts(h, k, stride, padding)
    out_w, left, right = _pad_amounts(w, k, stride, padding)
    if out_h < 1 or out_w < 1:
        raise ConfigurationError(f"conv2d output collapses for input {h}x{w}, kernel {k}, stride {stride}")

    xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right))) if (top or bottom or left or right) else x
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * k * k)

    out = cols @ kernel.reshape(f, -1).T + bias
    out = out.reshape(n, out_h, out_w, f).transpose(0, 3, 1, 2)

    cache = {
        "cols": cols,
        "x_shape": x.shape,
        "padded_shape": xp.shape,
        "pads": (top, left),
        "stride": stride,
        "out_hw": (out_h, out_w),
    }
    return np.ascontiguousarray(out), cache


def conv2d_backward(
    dout: np.ndarray, kernel: np.ndarray, cache: Dict, need_dx: bool = True
) -> Tuple[Optional[np.ndarray], np.ndarray, np.ndarray]:
    """Gradient của conv2d theo input, kernel và bias"""
    f, c, k, _ = kernel.shape
    n = dout.shape[0]
    out_h, out_w = cache["out_hw"]
    stride = cache["stride"]

    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dkernel = (d2.T @ cache["cols"]).reshape(kernel.shape)
    dbias = d2.sum(axis=0)
    if not need_dx:
        return None, dkernel, dbias

    dcols = (d2 @ kernel.reshape(f, -1)).reshape(n, out_h, out_w, c, k, k)
    dxp = np.zeros(cache["padded_shape"], dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )

    top, left = cache["pads"]
    h, w = cache["x_shape"][2:]
    return dxp[:, :, top:top + h, left:left + w], dkernel, dbias


def maxpool2_forward(x: np.ndarray) -> Tuple[np.ndarray, Dict]:
    """Max-pooling cửa sổ 2x2, stride 2; lưu vị trí argmax"""
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ConfigurationError(f"max-pooling needs spatial size >= 2, got {h}x{w}")
    oh, ow = h // 2, w // 2
    blocks = x[:, :, :2 * oh, :2 * ow].reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, oh, ow, 4)
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    return out, {"argmax": argmax, "x_shape": x.shape}


def maxpool2_backward(dout: np.ndarray, cache: Dict) -> np.ndarray:
    n, c, h, w = cache["x_shape"]
    oh, ow = dout.shape[2:]
    dblocks = np.zeros((n, c, oh, ow, 4), dtype=dout.dtype)
    np.put_along_axis(dblocks, cache["argmax"][..., None], dout[..., None], axis=-1)
    dblocks = dblocks.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * oh, 2 * ow)
    dx = np.zeros(cache["x_shape"], dtype=dout.dtype)
    dx[:, :, :2 * oh, :2 * ow] = dblocks
    return dx


def activation_apply(kind: Optional[str], x: np.ndarray) -> np.ndarray:
    """Hàm kích hoạt theo từng phần tử; kind None là identity"""
    if kind is None:
        return x
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return expit(x)
    if kind == "selu":
        return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0)))
    raise ConfigurationError(f"unknown activation '{kind}'")


def activation_backward(kind: Optional[str], dout: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient qua activation; x là đầu vào, y là đầu ra đã cache"""
    if kind is None:
        return dout
    if kind == "relu":
        return dout * (x > 0)
    if kind == "tanh":
        return dout * (1 - y * y)
    if kind == "sigmoid":
        return dout * y * (1 - y)
    if kind == "selu":
        return dout * np.where(x > 0, SELU_LAMBDA, y + SELU_LAMBDA * SELU_ALPHA)
    raise ConfigurationError(f"unknown activation '{kind}'")


def dense_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Dense layer; kernel có shape (units, inputs), mỗi hàng là vector trọng số vào của một unit"""
    if x.shape[1] != kernel.shape[1]:
        raise ConfigurationError(f"dense expects {kernel.shape[1]} inputs, got {x.shape[1]}")
    return x @ kernel.T + bias


def dense_backward(dout: np.ndarray, x: np.ndarray, kernel: np.ndarray):
    return dout @ kernel, dout.T @ x, dout.sum(axis=0)


def bce_loss(predicted: np.ndarray, labels: np.ndarray, epsilon: float = BCE_EPSILON) -> float:
    """Binary cross-entropy trung bình, dự đoán được clip vào [eps, 1-eps]"""
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise ConfigurationError(f"prediction length {p.size} does not match label length {y.size}")
    p = np.clip(p, epsilon, 1 - epsilon)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log1p(-p))))


def dropout_mask(shape: Tuple[int, ...], rate: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Mask dropout dạng inverted: unit giữ lại được nhân 1/(1-rate)"""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype(1.0 - rate)
