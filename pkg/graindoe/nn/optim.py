"""
Optimizers
Adam, AdaMax, Nadam và ràng buộc max-norm
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

from ..exceptions import ConfigurationError
from .hyperparams import Hyperparams
from .model import ModelSpec, Weights


OPTIMIZER_KINDS = ("adam", "adamax", "nadam")


@dataclass
class OptimizerState:
    """Trạng thái optimizer: bước t và moment thứ nhất/thứ hai theo từng mảng"""
    kind: str
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    t: int = 0
    m: Dict[int, Dict[str, np.ndarray]] = field(default_factory=dict)
    v: Dict[int, Dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigurationError(f"unknown optimizer '{self.kind}'")

    @classmethod
    def from_hyperparams(cls, h: Hyperparams) -> "OptimizerState":
        return cls(
            kind=h.optimizer,
            learning_rate=h.learning_rate,
            beta1=h.beta1,
            beta2=h.beta2,
            epsilon=h.epsilon,
        )

    def _moments(self, index: int, name: str, like: np.ndarray):
        if index not in self.m:
            self.m[index], self.v[index] = {}, {}
        if name not in self.m[index]:
            self.m[index][name] = np.zeros_like(like)
            self.v[index][name] = np.zeros_like(like)
        return self.m[index][name], self.v[index][name]


def max_norm_apply(rows: np.ndarray, c: float) -> np.ndarray:
    """
    Giới hạn chuẩn L2 của từng hàng (vector trọng số vào của một unit) không vượt quá c

    Rows already within the bound are returned untouched.
    """
    if c <= 0:
        raise ConfigurationError("max-norm constraint must be positive")
    norms = np.sqrt(np.sum(np.square(rows, dtype=np.float64), axis=-1, keepdims=True))
    # rows rescaled once must stay put on a second pass
    over = norms > c * (1 + 4 * np.finfo(rows.dtype).eps)
    scale = np.where(over, c / np.maximum(norms, np.finfo(np.float64).tiny), 1.0)
    return np.where(over, rows * scale, rows).astype(rows.dtype)


def _update(state: OptimizerState, w: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray) -> np.ndarray:
    b1, b2, eps, lr, t = state.beta1, state.beta2, state.epsilon, state.learning_rate, state.t
    m *= b1
    m += (1 - b1) * g
    if state.kind == "adamax":
        np.maximum(b2 * v, np.abs(g), out=v)
        return w - (lr / (1 - b1 ** t)) * m / (v + eps)

    v *= b2
    v += (1 - b2) * g * g
    v_hat = v / (1 - b2 ** t)
    if state.kind == "adam":
        m_hat = m / (1 - b1 ** t)
    else:
        m_hat = b1 * m / (1 - b1 ** (t + 1)) + (1 - b1) * g / (1 - b1 ** t)
    return w - lr * m_hat / (np.sqrt(v_hat) + eps)


def optimizer_step(
    state: OptimizerState,
    weights: Weights,
    gradients: Weights,
    spec: Optional[ModelSpec] = None,
    frozen: Iterable[int] = (),
) -> Weights:
    """
    Một bước cập nhật trọng số

    Increments ``t`` before bias correction, then applies the max-norm
    constraint to every layer of ``spec`` that declares one. Layers in
    ``frozen`` are copied unchanged.
    """
    frozen = set(frozen)
    state.t += 1
    updated = {}
    for index in weights:
        if index in frozen:
            updated[index] = {k: v.copy() for k, v in weights[index].items()}
            continue
        updated[index] = {}
        for name, w in weights[index].items():
            g = gradients[index][name].astype(w.dtype, copy=False)
            m, v = state._moments(index, name, w)
            updated[index][name] = _update(state, w, g, m, v).astype(w.dtype, copy=False)

        if spec is not None:
            layer = spec.layers[index]
            if layer.kind == "dense" and layer.max_norm is not None:
                updated[index]["kernel"] = max_norm_apply(updated[index]["kernel"], layer.max_norm)
    return Weights(updated)
