"""ReLU multi-layer perceptron classifiers and parameter containers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .rng import Rng
from .tensor import Tensor


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ContractError("input_dim must be positive")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ContractError("need at least one hidden layer of positive width")
        if self.num_classes < 2:
            raise ContractError("num_classes must be >= 2")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.num_classes)

    def param_shapes(self):
        dims = self.layer_dims
        shapes = []
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            shapes.append((f"fc{i}.weight", (fan_in, fan_out)))
            shapes.append((f"fc{i}.bias", (fan_out,)))
        return shapes

    def to_dict(self):
        return {"input_dim": self.input_dim, "hidden_dims": list(self.hidden_dims),
                "num_classes": self.num_classes}


class Params:
    """Ordered, uniquely named weight/bias tensors of one MLP."""

    def __init__(self, spec: MlpSpec, arrays: dict, requires_grad=True):
        self.spec = spec
        self._tensors = {}
        for name, shape in spec.param_shapes():
            if name not in arrays:
                raise ContractError(f"missing parameter {name}")
            arr = np.array(arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {arr.shape}")
            self._tensors[name] = Tensor(arr, requires_grad=requires_grad)

    def __iter__(self) -> Iterator[tuple]:
        return iter(self._tensors.items())

    def __getitem__(self, name) -> Tensor:
        return self._tensors[name]

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def tensors(self):
        return list(self._tensors.values())

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def detached(self) -> "Params":
        """Shares storage, but no gradients flow into these tensors."""
        p = Params.__new__(Params)
        p.spec = self.spec
        p._tensors = {k: Tensor(t.data) for k, t in self._tensors.items()}
        return p

    def snapshot(self) -> dict:
        return {k: t.data.copy() for k, t in self._tensors.items()}

    def copy(self) -> "Params":
        return Params(self.spec, self.snapshot())

    def num_parameters(self):
        return int(sum(t.size for t in self._tensors.values()))

    def flatten_values(self):
        return np.concatenate([t.data.reshape(-1) for t in self._tensors.values()])


def init_params(spec: MlpSpec, rng: Rng) -> Params:
    """Weights ~ U(-b, b), b = sqrt(6 / fan_in); zero biases."""
    arrays = {}
    for name, shape in spec.param_shapes():
        if name.endswith(".weight"):
            bound = np.sqrt(6.0 / shape[0])
            arrays[name] = rng.uniform(shape, -bound, bound)
        else:
            arrays[name] = np.zeros(shape)
    return Params(spec, arrays)


def forward(params: Params, x) -> Tensor:
    """Logits of shape (batch, num_classes)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    spec = params.spec
    if x.data.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionError(f"forward: expected (batch, {spec.input_dim}) input, got {x.shape}")
    h = x
    n_layers = len(spec.hidden_dims) + 1
    for i in range(n_layers):
        h = T.add(T.matmul(h, params[f"fc{i}.weight"]), params[f"fc{i}.bias"])
        if i < n_layers - 1:
            h = T.relu(h)
    return h


def predict(params: Params, x: np.ndarray) -> np.ndarray:
    return forward(params.detached(), x).data.argmax(axis=1)


def flatten_grads(params: Params) -> np.ndarray:
    parts = []
    for name, t in params:
        if t.grad is None:
            raise ContractError(f"flatten_grads: no gradient for {name}")
        parts.append(t.grad.reshape(-1))
    return np.concatenate(parts)


def unflatten(params: Params, flat: np.ndarray) -> dict:
    """Split a flat vector back into per-parameter arrays (declared order)."""
    flat = np.asarray(flat, dtype=np.float64)
    if flat.size != params.num_parameters():
        raise DimensionError(f"unflatten: expected {params.num_parameters()} values, got {flat.size}")
    out, offset = {}, 0
    for name, t in params:
        out[name] = flat[offset:offset + t.size].reshape(t.shape).copy()
        offset += t.size
    return out
