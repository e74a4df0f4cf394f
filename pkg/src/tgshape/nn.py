"""Small layer primitives shared by all networks: linear layers, MLPs, norms."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, layer_norm, leaky_relu

LEAKY_SLOPE = 0.02


class Linear:
    """Dense layer y = x W + b with 1/sqrt(fan_in) normal init."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int,
                 scale: float | None = None, dtype=np.float64):
        s = scale if scale is not None else 1.0 / np.sqrt(n_in)
        self.w = Tensor(rng.normal(0.0, s, (n_in, n_out)).astype(dtype), requires_grad=True)
        self.b = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNorm:
    """Learned-affine layer normalization."""

    def __init__(self, dim: int, dtype=np.float64):
        self.gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


class MLP:
    """Stack of Linear layers with leaky-ReLU between them (none after the last)."""

    def __init__(self, rng: np.random.Generator, widths: list[int],
                 final_activation: bool = False, dtype=np.float64):
        if len(widths) < 2:
            raise ValueError("MLP needs at least input and output widths")
        self.layers = [Linear(rng, a, b, dtype=dtype) for a, b in zip(widths[:-1], widths[1:])]
        self.final_activation = final_activation

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_activation:
                x = leaky_relu(x, LEAKY_SLOPE)
        return x

    def params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}.fc{i}"))
        return out


def merge_params(*dicts: dict[str, Tensor]) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for d in dicts:
        for k, v in d.items():
            if k in out:
                raise ValueError(f"duplicate parameter name '{k}'")
            out[k] = v
    return out
