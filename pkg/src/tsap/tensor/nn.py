"""Neural-network layers as pure functions of tensors, plus parameter storage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    conv_out_length,
    fold1d,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    sqrt,
    sub,
    div,
    transpose,
    unfold1d,
)

__all__ = [
    "ParamSet",
    "conv1d",
    "conv1d_transposed",
    "transposed_out_length",
    "linear",
    "batchnorm1d",
    "avgpool1d",
    "dropout",
    "relu",
    "sigmoid",
    "uniform_init",
]


@dataclass
class ParamSet:
    """Named trainable tensors plus non-trainable buffers (batchnorm statistics).

    ``with_params`` swaps in new tensors (e.g. graph-recorded updates) while
    sharing the buffers, which is how the differentiable inner loop threads
    parameters through several optimizer steps.
    """

    params: dict[str, Tensor]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int | None = None

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def with_params(self, params: dict[str, Tensor]) -> "ParamSet":
        return ParamSet(dict(params), self.buffers, self.seed)

    def detached(self, requires_grad: bool = True) -> "ParamSet":
        return ParamSet(
            {k: Tensor(v.data.copy(), requires_grad=requires_grad) for k, v in self.params.items()},
            self.buffers,
            self.seed,
        )

    def copy(self) -> "ParamSet":
        return ParamSet(
            {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.seed,
        )

    def freeze(self) -> "ParamSet":
        for t in self.params.values():
            t.requires_grad = False
        return self

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def conv1d(x, w, b=None, stride: int = 1, dilation: int = 1) -> Tensor:
    """Cross-correlation of x (B, Cin, L) with w (Cout, Cin, K)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects x (B,C,L) and w (O,C,K); got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d channel mismatch: input has {x.shape[1]}, weight expects {w.shape[1]}")
    B, cin, L = x.shape
    cout, _, k = w.shape
    lout = conv_out_length(L, k, stride, dilation)
    if lout < 1:
        raise ShapeError(f"conv1d output length {lout} < 1 for L={L}, kernel={k}, dilation={dilation}")
    cols = reshape(unfold1d(x, k, stride, dilation), (B, cin * k, lout))
    out = matmul(reshape(w, (cout, cin * k)), cols)
    if b is not None:
        out = add(out, reshape(as_tensor(b), (1, cout, 1)))
    return out


def transposed_out_length(length: int, kernel: int, stride: int = 1, dilation: int = 1,
                          output_padding: int = 0) -> int:
    return (length - 1) * stride + dilation * (kernel - 1) + 1 + output_padding


def conv1d_transposed(x, w, b=None, stride: int = 1, output_padding: int = 0, dilation: int = 1) -> Tensor:
    """Adjoint of :func:`conv1d` in x; w has shape (Cin, Cout, K)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d_transposed expects x (B,C,L) and w (C,O,K); got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"conv1d_transposed channel mismatch: input has {x.shape[1]}, weight expects {w.shape[0]}")
    if not 0 <= output_padding < max(stride, dilation):
        raise ShapeError("output_padding must be smaller than stride or dilation")
    B, cin, lin = x.shape
    _, cout, k = w.shape
    length = transposed_out_length(lin, k, stride, dilation, output_padding)
    w2 = reshape(transpose(w, (1, 2, 0)), (cout * k, cin))
    cols = reshape(matmul(w2, x), (B, cout, k, lin))
    out = fold1d(cols, length, stride, dilation)
    if b is not None:
        out = add(out, reshape(as_tensor(b), (1, cout, 1)))
    return out


def linear(x, w, b=None) -> Tensor:
    """x (..., in) times w (out, in) transposed, plus b (out,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear expects last dim {w.shape[1]}, got {x.shape}")
    out = matmul(x, transpose(w, (1, 0)))
    if b is not None:
        out = add(out, b)
    return out


def batchnorm1d(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
                train: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Batch normalisation over (B, C) or (B, C, L) inputs.

    In training mode the batch statistics normalise the input and the running
    estimates are updated in place; in evaluation mode the running estimates
    are used as constants.
    """
    x = as_tensor(x)
    if x.ndim not in (2, 3) or x.shape[1] != running_mean.shape[0]:
        raise ShapeError(f"batchnorm1d got input {x.shape} for {running_mean.shape[0]} channels")
    axes = (0, 2) if x.ndim == 3 else (0,)
    bshape = (1, -1, 1) if x.ndim == 3 else (1, -1)
    if train:
        mu = mean(x, axes, keepdims=True)
        centered = sub(x, mu)
        var = mean(mul(centered, centered), axes, keepdims=True)
        n = x.size // x.shape[1]
        if n < 2:
            raise ShapeError("batchnorm1d in training mode needs more than one value per channel")
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.data.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * var.data.reshape(-1) * n / (n - 1)
        xhat = div(centered, sqrt(add(var, eps)))
    else:
        mu = Tensor(running_mean.reshape(bshape))
        inv = Tensor(1.0 / np.sqrt(running_var.reshape(bshape) + eps))
        xhat = mul(sub(x, mu), inv)
    return add(mul(xhat, reshape(as_tensor(gamma), bshape)), reshape(as_tensor(beta), bshape))


def avgpool1d(x, kernel: int, stride: int | None = None) -> Tensor:
    stride = stride or kernel
    return mean(unfold1d(x, kernel, stride), axis=2)


def dropout(x, keep_prob: float, rng: np.random.Generator | None, train: bool = True) -> Tensor:
    """Inverted dropout; the sampled mask is a constant of the graph."""
    x = as_tensor(x)
    if not train or keep_prob >= 1.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an RNG stream")
    mask = (rng.random(x.shape) < keep_prob).astype(x.data.dtype) / keep_prob
    return mul(x, Tensor(mask))
