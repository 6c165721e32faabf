"""Reverse-mode automatic differentiation over dense NumPy arrays.

A Tensor wraps an ndarray plus an optional gradient buffer.  Ops build a
dynamic graph by storing parent links and a backward closure on each result;
`Tensor.backward` replays the graph in reverse topological order.  Only the
operations the two sub-networks need are provided; there is no general
broadcasting beyond scalars.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DataError, NumericalError, ShapeError
from .convops import (
    ConvSpec,
    conv_forward,
    conv_input_grad,
    conv_weight_grad,
    resize_bilinear,
    resize_bilinear_adjoint,
    tconv_forward,
    tconv_input_grad,
    tconv_weight_grad,
)

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """Node in a dynamically recorded computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self) -> list:
        """Backpropagate from a scalar node; returns the topological order."""
        if self.data.size != 1:
            raise ShapeError("backward requires a scalar loss node")
        if not self.requires_grad:
            raise ShapeError("backward called on a node with no differentiable history")
        order = _topological_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        return order

    def sum(self) -> "Tensor":
        out_data = np.asarray(self.data.sum())

        def bwd(g):
            _accumulate(self, np.full(self.data.shape, g.reshape(()), dtype=self.data.dtype))

        return _node(out_data, (self,), bwd)

    def __add__(self, other):
        if isinstance(other, Tensor):
            if self.data.shape != other.data.shape:
                raise ShapeError(f"add shape mismatch {self.data.shape} vs {other.data.shape}")
            _require_same_dtype(self, other)
            out_data = self.data + other.data

            def bwd(g):
                _accumulate(self, g)
                _accumulate(other, g)

            return _node(out_data, (self, other), bwd)
        scalar = float(other)
        out_data = self.data + scalar

        def bwd_s(g):
            _accumulate(self, g)

        return _node(out_data, (self,), bwd_s)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor-tensor product is not provided; multiply by a scalar")
        scalar = float(other)
        out_data = self.data * scalar

        def bwd(g):
            _accumulate(self, g * scalar)

        return _node(out_data, (self,), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.__mul__(1.0 / float(other))

    def __neg__(self):
        return self.__mul__(-1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return self.__add__(other.__neg__())
        return self.__add__(-float(other))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


def _topological_order(root: Tensor) -> list:
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = np.broadcast_to(g, t.data.shape)
    t.grad = np.array(g, dtype=t.data.dtype) if t.grad is None else t.grad + g


def _node(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _require_same_dtype(*tensors: Tensor):
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"mixed dtypes in one op: {sorted(d.name for d in dtypes)}")


class Graph:
    """Named-parameter registry plus the traversal record of the last backward pass."""

    def __init__(self, rng_seed: int = 0):
        self.parameters: dict[str, Tensor] = {}
        self.rng_seed = int(rng_seed)
        self.nodes: list = []

    def register(self, name: str, tensor: Tensor):
        if name in self.parameters:
            raise ConfigError(f"parameter name already registered: {name!r}")
        self.parameters[name] = tensor

    def zero_grad(self):
        for p in self.parameters.values():
            p.grad = None

    def backward(self, loss: Tensor) -> dict:
        """Run backward from `loss`; returns gradients for populated parameters."""
        self.nodes = loss.backward()
        return {name: p.grad for name, p in self.parameters.items() if p.grad is not None}


def conv2d(x: Tensor, spec: ConvSpec, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d expects a [N,C,H,W] input, got ndim {x.data.ndim}")
    if x.data.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.data.shape[1]} channels, spec expects {spec.in_channels}")
    if weights.data.shape != spec.weight_shape:
        raise ShapeError(f"weight shape {weights.data.shape} != {spec.weight_shape}")
    if bias is not None and bias.data.shape != (spec.out_channels,):
        raise ShapeError(f"bias shape {bias.data.shape} != ({spec.out_channels},)")
    _require_same_dtype(x, weights)
    in_hw = x.data.shape[2:]
    y, cols = conv_forward(x.data, weights.data, spec)
    if bias is not None:
        y = y + bias.data.reshape(1, -1, 1, 1)
    if not weights.requires_grad:
        cols = None
    x_data, w_data = x.data, weights.data
    parents = (x, weights) if bias is None else (x, weights, bias)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, conv_input_grad(g, w_data, spec, in_hw))
        if weights.requires_grad:
            _accumulate(weights, conv_weight_grad(cols, g, spec))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))

    del x_data
    return _node(y, parents, bwd)


def transposed_conv2d(x: Tensor, spec: ConvSpec, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"transposed_conv2d expects a [N,C,H,W] input, got ndim {x.data.ndim}")
    if x.data.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.data.shape[1]} channels, spec expects {spec.in_channels}")
    if weights.data.shape != spec.transposed_weight_shape:
        raise ShapeError(f"weight shape {weights.data.shape} != {spec.transposed_weight_shape}")
    if bias is not None and bias.data.shape != (spec.out_channels,):
        raise ShapeError(f"bias shape {bias.data.shape} != ({spec.out_channels},)")
    _require_same_dtype(x, weights)
    y = tconv_forward(x.data, weights.data, spec)
    if bias is not None:
        y = y + bias.data.reshape(1, -1, 1, 1)
    x_data, w_data = x.data, weights.data
    parents = (x, weights) if bias is None else (x, weights, bias)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, tconv_input_grad(g, w_data, spec))
        if weights.requires_grad:
            _accumulate(weights, tconv_weight_grad(x_data, g, spec))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))

    return _node(y, parents, bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    y = np.where(mask, x.data, x.data.dtype.type(0))

    def bwd(g):
        _accumulate(x, np.where(mask, g, g.dtype.type(0)))

    return _node(y, (x,), bwd)


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    slope = float(slope)
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    mask = x.data > 0
    y = np.where(mask, x.data, x.data * x.data.dtype.type(slope))

    def bwd(g):
        _accumulate(x, np.where(mask, g, g * g.dtype.type(slope)))

    return _node(y, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def bwd(g):
        _accumulate(x, g * (1.0 - y * y))

    return _node(y, (x,), bwd)


def apply_activation(x: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "tanh":
        return tanh(x)
    if kind == "identity":
        return x
    raise ConfigError(f"unknown activation kind {kind!r}")


def softmax_channels(logits: Tensor) -> Tensor:
    if logits.data.ndim != 4:
        raise ShapeError("softmax_channels expects a [N,K,H,W] tensor")
    if logits.data.shape[1] < 2:
        raise ShapeError("softmax_channels needs at least 2 channels")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        _accumulate(logits, p * (g - inner))

    return _node(p, (logits,), bwd)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError("concat_channels expects [N,C,H,W] tensors")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ShapeError(f"concat_channels batch/spatial mismatch: {a.data.shape} vs {b.data.shape}")
    _require_same_dtype(a, b)
    ca = a.data.shape[1]
    y = np.concatenate([a.data, b.data], axis=1)

    def bwd(g):
        _accumulate(a, np.ascontiguousarray(g[:, :ca]))
        _accumulate(b, np.ascontiguousarray(g[:, ca:]))

    return _node(y, (a, b), bwd)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over (batch, height, width) using batch statistics."""
    if x.data.ndim != 4:
        raise ShapeError("batchnorm2d expects a [N,C,H,W] tensor")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    axes = (0, 2, 3)
    m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
    mean = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    y = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    def bwd(g):
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=axes))
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(1, c, 1, 1)
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            _accumulate(x, (inv_std / m) * (m * dxhat - s1 - xhat * s2))

    return _node(y, (x, gamma, beta), bwd)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Fixed-coefficient bilinear resize over the two trailing axes."""
    if x.data.ndim != 4:
        raise ShapeError("bilinear_resize expects a [N,C,H,W] tensor")
    h, w = x.data.shape[2], x.data.shape[3]
    y = resize_bilinear(x.data, out_h, out_w)

    def bwd(g):
        _accumulate(x, resize_bilinear_adjoint(g, h, w))

    return _node(y, (x,), bwd)


def squared_error_sum(a: Tensor, b: Tensor) -> Tensor:
    """Sum over every element of the squared difference; gradient 2(a-b)."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"squared_error_sum shape mismatch {a.data.shape} vs {b.data.shape}")
    _require_same_dtype(a, b)
    d = a.data - b.data
    val = np.asarray((d * d).sum())
    if not np.isfinite(val):
        raise NumericalError("squared_error_sum produced a non-finite value")

    def bwd(g):
        scaled = (2.0 * g.reshape(())) * d
        _accumulate(a, scaled)
        _accumulate(b, -scaled)

    return _node(val, (a, b), bwd)


def masked_nll_mean(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-probability of the true class over non-ignored pixels.

    Labels hold class indices with -1 marking pixels excluded from both the
    loss and the gradient; an all-ignored map yields loss 0 and zero gradients.
    """
    if probs.data.ndim != 4:
        raise ShapeError("masked_nll_mean expects probabilities of shape [N,K,H,W]")
    labels = np.asarray(labels.data if isinstance(labels, Tensor) else labels)
    if labels.ndim == 2:
        labels = labels[None]
    if labels.shape != (probs.data.shape[0],) + probs.data.shape[2:]:
        raise ShapeError(f"label shape {labels.shape} does not match probabilities {probs.data.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError("labels must be integers")
    k = probs.data.shape[1]
    if labels.min(initial=-1) < -1 or labels.max(initial=-1) >= k:
        raise DataError(f"labels must lie in [-1, {k - 1}]")
    valid = labels >= 0
    cnt = int(valid.sum())
    n_idx, i_idx, j_idx = np.nonzero(valid)
    k_idx = labels[valid]
    if cnt == 0:
        val = np.asarray(probs.data.dtype.type(0.0))

        def bwd_empty(g):
            _accumulate(probs, np.zeros_like(probs.data))

        return _node(val, (probs,), bwd_empty)
    p_true = probs.data[n_idx, k_idx, i_idx, j_idx]
    val = np.asarray(-(np.log(p_true).sum()) / cnt, dtype=probs.data.dtype)
    if not np.isfinite(val):
        raise NumericalError("masked_nll_mean produced a non-finite value")

    def bwd(g):
        gp = np.zeros_like(probs.data)
        gp[n_idx, k_idx, i_idx, j_idx] = -(float(g.reshape(())) / cnt) / p_true
        _accumulate(probs, gp)

    return _node(val, (probs,), bwd)
