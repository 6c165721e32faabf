"""Declarative layer stacks executed on the autodiff core.

A NetworkSpec is a plain tuple of layer descriptions; Network binds it to a
parameter registry, initializes weights from a seeded normal draw, and runs
the forward pass.  Parameter checksums give an exact (bitwise) fingerprint
used to verify freezing guarantees.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ConvSpec,
    Graph,
    Tensor,
    apply_activation,
    batchnorm2d,
    bilinear_resize,
    conv2d,
    transposed_conv2d,
)
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ConvLayer:
    name: str
    spec: ConvSpec


@dataclass(frozen=True)
class TConvLayer:
    name: str
    spec: ConvSpec


@dataclass(frozen=True)
class ActLayer:
    kind: str
    slope: float = 0.2


@dataclass(frozen=True)
class BatchNormLayer:
    name: str
    channels: int
    eps: float = 1e-5


@dataclass(frozen=True)
class ResizeToInput:
    """Fixed bilinear resize back to the spatial size the network was fed."""


Layer = ConvLayer | TConvLayer | ActLayer | BatchNormLayer | ResizeToInput


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    in_channels: int
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.in_channels < 1:
            raise ConfigError("in_channels must be positive")
        names = [l.name for l in self.layers if isinstance(l, (ConvLayer, TConvLayer, BatchNormLayer))]
        if len(names) != len(set(names)):
            raise ConfigError(f"duplicate layer names in network {self.name!r}")


class Network:
    """A NetworkSpec bound to named parameters."""

    def __init__(self, spec: NetworkSpec, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.graph = Graph()
        self._initialized = False

    @property
    def params(self) -> dict:
        return self.graph.parameters

    def initialize(self, seed, init_std: float = 0.01) -> None:
        """Draw weights from Normal(0, init_std^2); biases and shift terms
        start at zero, normalization gains at one."""
        if not init_std > 0:
            raise ConfigError(f"init_std must be positive, got {init_std}")
        rng = np.random.default_rng(seed)
        self.graph.parameters.clear()
        for layer in self.spec.layers:
            if isinstance(layer, (ConvLayer, TConvLayer)):
                shape = (
                    layer.spec.weight_shape
                    if isinstance(layer, ConvLayer)
                    else layer.spec.transposed_weight_shape
                )
                w = rng.normal(0.0, init_std, size=shape).astype(self.dtype)
                self._register(f"{layer.name}.weight", w)
                if layer.spec.has_bias:
                    self._register(f"{layer.name}.bias", np.zeros(layer.spec.out_channels, dtype=self.dtype))
            elif isinstance(layer, BatchNormLayer):
                self._register(f"{layer.name}.gamma", np.ones(layer.channels, dtype=self.dtype))
                self._register(f"{layer.name}.beta", np.zeros(layer.channels, dtype=self.dtype))
        self._initialized = True

    def load_params(self, arrays: dict) -> None:
        """Adopt externally supplied parameter arrays (checkpoint load path)."""
        expected = self._expected_shapes()
        if set(arrays) != set(expected):
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            raise ShapeError(f"parameter name mismatch: missing {missing}, unexpected {extra}")
        self.graph.parameters.clear()
        for name in sorted(arrays):
            arr = np.asarray(arrays[name])
            if arr.shape != expected[name]:
                raise ShapeError(f"parameter {name!r} has shape {arr.shape}, expected {expected[name]}")
            self._register(name, arr.astype(self.dtype, copy=True))
        self._initialized = True

    def _register(self, name: str, array: np.ndarray):
        t = Tensor(array)
        t.requires_grad = True
        self.graph.register(name, t)

    def _expected_shapes(self) -> dict:
        shapes: dict = {}
        for layer in self.spec.layers:
            if isinstance(layer, ConvLayer):
                shapes[f"{layer.name}.weight"] = layer.spec.weight_shape
                if layer.spec.has_bias:
                    shapes[f"{layer.name}.bias"] = (layer.spec.out_channels,)
            elif isinstance(layer, TConvLayer):
                shapes[f"{layer.name}.weight"] = layer.spec.transposed_weight_shape
                if layer.spec.has_bias:
                    shapes[f"{layer.name}.bias"] = (layer.spec.out_channels,)
            elif isinstance(layer, BatchNormLayer):
                shapes[f"{layer.name}.gamma"] = (layer.channels,)
                shapes[f"{layer.name}.beta"] = (layer.channels,)
        return shapes

    def forward(self, x: Tensor) -> Tensor:
        if not self._initialized:
            raise ConfigError(f"network {self.spec.name!r} has no parameters; initialize or load first")
        if x.data.ndim != 4:
            raise ShapeError("network input must be [N,C,H,W]")
        if x.data.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"network {self.spec.name!r} expects {self.spec.in_channels} input channels, got {x.data.shape[1]}"
            )
        if x.data.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype), requires_grad=x.requires_grad)
        in_h, in_w = x.data.shape[2], x.data.shape[3]
        out = x
        for layer in self.spec.layers:
            if isinstance(layer, ConvLayer):
                out = conv2d(out, layer.spec, *self._wb(layer))
            elif isinstance(layer, TConvLayer):
                out = transposed_conv2d(out, layer.spec, *self._wb(layer))
            elif isinstance(layer, ActLayer):
                out = apply_activation(out, layer.kind, layer.slope)
            elif isinstance(layer, BatchNormLayer):
                out = batchnorm2d(
                    out,
                    self.graph.parameters[f"{layer.name}.gamma"],
                    self.graph.parameters[f"{layer.name}.beta"],
                    layer.eps,
                )
            elif isinstance(layer, ResizeToInput):
                out = bilinear_resize(out, in_h, in_w)
            else:
                raise ConfigError(f"unknown layer kind {type(layer).__name__}")
        return out

    def _wb(self, layer):
        w = self.graph.parameters[f"{layer.name}.weight"]
        b = self.graph.parameters.get(f"{layer.name}.bias")
        return (w, b) if layer.spec.has_bias else (w, None)

    def set_trainable(self, trainable: bool) -> None:
        for p in self.graph.parameters.values():
            p.requires_grad = trainable

    def zero_grad(self) -> None:
        self.graph.zero_grad()

    def param_count(self) -> int:
        return sum(p.data.size for p in self.graph.parameters.values())

    def param_arrays(self) -> dict:
        return {name: p.data for name, p in self.graph.parameters.items()}

    def checksum(self) -> str:
        """SHA-256 over name-sorted parameter bytes; equal iff bitwise equal."""
        h = hashlib.sha256()
        for name in sorted(self.graph.parameters):
            p = self.graph.parameters[name]
            h.update(name.encode())
            h.update(str(p.data.shape).encode())
            h.update(p.data.dtype.str.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()
