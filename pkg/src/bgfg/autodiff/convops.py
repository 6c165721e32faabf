"""Raw convolution and resampling arithmetic on NumPy arrays.

Everything here is plain ndarray in, ndarray out, with a fixed reduction
order (matmul / bincount), so repeated calls on identical inputs give
bit-identical results.  Transposed convolution is implemented as the exact
input-gradient path of the forward convolution, which makes the pair
adjoint by construction rather than by accident.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ShapeError


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-D convolution (shared by the transposed form)."""

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    has_bias: bool = True

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("channel counts must be positive")
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ShapeError("kernel extents must be positive")
        if self.stride < 1:
            raise ShapeError("stride must be >= 1")
        if self.dilation < 1:
            raise ShapeError("dilation must be >= 1")
        if self.padding < 0:
            raise ShapeError("padding must be >= 0")

    @property
    def weight_shape(self):
        """Forward-convolution weight layout [out, in, kh, kw]."""
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    @property
    def transposed_weight_shape(self):
        """Transposed-convolution weight layout [in, out, kh, kw]."""
        return (self.in_channels, self.out_channels, self.kernel_h, self.kernel_w)


def conv_output_extent(extent: int, kernel: int, stride: int, dilation: int, padding: int) -> int:
    span = dilation * (kernel - 1) + 1
    out = (extent + 2 * padding - span) // stride + 1
    if out < 1:
        raise ShapeError(
            f"convolution output extent {out} < 1 "
            f"(input {extent}, kernel {kernel}, stride {stride}, "
            f"dilation {dilation}, padding {padding})"
        )
    return out


def conv_output_shape(spec: ConvSpec, h: int, w: int) -> tuple[int, int]:
    return (
        conv_output_extent(h, spec.kernel_h, spec.stride, spec.dilation, spec.padding),
        conv_output_extent(w, spec.kernel_w, spec.stride, spec.dilation, spec.padding),
    )


def tconv_output_extent(extent: int, kernel: int, stride: int, dilation: int, padding: int) -> int:
    out = (extent - 1) * stride - 2 * padding + dilation * (kernel - 1) + 1
    if out < 1:
        raise ShapeError(f"transposed convolution output extent {out} < 1")
    return out


def tconv_output_shape(spec: ConvSpec, h: int, w: int) -> tuple[int, int]:
    return (
        tconv_output_extent(h, spec.kernel_h, spec.stride, spec.dilation, spec.padding),
        tconv_output_extent(w, spec.kernel_w, spec.stride, spec.dilation, spec.padding),
    )


def _adjoint_spec(spec: ConvSpec) -> ConvSpec:
    # The convolution whose input-gradient realizes the transposed form.
    return replace(spec, in_channels=spec.out_channels, out_channels=spec.in_channels)


def im2col(x: np.ndarray, spec: ConvSpec, oh: int, ow: int) -> np.ndarray:
    """Gather sliding windows into a column matrix [N, C*kh*kw, oh*ow]."""
    n, c = x.shape[:2]
    p = spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    sn, sc, sh, sw = xp.strides
    win = as_strided(
        xp,
        shape=(n, c, spec.kernel_h, spec.kernel_w, oh, ow),
        strides=(sn, sc, sh * spec.dilation, sw * spec.dilation, sh * spec.stride, sw * spec.stride),
    )
    # reshape copies the strided view into contiguous memory
    return win.reshape(n, c * spec.kernel_h * spec.kernel_w, oh * ow)


@functools.lru_cache(maxsize=512)
def _col2im_index(c, h, w, kh, kw, stride, dilation, padding, oh, ow):
    """Flat scatter targets (into the padded image) for each column entry."""
    hp, wp = h + 2 * padding, w + 2 * padding
    ci = np.arange(c).reshape(c, 1, 1, 1, 1)
    ki = np.arange(kh).reshape(1, kh, 1, 1, 1)
    kj = np.arange(kw).reshape(1, 1, kw, 1, 1)
    oi = np.arange(oh).reshape(1, 1, 1, oh, 1)
    oj = np.arange(ow).reshape(1, 1, 1, 1, ow)
    rows = oi * stride + ki * dilation
    cols = oj * stride + kj * dilation
    idx = (ci * hp + rows) * wp + cols
    flat = np.ascontiguousarray(np.broadcast_to(idx, (c, kh, kw, oh, ow)).reshape(-1))
    flat.setflags(write=False)
    return flat, hp, wp


def conv_forward(x: np.ndarray, w: np.ndarray, spec: ConvSpec):
    """Strided/dilated cross-correlation.  Returns (output, columns)."""
    n = x.shape[0]
    oh, ow = conv_output_shape(spec, x.shape[2], x.shape[3])
    cols = im2col(x, spec, oh, ow)
    wmat = w.reshape(spec.out_channels, -1)
    y = np.matmul(wmat, cols)
    return y.reshape(n, spec.out_channels, oh, ow), cols


def conv_weight_grad(cols: np.ndarray, gy: np.ndarray, spec: ConvSpec) -> np.ndarray:
    n = cols.shape[0]
    g = gy.reshape(n, spec.out_channels, -1)
    gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
    return gw.reshape(spec.weight_shape)


def conv_input_grad(gy: np.ndarray, w: np.ndarray, spec: ConvSpec, in_hw: tuple[int, int]) -> np.ndarray:
    """Adjoint of conv_forward with respect to its input (col2im scatter)."""
    n = gy.shape[0]
    h, wd = in_hw
    oh, ow = conv_output_shape(spec, h, wd)
    if gy.shape[1] != spec.out_channels or gy.shape[2:] != (oh, ow):
        raise ShapeError(f"gradient shape {gy.shape} inconsistent with spec output [{spec.out_channels},{oh},{ow}]")
    wmat = w.reshape(spec.out_channels, -1)
    cols_g = np.matmul(wmat.T, gy.reshape(n, spec.out_channels, -1))
    idx, hp, wp = _col2im_index(
        spec.in_channels, h, wd, spec.kernel_h, spec.kernel_w,
        spec.stride, spec.dilation, spec.padding, oh, ow,
    )
    size = spec.in_channels * hp * wp
    out = np.empty((n, size), dtype=np.float64)
    for i in range(n):
        out[i] = np.bincount(idx, weights=cols_g[i].reshape(-1), minlength=size)
    gx = out.reshape(n, spec.in_channels, hp, wp)
    if spec.padding:
        p = spec.padding
        gx = gx[:, :, p : p + h, p : p + wd]
    return np.ascontiguousarray(gx, dtype=gy.dtype)


def tconv_forward(x: np.ndarray, w: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Transposed convolution: x [N, in, H, W], w [in, out, kh, kw]."""
    oh, ow = tconv_output_shape(spec, x.shape[2], x.shape[3])
    return conv_input_grad(x, w, _adjoint_spec(spec), (oh, ow))


def tconv_input_grad(gy: np.ndarray, w: np.ndarray, spec: ConvSpec) -> np.ndarray:
    y, _ = conv_forward(gy, w, _adjoint_spec(spec))
    return y


def tconv_weight_grad(x: np.ndarray, gy: np.ndarray, spec: ConvSpec) -> np.ndarray:
    adj = _adjoint_spec(spec)
    oh, ow = conv_output_shape(adj, gy.shape[2], gy.shape[3])
    cols = im2col(gy, adj, oh, ow)
    return conv_weight_grad(cols, x, adj)


@functools.lru_cache(maxsize=256)
def bilinear_matrix(s_in: int, s_out: int, dtype_name: str = "float64") -> np.ndarray:
    """Row-stochastic 1-D resize matrix (half-pixel-center convention,
    source coordinates clamped at the borders so constants are preserved)."""
    m = np.zeros((s_out, s_in), dtype=np.dtype(dtype_name))
    scale = s_in / s_out
    for j in range(s_out):
        src = (j + 0.5) * scale - 0.5
        src = min(max(src, 0.0), float(s_in - 1))
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, s_in - 1)
        f = src - i0
        m[j, i0] += 1.0 - f
        m[j, i1] += f
    m.setflags(write=False)
    return m


def resize_bilinear(x: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """Bilinear resize over the two trailing axes of x."""
    h, w = x.shape[-2], x.shape[-1]
    if oh < 1 or ow < 1:
        raise ShapeError("resize target extents must be >= 1")
    if (h, w) == (oh, ow):
        return x.copy()
    name = x.dtype.name
    my = bilinear_matrix(h, oh, name)
    mx = bilinear_matrix(w, ow, name)
    return np.matmul(my, np.matmul(x, mx.T))


def resize_bilinear_adjoint(gy: np.ndarray, h: int, w: int) -> np.ndarray:
    """Adjoint of resize_bilinear, scattering back to an h-by-w grid."""
    oh, ow = gy.shape[-2], gy.shape[-1]
    if (h, w) == (oh, ow):
        return gy.copy()
    name = gy.dtype.name
    my = bilinear_matrix(h, oh, name)
    mx = bilinear_matrix(w, ow, name)
    return np.matmul(my.T, np.matmul(gy, mx))


def bilinear_kernel_1d(kernel: int) -> np.ndarray:
    factor = (kernel + 1) // 2
    center = factor - 1.0 if kernel % 2 == 1 else factor - 0.5
    i = np.arange(kernel, dtype=np.float64)
    return 1.0 - np.abs(i - center) / factor


def bilinear_tconv_weights(channels: int, factor: int, dtype=np.float64) -> tuple[np.ndarray, ConvSpec]:
    """Per-channel transposed-conv weights performing factor-x bilinear
    upsampling (interior-exact; zero padding attenuates the borders)."""
    kernel = 2 * factor - factor % 2
    pad = int(np.ceil((factor - 1) / 2))
    filt = np.outer(bilinear_kernel_1d(kernel), bilinear_kernel_1d(kernel))
    w = np.zeros((channels, channels, kernel, kernel), dtype=dtype)
    for c in range(channels):
        w[c, c] = filt
    spec = ConvSpec(
        in_channels=channels, out_channels=channels,
        kernel_h=kernel, kernel_w=kernel,
        stride=factor, padding=pad, has_bias=False,
    )
    return w, spec
