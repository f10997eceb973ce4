"""Strided 3D convolution and transposed convolution with same padding.

Both directions reduce to one GEMM plus an im2col gather or col2im
scatter, so the heavy lifting stays inside BLAS. Same padding follows the
pad-more-on-the-high-side convention; for stride ``s`` the convolution
output size is ``ceil(n / s)`` per axis and the transposed output is
exactly ``n * s``. Cross-correlation orientation (no kernel flip).

``conv3d_transpose`` is implemented as the exact adjoint of ``conv3d``
(shared gather/scatter helpers, mirrored padding), which is what makes
the inner-product identity <conv(x), y> == <x, conv_t(y)> hold to
rounding error for weight-transposed layer pairs.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .autodiff import Tensor, _node, relu
from .errors import ShapeError

try:  # numba compiles the gather/scatter inner loops; numpy fallback below
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

_ACTIVATIONS = ("none", "relu")


@dataclass
class ConvLayerParams:
    """Weights, bias, stride, and activation of one (de)convolution layer.

    ``weights`` has shape (out_channels, in_channels, kd, kh, kw); the same
    layout is used for both directions, transposed convolution reads its
    input as ``in_channels`` and scatters to ``out_channels``.
    """

    weights: Tensor
    bias: Optional[Tensor] = None
    stride: int = 1
    activation: str = "none"

    def __post_init__(self):
        if self.weights.data.ndim != 5:
            raise ShapeError(
                f"conv weights must be 5-D (Co, Ci, kd, kh, kw), "
                f"got {self.weights.shape}"
            )
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        self.activation = self.activation.lower()
        if self.activation not in _ACTIVATIONS:
            raise ShapeError(f"unknown activation '{self.activation}'")
        if self.bias is not None and self.bias.shape != (self.out_channels,):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match "
                f"{self.out_channels} output channels"
            )

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel(self):
        return self.weights.shape[2:]

    def parameters(self):
        return [self.weights] + ([self.bias] if self.bias is not None else [])


def _same_pad(n: int, k: int, s: int) -> Tuple[int, int, int]:
    """Output size and (lo, hi) zero padding for one axis."""
    m = math.ceil(n / s)
    total = max((m - 1) * s + k - n, 0)
    lo = total // 2
    return m, lo, total - lo


def conv_output_dims(dims, kernel, stride):
    return tuple(math.ceil(d / stride) for d in dims)


if _HAVE_NUMBA:

    @njit(cache=True)
    def _gather_loops(xp, cols, s):  # pragma: no cover - compiled
        c, kd, kh, kw, do, ho, wo = cols.shape
        for ci in range(c):
            for a in range(kd):
                for b in range(kh):
                    for d in range(kw):
                        for i in range(do):
                            for j in range(ho):
                                for l in range(wo):
                                    cols[ci, a, b, d, i, j, l] = xp[
                                        ci, a + s * i, b + s * j, d + s * l
                                    ]

    @njit(cache=True)
    def _scatter_loops(cols, vol, s):  # pragma: no cover - compiled
        c, kd, kh, kw, do, ho, wo = cols.shape
        for ci in range(c):
            for a in range(kd):
                for b in range(kh):
                    for d in range(kw):
                        for i in range(do):
                            for j in range(ho):
                                for l in range(wo):
                                    vol[ci, a + s * i, b + s * j, d + s * l] += cols[
                                        ci, a, b, d, i, j, l
                                    ]


def _im2col(xp: np.ndarray, kernel, s: int, out_dims) -> np.ndarray:
    """Gather windows of padded input into (C * k^3, P) columns."""
    c = xp.shape[0]
    kd, kh, kw = kernel
    do, ho, wo = out_dims
    cols = np.empty((c, kd, kh, kw, do, ho, wo), dtype=xp.dtype)
    if _HAVE_NUMBA:
        _gather_loops(np.ascontiguousarray(xp), cols, s)
    else:
        for a in range(kd):
            for b in range(kh):
                for d in range(kw):
                    cols[:, a, b, d] = xp[
                        :, a : a + s * do : s, b : b + s * ho : s, d : d + s * wo : s
                    ]
    return cols.reshape(c * kd * kh * kw, do * ho * wo)


def _col2im(cols: np.ndarray, c: int, padded_dims, kernel, s: int, pos_dims) -> np.ndarray:
    """Scatter-add (C * k^3, P) columns back into a padded volume (adjoint of _im2col)."""
    kd, kh, kw = kernel
    do, ho, wo = pos_dims
    cols = cols.reshape(c, kd, kh, kw, do, ho, wo)
    vol = np.zeros((c,) + tuple(padded_dims), dtype=cols.dtype)
    if _HAVE_NUMBA:
        _scatter_loops(np.ascontiguousarray(cols), vol, s)
    else:
        for a in range(kd):
            for b in range(kh):
                for d in range(kw):
                    vol[
                        :, a : a + s * do : s, b : b + s * ho : s, d : d + s * wo : s
                    ] += cols[:, a, b, d]
    return vol


def _check_input(x: Tensor, layer: ConvLayerParams, op: str):
    if x.data.ndim != 4:
        raise ShapeError(f"{op} expects (C, D, H, W) input, got shape {x.shape}")
    if x.shape[0] != layer.in_channels:
        raise ShapeError(
            f"{op}: input has {x.shape[0]} channels, layer expects "
            f"{layer.in_channels}"
        )
    if min(x.shape[1:]) < 1:
        raise ShapeError(f"{op}: spatial dims must be >= 1, got {x.shape[1:]}")


def _apply_bias_activation(out: Tensor, layer: ConvLayerParams) -> Tensor:
    if layer.activation == "relu":
        out = relu(out)
    return out


def conv3d(x: Tensor, layer: ConvLayerParams) -> Tensor:
    """Same-padded strided cross-correlation; output dims are ceil(d / s)."""
    _check_input(x, layer, "conv3d")
    s = layer.stride
    kernel = layer.kernel
    dims = x.shape[1:]
    axes = [_same_pad(n, k, s) for n, k in zip(dims, kernel)]
    out_dims = tuple(a[0] for a in axes)
    pads = [(a[1], a[2]) for a in axes]

    w = layer.weights
    co = layer.out_channels
    wmat = w.data.reshape(co, -1)
    xp = np.pad(x.data, [(0, 0)] + pads)
    cols = _im2col(xp, kernel, s, out_dims)
    out = (wmat @ cols).reshape((co,) + out_dims)
    if layer.bias is not None:
        out = out + layer.bias.data[:, None, None, None]

    bias = layer.bias
    parents = (x, w) + ((bias,) if bias is not None else ())
    saved_cols = cols if w.requires_grad else None  # reused for the weight grad

    def backward(g):
        gmat = g.reshape(co, -1)
        gx = None
        gw = None
        gb = None
        if x.requires_grad:
            gcols = wmat.T @ gmat
            gxp = _col2im(gcols, layer.in_channels, xp.shape[1:], kernel, s, out_dims)
            gx = gxp[
                :,
                pads[0][0] : pads[0][0] + dims[0],
                pads[1][0] : pads[1][0] + dims[1],
                pads[2][0] : pads[2][0] + dims[2],
            ]
        if w.requires_grad:
            gw = (gmat @ saved_cols.T).reshape(w.shape)
        if bias is not None and bias.requires_grad:
            gb = gmat.sum(axis=1, dtype=np.float64).astype(g.dtype)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    return _apply_bias_activation(_node(out, parents, backward), layer)


def conv3d_transpose(x: Tensor, layer: ConvLayerParams) -> Tensor:
    """Adjoint-of-convolution upsampling; output dims are exactly d * s."""
    _check_input(x, layer, "conv3d_transpose")
    s = layer.stride
    kernel = layer.kernel
    m_dims = x.shape[1:]
    out_dims = tuple(m * s for m in m_dims)
    # padding mirrors a same-padded forward conv from out_dims back to m_dims
    axes = [_same_pad(n, k, s) for n, k in zip(out_dims, kernel)]
    pads = [(a[1], a[2]) for a in axes]
    scatter_dims = tuple((m - 1) * s + k for m, k in zip(m_dims, kernel))
    spans = [min(n, sc - p[0]) for n, sc, p in zip(out_dims, scatter_dims, pads)]

    w = layer.weights
    ci, co = layer.in_channels, layer.out_channels
    w2 = np.ascontiguousarray(w.data.transpose(1, 0, 2, 3, 4)).reshape(ci, -1)
    xmat = x.data.reshape(ci, -1)
    cols = w2.T @ xmat
    volp = _col2im(cols, co, scatter_dims, kernel, s, m_dims)
    out = np.zeros((co,) + out_dims, dtype=x.dtype)
    out[:, : spans[0], : spans[1], : spans[2]] = volp[
        :,
        pads[0][0] : pads[0][0] + spans[0],
        pads[1][0] : pads[1][0] + spans[1],
        pads[2][0] : pads[2][0] + spans[2],
    ]
    if layer.bias is not None:
        out = out + layer.bias.data[:, None, None, None]

    bias = layer.bias
    parents = (x, w) + ((bias,) if bias is not None else ())

    def backward(g):
        gx = None
        gw = None
        gb = None
        if x.requires_grad or w.requires_grad:
            gp = np.zeros((co,) + scatter_dims, dtype=g.dtype)
            gp[
                :,
                pads[0][0] : pads[0][0] + spans[0],
                pads[1][0] : pads[1][0] + spans[1],
                pads[2][0] : pads[2][0] + spans[2],
            ] = g[:, : spans[0], : spans[1], : spans[2]]
            gcols = _im2col(gp, kernel, s, m_dims)
            if x.requires_grad:
                gx = (w2 @ gcols).reshape(x.shape)
            if w.requires_grad:
                gw2 = xmat @ gcols.T
                gw = np.ascontiguousarray(
                    gw2.reshape((ci, co) + tuple(kernel)).transpose(1, 0, 2, 3, 4)
                )
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(1, 2, 3), dtype=np.float64).astype(g.dtype)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    return _apply_bias_activation(_node(out, parents, backward), layer)


def transpose_pair(layer: ConvLayerParams) -> ConvLayerParams:
    """The layer whose conv3d_transpose is the adjoint of this layer's conv3d."""
    swapped = Tensor(
        np.ascontiguousarray(layer.weights.data.swapaxes(0, 1)),
        requires_grad=layer.weights.requires_grad,
    )
    return ConvLayerParams(swapped, None, layer.stride, "none")
