"""2D convolution with explicit boundary handling.

Three boundary modes decide which output positions exist:

* ``valid`` -- the kernel stays inside the image, output extent ``n - 2k``;
* ``same``  -- the kernel centre visits every pixel, ``k`` pad values per side,
  output extent ``n``;
* ``full``  -- every tap visits every pixel, ``2k`` pad values per side,
  output extent ``n + 2k``.

Pad values are zeros or wrapped from the opposite edge (circular, ``same``
only).  The operation is cross-correlation (no kernel flip)::

    y[t] = sum_j f[j] * x_padded[t + j],   j = 0 .. 2k

followed by subsampling ``y[::stride]`` starting at offset 0 and a per-channel
bias.  Two implementations live here: a strided-window / matrix-product path
used everywhere, and ``conv2d_reference`` which sums the window element by
element and serves as its oracle.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError
from .tensor import Tensor, check_finite


class Boundary(str, enum.Enum):
    VALID = "valid"
    SAME = "same"
    FULL = "full"


class PadMode(str, enum.Enum):
    ZERO = "zero"
    CIRCULAR = "circular"


@dataclass(frozen=True)
class ConvSpec:
    boundary: Boundary = Boundary.SAME
    pad_mode: PadMode = PadMode.ZERO
    k_h: int = 1
    k_w: int = 1
    stride_h: int = 1
    stride_w: int = 1

    def __post_init__(self):
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        object.__setattr__(self, "pad_mode", PadMode(self.pad_mode))
        if self.k_h < 0 or self.k_w < 0:
            raise ConfigError("kernel half-widths must be non-negative")
        if self.stride_h < 1 or self.stride_w < 1:
            raise ConfigError("strides must be positive")
        if self.boundary is Boundary.VALID:
            # padding is never used, so normalise for equality/serialization
            object.__setattr__(self, "pad_mode", PadMode.ZERO)
        if self.pad_mode is PadMode.CIRCULAR and self.boundary is not Boundary.SAME:
            raise ConfigError("circular padding is only defined for same convolution")

    @classmethod
    def square(cls, boundary, pad_mode="zero", k=1, stride=1) -> "ConvSpec":
        return cls(boundary, pad_mode, k, k, stride, stride)

    @property
    def kernel_hw(self) -> Tuple[int, int]:
        return 2 * self.k_h + 1, 2 * self.k_w + 1

    def pad_amounts(self) -> Tuple[int, int]:
        """Pad per side along (height, width)."""
        per_k = {Boundary.VALID: 0, Boundary.SAME: 1, Boundary.FULL: 2}[self.boundary]
        return per_k * self.k_h, per_k * self.k_w

    def output_hw(self, h: int, w: int) -> Tuple[int, int]:
        return (_out_extent(h, self.k_h, self.pad_amounts()[0], self.stride_h),
                _out_extent(w, self.k_w, self.pad_amounts()[1], self.stride_w))

    def to_dict(self) -> dict:
        return {"boundary": self.boundary.value, "pad_mode": self.pad_mode.value,
                "k_h": self.k_h, "k_w": self.k_w,
                "stride_h": self.stride_h, "stride_w": self.stride_w}

    @classmethod
    def from_dict(cls, d: dict) -> "ConvSpec":
        return cls(**d)

    def label(self) -> str:
        if self.boundary is Boundary.VALID:
            return "valid"
        return f"{self.boundary.value}+{self.pad_mode.value}"


def _out_extent(n: int, k: int, pad: int, stride: int) -> int:
    m = n + 2 * pad - 2 * k
    if m < 1:
        raise ShapeError(f"input extent {n} too small for kernel {2 * k + 1} with pad {pad}")
    return (m - 1) // stride + 1


@dataclass
class Kernel:
    """Filter bank ``(C_out, C_in, 2k_h+1, 2k_w+1)`` plus a bias per output channel."""

    weights: np.ndarray
    bias: np.ndarray = field(default=None)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ShapeError(f"kernel weights must be rank 4, got {self.weights.shape}")
        kh, kw = self.weights.shape[2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"kernel extents must be odd, got {kh}x{kw}")
        if self.bias is None:
            self.bias = np.zeros(self.weights.shape[0])
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ShapeError("bias length must equal the number of output channels")

    @property
    def half_widths(self) -> Tuple[int, int]:
        return self.weights.shape[2] // 2, self.weights.shape[3] // 2


def _spatial_widths(ndim: int, axes, before_after):
    widths = [(0, 0)] * ndim
    for ax, w in zip(axes, before_after):
        widths[ax] = w
    return widths


def pad(x: Tensor, top: int, bottom: int, left: int, right: int, mode=PadMode.ZERO,
        axes=(2, 3)) -> Tensor:
    """Extend the spatial axes of ``x`` by the given amounts."""
    mode = PadMode(mode)
    if min(top, bottom, left, right) < 0:
        raise ConfigError("pad amounts must be non-negative")
    widths = _spatial_widths(x.ndim, axes, ((top, bottom), (left, right)))
    if mode is PadMode.ZERO:
        return np.pad(x, widths, mode="constant")
    H, W = x.shape[axes[0]], x.shape[axes[1]]
    if max(top, bottom) > H or max(left, right) > W:
        raise ConfigError(f"circular pad ({top},{bottom},{left},{right}) exceeds input {H}x{W}")
    return np.pad(x, widths, mode="wrap")


def _fold_axis(g: np.ndarray, axis: int, before: int, after: int, circular: bool) -> np.ndarray:
    n = g.shape[axis] - before - after
    core = np.take(g, np.arange(before, before + n), axis=axis)
    if not circular:
        return core
    idx = [slice(None)] * g.ndim

    def at(sl):
        idx[axis] = sl
        return tuple(idx)

    if before:
        core[at(slice(n - before, n))] += g[at(slice(0, before))]
    if after:
        core[at(slice(0, after))] += g[at(slice(before + n, before + n + after))]
    return core


def unpad_grad(g: Tensor, top: int, bottom: int, left: int, right: int, mode=PadMode.ZERO,
               axes=(2, 3)) -> Tensor:
    """Adjoint of :func:`pad`: crop, and for circular fold wrapped rows/cols back."""
    circ = PadMode(mode) is PadMode.CIRCULAR
    g = _fold_axis(g, axes[0], top, bottom, circ)
    return _fold_axis(g, axes[1], left, right, circ)


def _check(x: Tensor, kern: Kernel, spec: ConvSpec) -> None:
    if x.ndim != 4:
        raise ShapeError(f"input must be rank 4, got {x.shape}")
    if x.shape[1] != kern.weights.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {kern.weights.shape[1]}")
    if kern.half_widths != (spec.k_h, spec.k_w):
        raise ShapeError(f"kernel half-widths {kern.half_widths} disagree with spec "
                         f"({spec.k_h}, {spec.k_w})")


# -- lowered (im2col) path, channels-last internally ------------------------

def weight_matrix(weights: np.ndarray) -> np.ndarray:
    """``(C_out, C_in, kh, kw)`` -> ``(C_out, kh*kw*C_in)`` matching :func:`lower`."""
    return np.ascontiguousarray(weights.transpose(0, 2, 3, 1)).reshape(weights.shape[0], -1)


def weight_from_matrix(wm: np.ndarray, shape) -> np.ndarray:
    co, ci, kh, kw = shape
    return np.ascontiguousarray(wm.reshape(co, kh, kw, ci).transpose(0, 3, 1, 2))


def lower(x_nhwc: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Patch matrix ``(N*H_out*W_out, kh*kw*C)`` of the padded, strided input."""
    N, H, W, C = x_nhwc.shape
    Ho, Wo = spec.output_hw(H, W)
    ph, pw = spec.pad_amounts()
    xp = pad(x_nhwc, ph, ph, pw, pw, spec.pad_mode, axes=(1, 2)) if ph or pw else x_nhwc
    kh, kw = spec.kernel_hw
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::spec.stride_h, ::spec.stride_w]
    win = win[:, :Ho, :Wo]  # N,Ho,Wo,C,kh,kw
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(N * Ho * Wo, -1)


_ROW_BLOCK = 512


def rowwise_matmul(a: np.ndarray, b: np.ndarray, block: int = _ROW_BLOCK) -> np.ndarray:
    """``a @ b`` evaluated in zero-padded blocks of exactly ``block`` rows.

    BLAS picks different kernels (and so different rounding) depending on the
    row count, so a plain product gives an output pixel a value that depends
    on the image size.  Fixed-size blocks make each output row a function of
    its own input row only, which keeps e.g. Same and Valid outputs bit-equal
    where they overlap.
    """
    m = a.shape[0]
    nb = -(-m // block)
    if nb * block != m:
        a = np.concatenate([a, np.zeros((nb * block - m, a.shape[1]))])
    out = np.matmul(a.reshape(nb, block, -1), b)
    return out.reshape(nb * block, -1)[:m]


def forward_nhwc(x_nhwc, wm, bias, spec: ConvSpec):
    """Returns ``(y_nhwc, cols)``; keep ``cols`` for :func:`backward_nhwc`."""
    N, H, W, _ = x_nhwc.shape
    Ho, Wo = spec.output_hw(H, W)
    cols = lower(x_nhwc, spec)
    y = rowwise_matmul(cols, np.ascontiguousarray(wm.T))
    y += bias
    return y.reshape(N, Ho, Wo, -1), cols


def backward_nhwc(grad_y, cols, wm, in_shape, spec: ConvSpec, need_x: bool = True):
    """Returns ``(grad_x_nhwc or None, grad_wm, grad_bias)``."""
    N, H, W, C = in_shape
    _, Ho, Wo, Co = grad_y.shape
    g2 = grad_y.reshape(-1, Co)
    grad_wm = g2.T @ cols
    grad_b = g2.sum(axis=0)
    if not need_x:
        return None, grad_wm, grad_b
    kh, kw = spec.kernel_hw
    ph, pw = spec.pad_amounts()
    sh, sw = spec.stride_h, spec.stride_w
    gcols = (g2 @ wm).reshape(N, Ho, Wo, kh, kw, C)
    gp = np.zeros((N, H + 2 * ph, W + 2 * pw, C))
    for i in range(kh):
        for j in range(kw):
            gp[:, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw] += gcols[:, :, :, i, j]
    grad_x = unpad_grad(gp, ph, ph, pw, pw, spec.pad_mode, axes=(1, 2)) if ph or pw else gp
    return grad_x, grad_wm, grad_b


def conv2d_forward(x: Tensor, kern: Kernel, spec: ConvSpec) -> Tensor:
    _check(x, kern, spec)
    y, _ = forward_nhwc(x.transpose(0, 2, 3, 1), weight_matrix(kern.weights), kern.bias, spec)
    return check_finite(np.ascontiguousarray(y.transpose(0, 3, 1, 2)), "convolution output")


def conv2d_backward(x: Tensor, kern: Kernel, spec: ConvSpec, grad_out: Tensor):
    """Gradients of ``sum(grad_out * conv2d_forward(x))``.

    Returns ``(grad_x, grad_weights, grad_bias)``.
    """
    _check(x, kern, spec)
    N, C_out = x.shape[0], kern.weights.shape[0]
    Ho, Wo = spec.output_hw(*x.shape[2:])
    if grad_out.shape != (N, C_out, Ho, Wo):
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {(N, C_out, Ho, Wo)}")
    xt = x.transpose(0, 2, 3, 1)
    cols = lower(xt, spec)
    gx, gwm, gb = backward_nhwc(grad_out.transpose(0, 2, 3, 1), cols,
                                weight_matrix(kern.weights), xt.shape, spec)
    return (np.ascontiguousarray(gx.transpose(0, 3, 1, 2)),
            weight_from_matrix(gwm, kern.weights.shape), gb)


# -- direct-summation oracle ------------------------------------------------

def _source_index(t: int, n: int, pad_: int, circular: bool):
    i = t - pad_
    if 0 <= i < n:
        return i
    return i % n if circular else None


def conv2d_reference(x: Tensor, kern: Kernel, spec: ConvSpec) -> Tensor:
    """Element-by-element evaluation of the correlation sum.

    Never pads: out-of-image taps read zero, or the wrapped pixel in circular
    mode.  Slow; meant for verifying :func:`conv2d_forward`.
    """
    _check(x, kern, spec)
    N, C_in, H, W = x.shape
    C_out = kern.weights.shape[0]
    kh, kw = spec.kernel_hw
    ph, pw = spec.pad_amounts()
    Ho, Wo = spec.output_hw(H, W)
    circ = spec.pad_mode is PadMode.CIRCULAR
    out = np.zeros((N, C_out, Ho, Wo))
    for n in range(N):
        for co in range(C_out):
            for oh in range(Ho):
                for ow in range(Wo):
                    acc = 0.0
                    for ci in range(C_in):
                        for i in range(kh):
                            r = _source_index(oh * spec.stride_h + i, H, ph, circ)
                            if r is None:
                                continue
                            for j in range(kw):
                                c = _source_index(ow * spec.stride_w + j, W, pw, circ)
                                if c is None:
                                    continue
                                acc += kern.weights[co, ci, i, j] * x[n, ci, r, c]
                    out[n, co, oh, ow] = acc + kern.bias[co]
    return out
