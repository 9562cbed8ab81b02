"""How often each input position is touched by a filter tap.

For a 1D signal of length ``n`` and a kernel of ``2k+1`` taps, the count of
position ``a`` is the number of (output position, tap) pairs that read ``a``.
Without boundaries every position is read ``2k+1`` times; valid and
zero-padded same convolution read positions near the border less often, which
is what lets a network tell where it is.  Circular same and full convolution
read every pixel exactly ``2k+1`` times.

Reports use 1-indexed positions; arrays are 0-indexed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .convops import Boundary, ConvSpec, PadMode
from .errors import ConfigError


@dataclass
class CoverageMap:
    counts: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def plateau(self) -> int:
        """Count of an unobstructed interior position."""
        k = self.params.get("k", 0)
        if np.ndim(k):
            return int(np.prod([2 * kk + 1 for kk in k]))
        return 2 * k + 1

    def rows(self):
        """Yield ``(position_h, position_w, count)`` with 1-indexed positions."""
        c = np.atleast_2d(self.counts)
        for h in range(c.shape[0]):
            for w in range(c.shape[1]):
                yield h + 1, w + 1, int(c[h, w])


def _normalise(boundary, pad_mode) -> Tuple[Boundary, PadMode]:
    boundary = Boundary(boundary)
    pad_mode = PadMode(pad_mode)
    if boundary is Boundary.VALID:
        pad_mode = PadMode.ZERO
    if pad_mode is PadMode.CIRCULAR and boundary is not Boundary.SAME:
        raise ConfigError("circular padding is only defined for same convolution")
    return boundary, pad_mode


def _validate(n: int, k: int, boundary: Boundary) -> None:
    if k < 0:
        raise ConfigError("k must be non-negative")
    if n < 1:
        raise ConfigError("n must be positive")
    if boundary is Boundary.VALID and n < 2 * k + 1:
        raise ConfigError(f"valid convolution needs n >= 2k+1, got n={n}, k={k}")


def coverage_1d_closed(n: int, k: int, boundary, pad_mode="zero") -> CoverageMap:
    """Piecewise closed-form counts."""
    boundary, pad_mode = _normalise(boundary, pad_mode)
    _validate(n, k, boundary)
    a = np.arange(1, n + 1)
    full = 2 * k + 1
    if boundary is Boundary.FULL or pad_mode is PadMode.CIRCULAR:
        counts = np.full(n, full)
    elif boundary is Boundary.VALID:
        counts = np.where(a <= 2 * k, a, np.where(a >= n - 2 * k, n - a + 1, full))
    else:
        counts = np.where(a <= k, a + k, np.where(a >= n - k, n - a + k + 1, full))
    # for tiny n both edge branches apply; the smaller count is the true one
    if boundary is Boundary.VALID:
        counts = np.minimum(np.minimum(a, n - a + 1), np.minimum(counts, n - 2 * k))
    elif boundary is Boundary.SAME and pad_mode is PadMode.ZERO:
        counts = np.minimum(np.minimum(a + k, n - a + k + 1), np.minimum(counts, n))
    return CoverageMap(counts.astype(np.int64),
                       {"n": n, "k": k, "boundary": boundary.value, "pad_mode": pad_mode.value})


def coverage_1d_brute(n: int, k: int, boundary, pad_mode="zero") -> CoverageMap:
    """Evaluate the double sum over output centres ``i`` and taps ``j`` directly."""
    boundary, pad_mode = _normalise(boundary, pad_mode)
    _validate(n, k, boundary)
    if boundary is Boundary.VALID:
        centres = range(k + 1, n - k + 1)
    elif boundary is Boundary.SAME:
        centres = range(1, n + 1)
    else:
        centres = range(1 - k, n + k + 1)
    circular = pad_mode is PadMode.CIRCULAR
    centres = np.asarray(centres)
    counts = np.zeros(n, dtype=np.int64)
    for j in range(-k, k + 1):
        # centre i reads position i + j through tap j
        src = centres + j
        if circular:
            # a wrapped tap reads position ((src-1) mod n) + 1
            np.add.at(counts, (src - 1) % n, 1)
        else:
            src = src[(src >= 1) & (src <= n)]
            np.add.at(counts, src - 1, 1)
    return CoverageMap(counts,
                       {"n": n, "k": k, "boundary": boundary.value, "pad_mode": pad_mode.value})


def coverage_2d(n_h: int, n_w: int, k_h: int, k_w: int, boundary, pad_mode="zero",
                method=coverage_1d_closed) -> CoverageMap:
    """Separable product of the per-axis 1D counts."""
    ch = method(n_h, k_h, boundary, pad_mode)
    cw = method(n_w, k_w, boundary, pad_mode)
    return CoverageMap(np.outer(ch.counts, cw.counts),
                       {"n": (n_h, n_w), "k": (k_h, k_w),
                        "boundary": ch.params["boundary"], "pad_mode": ch.params["pad_mode"]})


def coverage_2d_brute(n_h: int, n_w: int, k_h: int, k_w: int, boundary, pad_mode="zero") -> CoverageMap:
    """Count 2D window taps by walking every output centre; no separability assumed."""
    boundary, pad_mode = _normalise(boundary, pad_mode)
    _validate(n_h, k_h, boundary)
    _validate(n_w, k_w, boundary)
    off = {Boundary.VALID: -1, Boundary.SAME: 0, Boundary.FULL: 1}[boundary]
    circular = pad_mode is PadMode.CIRCULAR
    counts = np.zeros((n_h, n_w), dtype=np.int64)
    ch, cw = np.meshgrid(np.arange(-off * k_h, n_h + off * k_h),
                         np.arange(-off * k_w, n_w + off * k_w), indexing="ij")
    ch, cw = ch.ravel(), cw.ravel()
    for dh in range(-k_h, k_h + 1):
        for dw in range(-k_w, k_w + 1):
            h, w = ch + dh, cw + dw
            if circular:
                np.add.at(counts, (h % n_h, w % n_w), 1)
            else:
                inside = (h >= 0) & (h < n_h) & (w >= 0) & (w < n_w)
                np.add.at(counts, (h[inside], w[inside]), 1)
    return CoverageMap(counts, {"n": (n_h, n_w), "k": (k_h, k_w),
                                "boundary": boundary.value, "pad_mode": pad_mode.value})


def boundary_reach_1d(counts: np.ndarray, period: int = 1) -> int:
    """Largest 1-indexed distance from the nearer border at which a count
    departs from the interior value.

    With strided layers the interior is periodic rather than flat, so each
    position is compared with the most central position of the same phase
    modulo ``period``.
    """
    counts = np.asarray(counts)
    n = counts.shape[0]
    centre = (n - 1) / 2
    reach = 0
    for a in range(n):
        same_phase = np.arange(a % period, n, period)
        ref = same_phase[np.argmin(np.abs(same_phase - centre))]
        if counts[a] != counts[ref]:
            reach = max(reach, min(a + 1, n - a))
    return reach


# -- composition through a network -----------------------------------------

def _layer_counts_1d(m: int, k: int, stride: int, boundary: Boundary, pad_mode: PadMode,
                     weights_out: np.ndarray) -> np.ndarray:
    """Back-project per-output weights onto the layer input (length ``m``)."""
    p = {Boundary.VALID: 0, Boundary.SAME: k, Boundary.FULL: 2 * k}[boundary]
    counts = np.zeros(m, dtype=np.int64)
    for o, wt in enumerate(weights_out):
        if not wt:
            continue
        start = o * stride - p
        for j in range(2 * k + 1):
            src = start + j
            if pad_mode is PadMode.CIRCULAR:
                counts[src % m] += wt
            elif 0 <= src < m:
                counts[src] += wt
    return counts


def _conv_specs(spec) -> List[ConvSpec]:
    from .nn import Conv, GlobalAvgPool, GlobalMaxPool, Logits1x1

    convs = []
    for layer in spec.layers:
        if isinstance(layer, Conv):
            convs.append(layer.conv)
        elif isinstance(layer, Logits1x1):
            convs.append(ConvSpec(Boundary.SAME, PadMode.ZERO, 0, 0, 1, 1))
        elif isinstance(layer, (GlobalMaxPool, GlobalAvgPool)):
            continue
        else:
            raise ConfigError(f"no coverage semantics for layer {layer!r}")
    return convs


@dataclass
class NetworkCoverage:
    layers: List[CoverageMap]
    receptive_field: List[int]
    boundary_reach: int

    def summary(self) -> dict:
        plateau = 1
        if self.layers:
            c = self.layers[-1].counts
            plateau = int(c[c.shape[0] // 2, c.shape[1] // 2])
        return {
            "plateau": plateau,
            "boundary_reach": self.boundary_reach,
            "receptive_field": self.receptive_field[-1] if self.receptive_field else 1,
        }


def _compose_axis(n: int, convs: Sequence[ConvSpec], axis: int):
    """Per-layer composed 1D coverage on the input axis plus reach and period."""
    sizes = [n]
    for c in convs:
        k, s = (c.k_h, c.stride_h) if axis == 0 else (c.k_w, c.stride_w)
        p = c.pad_amounts()[axis]
        m = sizes[-1] + 2 * p - 2 * k
        if m < 1:
            raise ConfigError(f"spatial underflow composing coverage at extent {sizes[-1]}")
        sizes.append((m - 1) // s + 1)
    per_layer = []
    for depth in range(1, len(convs) + 1):
        weights = np.ones(sizes[depth], dtype=np.int64)
        for layer in reversed(range(depth)):
            c = convs[layer]
            k, s = (c.k_h, c.stride_h) if axis == 0 else (c.k_w, c.stride_w)
            weights = _layer_counts_1d(sizes[layer], k, s, c.boundary, c.pad_mode, weights)
        per_layer.append(weights)
    period = 1
    for c in convs:
        period *= c.stride_h if axis == 0 else c.stride_w
    return per_layer, period


def network_coverage(spec, input_hw: Tuple[int, int]) -> NetworkCoverage:
    """Compose per-position counts through every spatial layer of ``spec``.

    Layer ``l``'s map counts the tap paths from all of its outputs back to each
    input pixel, i.e. the input gradient of ``sum(output)`` with all-ones
    single-channel kernels and no nonlinearity.  This is our own extension of
    the single-layer count to stacks; it is exact for the linear skeleton of
    the network but ignores what ReLU does to individual paths.
    """
    convs = _conv_specs(spec)
    H, W = input_hw
    rows, ph = _compose_axis(H, convs, 0)
    cols, pw = _compose_axis(W, convs, 1)
    maps, rf = [], []
    r, jump = 1, 1
    for c, ch, cw in zip(convs, rows, cols):
        maps.append(CoverageMap(np.outer(ch, cw), {"n": (H, W), "k": (c.k_h, c.k_w),
                                                   "boundary": c.boundary.value,
                                                   "pad_mode": c.pad_mode.value}))
        r += 2 * c.k_h * jump
        jump *= c.stride_h
        rf.append(r)
    reach = 0
    if convs:
        reach = max(boundary_reach_1d(rows[-1], ph), boundary_reach_1d(cols[-1], pw))
    return NetworkCoverage(maps, rf, reach)


def receptive_field(convs: Sequence[ConvSpec], axis: int = 0) -> int:
    """Standard recurrence ``r_l = r_{l-1} + (kernel_l - 1) * prod(earlier strides)``."""
    r, jump = 1, 1
    for c in convs:
        k, s = (c.k_h, c.stride_h) if axis == 0 else (c.k_w, c.stride_w)
        r += 2 * k * jump
        jump *= s
    return r
