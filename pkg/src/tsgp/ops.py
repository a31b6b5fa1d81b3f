"""Executable primitives of the five-layer program structure.

All functions operate on the last axis of their input so that a whole
``(N, L)`` batch of series can be pushed through a program at once. A single
series is simply the ``N = 1`` case (or a 1-D array). Everything is computed
in float64; pooling comparisons are exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import as_strided, sliding_window_view

from .errors import (
    EmptyMap,
    KernelLongerThanPatch,
    KernelTooShort,
    OutOfRange,
    PatchTooShort,
    PatchTooSmall,
    TooShort,
)

DIVISORS = (2, 4, 8, 16, 32, 64)
RATIOS = (0.25, 0.5, 0.75)
SHAPE_KINDS = ("Inc", "Dec", "Peak")

# smallest kernel each shape template can be built with
MIN_KERNEL = {"Inc": 2, "Dec": 2, "Peak": 3}


def _as_float(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def seg_detect(x, seg_len: int, seg_start: int) -> np.ndarray:
    """Slice ``seg_len`` values starting at the 1-based index ``seg_start``."""
    x = _as_float(x)
    n = x.shape[-1]
    if not (1 <= seg_len < n) or not (1 <= seg_start <= n - seg_len + 1):
        raise OutOfRange(
            f"segment (length={seg_len}, start={seg_start}) invalid for length {n}"
        )
    return x[..., seg_start - 1 : seg_start - 1 + seg_len].copy()


def dom_freq(x) -> np.ndarray:
    """Full-length DFT magnitude spectrum; bin 0 is the DC term."""
    x = _as_float(x)
    if x.shape[-1] < 1:
        raise TooShort("empty input")
    return np.abs(np.fft.fft(x, axis=-1))


def dom_diff(x) -> np.ndarray:
    x = _as_float(x)
    if x.shape[-1] < 2:
        raise TooShort("first-order differencing needs at least 2 values")
    return x[..., 1:] - x[..., :-1]


def patch_geometry(length: int, divisor: int) -> tuple[int, int, int]:
    """Return ``(patch_len, stride, n_patches)`` for an input of ``length``."""
    if divisor not in DIVISORS:
        raise OutOfRange(f"divisor {divisor} not in {DIVISORS}")
    patch_len = length // divisor
    if patch_len < 2:
        raise PatchTooSmall(f"floor({length}/{divisor}) = {patch_len} < 2")
    stride = patch_len // 2
    n_patches = (length - patch_len) // stride + 1
    return patch_len, stride, n_patches


@dataclass(frozen=True)
class PatchSet:
    patches: np.ndarray  # (..., n_patches, patch_len)
    stride: int
    source_length: int

    @property
    def n_patches(self) -> int:
        return self.patches.shape[-2]

    @property
    def patch_len(self) -> int:
        return self.patches.shape[-1]

    @property
    def starts(self) -> list[int]:
        return [i * self.stride for i in range(self.n_patches)]


def ada_patch(x, divisor: int) -> PatchSet:
    """Overlapping windows of ``floor(len/divisor)`` with half-window stride.

    Samples past the last full window are dropped.
    """
    x = _as_float(x)
    length = x.shape[-1]
    patch_len, stride, n_patches = patch_geometry(length, divisor)
    windows = sliding_window_view(x, patch_len, axis=-1)[..., ::stride, :]
    return PatchSet(windows[..., :n_patches, :].copy(), stride, length)


@dataclass(frozen=True)
class ShapeKernel:
    kind: str
    weights: np.ndarray

    @property
    def length(self) -> int:
        return self.weights.size


@lru_cache(maxsize=None)
def _kernel_weights(kind: str, c: int) -> np.ndarray:
    i = np.arange(c, dtype=np.float64)
    if kind in ("Inc", "Dec"):
        w = i - (c - 1) / 2.0
    else:
        w = np.cos(2.0 * np.pi * i / (c - 1) - np.pi)
        w = w - w.mean()
    w = w / np.linalg.norm(w)
    if kind == "Dec":
        w = -w
    w.flags.writeable = False
    return w


def make_shape_kernel(kind: str, c: int) -> ShapeKernel:
    """Fixed zero-mean, unit-norm shape templates.

    ``Inc`` is a centred linear ramp, ``Dec`` its negation and ``Peak`` a
    cosine bump that is positive in the middle and negative at the edges.
    """
    if kind not in SHAPE_KINDS:
        raise ValueError(f"unknown shape kind {kind!r}")
    if c < MIN_KERNEL[kind]:
        raise KernelTooShort(f"{kind} kernel needs length >= {MIN_KERNEL[kind]}, got {c}")
    return ShapeKernel(kind, _kernel_weights(kind, int(c)))


def convolve_valid(p, kernel) -> np.ndarray:
    """Valid-mode sliding dot product ``r_j = sum_i p[j+i] * w[i]``."""
    p = _as_float(p)
    w = kernel.weights if isinstance(kernel, ShapeKernel) else _as_float(kernel)
    c = w.size
    n = p.shape[-1]
    if c > n:
        raise KernelLongerThanPatch(f"kernel length {c} exceeds patch length {n}")
    m = n - c + 1
    if c > 4:
        # as_strided is sliding_window_view without the argument checking overhead
        windows = as_strided(p, p.shape[:-1] + (m, c), p.strides + p.strides[-1:], writeable=False)
        return np.einsum("...j,j->...", windows, w)
    out = np.zeros(p.shape[:-1] + (m,))
    for i in range(c):
        out += w[i] * p[..., i : i + m]
    return out


def pool(r) -> tuple:
    """(PPV, MAX, MEAN) of an activation map, along the last axis."""
    r = _as_float(r)
    if r.shape[-1] < 1:
        raise EmptyMap("activation map is empty")
    n = r.shape[-1]
    # same values as np.mean, minus its dispatch overhead
    ppv = np.count_nonzero(r > 0, axis=-1) / n
    return ppv, r.max(axis=-1), r.sum(axis=-1) / n


def kernel_lengths(patch_len: int, ratio: float) -> list[int]:
    """Powers of two in ``[2, floor(ratio * patch_len)]``; ``[2]`` if none fit."""
    c_max = int(np.floor(ratio * patch_len))
    lengths = []
    c = 2
    while c <= c_max:
        lengths.append(c)
        c *= 2
    return lengths or [2]


def shape_kernel_lengths(kind: str, patch_len: int, ratio: float) -> list[int]:
    # a symmetric zero-mean template of length 2 is identically zero
    return [max(c, MIN_KERNEL[kind]) for c in kernel_lengths(patch_len, ratio)]


def min_shape_patch(kind: str) -> int:
    return MIN_KERNEL[kind]


def extract_shape(p, kind: str, ratio: float) -> np.ndarray:
    """Multi-scale shape descriptor of each patch (last axis).

    For every kernel length the activation map is summarised by PPV, MAX and
    MEAN; the triples are concatenated in ascending kernel-length order.
    """
    p = _as_float(p)
    n = p.shape[-1]
    if n < MIN_KERNEL[kind]:
        raise PatchTooShort(f"{kind} extraction needs patches of length >= {MIN_KERNEL[kind]}")
    feats = []
    for c in shape_kernel_lengths(kind, n, ratio):
        r = convolve_valid(p, make_shape_kernel(kind, c))
        feats.extend(pool(r))
    return np.stack(feats, axis=-1)


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def statis_indices(patch_len: int, ratio: float) -> np.ndarray:
    """0-based positions of the retained order statistics."""
    m = max(int(np.floor(ratio * patch_len)), 2)
    j = np.arange(m, dtype=np.float64)
    idx = 1 + round_half_away((patch_len - 1) * j / (m - 1))
    return idx.astype(np.int64) - 1


def extract_statis_dist(p, ratio: float) -> np.ndarray:
    """Uniformly subsampled order statistics (an empirical quantile profile)."""
    p = _as_float(p)
    n = p.shape[-1]
    if n < 2:
        raise PatchTooShort("statistical extraction needs patches of length >= 2")
    return np.sort(p, axis=-1)[..., statis_indices(n, ratio)]


def extractor_dim(name: str, patch_len: int, param: float) -> int:
    if name == "StatisDist":
        return max(int(np.floor(param * patch_len)), 2)
    return 3 * len(kernel_lengths(patch_len, param))


def apply_extractor(p, name: str, param: float) -> np.ndarray:
    if name == "StatisDist":
        return extract_statis_dist(p, param)
    return extract_shape(p, name[len("Shape"):], param)


def extract_over_patches(ps, extractor) -> np.ndarray:
    """Apply ``extractor`` to every patch and concatenate in patch order.

    ``ps`` may be a :class:`PatchSet` or a plain series, which counts as a
    single patch covering the whole input.
    """
    if isinstance(ps, PatchSet):
        patches = ps.patches
    else:
        patches = _as_float(ps)[..., None, :]
    feats = extractor(patches)  # (..., n_patches, dim)
    return feats.reshape(feats.shape[:-2] + (-1,))
