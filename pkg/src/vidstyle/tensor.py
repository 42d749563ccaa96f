"""Dense tensor helpers shared by every stage.

Tensors are plain ``numpy.ndarray`` objects. Video latents are laid out
``(frames, channels, height, width)``, pixel videos ``(frames, height,
width, channels)`` and attention tensors ``(frames, heads, tokens, dim)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ShapeError

# Small enough that output moments match the target to ~1e-11; pass eps=1e-5
# for the common deep-learning stabilizer.
DEFAULT_EPS = 1e-12
_ZERO_NORM = 1e-12


@dataclass(frozen=True)
class Moments:
    """Per-channel population statistics, broadcastable against the source."""

    mean: np.ndarray
    std: np.ndarray


def _normalize_axes(ndim: int, axes: Sequence[int]) -> tuple[int, ...]:
    return tuple(sorted({a % ndim for a in axes}))


def channel_moments(x: np.ndarray, channel_axis: int, reduce_axes: Sequence[int]) -> Moments:
    """Population mean/std over ``reduce_axes``.

    Axes that are neither the channel axis nor reduced keep their own
    statistics (e.g. a frame axis for per-frame moments). Results keep
    reduced dimensions so they broadcast back onto ``x``.
    """
    x = np.asarray(x)
    reduce_axes = _normalize_axes(x.ndim, reduce_axes)
    if not reduce_axes:
        raise ShapeError("degenerate reduction: reduce_axes is empty")
    if channel_axis % x.ndim in reduce_axes:
        raise ShapeError("degenerate reduction: channel axis is reduced")
    mean = x.mean(axis=reduce_axes, keepdims=True)
    std = np.sqrt(((x - mean) ** 2).mean(axis=reduce_axes, keepdims=True))
    return Moments(mean, std)


def adain(
    x: np.ndarray,
    y: np.ndarray,
    channel_axis: int = 1,
    reduce_axes: Sequence[int] = (2, 3),
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """Re-normalize ``x`` to carry the per-channel mean/std of ``y``.

    ``out = std(y) * (x - mean(x)) / (std(x) + eps) + mean(y)``. The
    statistics of ``y`` are reduced over the same axes and broadcast, so a
    single style frame can drive a whole video.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if x.ndim != y.ndim or x.shape[channel_axis] != y.shape[channel_axis]:
        raise ShapeError(
            f"channel mismatch: {x.shape} vs {y.shape} on axis {channel_axis}"
        )
    mx = channel_moments(x, channel_axis, reduce_axes)
    my = channel_moments(y, channel_axis, reduce_axes)
    return my.std * ((x - mx.mean) / (mx.std + eps)) + my.mean


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors; 0 if either is (near) zero."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na < _ZERO_NORM or nb < _ZERO_NORM:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """L2-normalize the last axis; rows with norm below 1e-12 become zero.

    With this policy a plain dot product of normalized rows reproduces
    :func:`cosine_similarity`, including its zero-vector rule.
    """
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt(np.einsum("...d,...d->...", x, x))[..., None]
    out = np.zeros_like(x)
    np.divide(x, norms, out=out, where=norms >= _ZERO_NORM)
    return out


def bilinear_sample_grid(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample an ``H x W x C`` image at fractional column/row coordinates.

    Coordinates outside the image clamp to the border pixel. ``xs`` and
    ``ys`` share a shape ``S``; the result has shape ``S + (C,)``.
    """
    img = np.asarray(img)
    if img.ndim == 2:
        return bilinear_sample_grid(img[..., None], xs, ys)[..., 0]
    h, w = img.shape[:2]
    xs = np.clip(np.asarray(xs, dtype=np.float64), 0.0, w - 1)
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0.0, h - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def bilinear_sample(img: np.ndarray, x: float, y: float) -> np.ndarray:
    """Bilinear lookup of a single point; ``x`` is the column, ``y`` the row."""
    return bilinear_sample_grid(img, np.asarray(x), np.asarray(y))
