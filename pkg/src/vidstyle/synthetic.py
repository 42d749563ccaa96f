"""Seeded synthetic inputs for tests, demos and smoke runs."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .rng import substream


def smooth_field(h: int, w: int, d: int, sigma: float, rng) -> np.ndarray:
    """Periodic, spatially smooth Gaussian field with unit per-channel variance."""
    x = rng.standard_normal((h, w, d))
    x = ndimage.gaussian_filter(x, sigma=(sigma, sigma, 0), mode="wrap")
    x -= x.mean(axis=(0, 1))
    x /= x.std(axis=(0, 1)) + 1e-12
    return x


def box_mask(h: int, w: int, top: int, left: int, height: int, width: int) -> np.ndarray:
    m = np.zeros((h, w), dtype=np.uint8)
    m[top : top + height, left : left + width] = 1
    return m


def translation_sequence(h=32, w=32, d=16, frames=12, shift=(1, 0), seed=0,
                         object_strength=1.0, drift=0.0, sigma=2.0):
    """Feature stack whose frame ``i`` is frame 0 circularly shifted by ``i * shift``.

    Foreground points carry an extra code vector shared by the whole object
    and orthogonal to the background field, as semantic features of one
    salient object would. ``drift`` adds per-frame noise that
    accumulates over time. Returns ``(features, true_masks)``.
    """
    rng = substream(seed, "translation-sequence")
    base = smooth_field(h, w, d, sigma, rng)
    unit = rng.standard_normal(d)
    unit /= np.linalg.norm(unit)
    base -= (base @ unit)[..., None] * unit
    code = object_strength * np.sqrt(d) * unit
    mask = box_mask(h, w, h // 4, w // 4, h // 2, w // 2)
    f0 = base + mask[..., None] * code
    feats, masks = [], []
    noise = np.zeros_like(f0)
    for i in range(frames):
        dy, dx = i * shift[0], i * shift[1]
        if drift:
            noise = noise + drift * rng.standard_normal(f0.shape)
        feats.append(np.roll(f0, (dy, dx), axis=(0, 1)) + noise)
        masks.append(np.roll(mask, (dy, dx), axis=(0, 1)))
    return np.stack(feats), np.stack(masks)


def latent_video(frames=16, channels=4, h=64, w=64, seed=0, speed=1.0, radius=0.25) -> np.ndarray:
    """Latent-like video: smooth background plus a bright blob moving right."""
    rng = substream(seed, "latent-video")
    bg = smooth_field(h, w, channels, 4.0, rng).transpose(2, 0, 1)
    ys, xs = np.mgrid[0:h, 0:w]
    out = np.empty((frames, channels, h, w))
    for i in range(frames):
        cx, cy = w / 3 + speed * i, h / 2
        blob = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * (radius * h / 1.5) ** 2))
        out[i] = 0.5 * bg + 1.5 * blob[None]
    return out


def style_latent(channels=4, h=64, w=64, seed=0) -> np.ndarray:
    """Single-frame latent with distinct per-channel statistics."""
    rng = substream(seed, "style-latent")
    x = smooth_field(h, w, channels, 1.5, rng).transpose(2, 0, 1)
    scale = 0.5 + rng.random(channels)[:, None, None]
    shift = rng.standard_normal(channels)[:, None, None]
    return (x * scale + shift)[None]


def first_frame_mask(h=64, w=64, radius=0.25) -> np.ndarray:
    """Mask covering the initial blob position of :func:`latent_video`."""
    ys, xs = np.mgrid[0:h, 0:w]
    return (((xs - w / 3) ** 2 + (ys - h / 2) ** 2) <= (radius * h) ** 2).astype(np.uint8)


def shifted_pattern(frames=3, h=32, w=32, channels=3, shift=1, seed=0) -> np.ndarray:
    """Pixel video of a smooth pattern translated ``shift`` px right per frame."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    out = []
    for i in range(frames):
        x = xs - shift * i
        base = 0.5 + 0.25 * np.sin(2 * np.pi * x / 16) + 0.2 * np.cos(2 * np.pi * ys / 12)
        out.append(np.repeat(base[..., None], channels, axis=-1))
    return np.stack(out)
