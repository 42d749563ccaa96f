"""Noise-predictor and latent-codec interfaces plus deterministic mocks.

A noise predictor exposes ``predict(z, timestep, conditioning=None,
hook=None)`` returning a tensor shaped like ``z``. Predictors that can
report backbone features additionally implement ``predict_with_features``.
``hook`` is called as ``hook(layer_name, packet) -> packet`` for every
self-attention layer, letting the caller read or replace Q/K/V.

A codec exposes ``decode(z) -> pixels`` (``F x H x W x C``) and
``encode(pixels) -> z`` (``F x C x H x W``).
"""
from __future__ import annotations

from typing import Callable, Optional, Protocol

import numpy as np

from .attention import AttentionPacket, cross_frame_attention
from .errors import ShapeError
from .rng import substream

Hook = Callable[[str, AttentionPacket], AttentionPacket]


class NoisePredictor(Protocol):
    def predict(self, z: np.ndarray, timestep: int, conditioning=None,
                hook: Optional[Hook] = None) -> np.ndarray: ...


class LatentCodec(Protocol):
    def decode(self, z: np.ndarray) -> np.ndarray: ...

    def encode(self, pixels: np.ndarray) -> np.ndarray: ...


class ConstantPredictor:
    """Predicts the same noise for every input and timestep."""

    def __init__(self, value=0.1):
        self.value = np.asarray(value, dtype=np.float64)

    def predict(self, z, timestep, conditioning=None, hook=None):
        return np.broadcast_to(self.value, np.shape(z)).copy()


class SeededNoisePredictor:
    """Pseudo-random noise that depends on the timestep and shape, never on ``z``."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def predict(self, z, timestep, conditioning=None, hook=None):
        return substream(self.seed, "mock-noise", timestep).standard_normal(np.shape(z))


class IdentityCodec:
    """Latent channels are used directly as pixel channels."""

    def decode(self, z):
        return np.moveaxis(np.asarray(z), 1, -1).copy()

    def encode(self, pixels):
        return np.moveaxis(np.asarray(pixels), -1, 1).copy()


class OrthogonalCodec:
    """Seeded orthogonal channel mixing, ``pixels = 0.5 + 0.25 * Q z``.

    Exactly invertible up to floating-point rounding.
    """

    def __init__(self, channels: int = 4, seed: int = 0):
        a = substream(seed, "orthogonal-codec").standard_normal((channels, channels))
        q, r = np.linalg.qr(a)
        self.Q = q * np.sign(np.diag(r))

    def decode(self, z):
        z = np.asarray(z)
        if z.shape[1] != self.Q.shape[0]:
            raise ShapeError(f"codec expects {self.Q.shape[0]} channels, got {z.shape[1]}")
        return 0.5 + 0.25 * np.einsum("dc,fchw->fhwd", self.Q, z)

    def encode(self, pixels):
        pixels = np.asarray(pixels)
        if pixels.shape[-1] != self.Q.shape[0]:
            raise ShapeError(f"codec expects {self.Q.shape[0]} channels, got {pixels.shape[-1]}")
        return np.einsum("dc,fhwd->fchw", self.Q, (pixels - 0.5) * 4.0)


def timestep_embedding(timestep: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = float(timestep) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


class MockBackbone:
    """Small deterministic attention network standing in for a U-Net.

    Latents are cut into ``patch x patch`` tokens, embedded, passed through
    residual cross-frame self-attention layers (seeded linear Q/K/V and
    output projections) and projected back. The residual stream after the
    last layer is reported as the feature map, at ``H/patch x W/patch``.
    ``out_scale`` damps the predicted noise so that inversion followed by
    sampling stays close to the input.
    """

    def __init__(self, channels: int = 4, dim: int = 32, heads: int = 2, patch: int = 4,
                 layers: tuple[str, ...] = ("down.attn", "up.attn"), seed: int = 0,
                 out_scale: float = 0.3):
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.channels, self.dim, self.heads, self.patch = channels, dim, heads, patch
        self.layers = tuple(layers)
        rng = substream(seed, "mock-backbone")
        p_in = channels * patch * patch
        self.w_in = rng.standard_normal((p_in, dim)) / np.sqrt(p_in)
        self.w_out = out_scale * rng.standard_normal((dim, p_in)) / np.sqrt(dim)
        self.weights = {
            name: tuple(rng.standard_normal((dim, dim)) / np.sqrt(dim) for _ in range(4))
            for name in self.layers
        }

    def feature_shape(self, h: int, w: int) -> tuple[int, int, int]:
        return h // self.patch, w // self.patch, self.dim

    def _patchify(self, z):
        f, c, h, w = z.shape
        p = self.patch
        if c != self.channels or h % p or w % p:
            raise ShapeError(f"latent {z.shape} incompatible with backbone "
                             f"(channels={self.channels}, patch={p})")
        x = z.reshape(f, c, h // p, p, w // p, p).transpose(0, 2, 4, 1, 3, 5)
        return x.reshape(f, (h // p) * (w // p), c * p * p)

    def _unpatchify(self, x, shape):
        f, c, h, w = shape
        p = self.patch
        x = x.reshape(f, h // p, w // p, c, p, p).transpose(0, 3, 1, 4, 2, 5)
        return x.reshape(shape)

    def _split(self, x):
        f, n, _ = x.shape
        return x.reshape(f, n, self.heads, -1).transpose(0, 2, 1, 3)

    def _forward(self, z, timestep, hook):
        z = np.asarray(z, dtype=np.float64)
        x = self._patchify(z) @ self.w_in + timestep_embedding(timestep, self.dim)
        for name in self.layers:
            wq, wk, wv, wo = self.weights[name]
            pkt = AttentionPacket(self._split(x @ wq), self._split(x @ wk), self._split(x @ wv))
            if hook is not None:
                pkt = hook(name, pkt)
            out = cross_frame_attention(pkt)
            f, hd, n, dh = out.shape
            x = x + out.transpose(0, 2, 1, 3).reshape(f, n, hd * dh) @ wo
        return self._unpatchify(x @ self.w_out, z.shape), x

    def predict(self, z, timestep, conditioning=None, hook=None):
        return self._forward(z, timestep, hook)[0]

    def predict_with_features(self, z, timestep, conditioning=None, hook=None):
        eps, x = self._forward(z, timestep, hook)
        f, _, h, w = np.shape(z)
        return eps, x.reshape(f, h // self.patch, w // self.patch, self.dim)
