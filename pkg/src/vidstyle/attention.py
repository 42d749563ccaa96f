"""Attention packets and cross-frame softmax attention.

Attention tensors are ``(frames, heads, tokens, dim)``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class AttentionPacket:
    """Q/K/V of one attention layer for the branch being evaluated.

    The ``content_q`` / ``style_k`` / ``style_v`` slots carry tensors cached
    from the other two branches when the edited branch is evaluated.
    """

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    content_q: np.ndarray | None = None
    style_k: np.ndarray | None = None
    style_v: np.ndarray | None = None

    def with_(self, **changes) -> "AttentionPacket":
        return replace(self, **changes)


def cross_frame_restructure(pkt: AttentionPacket, i: int) -> AttentionPacket:
    """K/V seen by frame ``i`` (0-based): frames ``[0, i-1]`` concatenated.

    Frame 0 attends to itself only. The returned packet holds the single
    query frame ``i`` and its restructured keys/values.
    """
    f = pkt.k.shape[0]
    if not 0 <= i < pkt.q.shape[0] or f != pkt.q.shape[0]:
        raise ShapeError(f"frame {i} out of range for {pkt.q.shape[0]} frames")
    q = pkt.q[i : i + 1]
    if i == 0:
        return AttentionPacket(q, pkt.k[:1], pkt.v[:1])
    k = np.concatenate([pkt.k[:1], pkt.k[i - 1 : i]], axis=2)
    v = np.concatenate([pkt.v[:1], pkt.v[i - 1 : i]], axis=2)
    return AttentionPacket(q, k, v)


def softmax_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    return w @ v


def cross_frame_attention(pkt: AttentionPacket) -> np.ndarray:
    """Attention output for every frame using first+previous frame K/V."""
    q, k, v = pkt.q, pkt.k, pkt.v
    if k.shape[0] == 1 and q.shape[0] > 1:
        k = np.broadcast_to(k, (q.shape[0],) + k.shape[1:])
        v = np.broadcast_to(v, (q.shape[0],) + v.shape[1:])
    out = np.empty(q.shape[:3] + (v.shape[-1],), dtype=np.result_type(q, v))
    out[:1] = softmax_attention(q[:1], k[:1], v[:1])
    if q.shape[0] > 1:
        first_k = np.broadcast_to(k[:1], k[1:].shape)
        first_v = np.broadcast_to(v[:1], v[1:].shape)
        kk = np.concatenate([first_k, k[:-1]], axis=2)
        vv = np.concatenate([first_v, v[:-1]], axis=2)
        out[1:] = softmax_attention(q[1:], kk, vv)
    return out
