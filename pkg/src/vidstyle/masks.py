"""First-frame mask propagation by cosine point matching.

Every grid point of frame ``i`` is labelled by a k-nearest-neighbour vote
over anchor points: a stratified random subset of frame 1 (always kept)
plus subsets of up to ``n`` preceding frames, matched by cosine
similarity of the inversion features.
"""
from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ShapeError
from .rng import substream
from .tensor import cosine_similarity, normalize_rows

_CHUNK = 512


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_sample(mask: np.ndarray, r: float, rng) -> np.ndarray:
    """Sorted flat indices of a foreground/background-balanced random subset.

    The total budget ``round(r * size)`` is split between foreground and
    background in proportion to their areas; a nonempty foreground always
    gets at least one sample. ``rng`` is a ``numpy.random.Generator`` or an
    integer seed.
    """
    mask = np.asarray(mask)
    if mask.size == 0:
        raise ShapeError("cannot sample an empty grid")
    if not 0.0 < r <= 1.0:
        raise ValueError(f"sampling rate r must lie in (0, 1], got {r}")
    if not isinstance(rng, np.random.Generator):
        rng = substream(int(rng), "mask-sampling")
    flat = mask.ravel() > 0
    fg_idx = np.flatnonzero(flat)
    bg_idx = np.flatnonzero(~flat)
    total = max(1, _round_half_up(r * flat.size))
    n_fg = _round_half_up(total * fg_idx.size / flat.size)
    if fg_idx.size:
        n_fg = max(n_fg, 1)
    n_fg = min(n_fg, fg_idx.size)
    n_bg = min(total - n_fg, bg_idx.size)
    picked = np.concatenate([
        rng.choice(fg_idx, size=n_fg, replace=False),
        rng.choice(bg_idx, size=n_bg, replace=False),
    ])
    return np.sort(picked)


def knn_label(query, anchor_features, anchor_labels, k: int) -> int:
    """Label one query vector by majority of its ``k`` most cosine-similar anchors.

    Foreground only with a strict majority; ties go to background. Equal
    similarities are ranked by anchor order.
    """
    anchor_labels = np.asarray(anchor_labels)
    if len(anchor_labels) == 0:
        raise ValueError("no anchors to vote")
    sims = np.array([cosine_similarity(query, a) for a in anchor_features])
    k = min(k, len(sims))
    order = np.argsort(-sims, kind="stable")[:k]
    votes = int(np.count_nonzero(anchor_labels[order]))
    return int(2 * votes > k)


def _knn_chunk(q: np.ndarray, a: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    sims = q @ a.T
    n_a = sims.shape[1]
    kth = np.partition(sims, n_a - k, axis=1)[:, n_a - k][:, None]
    above = sims > kth
    need = k - above.sum(axis=1, keepdims=True)
    tied = sims == kth
    chosen = above | (tied & (np.cumsum(tied, axis=1) <= need))
    votes = (chosen & labels[None, :]).sum(axis=1)
    return (2 * votes > k).astype(np.uint8)


def knn_labels(queries, anchor_features, anchor_labels, k: int,
               normalized: bool = False, threads: int = 1) -> np.ndarray:
    """Vectorized :func:`knn_label` for a batch of query vectors.

    Produces exactly the selection :func:`knn_label` makes, including its
    tie rule. Queries are processed in fixed chunks, so the result does not
    depend on ``threads``.
    """
    labels = np.asarray(anchor_labels).astype(bool)
    if labels.size == 0:
        raise ValueError("no anchors to vote")
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(queries, dtype=np.float64)
    a = np.asarray(anchor_features, dtype=np.float64)
    if not normalized:
        q, a = normalize_rows(q), normalize_rows(a)
    k = min(k, labels.size)
    starts = range(0, len(q), _CHUNK)
    run = lambda s: _knn_chunk(q[s : s + _CHUNK], a, labels, k)
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    return np.concatenate(parts) if parts else np.zeros(0, np.uint8)


class AnchorBuffer:
    """Pinned frame-1 samples plus a ring of the ``n`` most recent frames."""

    def __init__(self, first_features, first_labels, n: int):
        self.first = (first_features, first_labels)
        self.recent: deque = deque(maxlen=n) if n > 0 else deque(maxlen=0)

    def __len__(self) -> int:
        return len(self.recent)

    def push(self, features, labels) -> None:
        self.recent.append((features, labels))

    def anchors(self) -> tuple[np.ndarray, np.ndarray]:
        """Anchor features/labels, recent frames oldest first, frame 1 last."""
        parts = list(self.recent) + [self.first]
        return (np.concatenate([p[0] for p in parts]),
                np.concatenate([p[1] for p in parts]))


def propagate(features, m1, r: float = 0.3, k: int = 15, n: int = 9, seed: int = 0,
              threads: int = 1) -> np.ndarray:
    """Propagate ``m1`` through a ``N x h x w x d`` feature stack.

    Returns ``N x h x w`` uint8 masks; frame 0 is ``m1`` itself.
    """
    feats = np.asarray(features)
    if feats.ndim != 4:
        raise ShapeError(f"features must be N x h x w x d, got {feats.shape}")
    nf, h, w, d = feats.shape
    m1 = (np.asarray(m1) > 0).astype(np.uint8)
    if m1.shape != (h, w):
        raise ShapeError(f"mask {m1.shape} does not match feature grid {(h, w)}")
    flat = normalize_rows(feats.reshape(nf, h * w, d))
    masks = np.zeros((nf, h, w), dtype=np.uint8)
    masks[0] = m1

    idx = stratified_sample(m1, r, substream(seed, "mask-sampling", 0))
    buf = AnchorBuffer(flat[0][idx], m1.ravel()[idx], n)
    for i in range(1, nf):
        a_feat, a_lab = buf.anchors()
        lab = knn_labels(flat[i], a_feat, a_lab, k, normalized=True, threads=threads)
        masks[i] = lab.reshape(h, w)
        if n > 0:
            idx = stratified_sample(masks[i], r, substream(seed, "mask-sampling", i))
            buf.push(flat[i][idx], lab[idx])
    return masks


def resize_mask_nearest(mask, h: int, w: int) -> np.ndarray:
    """Nearest-neighbour resize of one binary mask (pixel-centre sampling)."""
    mask = np.asarray(mask)
    H, W = mask.shape
    rows = np.minimum(((np.arange(h) + 0.5) * H / h).astype(np.intp), H - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * W / w).astype(np.intp), W - 1)
    return (mask[rows][:, cols] > 0).astype(np.uint8)


def upsample_mask(masks, H: int, W: int) -> np.ndarray:
    """Nearest-neighbour upsampling of an ``N x h x w`` mask stack to ``N x H x W``."""
    masks = np.asarray(masks)
    if masks.ndim == 2:
        return resize_mask_nearest(masks, H, W)
    return np.stack([resize_mask_nearest(m, H, W) for m in masks])


def iou_dice(pred, gt) -> tuple[float, float]:
    """Frame-averaged IoU and Dice; a frame empty in both counts as 1."""
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    ious, dices = [], []
    for p, g in zip(pred, gt):
        inter = np.count_nonzero(p & g)
        union = np.count_nonzero(p | g)
        size = np.count_nonzero(p) + np.count_nonzero(g)
        ious.append(1.0 if union == 0 else inter / union)
        dices.append(1.0 if size == 0 else 2.0 * inter / size)
    return float(np.mean(ious)), float(np.mean(dices))
