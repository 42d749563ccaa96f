"""Optical flow, occlusion-aware warping and sliding-window smoothing.

Flow ``f_{a->b}`` maps pixel ``x`` of frame ``a`` to ``x + f(x)`` in frame
``b`` (``u`` along columns, ``v`` along rows). Pixel videos are
``N x H x W x C``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import FormatError, ShapeError
from .formats import FlowField, read_flo
from .schedule import ddim_denoise_step, predicted_z0, refine_noise
from .tensor import bilinear_sample_grid

# neighbour-average kernel of the Horn-Schunck iteration
_HS_KERNEL = np.array([[1 / 12, 1 / 6, 1 / 12],
                       [1 / 6, 0.0, 1 / 6],
                       [1 / 12, 1 / 6, 1 / 12]])


def to_gray(frame) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    return frame if frame.ndim == 2 else frame.mean(axis=-1)


def estimate_flow_hs(a, b, lam: float = 0.1, iters: int = 200) -> FlowField:
    """Horn-Schunck flow from ``a`` to ``b``.

    ``lam`` weights the smoothness term (it enters the update squared).
    Spatial derivatives are central differences averaged over both frames.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    a, b = to_gray(a), to_gray(b)
    if a.shape != b.shape:
        raise ShapeError(f"frame sizes differ: {a.shape} vs {b.shape}")
    gy_a, gx_a = np.gradient(a)
    gy_b, gx_b = np.gradient(b)
    ex = 0.5 * (gx_a + gx_b)
    ey = 0.5 * (gy_a + gy_b)
    et = b - a
    denom = lam**2 + ex**2 + ey**2
    u = np.zeros_like(a)
    v = np.zeros_like(a)
    for _ in range(iters):
        u_avg = ndimage.convolve(u, _HS_KERNEL, mode="nearest")
        v_avg = ndimage.convolve(v, _HS_KERNEL, mode="nearest")
        der = (ex * u_avg + ey * v_avg + et) / denom
        u = u_avg - ex * der
        v = v_avg - ey * der
    return FlowField(u, v)


def _sample_flow(flow: FlowField, xs, ys) -> tuple[np.ndarray, np.ndarray]:
    uv = np.stack([flow.u, flow.v], axis=-1).astype(np.float64)
    s = bilinear_sample_grid(uv, xs, ys)
    return s[..., 0], s[..., 1]


def occlusion_mask(fwd: FlowField, bwd: FlowField) -> np.ndarray:
    """Forward-backward consistency check; True where occluded.

    Pixels with unknown flow (``.flo`` sentinel) are reported occluded.
    """
    h, w = fwd.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    fu = np.asarray(fwd.u, dtype=np.float64)
    fv = np.asarray(fwd.v, dtype=np.float64)
    known = fwd.valid()
    fu_s, fv_s = np.where(known, fu, 0.0), np.where(known, fv, 0.0)
    bu, bv = _sample_flow(bwd, xs + fu_s, ys + fv_s)
    bwd_known = (np.abs(bu) < 1e9) & (np.abs(bv) < 1e9)
    diff = (fu_s + bu) ** 2 + (fv_s + bv) ** 2
    mag = fu_s**2 + fv_s**2 + bu**2 + bv**2
    return (diff > 0.01 * mag + 0.5) | ~known | ~bwd_known


def warp(a, b, fwd: FlowField | None = None, bwd: FlowField | None = None,
         occlusion=None, lam: float = 0.1, iters: int = 200) -> np.ndarray:
    """Align frame ``b`` to frame ``a`` by backward warping along ``f_{a->b}``.

    Occluded pixels take their value from ``a``. Missing flows are
    estimated with Horn-Schunck; the occlusion map comes from the
    bidirectional check whenever a backward flow is available.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"frame sizes differ: {a.shape} vs {b.shape}")
    if fwd is None:
        fwd = estimate_flow_hs(a, b, lam, iters)
        if bwd is None:
            bwd = estimate_flow_hs(b, a, lam, iters)
    h, w = a.shape[:2]
    if fwd.shape != (h, w):
        raise ShapeError(f"flow {fwd.shape} does not match frame {(h, w)}")
    if occlusion is None:
        occlusion = occlusion_mask(fwd, bwd) if bwd is not None else ~fwd.valid()
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    known = fwd.valid()
    u = np.where(known, fwd.u, 0.0)
    v = np.where(known, fwd.v, 0.0)
    out = bilinear_sample_grid(b, xs + u, ys + v)
    occ = np.asarray(occlusion, dtype=bool)
    out[occ] = a[occ]
    return out


# -- flow sources ------------------------------------------------------------------

class ZeroFlow:
    """Every pair is already aligned."""

    def prepare(self, frames, m: int) -> None:
        self._hw = np.shape(frames)[1:3]

    def pair(self, i: int, j: int):
        z = FlowField.zeros(*self._hw)
        return z, FlowField.zeros(*self._hw)


class PrecomputedFlows:
    """Flows supplied up front, keyed by ordered frame pair ``(i, j)``.

    ``flows[(i, j)]`` is the flow from frame ``i`` to frame ``j``. A missing
    reverse flow disables the occlusion check for that pair.
    """

    def __init__(self, flows: dict[tuple[int, int], FlowField]):
        self.flows = dict(flows)

    @classmethod
    def from_directory(cls, directory) -> "PrecomputedFlows":
        """Load ``fwd_%05d_%05d.flo`` (i -> j) and ``bwd_%05d_%05d.flo`` (j -> i)."""
        directory = Path(directory)
        if not directory.is_dir():
            raise FileNotFoundError(f"{directory}: not a directory")
        flows: dict[tuple[int, int], FlowField] = {}
        for path in sorted(directory.glob("*.flo")):
            parts = path.stem.split("_")
            if len(parts) != 3 or parts[0] not in ("fwd", "bwd"):
                raise FormatError(f"{path.name}: expected fwd_IIIII_JJJJJ.flo or bwd_IIIII_JJJJJ.flo")
            i, j = int(parts[1]), int(parts[2])
            key = (i, j) if parts[0] == "fwd" else (j, i)
            flows[key] = read_flo(path)
        return cls(flows)

    def prepare(self, frames, m: int) -> None:
        n = len(frames)
        for i in range(n):
            for j in range(max(0, i - m), min(n, i + m + 1)):
                if i != j and (i, j) not in self.flows:
                    raise FormatError(f"no flow supplied for frame pair ({i}, {j})")

    def pair(self, i: int, j: int):
        return self.flows[(i, j)], self.flows.get((j, i))


class HornSchunckFlow:
    """Horn-Schunck flows for all window pairs, computed once and cached.

    With ``reflow=True`` the cache is rebuilt on every ``prepare`` call,
    i.e. flows are re-estimated on each smoothed denoising step.
    """

    def __init__(self, lam: float = 0.1, iters: int = 200, reflow: bool = False,
                 threads: int = 1):
        self.lam, self.iters, self.reflow, self.threads = lam, iters, reflow, threads
        self.cache: dict[tuple[int, int], FlowField] | None = None

    def prepare(self, frames, m: int) -> None:
        if self.cache is not None and not self.reflow:
            return
        n = len(frames)
        pairs = [(i, j) for i in range(n)
                 for j in range(max(0, i - m), min(n, i + m + 1)) if i != j]
        job = lambda p: estimate_flow_hs(frames[p[0]], frames[p[1]], self.lam, self.iters)
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                results = list(pool.map(job, pairs))
        else:
            results = [job(p) for p in pairs]
        self.cache = dict(zip(pairs, results))

    def pair(self, i: int, j: int):
        return self.cache[(i, j)], self.cache[(j, i)]


def default_flow_source(flows_dir=None, lam: float = 0.1, iters: int = 200,
                        reflow: bool = False, threads: int = 1):
    if flows_dir:
        return PrecomputedFlows.from_directory(flows_dir)
    return HornSchunckFlow(lam, iters, reflow, threads)


# -- smoothing ------------------------------------------------------------------------

def sliding_window_smooth(frames, m: int, flow_source=None) -> np.ndarray:
    """Average each frame with its flow-warped neighbours within ``+-m``.

    Frames are processed in ascending order and replaced as they go, so a
    window sees the already-smoothed versions of earlier frames. Border
    windows divide by their actual member count.
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    out = np.array(frames, dtype=np.float64, copy=True)
    n = len(out)
    if m == 0 or n < 2:
        return out
    if flow_source is None:
        flow_source = HornSchunckFlow()
    flow_source.prepare(out, m)
    for i in range(n):
        # mean written as self plus mean deviation, so agreeing neighbours
        # leave the frame bitwise unchanged
        dev = np.zeros_like(out[i])
        members = 1
        for j in range(max(0, i - m), min(n, i + m + 1)):
            if j == i:
                continue
            fwd, bwd = flow_source.pair(i, j)
            dev += warp(out[i], out[j], fwd, bwd) - out[i]
            members += 1
        out[i] = out[i] + dev / members
    return out


def smooth_step(z_t, eps, t: int, t_prev: int, codec, sched, m: int,
                window: tuple[int, int], flow_source=None):
    """DDIM step with pixel-space smoothing of the clean-latent estimate.

    Outside ``window`` (inclusive step positions) this is exactly
    :func:`ddim_denoise_step`.
    """
    lo, hi = window
    if not lo <= t <= hi:
        return ddim_denoise_step(z_t, eps, t, t_prev, sched)
    if not t_prev < t:
        raise ValueError(f"t_prev={t_prev} is not earlier than t={t} on the ladder")
    z0 = predicted_z0(z_t, eps, t, sched)
    pixels = codec.decode(z0)
    smoothed = sliding_window_smooth(pixels, m, flow_source)
    z0_bar = codec.encode(smoothed)
    if np.shape(z0_bar) != np.shape(z_t):
        raise ShapeError(f"codec round trip changed shape {np.shape(z_t)} -> {np.shape(z0_bar)}")
    eps_bar = refine_noise(z_t, z0_bar, t, sched)
    a_prev = sched.alpha_bar(t_prev)
    return np.sqrt(a_prev) * z0_bar + np.sqrt(1.0 - a_prev) * eps_bar
