"""Three-branch localized stylization.

The content and style branches are denoised in lockstep from their
inverted noise; the edited branch starts from the content noise and, per
step, borrows the content queries and style keys/values at hooked
attention layers (attention shift), is AdaIN-matched to the style latent
(latent shift), optionally smoothed along optical flow, and finally
re-blended with the content latent inside the mask.
"""
from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionPacket
from .errors import ShapeError
from .flow import smooth_step
from .schedule import DiffusionSchedule, ddim_denoise_step
from .tensor import DEFAULT_EPS, adain


@dataclass(frozen=True)
class StyleSchedule:
    """Stylization strengths and step windows (integer ladder positions)."""

    gamma: float = 0.35
    beta_tau2: float = 0.1
    beta_tau3: float = 0.9
    tau0: int = 5
    tau1: int = 10
    tau2: int = 20
    tau3: int = 50

    @classmethod
    def from_config(cls, cfg) -> "StyleSchedule":
        (t0, t1), (t2, t3) = cfg.latent_shift_window, cfg.attention_shift_window
        return cls(cfg.gamma, cfg.beta_tau2, cfg.beta_tau3, t0, t1, t2, t3)

    def latent_shift_active(self, t: int) -> bool:
        return self.tau0 <= t <= self.tau1

    def attention_shift_active(self, t: int) -> bool:
        return self.tau2 <= t <= self.tau3


def localized_blend(edited, content, masks) -> np.ndarray:
    """Keep ``content`` where the mask is 1 and ``edited`` elsewhere.

    ``masks`` is ``F x H x W`` (broadcast over channels) or full latent shape.
    """
    edited = np.asarray(edited)
    content = np.asarray(content)
    if edited.shape != content.shape:
        raise ShapeError(f"edited {edited.shape} vs content {content.shape}")
    m = np.asarray(masks)
    if m.ndim == 3:
        m = m[:, None]
    try:
        m = np.broadcast_to(m > 0, edited.shape)
    except ValueError:
        raise ShapeError(f"masks {np.shape(masks)} do not fit latents {edited.shape}") from None
    return np.where(m, content, edited)


def latent_adain(edited, style, per_frame: bool = False, eps: float = DEFAULT_EPS):
    """AdaIN of a ``F x C x H x W`` latent onto a single-frame style latent.

    Statistics are joint over all frames by default, per frame otherwise.
    """
    style = np.asarray(style)
    if style.ndim == 3:
        style = style[None]
    if per_frame:
        return adain(edited, style, channel_axis=1, reduce_axes=(2, 3), eps=eps)
    return adain(edited, style, channel_axis=1, reduce_axes=(0, 2, 3), eps=eps)


def latent_shift(edited, style, t: int, sched: StyleSchedule, per_frame: bool = False,
                 eps: float = DEFAULT_EPS):
    """AdaIN latent shift inside ``[tau0, tau1]``; identity elsewhere."""
    if not sched.latent_shift_active(t):
        return edited
    return latent_adain(edited, style, per_frame, eps)


def beta_at(t: float, sched: StyleSchedule) -> float:
    """Linear K-V AdaIN weight, ``beta_tau2`` at ``tau2`` to ``beta_tau3`` at ``tau3``."""
    if sched.tau3 == sched.tau2:
        raise ValueError("degenerate ramp: tau2 == tau3")
    f = (t - sched.tau2) / (sched.tau3 - sched.tau2)
    beta = sched.beta_tau2 * (1.0 - f) + sched.beta_tau3 * f
    lo, hi = sorted((sched.beta_tau2, sched.beta_tau3))
    return float(min(max(beta, lo), hi))


def shift_attention(pkt: AttentionPacket, gamma: float, beta: float,
                    eps: float = DEFAULT_EPS) -> AttentionPacket:
    """Blend queries with the content branch and move K/V toward the style branch.

    ``beta = 0`` is plain K-V replacement, ``beta = 1`` K-V AdaIN.
    """
    if pkt.content_q is None or pkt.style_k is None or pkt.style_v is None:
        raise ValueError("attention shift needs content Q and style K/V at this layer")
    if pkt.content_q.shape != pkt.q.shape:
        raise ShapeError(f"content Q {pkt.content_q.shape} vs edited Q {pkt.q.shape}")
    sk, sv = pkt.style_k, pkt.style_v
    if sk.shape[1:] != pkt.k.shape[1:] or sv.shape[1:] != pkt.v.shape[1:]:
        raise ShapeError(f"style K/V {sk.shape} do not match edited {pkt.k.shape}")
    q = gamma * pkt.q + (1.0 - gamma) * pkt.content_q
    # per head and channel, over tokens; the single style frame broadcasts
    k = beta * adain(pkt.k, sk, channel_axis=3, reduce_axes=(2,), eps=eps) + (1.0 - beta) * sk
    v = beta * adain(pkt.v, sv, channel_axis=3, reduce_axes=(2,), eps=eps) + (1.0 - beta) * sv
    shape = pkt.k.shape
    return AttentionPacket(q, np.broadcast_to(k, shape).copy(), np.broadcast_to(v, shape).copy())


def attention_shift(pkt: AttentionPacket, t: int, sched: StyleSchedule,
                    eps: float = DEFAULT_EPS) -> AttentionPacket:
    return shift_attention(pkt, sched.gamma, beta_at(t, sched), eps)


def _is_hooked(layer: str, prefixes) -> bool:
    return any(layer.startswith(p) for p in prefixes)


class RecordingHook:
    """Caches Q (content branch) or K/V (style branch) at hooked layers."""

    def __init__(self, layers=("up",), keep=("q",)):
        self.layers = tuple(layers)
        self.keep = keep
        self.store: dict[str, dict[str, np.ndarray]] = {}

    def __call__(self, layer: str, pkt: AttentionPacket) -> AttentionPacket:
        if _is_hooked(layer, self.layers):
            self.store[layer] = {name: getattr(pkt, name).copy() for name in self.keep}
        return pkt


class AttentionShiftHook:
    """Applies :func:`shift_attention` to the edited branch at hooked layers."""

    def __init__(self, content: RecordingHook, style: RecordingHook, gamma: float,
                 beta: float, layers=("up",), eps: float = DEFAULT_EPS):
        self.content, self.style = content, style
        self.gamma, self.beta, self.eps = gamma, beta, eps
        self.layers = tuple(layers)

    def __call__(self, layer: str, pkt: AttentionPacket) -> AttentionPacket:
        if not _is_hooked(layer, self.layers):
            return pkt
        c = self.content.store.get(layer, {})
        s = self.style.store.get(layer, {})
        pkt = pkt.with_(content_q=c.get("q"), style_k=s.get("k"), style_v=s.get("v"))
        return shift_attention(pkt, self.gamma, self.beta, self.eps)


@dataclass
class BranchState:
    content: np.ndarray
    edited: np.ndarray
    style: np.ndarray
    t: int


@dataclass
class StylizeResult:
    edited: np.ndarray
    content: np.ndarray
    style: np.ndarray
    timings: dict[str, float] = field(default_factory=dict)


class _Timer:
    def __init__(self, sink):
        self.sink = sink

    def __call__(self, name):
        return _Span(self.sink, name)


class _Span:
    def __init__(self, sink, name):
        self.sink, self.name = sink, name

    def __enter__(self):
        self.t = time.perf_counter()

    def __exit__(self, *exc):
        self.sink[self.name] += time.perf_counter() - self.t


def denoise_edited(
    content_noise,
    style_noise,
    predictor,
    masks,
    sched: DiffusionSchedule,
    cfg,
    *,
    codec=None,
    flow_source=None,
    smooth: bool = True,
    content_trajectory=None,
    style_trajectory=None,
) -> StylizeResult:
    """Run the content/style/edited denoising loop from position ``T`` to 0.

    ``masks`` are at latent resolution (``F x H x W``). Per step the edited
    branch is evaluated with the attention shift (inside its window), then
    latent-shifted (inside its window), stepped (with smoothing inside the
    smoothing window) and blended with the new content latent.
    """
    style_sched = StyleSchedule.from_config(cfg)
    eps_ad = cfg.adain_eps
    layers = cfg.hooked_layers
    zc = np.asarray(content_noise, dtype=np.float64)
    zs = np.asarray(style_noise, dtype=np.float64)
    if zs.ndim == 3:
        zs = zs[None]
    if zs.shape[1:] != zc.shape[1:]:
        raise ShapeError(f"style latent {zs.shape} does not match video latents {zc.shape}")
    masks = np.asarray(masks)
    if masks.shape != (zc.shape[0],) + zc.shape[2:]:
        raise ShapeError(f"masks {masks.shape} do not match latents {zc.shape}")
    replay = cfg.replay_from_cache and content_trajectory is not None and style_trajectory is not None
    if smooth and codec is None:
        raise ValueError("smoothing needs a codec")
    window = cfg.smoothing_window

    timings: dict[str, float] = defaultdict(float)
    span = _Timer(timings)
    state = BranchState(zc, zc.copy(), zs, sched.T)
    for t in range(sched.T, 0, -1):
        ts = sched.timestep(t)
        shifting = style_sched.attention_shift_active(t)
        rec_c = RecordingHook(layers, keep=("q",))
        rec_s = RecordingHook(layers, keep=("k", "v"))

        with span("content_branch"):
            if replay and not shifting:
                zc_prev = content_trajectory[t - 1]
            else:
                eps_c = predictor.predict(state.content, ts, None, hook=rec_c if shifting else None)
                zc_prev = (content_trajectory[t - 1] if replay
                           else ddim_denoise_step(state.content, eps_c, t, t - 1, sched))
        with span("style_branch"):
            if replay and not shifting:
                zs_prev = style_trajectory[t - 1]
            else:
                eps_s = predictor.predict(state.style, ts, None, hook=rec_s if shifting else None)
                zs_prev = (style_trajectory[t - 1] if replay
                           else ddim_denoise_step(state.style, eps_s, t, t - 1, sched))
        with span("edited_branch"):
            hook = None
            if shifting:
                hook = AttentionShiftHook(rec_c, rec_s, style_sched.gamma,
                                          beta_at(t, style_sched), layers, eps_ad)
            eps_e = predictor.predict(state.edited, ts, None, hook=hook)
        ze = state.edited
        with span("latent_shift"):
            ze = latent_shift(ze, state.style, t, style_sched, cfg.adain_per_frame, eps_ad)
        if smooth and window[0] <= t <= window[1]:
            with span("smoothing"):
                ze_prev = smooth_step(ze, eps_e, t, t - 1, codec, sched, cfg.m, window, flow_source)
        else:
            with span("scheduler"):
                ze_prev = ddim_denoise_step(ze, eps_e, t, t - 1, sched)
        with span("blend"):
            ze_prev = localized_blend(ze_prev, zc_prev, masks)
        if ze_prev.shape != zc.shape:
            raise ShapeError(f"edited branch drifted to shape {ze_prev.shape}")
        state = BranchState(zc_prev, ze_prev, zs_prev, t - 1)
    return StylizeResult(state.edited, state.content, state.style, dict(timings))
