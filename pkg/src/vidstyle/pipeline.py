"""End-to-end orchestration: inversion, mask propagation, stylization."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .backends import ConstantPredictor, IdentityCodec, MockBackbone, OrthogonalCodec, SeededNoisePredictor
from .config import RunConfig, config_to_dict
from .errors import ConfigError, ShapeError
from .flow import default_flow_source
from .masks import propagate, resize_mask_nearest, upsample_mask
from .remote import DirectoryBackend
from .schedule import run_inversion, schedule_from_config
from .stylize import denoise_edited

log = logging.getLogger("vidstyle")


class JsonFormatter(logging.Formatter):
    """One JSON object per log line."""

    def format(self, record):
        doc = {"ts": round(record.created, 3), "level": record.levelname.lower(),
               "event": record.getMessage()}
        doc.update(getattr(record, "fields", {}))
        return json.dumps(doc, default=str, ensure_ascii=False)


def setup_logging(level=logging.INFO) -> None:
    handler = logging.StreamHandler()
    handler.setFormatter(JsonFormatter())
    log.handlers[:] = [handler]
    log.setLevel(level)
    log.propagate = False


class StageTimer:
    """Wall-clock accounting per named stage."""

    def __init__(self):
        self.start = time.perf_counter()
        self.stages: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        t = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - t

    def add(self, prefix: str, timings: dict[str, float]) -> None:
        for k, v in timings.items():
            self.stages[f"{prefix}.{k}"] = self.stages.get(f"{prefix}.{k}", 0.0) + v

    def wall(self) -> float:
        return time.perf_counter() - self.start

    def top_level_total(self) -> float:
        return sum(v for k, v in self.stages.items() if "." not in k)


def _patch_for(h: int, w: int) -> int:
    for p in (4, 2, 1):
        if h % p == 0 and w % p == 0:
            return p
    return 1


def make_predictor(name: str, cfg: RunConfig, channels: int, h: int, w: int):
    if name == "mock-backbone":
        return MockBackbone(channels=channels, patch=_patch_for(h, w), seed=cfg.seed)
    if name == "mock-constant":
        return ConstantPredictor(0.1)
    if name == "mock-seeded":
        return SeededNoisePredictor(cfg.seed)
    if name.startswith("dir:"):
        return DirectoryBackend(name[4:])
    raise ConfigError(f"predictor: unknown backend {name!r}")


def make_codec(name: str, cfg: RunConfig, channels: int):
    if name == "identity":
        return IdentityCodec()
    if name == "orthogonal":
        return OrthogonalCodec(channels, seed=cfg.seed)
    if name.startswith("dir:"):
        return DirectoryBackend(name[4:])
    raise ConfigError(f"codec: unknown backend {name!r}")


def as_style_frame(style) -> np.ndarray:
    style = np.asarray(style, dtype=np.float64)
    if style.ndim == 3:
        style = style[None]
    if style.ndim != 4 or style.shape[0] != 1:
        raise ShapeError(f"style latent must be C x H x W or 1 x C x H x W, got {style.shape}")
    return style


@dataclass
class PipelineResult:
    edited: np.ndarray
    content: np.ndarray
    masks: np.ndarray  # feature resolution
    latent_masks: np.ndarray
    features: np.ndarray | None
    timings: dict[str, float] = field(default_factory=dict)


def run_pipeline(video, style, cfg: RunConfig, *, first_mask=None, masks=None,
                 predictor=None, codec=None, flow_source=None, smooth: bool = True,
                 invert_masks: bool = False, threads: int = 1,
                 timer: StageTimer | None = None) -> PipelineResult:
    """Invert, propagate the first-frame mask (unless ``masks`` are given), stylize.

    ``first_mask`` may be at any resolution; it is resized to the feature
    grid. ``masks`` (any resolution) bypass propagation.
    """
    timer = timer or StageTimer()
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4:
        raise ShapeError(f"video latents must be F x C x H x W, got {video.shape}")
    style = as_style_frame(style)
    f, c, h, w = video.shape
    predictor = predictor or make_predictor(cfg.predictor, cfg, c, h, w)
    codec = codec or make_codec(cfg.codec, cfg, c)
    sched = schedule_from_config(cfg)
    need_features = masks is None
    if need_features and first_mask is None:
        raise ValueError("either first_mask or masks is required")

    with timer.stage("inversion"):
        inv = run_inversion(video, predictor, sched,
                            feature_tap=cfg.feature_step if need_features else None)
        inv_s = run_inversion(style, predictor, sched)
    log.info("inverted", extra={"fields": {"frames": f, "T": cfg.T, "t0": cfg.feature_step}})

    with timer.stage("mask_propagation"):
        if masks is None:
            fh, fw = inv.features.shape[1:3]
            m1 = resize_mask_nearest(first_mask, fh, fw)
            masks = propagate(inv.features, m1, cfg.r, cfg.k, cfg.n, cfg.seed, threads)
        masks = np.asarray(masks).astype(np.uint8)
        if invert_masks:
            masks = 1 - masks
        if masks.shape[0] != f:
            raise ShapeError(f"{masks.shape[0]} masks for {f} frames")
        latent_masks = upsample_mask(masks, h, w)

    if flow_source is None and smooth:
        flow_source = default_flow_source(cfg.flows, cfg.hs_lambda, cfg.hs_iters,
                                          cfg.reflow_each_step, threads)
    with timer.stage("stylization"):
        res = denoise_edited(inv.noise, inv_s.noise, predictor, latent_masks, sched, cfg,
                             codec=codec, flow_source=flow_source, smooth=smooth,
                             content_trajectory=inv.trajectory, style_trajectory=inv_s.trajectory)
    timer.add("stylization", res.timings)
    log.info("stylized", extra={"fields": {"seconds": round(timer.stages["stylization"], 3)}})
    return PipelineResult(res.edited, res.content, masks, latent_masks, inv.features,
                          dict(timer.stages))


# -- manifests -------------------------------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def build_manifest(command: str, cfg: RunConfig, inputs: dict, outputs: dict,
                   timer: StageTimer, extra: dict | None = None) -> dict:
    return {
        "command": command,
        "versions": {"vidstyle": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "seed": cfg.seed,
        "config": config_to_dict(cfg),
        "resolved_steps": {
            "latent_shift": list(cfg.latent_shift_window),
            "attention_shift": list(cfg.attention_shift_window),
            "smoothing": list(cfg.smoothing_window),
            "t0": cfg.feature_step,
        },
        "inputs": {k: {"path": str(p), "sha256": file_digest(p)} for k, p in inputs.items() if p},
        "outputs": {k: str(p) for k, p in outputs.items()},
        "timings": {k: round(v, 6) for k, v in timer.stages.items()},
        "wall_seconds": round(timer.wall(), 6),
        **(extra or {}),
    }


def write_manifest(manifest: dict, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    os.replace(tmp, path)
