"""Noise schedule and deterministic DDIM steps.

Step functions address the inference ladder by *position*: ``0`` is the
clean latent (``alpha_bar == 1``) and ``T`` the fully inverted noise.
Position ``p >= 1`` corresponds to the training timestep
``timesteps[T - p]``; predictors are always called with training
timesteps.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BackendError, ConfigError, ShapeError


@dataclass(frozen=True)
class DiffusionSchedule:
    """Training-time ``betas``/``alpha_bars`` and the ``T``-step inference ladder."""

    betas: np.ndarray
    alpha_bars: np.ndarray
    timesteps: np.ndarray  # length T, strictly decreasing (denoising order)

    @property
    def T(self) -> int:
        return len(self.timesteps)

    @property
    def train_steps(self) -> int:
        return len(self.betas)

    @property
    def ladder_alpha_bars(self) -> np.ndarray:
        """``alpha_bar`` per ladder position ``0..T``."""
        return np.concatenate([[1.0], self.alpha_bars[self.timesteps[::-1]]])

    def alpha_bar(self, pos: int) -> float:
        if not 0 <= pos <= self.T:
            raise ValueError(f"ladder position {pos} outside [0, {self.T}]")
        if pos == 0:
            return 1.0
        return float(self.alpha_bars[self.timesteps[self.T - pos]])

    def timestep(self, pos: int) -> int:
        """Training timestep for ladder position ``pos >= 1``."""
        if not 1 <= pos <= self.T:
            raise ValueError(f"ladder position {pos} outside [1, {self.T}]")
        return int(self.timesteps[self.T - pos])


def schedule_from_betas(betas, T: int) -> DiffusionSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    n = len(betas)
    if T < 1 or T > n:
        raise ConfigError(f"T={T} must lie in [1, train_steps={n}]")
    if np.any(betas < 0) or np.any(betas >= 1):
        raise ConfigError("betas must lie in [0, 1)")
    alpha_bars = np.cumprod(1.0 - betas)
    # trailing spacing: the noisiest inference step sits on the last training step
    timesteps = np.round(np.arange(n, 0, -n / T)).astype(np.int64) - 1
    return DiffusionSchedule(betas, alpha_bars, timesteps)


def build_schedule(
    kind: str = "scaled_linear",
    beta_start: float = 0.00085,
    beta_end: float = 0.012,
    train_steps: int = 1000,
    T: int = 50,
) -> DiffusionSchedule:
    if not 0.0 <= beta_start <= beta_end < 1.0:
        raise ConfigError("need 0 <= beta_start <= beta_end < 1")
    if T > train_steps:
        raise ConfigError(f"T={T} exceeds train_steps={train_steps}")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, train_steps)
    elif kind == "scaled_linear":
        betas = np.linspace(beta_start**0.5, beta_end**0.5, train_steps) ** 2
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    return schedule_from_betas(betas, T)


def schedule_from_config(cfg) -> DiffusionSchedule:
    s = cfg.schedule
    return build_schedule(s.kind, s.beta_start, s.beta_end, s.train_steps, cfg.T)


# -- single-step algebra ----------------------------------------------------------

def predicted_z0(z_t, eps, t: int, sched: DiffusionSchedule):
    """Clean-latent estimate ``(z_t - sqrt(1 - a_t) eps) / sqrt(a_t)``."""
    a = sched.alpha_bar(t)
    if a <= 0:
        raise ValueError(f"alpha_bar at position {t} is {a}; cannot predict z0")
    return (z_t - np.sqrt(1.0 - a) * eps) / np.sqrt(a)


def _check_order(t_from: int, t_to: int, earlier: bool):
    if earlier and not t_to < t_from:
        raise ValueError(f"t_prev={t_to} is not earlier than t={t_from} on the ladder")
    if not earlier and not t_to > t_from:
        raise ValueError(f"t_next={t_to} is not later than t={t_from} on the ladder")


def ddim_denoise_step(z_t, eps, t: int, t_prev: int, sched: DiffusionSchedule):
    """Deterministic DDIM update from position ``t`` to ``t_prev < t``."""
    _check_order(t, t_prev, earlier=True)
    a_prev = sched.alpha_bar(t_prev)
    z0 = predicted_z0(z_t, eps, t, sched)
    return np.sqrt(a_prev) * z0 + np.sqrt(1.0 - a_prev) * eps


def invert_coefficients(t: int, t_next: int, sched: DiffusionSchedule) -> tuple[float, float]:
    """``(A, B)`` such that ``z_next = A z_t + B eps`` undoes the DDIM step."""
    a_t = sched.alpha_bar(t)
    a_n = sched.alpha_bar(t_next)
    A = np.sqrt(a_n / a_t)
    B = np.sqrt(1.0 - a_n) - A * np.sqrt(1.0 - a_t)
    return float(A), float(B)


def ddim_invert_step(z_t, eps, t: int, t_next: int, sched: DiffusionSchedule):
    _check_order(t, t_next, earlier=False)
    A, B = invert_coefficients(t, t_next, sched)
    return A * z_t + B * eps


def refine_noise(z_t, zbar_t0, t: int, sched: DiffusionSchedule):
    """Noise consistent with ``z_t`` and a refined clean estimate ``zbar_t0``."""
    a = sched.alpha_bar(t)
    if a >= 1.0:
        raise ValueError("no noise direction at ᾱ=1")
    return (z_t - np.sqrt(a) * zbar_t0) / np.sqrt(1.0 - a)


# -- loops -----------------------------------------------------------------------

@dataclass
class InversionResult:
    noise: np.ndarray
    features: np.ndarray | None
    trajectory: list[np.ndarray]  # positions 0..T


def run_inversion(
    video,
    predictor,
    sched: DiffusionSchedule,
    feature_tap: int | None = None,
    conditioning=None,
) -> InversionResult:
    """Invert ``video`` up the ladder with the first-order approximation.

    The predictor is evaluated on ``z_t`` with the training timestep of
    position ``t + 1``. When ``feature_tap`` is given, the backbone
    features of that evaluation (the one landing on position
    ``feature_tap``) are captured through ``predict_with_features``.
    """
    z = np.asarray(video)
    if feature_tap is not None:
        if not hasattr(predictor, "predict_with_features"):
            raise BackendError("predictor has no feature hook but features were requested")
        if not 1 <= feature_tap <= sched.T:
            raise ValueError(f"feature_tap {feature_tap} outside [1, {sched.T}]")
    trajectory = [z]
    features = None
    for t in range(sched.T):
        ts = sched.timestep(t + 1)
        if feature_tap == t + 1:
            eps, features = predictor.predict_with_features(z, ts, conditioning)
        else:
            eps = predictor.predict(z, ts, conditioning)
        if np.shape(eps) != z.shape:
            raise ShapeError(f"predictor returned {np.shape(eps)}, expected {z.shape}")
        z = ddim_invert_step(z, eps, t, t + 1, sched)
        trajectory.append(z)
    return InversionResult(z, features, trajectory)


def run_denoising(
    noise,
    predictor,
    sched: DiffusionSchedule,
    conditioning=None,
    step: Callable | None = None,
):
    """Plain DDIM sampling from position ``T`` down to ``0``.

    ``step`` may replace :func:`ddim_denoise_step` (same signature).
    """
    step = step or ddim_denoise_step
    z = np.asarray(noise)
    for t in range(sched.T, 0, -1):
        eps = predictor.predict(z, sched.timestep(t), conditioning)
        z = step(z, eps, t, t - 1, sched)
    return z
