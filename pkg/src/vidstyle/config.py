"""Run configuration (JSON) with the published default hyper-parameters.

Interval bounds ``tau0..tau5`` and the feature-capture step ``t0`` are
stored as fractions of the step count ``T`` and resolved to integer step
positions by rounding half up.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

CONFIG_ENV_VAR = "VIDSTYLE_CONFIG"


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "scaled_linear"
    beta_start: float = 0.00085
    beta_end: float = 0.012
    train_steps: int = 1000


@dataclass(frozen=True)
class RunConfig:
    T: int = 50
    tau0: float = 0.1
    tau1: float = 0.2
    tau2: float = 0.4
    tau3: float = 1.0
    tau4: float = 0.5
    tau5: float = 0.6
    t0: float = 0.4
    gamma: float = 0.35
    beta_tau2: float = 0.1
    beta_tau3: float = 0.9
    r: float = 0.3
    k: int = 15
    m: int = 2
    n: int = 9
    seed: int = 0
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    adain_per_frame: bool = False
    adain_eps: float = 1e-12
    replay_from_cache: bool = False
    reflow_each_step: bool = False
    hooked_layers: tuple[str, ...] = ("up",)
    hs_lambda: float = 0.1
    hs_iters: int = 200
    predictor: str = "mock-backbone"
    codec: str = "identity"
    flows: str | None = None

    def __post_init__(self):
        validate(self)

    def step(self, fraction: float) -> int:
        """Resolve a fraction of ``T`` to an integer step position (half up)."""
        return int(math.floor(fraction * self.T + 0.5))

    @property
    def latent_shift_window(self) -> tuple[int, int]:
        return self.step(self.tau0), self.step(self.tau1)

    @property
    def attention_shift_window(self) -> tuple[int, int]:
        return self.step(self.tau2), self.step(self.tau3)

    @property
    def smoothing_window(self) -> tuple[int, int]:
        return self.step(self.tau4), self.step(self.tau5)

    @property
    def feature_step(self) -> int:
        return self.step(self.t0)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def validate(cfg: RunConfig) -> None:
    def need(ok: bool, name: str, msg: str):
        if not ok:
            raise ConfigError(f"{name}: {msg}")

    need(isinstance(cfg.T, int) and cfg.T >= 1, "T", "must be a positive integer")
    for a, b, la, lb in ((cfg.tau0, cfg.tau1, "τ0", "τ1"),
                         (cfg.tau2, cfg.tau3, "τ2", "τ3"),
                         (cfg.tau4, cfg.tau5, "τ4", "τ5")):
        need(0.0 <= a, la, f"{la}>=0 violated ({a})")
        need(b <= 1.0, lb, f"{lb}<=T violated ({b}T)")
        need(a < b, f"{la}/{lb}", f"{la}<{lb} violated ({a}T vs {b}T)")
    need(0.0 < cfg.t0 <= 1.0, "t0", f"0<t0<=T violated ({cfg.t0}T)")
    need(cfg.step(cfg.t0) >= 1, "t0", "resolves to step 0")
    need(0.0 <= cfg.gamma <= 1.0, "gamma", f"0<=γ<=1 violated ({cfg.gamma})")
    need(0.0 < cfg.r <= 1.0, "r", f"0<r<=1 violated ({cfg.r})")
    need(isinstance(cfg.k, int) and cfg.k >= 1, "k", f"k>=1 violated ({cfg.k})")
    need(isinstance(cfg.m, int) and cfg.m >= 0, "m", f"m>=0 violated ({cfg.m})")
    need(isinstance(cfg.n, int) and cfg.n >= 0, "n", f"n>=0 violated ({cfg.n})")
    need(cfg.adain_eps > 0, "adain_eps", "must be positive")
    need(cfg.hs_lambda > 0, "hs_lambda", "must be positive")
    need(cfg.hs_iters >= 0, "hs_iters", "must be non-negative")
    s = cfg.schedule
    need(s.kind in ("linear", "scaled_linear"), "schedule.kind", f"unknown kind {s.kind!r}")
    need(0.0 <= s.beta_start <= s.beta_end < 1.0, "schedule.beta",
         "0<=beta_start<=beta_end<1 violated")
    need(cfg.T <= s.train_steps, "T", f"T={cfg.T} exceeds train_steps={s.train_steps}")


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object")
    data = dict(data)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown config field")
    sched = data.pop("schedule", None) or {}
    try:
        data["schedule"] = ScheduleConfig(**sched)
    except TypeError as exc:
        raise ConfigError(f"schedule: {exc}") from None
    if "hooked_layers" in data:
        data["hooked_layers"] = tuple(data["hooked_layers"])
    return RunConfig(**data)


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    out = dataclasses.asdict(cfg)
    out["hooked_layers"] = list(cfg.hooked_layers)
    return out


def load_config(path=None) -> RunConfig:
    """Load a JSON config, filling missing fields with defaults.

    ``None`` returns the defaults.
    """
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return config_from_dict(data)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))
