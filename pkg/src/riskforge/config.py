"""Dataclass configs for every pipeline stage, plus JSON config-file loading.

Precedence when assembling a RunConfig: CLI flag > environment variable >
config file > built-in default.  All randomness is governed by the explicit
``seed`` field; nothing is derived from the clock.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .errors import ParseError, ValidationError

ENV_LLM_ENDPOINT = "RISKFORGE_LLM_ENDPOINT"
ENV_LLM_API_KEY = "RISKFORGE_LLM_API_KEY"
ENV_LLM_TIMEOUT_S = "RISKFORGE_LLM_TIMEOUT_S"


@dataclass(frozen=True)
class RuleConfig:
    """Thresholds for the risk rules and the physical-plausibility limits."""

    safety_distance: float = 0.5        # m, rectangle separation below which a collision fires
    brake_threshold: float = 4.0        # m/s^2
    accel_threshold: float = 4.0        # m/s^2
    min_event_duration: float = 1.0     # s
    speed_max: float = 25.0             # m/s
    accel_max: float = 10.0             # m/s^2
    jerk_max: float = 20.0              # m/s^3
    lateral_accel_max: float = 8.0      # m/s^2
    ego_length: float = 4.5             # m, ego footprint used by the collision check
    ego_width: float = 2.0              # m

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) <= 0:
                raise ValidationError(f"rules.{f.name}: must be positive")


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for hazardous-target generation and the acceptance loop."""

    max_attempts: int = 50
    collision_time_window: tuple[float, float] = (0.3, 0.9)   # fraction of horizon
    brake_decel_range: tuple[float, float] = (4.5, 8.0)       # m/s^2
    accel_range: tuple[float, float] = (4.5, 7.0)             # m/s^2
    violation_overshoot: tuple[float, float] = (1.0, 5.0)     # m beyond the boundary
    bearing_limit: float = 2.0943951023931953                 # rad (120 deg), collision targets
    violation_bearing_limit: float = 1.0471975511965976       # rad (60 deg), boundary search
    seed: int = 0
    limits: RuleConfig = field(default_factory=RuleConfig)

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValidationError("synth.max_attempts: must be >= 1")
        for name in ("collision_time_window", "brake_decel_range", "accel_range", "violation_overshoot"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValidationError(f"synth.{name}: lo must be <= hi")


@dataclass(frozen=True)
class OverlayStyle:
    """Visual encoding of the projected trajectory."""

    thickness: int = 6                                # px
    near_color: tuple[int, int, int] = (40, 200, 60)  # start of the ramp
    far_color: tuple[int, int, int] = (220, 40, 40)   # end of the ramp
    marker_radius: int = 4                            # px, 0 disables markers

    def __post_init__(self):
        if self.thickness < 1:
            raise ValidationError("overlay.thickness: must be >= 1")
        if self.marker_radius < 0:
            raise ValidationError("overlay.marker_radius: must be >= 0")


@dataclass(frozen=True)
class LlmConfig:
    """Chat-completion endpoint used for caption generation (optional)."""

    endpoint: str | None = None
    api_key: str | None = None
    timeout_s: float = 30.0
    model: str = "gpt-4o"


@dataclass(frozen=True)
class BevStyle:
    extent_m: float = 40.0    # half-extent; the raster covers [-extent, extent]^2
    px_per_m: float = 5.0


@dataclass(frozen=True)
class RunConfig:
    scenes_dir: str = "scenes"
    out_dir: str = "out"
    seed: int = 0
    mix: dict[str, int] = field(default_factory=lambda: {
        "collision": 1, "hard_braking": 1, "abnormal_acceleration": 1, "lane_violation": 1,
    })
    split_ratio: float = 0.8
    jobs: int = 1
    visibility_min: float = 0.6
    camera_name: str | None = None   # None = first camera in each scene
    review_port: int = 8008
    run_timestamp: str = "1970-01-01T00:00:00Z"
    synth: SynthConfig = field(default_factory=SynthConfig)
    rules: RuleConfig = field(default_factory=RuleConfig)
    overlay: OverlayStyle = field(default_factory=OverlayStyle)
    bev: BevStyle = field(default_factory=BevStyle)
    llm: LlmConfig = field(default_factory=LlmConfig)

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ValidationError("split_ratio: must be in (0, 1)")
        if self.jobs < 1:
            raise ValidationError("jobs: must be >= 1")
        for kind, count in self.mix.items():
            if count < 0:
                raise ValidationError(f"mix.{kind}: must be >= 0")


def _pairs_to_tuples(obj):
    if isinstance(obj, list) and len(obj) == 2 and all(isinstance(v, (int, float)) for v in obj):
        return (float(obj[0]), float(obj[1]))
    return obj


def _build(cls, raw: dict, label: str):
    field_names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in field_names:
            raise ValidationError(f"{label}.{key}: unknown config field")
        kwargs[key] = _pairs_to_tuples(value)
    return cls(**kwargs)


def config_to_dict(cfg) -> dict:
    def plain(value):
        if dataclasses.is_dataclass(value):
            return {f.name: plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, tuple):
            return list(value)
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        return value

    return plain(cfg)


def run_config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ParseError("config document must be a JSON object")
    doc = dict(doc)
    rules = _build(RuleConfig, doc.pop("rules", {}) or {}, "rules")
    raw_synth = dict(doc.pop("synth", {}) or {})
    raw_synth.pop("limits", None)  # plausibility limits always mirror the rules section
    synth = dataclasses.replace(_build(SynthConfig, raw_synth, "synth"), limits=rules)
    kwargs = {
        "rules": rules,
        "synth": synth,
        "overlay": _build(OverlayStyle, doc.pop("overlay", {}) or {}, "overlay"),
        "bev": _build(BevStyle, doc.pop("bev", {}) or {}, "bev"),
        "llm": _build(LlmConfig, doc.pop("llm", {}) or {}, "llm"),
    }
    top = dataclasses.asdict(_build(RunConfig, doc, "config")) if doc else {}
    for key in kwargs:
        top.pop(key, None)
    # asdict deep-converts; rebuild plain fields only
    if "mix" in top:
        top["mix"] = dict(top["mix"])
    return RunConfig(**{**top, **kwargs})


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Assemble a RunConfig from an optional JSON file, the environment, and
    explicit overrides (highest precedence)."""
    doc: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"config file {path}: not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ParseError(f"config file {path}: must hold a JSON object")
    llm = dict(doc.get("llm", {}))
    if os.environ.get(ENV_LLM_ENDPOINT):
        llm["endpoint"] = os.environ[ENV_LLM_ENDPOINT]
    if os.environ.get(ENV_LLM_API_KEY):
        llm["api_key"] = os.environ[ENV_LLM_API_KEY]
    if os.environ.get(ENV_LLM_TIMEOUT_S):
        try:
            llm["timeout_s"] = float(os.environ[ENV_LLM_TIMEOUT_S])
        except ValueError:
            raise ValidationError(f"{ENV_LLM_TIMEOUT_S}: not a number") from None
    if llm:
        doc["llm"] = llm
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(doc.get(key), dict):
            doc[key] = {**doc[key], **value}
        else:
            doc[key] = value
    return run_config_from_dict(doc)
