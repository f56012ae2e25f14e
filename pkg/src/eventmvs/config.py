"""Run configuration: a flat key/value record, every key overridable from the CLI."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .event_io import ValidationError, parse_key_values

VOTE_MODES = ("nearest", "bilinear")
DATAPATHS = ("float", "quantized")
PIPELINES = ("reformulated", "reference")


@dataclass
class RunConfig:
    events_per_frame: int = 1024
    n_depth_planes: int = 100
    z_min: float = 0.8
    z_max: float = 2.5
    keyframe_dist_frac: float = 0.1
    vote_mode: str = "nearest"
    datapath: str = "float"
    # "reference" = per-frame correction, per-plane homographies, no phi
    pipeline: str = "reformulated"
    vote_value: int = 1
    # detection
    filter_radius: int = 5
    threshold_offset: float = 4.0
    median_window: int = 3
    depth_smoothing: bool = True
    # merging
    voxel_leaf: float = 0.0
    workers: int = 1
    # inputs / outputs
    events: str = ""
    trajectory: str = ""
    calibration: str = ""
    scene: str = ""
    out: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (self.z_max > self.z_min > 0):
            raise ValidationError("need z_max > z_min > 0")
        if self.n_depth_planes < 2:
            raise ValidationError("need at least 2 depth planes")
        if self.events_per_frame < 1:
            raise ValidationError("events_per_frame must be >= 1")
        if self.keyframe_dist_frac <= 0:
            raise ValidationError("keyframe_dist_frac must be positive")
        if self.vote_mode not in VOTE_MODES:
            raise ValidationError(f"vote_mode must be one of {VOTE_MODES}")
        if self.datapath not in DATAPATHS:
            raise ValidationError(f"datapath must be one of {DATAPATHS}")
        if self.pipeline not in PIPELINES:
            raise ValidationError(f"pipeline must be one of {PIPELINES}")
        if self.datapath == "quantized" and self.vote_mode != "nearest":
            raise ValidationError("the quantized datapath supports nearest voting only")
        if self.datapath == "quantized" and self.pipeline != "reformulated":
            raise ValidationError("the quantized datapath implements the reformulated pipeline only")
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ValidationError("median_window must be a positive odd integer")
        if self.filter_radius < 0 or self.workers < 1:
            raise ValidationError("filter_radius must be >= 0 and workers >= 1")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    kind = _FIELD_TYPES[key]
    if kind == "bool":
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"{key}: expected a boolean, got {value!r}")
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ValidationError(f"{key}: cannot parse {value!r} as {kind}") from None
    return value


def is_config_key(key: str) -> bool:
    return key in _FIELD_TYPES


def load_config(path=None, overrides: dict[str, str] | None = None, base: RunConfig | None = None) -> RunConfig:
    values: dict[str, object] = dataclasses.asdict(base) if base is not None else {}
    raw: dict[str, str] = {}
    if path:
        raw.update(parse_key_values(path))
    if overrides:
        raw.update(overrides)
    for key, value in raw.items():
        if key not in _FIELD_TYPES:
            raise ValidationError(f"unknown configuration key {key!r}")
        values[key] = _coerce(key, value)
    return RunConfig(**values)
