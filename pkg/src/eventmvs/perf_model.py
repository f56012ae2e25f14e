"""Analytic latency/throughput model of the pipelined accelerator schedule.

Per frame, canonical back-projection (``P0``) of frame n+1 overlaps the
proportional back-projection and voting (``PIR``) of frame n. A key frame
is a barrier: its ``P0`` cannot start until the DSI reset, so its latency is
the sum of both stages.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

US = 1e-6

# Published per-frame figures (microseconds, Meps, Watts).
PUBLISHED = {
    "accelerator": {"t_p0": 8.24, "t_pir": 551.58, "normal": 551.58, "key": 559.82,
                "rate_normal": 1.86, "rate_key": 1.83, "power_w": 1.86},
    "cpu": {"t_p0": 22.40, "t_pir": 559.55, "normal": 581.95, "key": 581.95,
            "rate_normal": 1.76, "rate_key": 1.76, "power_w": 45.0},
}


@dataclass(frozen=True)
class StageTimes:
    t_p0: float   # seconds per frame
    t_pir: float  # seconds per frame

    def __post_init__(self):
        if not (self.t_p0 >= 0 and self.t_pir > 0):
            raise ValueError("stage times must be positive (t_p0 may be 0)")


@dataclass(frozen=True)
class ModelConfig:
    clock_hz: float = 130e6
    events_per_frame: int = 1024
    n_pe_zi: int = 2
    nz: int = 100

    def __post_init__(self):
        if min(self.clock_hz, self.events_per_frame, self.n_pe_zi, self.nz) <= 0:
            raise ValueError("model parameters must be positive")


def frame_latency(st: StageTimes, is_key: bool) -> float:
    return st.t_p0 + st.t_pir if is_key else st.t_pir


def event_rate(st: StageTimes, cfg: ModelConfig, is_key: bool) -> float:
    return cfg.events_per_frame / frame_latency(st, is_key)


def plane_passes(cfg: ModelConfig) -> int:
    """Plane batches each event needs when ``n_pe_zi`` planes run side by side."""
    return math.ceil(cfg.nz / cfg.n_pe_zi)


def predict_stage_times(cfg: ModelConfig, c_p0: float, c_vote: float) -> StageTimes:
    """Forward model from per-event cycle counts.

    ``c_p0`` cycles per event in the canonical stage, ``c_vote`` cycles per
    (event, plane batch) in the vote stage.
    """
    t_p0 = cfg.events_per_frame * c_p0 / cfg.clock_hz
    t_pir = cfg.events_per_frame * plane_passes(cfg) * c_vote / cfg.clock_hz
    return StageTimes(t_p0, t_pir)


def calibrate_c_vote(cfg: ModelConfig, t_pir: float) -> float:
    """Invert the forward model: cycles per vote batch that reproduce ``t_pir``."""
    return t_pir * cfg.clock_hz / (cfg.events_per_frame * plane_passes(cfg))


def calibrate_c_p0(cfg: ModelConfig, t_p0: float) -> float:
    return t_p0 * cfg.clock_hz / cfg.events_per_frame


# Pinned at the defaults (nz=100, two PE_Zi, 1024 events, 130 MHz).
C_VOTE_DEFAULT = 1.40050
C_P0_DEFAULT = 1.0


def published_stage_times(column: str = "accelerator") -> StageTimes:
    row = PUBLISHED[column]
    return StageTimes(row["t_p0"] * US, row["t_pir"] * US)


@dataclass
class ReportRow:
    target: str
    quantity: str
    model: float
    published: float | None
    unit: str
    note: str = ""

    @property
    def residual(self) -> float | None:
        if self.published is None or self.model is None:
            return None
        return self.model - self.published


def report_rows(cfg: ModelConfig | None = None, use_published: bool = False,
                c_p0: float = C_P0_DEFAULT, c_vote: float = C_VOTE_DEFAULT) -> list[ReportRow]:
    """Rows mirroring the published per-frame table, with residuals.

    ``use_published`` feeds the published stage times; otherwise they are
    predicted from the cycle constants.
    """
    cfg = cfg or ModelConfig()
    pub = PUBLISHED["accelerator"]
    st = published_stage_times() if use_published else predict_stage_times(cfg, c_p0, c_vote)
    src = "published stage times" if use_published else f"c_p0={c_p0:g}, c_vote={c_vote:.5f}"
    rows = [
        ReportRow("accelerator", "P0 (us/frame)", st.t_p0 / US, pub["t_p0"], "us", src),
        ReportRow("accelerator", "PIR (us/frame)", st.t_pir / US, pub["t_pir"], "us", src),
        ReportRow("accelerator", "normal frame (us)", frame_latency(st, False) / US, pub["normal"], "us"),
        ReportRow("accelerator", "key frame (us)", frame_latency(st, True) / US, pub["key"], "us"),
        ReportRow("accelerator", "rate normal (Meps)", event_rate(st, cfg, False) / 1e6, pub["rate_normal"], "Meps"),
        ReportRow("accelerator", "rate key (Meps)", event_rate(st, cfg, True) / 1e6, pub["rate_key"], "Meps"),
    ]
    cpu = PUBLISHED["cpu"]
    # CPU columns are reported as published, without decomposition.
    for quantity, key, unit in (
        ("P0 (us/frame)", "t_p0", "us"),
        ("PIR (us/frame)", "t_pir", "us"),
        ("normal frame (us)", "normal", "us"),
        ("key frame (us)", "key", "us"),
        ("rate normal (Meps)", "rate_normal", "Meps"),
        ("rate key (Meps)", "rate_key", "Meps"),
    ):
        rows.append(ReportRow("cpu", quantity, None, cpu[key], unit, "as published"))
    for target in ("accelerator", "cpu"):
        rows.append(ReportRow(target, "power (W)", None, PUBLISHED[target]["power_w"], "W", "not modeled"))
    return rows


def _fmt(v, digits=2):
    if v is None:
        return ""
    return f"{round(v, digits) + 0.0:.{digits}f}"  # no "-0.00"


def format_csv(rows: list[ReportRow]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["target", "quantity", "model", "published", "residual", "unit", "note"])
    for r in rows:
        wr.writerow([r.target, r.quantity, _fmt(r.model, 4), _fmt(r.published, 2),
                     _fmt(r.residual, 4), r.unit, r.note])
    return buf.getvalue()


def format_text(rows: list[ReportRow]) -> str:
    head = ("target", "quantity", "model", "published", "residual", "note")
    body = [(r.target, r.quantity, _fmt(r.model), _fmt(r.published), _fmt(r.residual), r.note)
            for r in rows]
    widths = [max(len(str(c)) for c in col) for col in zip(head, *body)]
    lines = ["  ".join(str(c).ljust(wd) for c, wd in zip(line, widths)).rstrip()
             for line in [head, *body]]
    return "\n".join(lines) + "\n"
