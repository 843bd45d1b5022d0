"""Per-GOP CRF planning: one lookahead pass over the sequence, one curve
prediction per GOP, one CRF per GOP for the requested target bitrate.

Control is open loop: realized bitrates never feed back into later GOP
decisions, matching a single-pass encode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .features import GopFeatures, aggregate_gop
from .lookahead import GopSpan, LookaheadParams, analyze_sequence, segment_gops
from .network import (
    BITRATE_GRID_MAX,
    BITRATE_GRID_MIN,
    MlpModel,
    forward,
    model_fingerprint,
)
from .rate_model import RateModelParams, crf_for_bitrate
from .video import VideoSequence

__all__ = [
    "PlanEntry",
    "EncodePlan",
    "decide_crf",
    "plan_sequence",
    "plan_to_json",
    "plan_from_json",
    "encoder_args_for_plan",
]


@dataclass(frozen=True)
class PlanEntry:
    span: GopSpan
    crf: float
    params: RateModelParams
    extrapolated: bool


@dataclass(frozen=True)
class EncodePlan:
    entries: tuple[PlanEntry, ...]
    target_bitrate: float
    model_fingerprint: str

    def __post_init__(self):
        if not self.entries:
            raise ValueError("plan must have at least one GOP")
        expect = 0
        for e in self.entries:
            if e.span.start_frame != expect:
                raise ValueError("plan spans do not partition the sequence")
            if not 0.0 <= e.crf <= 51.0:
                raise ValueError(f"crf {e.crf} outside [0, 51]")
            expect = e.span.end_frame + 1

    @property
    def n_frames(self) -> int:
        return self.entries[-1].span.end_frame + 1


def decide_crf(model: MlpModel, features: GopFeatures,
               target_kbps: float) -> tuple[float, RateModelParams]:
    """Predict the GOP's curve and read the CRF for the target off it."""
    if target_kbps <= 0:
        raise ValueError(f"target bitrate must be positive, got {target_kbps}")
    params = forward(model, features)
    return crf_for_bitrate(params, target_kbps), params


def _is_extrapolated(target_kbps: float) -> bool:
    return not BITRATE_GRID_MIN <= target_kbps <= BITRATE_GRID_MAX


def plan_sequence(video: VideoSequence, model: MlpModel, target_kbps: float,
                  params: LookaheadParams | None = None) -> EncodePlan:
    """Full single-pass pipeline: downsample, analyze, segment, aggregate,
    decide. Deterministic for fixed (video, model, target, params)."""
    if not video.frames:
        raise ValueError("empty video")
    if video.source_bitrate is None:
        raise ValueError(
            "video.source_bitrate is required for planning; "
            "inject it from container metadata or file size first"
        )
    if target_kbps <= 0:
        raise ValueError(f"target bitrate must be positive, got {target_kbps}")
    params = params or LookaheadParams()

    stats = analyze_sequence(video, params)
    spans = segment_gops(stats, params.keyint_min, params.keyint_max,
                         params.scenecut_bias)
    extrapolated = _is_extrapolated(target_kbps)
    entries = []
    for span in spans:
        gop_stats = stats[span.start_frame : span.end_frame + 1]
        gop_frames = video.frames[span.start_frame : span.end_frame + 1]
        feats = aggregate_gop(gop_stats, gop_frames, video.fps,
                              video.source_bitrate)
        crf, pred = decide_crf(model, feats, target_kbps)
        entries.append(PlanEntry(span=span, crf=crf, params=pred,
                                 extrapolated=extrapolated))
    return EncodePlan(
        entries=tuple(entries),
        target_bitrate=float(target_kbps),
        model_fingerprint=model_fingerprint(model),
    )


def plan_to_json(plan: EncodePlan) -> str:
    doc = {
        "target_bitrate_kbps": plan.target_bitrate,
        "model_fingerprint": plan.model_fingerprint,
        "gops": [
            {
                "start": e.span.start_frame,
                "end": e.span.end_frame,
                "scenecut": e.span.scenecut_triggered,
                "crf": e.crf,
                "a": e.params.a,
                "b": e.params.b,
                "c": e.params.c,
                "extrapolated": e.extrapolated,
            }
            for e in plan.entries
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def plan_from_json(text: str) -> EncodePlan:
    doc = json.loads(text)
    entries = tuple(
        PlanEntry(
            span=GopSpan(g["start"], g["end"], g["scenecut"]),
            crf=float(g["crf"]),
            params=RateModelParams(a=g["a"], b=g["b"], c=g["c"]),
            extrapolated=bool(g["extrapolated"]),
        )
        for g in doc["gops"]
    )
    return EncodePlan(
        entries=entries,
        target_bitrate=float(doc["target_bitrate_kbps"]),
        model_fingerprint=str(doc["model_fingerprint"]),
    )


def save_plan(plan: EncodePlan, path: str | Path) -> None:
    Path(path).write_text(plan_to_json(plan))


def load_plan(path: str | Path) -> EncodePlan:
    return plan_from_json(Path(path).read_text())


def encoder_args_for_plan(plan: EncodePlan) -> list[dict]:
    """Per-GOP encoder argument lists for segment re-invocation."""
    return [
        {
            "start": e.span.start_frame,
            "end": e.span.end_frame,
            "args": ["--crf", f"{e.crf:.1f}"],
        }
        for e in plan.entries
    ]
